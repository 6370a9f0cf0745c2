//! Reverse-mode differentiation over a flat tape of vector-valued nodes.
//!
//! Every forward helper appends one node; `backward` walks the tape in
//! reverse and accumulates parameter gradients into a [`GradBuffer`]. The
//! tape borrows the parameter store read-only, so tapes for different
//! sentences can be built and differentiated in parallel against one
//! snapshot.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::nn::params::{GradBuffer, MatId, ParamStore, VecId};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Const,
    ParamVec(VecId),
    EmbedRow(MatId, usize),
    MatVec(MatId, NodeId),
    AddParamVec(NodeId, VecId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConstVec(NodeId, Array1<f64>),
    Concat2(NodeId, NodeId),
    Concat3(NodeId, NodeId, NodeId),
    Slice(NodeId, usize),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Dot(NodeId, NodeId),
    Pick(NodeId, usize),
    MaskedLogSoftmax(NodeId, Vec<bool>),
    SumScaled(Vec<(NodeId, f64)>),
}

struct Node {
    value: Array1<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape { params, nodes: Vec::with_capacity(1024) }
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array1<f64> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    fn push(&mut self, value: Array1<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Array1<f64>) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn zeros(&mut self, dim: usize) -> NodeId {
        self.constant(Array1::zeros(dim))
    }

    pub fn scalar_const(&mut self, x: f64) -> NodeId {
        self.constant(Array1::from_vec(vec![x]))
    }

    pub fn param_vec(&mut self, id: VecId) -> NodeId {
        self.push(self.params.vec(id).clone(), Op::ParamVec(id))
    }

    pub fn embed_row(&mut self, id: MatId, row: usize) -> NodeId {
        self.push(self.params.mat(id).row(row).to_owned(), Op::EmbedRow(id, row))
    }

    pub fn matvec(&mut self, w: MatId, x: NodeId) -> NodeId {
        let value = self.params.mat(w).dot(&self.nodes[x].value);
        self.push(value, Op::MatVec(w, x))
    }

    pub fn add_param_vec(&mut self, x: NodeId, b: VecId) -> NodeId {
        let value = &self.nodes[x].value + self.params.vec(b);
        self.push(value, Op::AddParamVec(x, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value - &self.nodes[b].value;
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value * &self.nodes[b].value;
        self.push(value, Op::Mul(a, b))
    }

    /// Elementwise product with a fixed vector (dropout masks).
    pub fn mul_const_vec(&mut self, x: NodeId, v: Array1<f64>) -> NodeId {
        let value = &self.nodes[x].value * &v;
        self.push(value, Op::MulConstVec(x, v))
    }

    /// Inverted dropout: keep with probability 1-p, scale kept entries by
    /// 1/(1-p). Identity when p = 0.
    pub fn dropout<R: rand::Rng>(&mut self, x: NodeId, p: f64, rng: &mut R) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let mask = Array1::from_shape_fn(self.nodes[x].value.len(), |_| {
            if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }
        });
        self.mul_const_vec(x, mask)
    }

    pub fn concat2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut value = Vec::with_capacity(self.nodes[a].value.len() + self.nodes[b].value.len());
        value.extend_from_slice(self.nodes[a].value.as_slice().unwrap());
        value.extend_from_slice(self.nodes[b].value.as_slice().unwrap());
        self.push(Array1::from_vec(value), Op::Concat2(a, b))
    }

    pub fn concat3(&mut self, a: NodeId, b: NodeId, c: NodeId) -> NodeId {
        let mut value = Vec::new();
        value.extend_from_slice(self.nodes[a].value.as_slice().unwrap());
        value.extend_from_slice(self.nodes[b].value.as_slice().unwrap());
        value.extend_from_slice(self.nodes[c].value.as_slice().unwrap());
        self.push(Array1::from_vec(value), Op::Concat3(a, b, c))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[x].value.slice(ndarray::s![start..start + len]).to_owned();
        self.push(value, Op::Slice(x, start))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.mapv(f64::exp);
        self.push(value, Op::Exp(x))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(Array1::from_vec(vec![value]), Op::Dot(a, b))
    }

    /// Scalar element extraction.
    pub fn pick(&mut self, x: NodeId, index: usize) -> NodeId {
        let value = Array1::from_vec(vec![self.nodes[x].value[index]]);
        self.push(value, Op::Pick(x, index))
    }

    /// Log-softmax restricted to unmasked entries; masked entries come out
    /// as -inf and never receive gradient. Errors when everything is masked.
    pub fn masked_log_softmax(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let scores = &self.nodes[x].value;
        debug_assert_eq!(scores.len(), mask.len());
        let value = masked_log_softmax_values(scores.as_slice().unwrap(), mask)?;
        Ok(self.push(Array1::from_vec(value), Op::MaskedLogSoftmax(x, mask.to_vec())))
    }

    /// Weighted sum of scalar nodes, folded left to right.
    pub fn sum_scaled(&mut self, terms: Vec<(NodeId, f64)>) -> NodeId {
        let mut acc = 0.0;
        for &(id, c) in &terms {
            acc += c * self.nodes[id].value[0];
        }
        self.push(Array1::from_vec(vec![acc]), Op::SumScaled(terms))
    }

    pub fn sum_scalars(&mut self, ids: &[NodeId]) -> NodeId {
        self.sum_scaled(ids.iter().map(|&id| (id, 1.0)).collect())
    }

    /// Reverse pass from a scalar loss node. Gradients for every reachable
    /// parameter are accumulated into `grads`; unreachable parameters are
    /// left untouched (zero for a fresh buffer).
    pub fn backward(&self, loss: NodeId, grads: &mut GradBuffer) -> Result<()> {
        let loss_value = self.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss_value} in backward")));
        }
        let mut adjoints: Vec<Option<Array1<f64>>> = (0..=loss).map(|_| None).collect();
        adjoints[loss] = Some(Array1::from_vec(vec![1.0]));
        for id in (0..=loss).rev() {
            let Some(g) = adjoints[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Const => {}
                Op::ParamVec(v) => grads.vecs[v.0] += &g,
                Op::EmbedRow(m, row) => {
                    let mut target = grads.mats[m.0].row_mut(*row);
                    target += &g;
                }
                Op::MatVec(w, x) => {
                    let xv = &self.nodes[*x].value;
                    // dW += g (outer) x
                    let gw = &mut grads.mats[w.0];
                    for (i, gi) in g.iter().enumerate() {
                        if *gi != 0.0 {
                            gw.row_mut(i).scaled_add(*gi, xv);
                        }
                    }
                    let gx = self.params.mat(*w).t().dot(&g);
                    accumulate(&mut adjoints[*x], gx);
                }
                Op::AddParamVec(x, b) => {
                    grads.vecs[b.0] += &g;
                    accumulate(&mut adjoints[*x], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adjoints[*a], g.clone());
                    accumulate(&mut adjoints[*b], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoints[*a], g.clone());
                    accumulate(&mut adjoints[*b], -g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[*b].value;
                    let gb = &g * &self.nodes[*a].value;
                    accumulate(&mut adjoints[*a], ga);
                    accumulate(&mut adjoints[*b], gb);
                }
                Op::MulConstVec(x, v) => {
                    accumulate(&mut adjoints[*x], &g * v);
                }
                Op::Concat2(a, b) => {
                    let la = self.nodes[*a].value.len();
                    let lb = self.nodes[*b].value.len();
                    accumulate(&mut adjoints[*a], g.slice(ndarray::s![..la]).to_owned());
                    accumulate(&mut adjoints[*b], g.slice(ndarray::s![la..la + lb]).to_owned());
                }
                Op::Concat3(a, b, c) => {
                    let la = self.nodes[*a].value.len();
                    let lb = self.nodes[*b].value.len();
                    let lc = self.nodes[*c].value.len();
                    accumulate(&mut adjoints[*a], g.slice(ndarray::s![..la]).to_owned());
                    accumulate(&mut adjoints[*b], g.slice(ndarray::s![la..la + lb]).to_owned());
                    accumulate(&mut adjoints[*c], g.slice(ndarray::s![la + lb..la + lb + lc]).to_owned());
                }
                Op::Slice(x, start) => {
                    let parent_len = self.nodes[*x].value.len();
                    let mut gx = Array1::zeros(parent_len);
                    gx.slice_mut(ndarray::s![*start..*start + g.len()]).assign(&g);
                    accumulate(&mut adjoints[*x], gx);
                }
                Op::Tanh(x) => {
                    let gx = &g * &node.value.mapv(|y| 1.0 - y * y);
                    accumulate(&mut adjoints[*x], gx);
                }
                Op::Sigmoid(x) => {
                    let gx = &g * &node.value.mapv(|y| y * (1.0 - y));
                    accumulate(&mut adjoints[*x], gx);
                }
                Op::Exp(x) => {
                    let gx = &g * &node.value;
                    accumulate(&mut adjoints[*x], gx);
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    let ga = self.nodes[*b].value.mapv(|v| s * v);
                    let gb = self.nodes[*a].value.mapv(|v| s * v);
                    accumulate(&mut adjoints[*a], ga);
                    accumulate(&mut adjoints[*b], gb);
                }
                Op::Pick(x, index) => {
                    let mut gx = Array1::zeros(self.nodes[*x].value.len());
                    gx[*index] = g[0];
                    accumulate(&mut adjoints[*x], gx);
                }
                Op::MaskedLogSoftmax(x, mask) => {
                    // d log p_i / d s_j = delta_ij - p_j over unmasked entries
                    let logp = &node.value;
                    let mut gsum = 0.0;
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            gsum += g[i];
                        }
                    }
                    let mut gx = Array1::zeros(logp.len());
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            gx[i] = g[i] - logp[i].exp() * gsum;
                        }
                    }
                    accumulate(&mut adjoints[*x], gx);
                }
                Op::SumScaled(terms) => {
                    let s = g[0];
                    for &(id, c) in terms {
                        accumulate(&mut adjoints[id], Array1::from_vec(vec![s * c]));
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Array1<f64>>, g: Array1<f64>) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

/// Log-space masked softmax values; masked entries are -inf.
pub fn masked_log_softmax_values(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::Contract(format!(
            "masked_softmax: {} scores vs {} mask entries",
            scores.len(),
            mask.len()
        )));
    }
    let mut max = f64::NEG_INFINITY;
    for (s, &m) in scores.iter().zip(mask) {
        if m && *s > max {
            max = *s;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::Contract("masked_softmax: all entries masked".into()));
    }
    let lse = max
        + scores
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(s, _)| (s - max).exp())
            .sum::<f64>()
            .ln();
    Ok(scores
        .iter()
        .zip(mask)
        .map(|(s, &m)| if m { s - lse } else { f64::NEG_INFINITY })
        .collect())
}

/// Probability-space masked softmax: masked entries are exactly zero, the
/// rest sum to one. Computed via the log-space path.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    Ok(masked_log_softmax_values(scores, mask)?
        .into_iter()
        .map(|lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() })
        .collect())
}
