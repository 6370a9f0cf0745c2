//! Named parameter arrays plus AdaGrad state.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handle to a matrix parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatId(pub(crate) usize);

/// Handle to a vector parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VecId(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Fan-based uniform on [-sqrt(6/(fan_in+fan_out)), +...].
    Glorot,
    Zeros,
    /// Uniform on [-scale, scale].
    Uniform(f64),
}

/// Dense model parameters with per-entry AdaGrad accumulators.
///
/// Single-writer during a training step; snapshots may be read concurrently.
#[derive(Debug, Clone)]
pub struct ParamStore {
    mats: Vec<Array2<f64>>,
    mat_names: Vec<String>,
    mat_accum: Vec<Array2<f64>>,
    vecs: Vec<Array1<f64>>,
    vec_names: Vec<String>,
    vec_accum: Vec<Array1<f64>>,
}

/// Gradients matching a [`ParamStore`]'s shapes. Separate from the store so
/// per-sentence buffers can be produced in parallel and reduced in a fixed
/// order.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    pub mats: Vec<Array2<f64>>,
    pub vecs: Vec<Array1<f64>>,
}

impl GradBuffer {
    pub fn add_assign(&mut self, other: &GradBuffer) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            *a += b;
        }
        for (a, b) in self.vecs.iter_mut().zip(&other.vecs) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for m in &mut self.mats {
            *m *= c;
        }
        for v in &mut self.vecs {
            *v *= c;
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for m in &self.mats {
            sq += m.iter().map(|g| g * g).sum::<f64>();
        }
        for v in &self.vecs {
            sq += v.iter().map(|g| g * g).sum::<f64>();
        }
        sq.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(|m| m.iter().all(|g| g.is_finite()))
            && self.vecs.iter().all(|v| v.iter().all(|g| g.is_finite()))
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            mats: Vec::new(),
            mat_names: Vec::new(),
            mat_accum: Vec::new(),
            vecs: Vec::new(),
            vec_names: Vec::new(),
            vec_accum: Vec::new(),
        }
    }

    pub fn add_matrix<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> MatId {
        let data = match init {
            Init::Glorot => {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
            }
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Uniform(s) => Array2::from_shape_fn((rows, cols), |_| rng.random_range(-s..s)),
        };
        self.mats.push(data);
        self.mat_names.push(name.to_string());
        self.mat_accum.push(Array2::zeros((rows, cols)));
        MatId(self.mats.len() - 1)
    }

    pub fn add_vector(&mut self, name: &str, dim: usize) -> VecId {
        self.vecs.push(Array1::zeros(dim));
        self.vec_names.push(name.to_string());
        self.vec_accum.push(Array1::zeros(dim));
        VecId(self.vecs.len() - 1)
    }

    pub fn mat(&self, id: MatId) -> &Array2<f64> {
        &self.mats[id.0]
    }

    pub fn vec(&self, id: VecId) -> &Array1<f64> {
        &self.vecs[id.0]
    }

    pub fn mat_mut(&mut self, id: MatId) -> &mut Array2<f64> {
        &mut self.mats[id.0]
    }

    pub fn vec_mut(&mut self, id: VecId) -> &mut Array1<f64> {
        &mut self.vecs[id.0]
    }

    pub fn mat_name(&self, id: MatId) -> &str {
        &self.mat_names[id.0]
    }

    pub fn vec_name(&self, id: VecId) -> &str {
        &self.vec_names[id.0]
    }

    pub fn mat_ids(&self) -> impl Iterator<Item = MatId> {
        (0..self.mats.len()).map(MatId)
    }

    pub fn vec_ids(&self) -> impl Iterator<Item = VecId> {
        (0..self.vecs.len()).map(VecId)
    }

    pub fn num_entries(&self) -> usize {
        self.mats.iter().map(|m| m.len()).sum::<usize>()
            + self.vecs.iter().map(|v| v.len()).sum::<usize>()
    }

    pub fn zero_grads(&self) -> GradBuffer {
        GradBuffer {
            mats: self.mats.iter().map(|m| Array2::zeros(m.raw_dim())).collect(),
            vecs: self.vecs.iter().map(|v| Array1::zeros(v.raw_dim())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.mats.iter().all(|m| m.iter().all(|x| x.is_finite()))
            && self.vecs.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// One AdaGrad update: clip the global gradient norm to `clip`, add the
    /// l2 penalty, then apply the per-entry adaptive rule. Accumulators only
    /// ever grow.
    pub fn adagrad_step(&mut self, grads: &GradBuffer, lr: f64, clip: f64, l2: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient in adagrad_step".into()));
        }
        let norm = grads.global_norm();
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        for i in 0..self.mats.len() {
            adagrad_update(
                self.mats[i].iter_mut(),
                grads.mats[i].iter(),
                self.mat_accum[i].iter_mut(),
                scale,
                lr,
                l2,
            );
        }
        for i in 0..self.vecs.len() {
            adagrad_update(
                self.vecs[i].iter_mut(),
                grads.vecs[i].iter(),
                self.vec_accum[i].iter_mut(),
                scale,
                lr,
                l2,
            );
        }
        Ok(())
    }

    /// Serializable view of all parameter arrays (name, shape, row-major data).
    pub fn export(&self) -> Vec<ParamDump> {
        let mats = self.mats.iter().zip(&self.mat_names).map(|(m, name)| ParamDump {
            name: name.clone(),
            shape: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        });
        let vecs = self.vecs.iter().zip(&self.vec_names).map(|(v, name)| ParamDump {
            name: name.clone(),
            shape: vec![v.len()],
            data: v.to_vec(),
        });
        mats.chain(vecs).collect()
    }

    /// Overwrites parameter values from a dump produced by [`export`].
    /// Every array must be present with a matching shape.
    ///
    /// [`export`]: ParamStore::export
    pub fn import(&mut self, dump: &[ParamDump]) -> Result<()> {
        use std::collections::HashMap;
        let by_name: HashMap<&str, &ParamDump> =
            dump.iter().map(|p| (p.name.as_str(), p)).collect();
        for i in 0..self.mats.len() {
            let d = by_name.get(self.mat_names[i].as_str()).ok_or_else(|| {
                Error::Data(format!("checkpoint missing parameter {}", self.mat_names[i]))
            })?;
            let (r, c) = (self.mats[i].nrows(), self.mats[i].ncols());
            if d.shape != [r, c] {
                return Err(Error::Data(format!(
                    "shape mismatch for {}: checkpoint {:?}, model [{r}, {c}]",
                    d.name, d.shape
                )));
            }
            self.mats[i] = Array2::from_shape_vec((r, c), d.data.clone())
                .map_err(|e| Error::Data(e.to_string()))?;
        }
        for i in 0..self.vecs.len() {
            let d = by_name.get(self.vec_names[i].as_str()).ok_or_else(|| {
                Error::Data(format!("checkpoint missing parameter {}", self.vec_names[i]))
            })?;
            let len = self.vecs[i].len();
            if d.shape != [len] {
                return Err(Error::Data(format!(
                    "shape mismatch for {}: checkpoint {:?}, model [{len}]",
                    d.name, d.shape
                )));
            }
            self.vecs[i] = Array1::from_vec(d.data.clone());
        }
        Ok(())
    }
}

fn adagrad_update<'a>(
    params: impl Iterator<Item = &'a mut f64>,
    grads: impl Iterator<Item = &'a f64>,
    accum: impl Iterator<Item = &'a mut f64>,
    scale: f64,
    lr: f64,
    l2: f64,
) {
    for ((w, &g), acc) in params.zip(grads).zip(accum) {
        let g = g * scale + l2 * *w;
        *acc += g * g;
        if *acc > 0.0 {
            *w -= lr * g / acc.sqrt();
        }
    }
}

/// One named array in a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDump {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adagrad_first_step_is_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.add_matrix("w", 1, 1, Init::Zeros, &mut rng);
        store.mat_mut(id)[[0, 0]] = 1.0;
        let mut grads = store.zero_grads();
        grads.mats[0][[0, 0]] = 3.0;
        store.adagrad_step(&grads, 0.01, 10.0, 0.0).unwrap();
        // 1.0 - 0.01 * 3 / sqrt(9) = 0.99
        assert_eq!(store.mat(id)[[0, 0]], 0.99);
    }

    #[test]
    fn global_norm_clip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add_matrix("w", 1, 2, Init::Zeros, &mut rng);
        let mut grads = store.zero_grads();
        grads.mats[0][[0, 0]] = 3.0;
        grads.mats[0][[0, 1]] = 4.0;
        assert_eq!(grads.global_norm(), 5.0);
        let norm = grads.global_norm();
        let scale = 0.25 / norm;
        let mut clipped = grads.clone();
        clipped.scale(scale);
        assert!((clipped.global_norm() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn second_equal_step_is_smaller() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.add_matrix("w", 1, 1, Init::Zeros, &mut rng);
        let mut grads = store.zero_grads();
        grads.mats[0][[0, 0]] = 2.0;
        store.adagrad_step(&grads, 0.1, 100.0, 0.0).unwrap();
        let first = store.mat(id)[[0, 0]];
        store.adagrad_step(&grads, 0.1, 100.0, 0.0).unwrap();
        let second = store.mat(id)[[0, 0]] - first;
        assert!(second.abs() < first.abs());
        assert!(second < 0.0);
    }

    #[test]
    fn zero_gradient_leaves_params_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let id = store.add_matrix("w", 2, 2, Init::Glorot, &mut rng);
        let before = store.mat(id).clone();
        let grads = store.zero_grads();
        store.adagrad_step(&grads, 0.1, 1.0, 0.0).unwrap();
        assert_eq!(store.mat(id), &before);
    }

    #[test]
    fn export_import_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        store.add_matrix("emb", 3, 2, Init::Glorot, &mut rng);
        store.add_vector("b", 4);
        let dump = store.export();
        let mut other = ParamStore::new();
        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        other.add_matrix("emb", 3, 2, Init::Glorot, &mut rng2);
        other.add_vector("b", 4);
        other.import(&dump).unwrap();
        assert_eq!(store.mat(MatId(0)), other.mat(MatId(0)));
    }
}
