//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::nn::params::{GradBuffer, ParamStore};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub entries_checked: usize,
}

/// Compares analytic gradients against central differences over every entry
/// of every parameter. `analytic` returns the full gradient at the current
/// parameters; `loss` evaluates the objective only. The relative error for
/// an entry is |fd - an| / max(floor, |fd|, |an|), which keeps near-zero
/// gradients from blowing up the ratio.
pub fn grad_check<A, L>(
    store: &mut ParamStore,
    mut analytic: A,
    mut loss: L,
    step: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    A: FnMut(&ParamStore) -> Result<GradBuffer>,
    L: FnMut(&ParamStore) -> Result<f64>,
{
    let grads = analytic(store)?;
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;

    let mat_ids: Vec<_> = store.mat_ids().collect();
    for id in mat_ids {
        let (rows, cols) = (store.mat(id).nrows(), store.mat(id).ncols());
        for r in 0..rows {
            for c in 0..cols {
                let original = store.mat(id)[[r, c]];
                store.mat_mut(id)[[r, c]] = original + step;
                let plus = loss(store)?;
                store.mat_mut(id)[[r, c]] = original - step;
                let minus = loss(store)?;
                store.mat_mut(id)[[r, c]] = original;
                let fd = (plus - minus) / (2.0 * step);
                let an = grads.mats[id.0][[r, c]];
                let rel = (fd - an).abs() / floor.max(fd.abs()).max(an.abs());
                checked += 1;
                if rel > max_rel {
                    max_rel = rel;
                    worst = format!("{}[{r},{c}]", store.mat_name(id));
                }
            }
        }
    }
    let vec_ids: Vec<_> = store.vec_ids().collect();
    for id in vec_ids {
        let len = store.vec(id).len();
        for i in 0..len {
            let original = store.vec(id)[i];
            store.vec_mut(id)[i] = original + step;
            let plus = loss(store)?;
            store.vec_mut(id)[i] = original - step;
            let minus = loss(store)?;
            store.vec_mut(id)[i] = original;
            let fd = (plus - minus) / (2.0 * step);
            let an = grads.vecs[id.0][i];
            let rel = (fd - an).abs() / floor.max(fd.abs()).max(an.abs());
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{}[{i}]", store.vec_name(id));
            }
        }
    }

    Ok(GradCheckReport { max_rel_error: max_rel, worst_param: worst, entries_checked: checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::lstm::LstmCell;
    use crate::nn::params::{Init, ParamStore};
    use crate::nn::stack_rnn::StackRnn;
    use crate::nn::tape::Tape;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exercises every cell type in one graph: embedding rows, a recurrent
    /// chain, a stack push/pop path, the reduce composition, an output
    /// projection, and a masked log-softmax.
    #[test]
    fn finite_differences_agree_on_composite_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        let embed = store.add_matrix("embed", 4, 3, Init::Uniform(0.01), &mut rng);
        let cell = LstmCell::new(&mut store, "cell", 3, 4, 1, &mut rng);
        let comp_w = store.add_matrix("comp.w", 3, 9, Init::Uniform(0.01), &mut rng);
        let comp_b = store.add_vector("comp.b", 3);
        let out_w = store.add_matrix("out.w", 3, 4, Init::Uniform(0.01), &mut rng);
        let out_b = store.add_vector("out.b", 3);
        // scale all parameters to ~1e-2 magnitude
        for id in store.mat_ids().collect::<Vec<_>>() {
            let m = store.mat_mut(id);
            if m.iter().all(|&x| x == 0.0) {
                continue;
            }
            m.mapv_inplace(|x| x.clamp(-0.02, 0.02));
        }
        let mut pert = ChaCha8Rng::seed_from_u64(43);
        for id in store.vec_ids().collect::<Vec<_>>() {
            let v = store.vec_mut(id);
            v.mapv_inplace(|_| pert.random_range(-0.01..0.01));
        }

        let build = |store: &ParamStore| -> crate::error::Result<(f64, GradBuffer)> {
            let mut tape = Tape::new(store);
            let e0 = tape.embed_row(embed, 0);
            let e1 = tape.embed_row(embed, 1);
            let e2 = tape.embed_row(embed, 2);
            let mut stack = StackRnn::new(&cell, &mut tape);
            stack.push(&mut tape, e0);
            stack.push(&mut tape, e1);
            stack.pop();
            stack.push(&mut tape, e2);
            // reduce composition over the two embedding vectors + a direction cell
            let dir = tape.embed_row(embed, 3);
            let cat = tape.concat3(e0, e2, dir);
            let lin = tape.matvec(comp_w, cat);
            let pre = tape.add_param_vec(lin, comp_b);
            let composed = tape.tanh(pre);
            stack.pop();
            stack.push(&mut tape, composed);
            let summary = stack.summary();
            let lin2 = tape.matvec(out_w, summary);
            let logits = tape.add_param_vec(lin2, out_b);
            let logp = tape.masked_log_softmax(logits, &[true, true, false])?;
            let picked = tape.pick(logp, 0);
            let sq = tape.dot(summary, summary);
            let loss = tape.sum_scaled(vec![(picked, 1.0), (sq, 0.5)]);
            let mut grads = store.zero_grads();
            tape.backward(loss, &mut grads)?;
            Ok((tape.scalar(loss), grads))
        };

        let report = grad_check(
            &mut store,
            |s| build(s).map(|(_, g)| g),
            |s| build(s).map(|(l, _)| l),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "max rel error {} at {}",
            report.max_rel_error,
            report.worst_param
        );
        assert!(report.entries_checked > 50);
    }

    #[test]
    fn adagrad_descends_convex_quadratic() {
        // loss = x^T A x with A diagonal positive; AdaGrad with l2 = 0 must
        // decrease it monotonically over 100 steps.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let x = store.add_vector("x", 3);
        store.vec_mut(x).assign(&Array1::from_vec(vec![1.0, -2.0, 0.5]));
        let a = [0.5, 2.0, 1.0];
        let initial = 0.5 + 8.0 + 0.25;
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let snapshot = store.clone();
            let mut tape = Tape::new(&snapshot);
            let xv = tape.param_vec(x);
            let ax = tape.mul_const_vec(xv, Array1::from_vec(a.to_vec()));
            let loss = tape.dot(xv, ax);
            let value = tape.scalar(loss);
            assert!(value < prev, "loss {value} did not decrease from {prev}");
            prev = value;
            let mut grads = store.zero_grads();
            tape.backward(loss, &mut grads).unwrap();
            store.adagrad_step(&grads, 0.1, 1e9, 0.0).unwrap();
        }
        assert!(prev < initial / 2.0);
        let _ = rng.random::<u64>();
    }
}
