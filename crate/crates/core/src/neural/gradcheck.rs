//! Central finite differences against analytic gradients.

use super::tape::{Gradients, ParamStore};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Floor on the relative-error denominator. Gradients that vanish exactly
/// (attention key biases, for one) leave only finite-difference roundoff.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

/// Maximum relative error `|fd − an| / max(|fd|, |an|, DENOMINATOR_FLOOR)` over sampled scalars.
///
/// `loss` must be deterministic. At most `samples_per_param` entries of each
/// parameter matrix are perturbed (all entries when the matrix is smaller).
pub fn gradient_check<F>(
    params: &mut ParamStore,
    epsilon: f64,
    samples_per_param: usize,
    seed: u64,
    mut loss: F,
) -> f64
where
    F: FnMut(&ParamStore) -> (f64, Gradients),
{
    let (_, analytic) = loss(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let (rows, cols) = params.value(id).dim();
        let total = rows * cols;
        if total == 0 {
            continue;
        }
        let picks: Vec<usize> = if total <= samples_per_param {
            (0..total).collect()
        } else {
            sample(&mut rng, total, samples_per_param).into_vec()
        };
        for flat in picks {
            let (r, c) = (flat / cols, flat % cols);
            let an = analytic.get(id).map_or(0.0, |g| g[[r, c]]);
            let original = params.value(id)[[r, c]];
            params.value_mut(id)[[r, c]] = original + epsilon;
            let plus = loss(params).0;
            params.value_mut(id)[[r, c]] = original - epsilon;
            let minus = loss(params).0;
            params.value_mut(id)[[r, c]] = original;
            let fd = (plus - minus) / (2.0 * epsilon);
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(DENOMINATOR_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tape::Graph;
    use ndarray::array;

    #[test]
    fn quadratic_loss_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[0.7, -1.3, 2.1], [0.2, 0.0, -0.4]]);
        let err = gradient_check(&mut store, 1e-4, 100, 0, |p| {
            let mut g = Graph::new(p);
            let x = g.param(w);
            let sq = g.mul(x, x);
            let l = g.sum(sq);
            let mut grads = Gradients::new(p);
            g.backward(l, &mut grads);
            (g.scalar(l), grads)
        });
        assert!(err <= 1e-7, "relative error {err}");
    }

    #[test]
    fn composite_ops_pass() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[0.3, -0.8, 0.5], [1.1, 0.2, -0.6]]);
        let gamma = store.add("gamma", array![[1.0, 0.5, -0.3]]);
        let beta = store.add("beta", array![[0.1, 0.0, 0.2]]);
        let b = store.add("b", array![[0.4, 0.9], [-0.5, 0.3], [0.2, -0.7]]);
        let err = gradient_check(&mut store, 1e-6, 100, 1, |p| {
            let mut g = Graph::new(p);
            let av = g.param(a);
            let ga = g.param(gamma);
            let be = g.param(beta);
            let bv = g.param(b);
            let n = g.layer_norm(av, ga, be);
            let n = g.gelu(n);
            let m = g.matmul(n, bv);
            let t = g.tanh(m);
            let q = g.matmul_t(t, t);
            let s = g.softmax(q, Some(&[true, false]));
            let s = g.affine(s, 0.5, 0.25);
            let l = g.ln(s);
            let mean = g.mean_rows(l);
            let sig = g.sigmoid(mean);
            let pick = g.pick(sig, 0, 0);
            let sc = g.mul_scalar(sig, pick);
            let l = g.sum(sc);
            let mut grads = Gradients::new(p);
            g.backward(l, &mut grads);
            (g.scalar(l), grads)
        });
        assert!(err <= 1e-6, "relative error {err}");
    }
}
