//! Finite-difference helpers shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Matrix;

pub fn loss_and_grads(
    store: &ParamStore<f64>,
    f: &impl for<'s> Fn(&mut Graph<'s, f64>) -> Var,
) -> (f64, Gradients<f64>) {
    let mut g = Graph::new(store);
    let out = f(&mut g);
    (g.scalar(out), g.backward(out))
}

/// Central difference of `f` along one parameter entry.
pub fn central_difference(
    store: &mut ParamStore<f64>,
    id: ParamId,
    index: usize,
    h: f64,
    f: &impl for<'s> Fn(&mut Graph<'s, f64>) -> Var,
) -> f64 {
    let orig = store.get(id).as_slice()[index];
    store.get_mut(id).as_mut_slice()[index] = orig + h;
    let up = loss_and_grads(store, f).0;
    store.get_mut(id).as_mut_slice()[index] = orig - h;
    let down = loss_and_grads(store, f).0;
    store.get_mut(id).as_mut_slice()[index] = orig;
    (up - down) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares analytic gradients with central differences on up to `samples`
/// random entries of each listed parameter. Returns the worst relative error.
pub fn worst_gradient_error(
    store: &mut ParamStore<f64>,
    ids: &[ParamId],
    samples: usize,
    f: &impl for<'s> Fn(&mut Graph<'s, f64>) -> Var,
) -> f64 {
    let (_, grads) = loss_and_grads(store, f);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for &id in ids {
        let n = store.get(id).len();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| {
            let (r, c) = store.get(id).shape();
            Matrix::zeros(r, c)
        });
        for _ in 0..samples.min(n) {
            let i = rng.gen_range(0..n);
            let numeric = central_difference(store, id, i, 1e-5, f);
            worst = worst.max(rel_err(analytic.as_slice()[i], numeric, 1e-6));
        }
    }
    worst
}

/// Replaces every entry with a uniform draw in `[-scale, scale]`.
pub fn randomise(store: &mut ParamStore<f64>, ids: &[ParamId], scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &id in ids {
        for v in store.get_mut(id).as_mut_slice() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}
