//! Test-only oracles shared by the integration tests.
#![allow(dead_code)]

pub mod checks;
pub mod oracles;

use patchfusion::nn::{Bound, Graph, ParamSet, Var};
use patchfusion::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Contracts `out` with fixed pseudo-random weights so every output element
/// contributes to the scalar being differentiated.
pub fn probe_loss(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let v = g.value(out).clone();
    let w = Tensor::from_fn(v.shape(), |_| r.random_range(-1.0..1.0));
    let total: f64 = v.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    g.reduce(total, vec![(out, w)]).unwrap()
}

pub struct GradReport {
    pub max_rel_err: f64,
    pub probes: Vec<(String, usize, f64, f64)>,
}

/// Central finite differences on `n` randomly chosen scalars of the
/// parameters whose names satisfy `select`, compared with the analytic
/// gradient. `loss` builds a fresh scalar from bound parameters.
pub fn finite_difference_check<F>(
    params: &ParamSet<f64>,
    select: impl Fn(&str) -> bool,
    n: usize,
    step: f64,
    seed: u64,
    loss: F,
) -> GradReport
where
    F: Fn(&mut Graph<f64>, &Bound) -> Var,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let l = loss(&mut g, &bound);
    let grads = g.backward(l);
    let analytic = params.gradients(&bound, &grads).unwrap();

    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).filter(|k| select(k)).collect();
    assert!(!names.is_empty(), "no parameters selected");
    let eval = |p: &ParamSet<f64>| {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let l = loss(&mut g, &b);
        g.value(l).data()[0]
    };
    let mut r = rng(seed);
    let mut report = GradReport {
        max_rel_err: 0.0,
        probes: Vec::new(),
    };
    for k in 0..n {
        let name = &names[k % names.len().max(1)];
        let name = if k < names.len() { name } else { &names[r.random_range(0..names.len())] };
        let len = params.get(name).unwrap().numel();
        let idx = r.random_range(0..len);
        let mut plus = params.clone();
        plus.get_mut(name).unwrap().data_mut()[idx] += step;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().data_mut()[idx] -= step;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
        let a = analytic.get(name).unwrap().data()[idx];
        let denom = a.abs().max(numeric.abs()).max(1e-7);
        let rel = (a - numeric).abs() / denom;
        report.max_rel_err = report.max_rel_err.max(rel);
        report.probes.push((name.clone(), idx, a, numeric));
    }
    report
}
