//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ca_denoise::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst elementwise mismatch between backward-pass gradients and central
/// finite differences.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub worst_rel: f64,
    pub worst_at: String,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_rel <= tol
    }
}

/// Relative error with an absolute floor for gradients that are
/// analytically zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / scale
}

/// Central-difference check of every element of every input.
///
/// `build` records a scalar loss from the supplied input vars; it is called
/// once with tracked inputs for the analytic gradient and twice per element
/// with constant inputs for the numeric one.
pub fn check_gradients(
    names: &[&str],
    inputs: &[Tensor],
    h: f64,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> GradReport {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();

    let eval = |perturbed: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars).unwrap();
        g.value(loss).data()[0]
    };

    let mut report = GradReport { worst_rel: 0.0, worst_at: String::new(), checked: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).unwrap().clone();
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work);
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_err(analytic.data()[j], numeric);
            report.checked += 1;
            if err > report.worst_rel {
                report.worst_rel = err;
                report.worst_at = format!("{}[{j}] analytic={} numeric={numeric}", names[i], analytic.data()[j]);
            }
        }
    }
    report
}
