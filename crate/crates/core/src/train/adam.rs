use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bias-corrected Adam moments, one pair per named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &BTreeMap<String, Tensor>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params.iter().map(|(k, t)| (k.clone(), vec![0.0; t.len()])).collect();
        AdamState { step: 0, beta1, beta2, eps, m: zeros.clone(), v: zeros }
    }
}

/// One in-place Adam update of every parameter.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for (name, p) in params.iter() {
        match grads.get(name) {
            None => return Err(Error::Contract(format!("no gradient for parameter '{name}'"))),
            Some(g) if g.shape() != p.shape() => {
                return Err(Error::Contract(format!("gradient for '{name}' has shape {:?}", g.shape())))
            }
            Some(_) => {}
        }
        if !state.m.contains_key(name) {
            return Err(Error::Contract(format!("optimizer state lacks '{name}'")));
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(state.step as f64);
    let c2 = 1.0 - b2.powf(state.step as f64);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).unwrap();
        let v = state.v.get_mut(name).unwrap();
        for (((x, gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().flat_map(|t| t.data()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, x: f64) -> BTreeMap<String, Tensor> {
        [(name.to_string(), Tensor::scalar(x))].into()
    }

    /// Textbook scalar Adam.
    fn scalar_adam(x0: f64, steps: usize, lr: f64, grad: impl Fn(f64) -> f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut traj = Vec::new();
        for t in 1..=steps {
            let g = grad(x);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
            traj.push(x);
        }
        traj
    }

    #[test]
    fn matches_scalar_reference_on_parabola() {
        let expected = scalar_adam(1.0, 3, 0.1, |x| 2.0 * x);
        let mut p = single("x", 1.0);
        let mut st = AdamState::new(&p, 0.9, 0.999, 1e-8);
        for want in expected {
            let g = single("x", 2.0 * p["x"].data()[0]);
            adam_step(&mut p, &g, &mut st, 0.1).unwrap();
            assert!((p["x"].data()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_moves_by_about_lr_against_gradient() {
        for g0 in [-3.0, 0.02, 50.0] {
            let mut p = single("x", 0.0);
            let mut st = AdamState::new(&p, 0.9, 0.999, 1e-8);
            adam_step(&mut p, &single("x", g0), &mut st, 0.01).unwrap();
            let dx = p["x"].data()[0];
            assert_eq!(dx.signum(), -g0.signum());
            assert!(dx.abs() <= 0.01 * (1.0 + 1e-6));
            assert!(dx.abs() > 0.01 * 0.99);
        }
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_and_decays_moments() {
        let mut p = single("x", 0.7);
        let mut st = AdamState::new(&p, 0.9, 0.999, 1e-8);
        adam_step(&mut p, &single("x", 0.0), &mut st, 0.1).unwrap();
        assert_eq!(p["x"].data()[0], 0.7);
        st.m.insert("x".into(), vec![1.0]);
        st.v.insert("x".into(), vec![1.0]);
        adam_step(&mut p, &single("x", 0.0), &mut st, 0.1).unwrap();
        assert_eq!(st.m["x"], vec![0.9]);
        assert_eq!(st.v["x"], vec![0.999]);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = single("x", 1.0);
        let mut st = AdamState::new(&p, 0.9, 0.999, 1e-8);
        assert!(matches!(adam_step(&mut p, &single("y", 1.0), &mut st, 0.1), Err(Error::Contract(_))));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn step_decreases_convex_objective() {
        let mut p = single("x", 2.0);
        let mut st = AdamState::new(&p, 0.9, 0.999, 1e-8);
        let f = |x: f64| (x - 0.5).powi(2);
        let before = f(2.0);
        adam_step(&mut p, &single("x", 2.0 * (2.0 - 0.5)), &mut st, 0.01).unwrap();
        assert!(f(p["x"].data()[0]) < before);
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut g: BTreeMap<String, Tensor> =
            [("a".to_string(), Tensor::vector(vec![3.0, 0.0]).unwrap()), ("b".to_string(), Tensor::scalar(4.0))].into();
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g["a"].data()[0] - 0.6).abs() < 1e-15);
        assert!((g["b"].data()[0] - 0.8).abs() < 1e-15);
    }
}
