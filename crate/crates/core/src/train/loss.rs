use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{build_forward, BoundParams, ForwardOptions, ForwardVars, ModelParams};
use crate::layers::SegmentBatch;

/// `(1 - alpha) · Σ_n (ŝ(n) - s(n))² + alpha · Σ_t CE(logits_t, label)`.
///
/// Without a classifier head the CE term vanishes and `alpha` is treated
/// as 0. The label is broadcast to every frame.
pub fn joint_loss(g: &mut Graph, out: &ForwardVars, clean: &[f64], label: Option<usize>, alpha: f64) -> Result<Var> {
    let denoised_len = g.value(out.denoised).len();
    if denoised_len != clean.len() {
        return Err(Error::Contract(format!(
            "estimate has {denoised_len} samples, reference has {}",
            clean.len()
        )));
    }
    let target = g.constant(crate::Tensor::vector(clean.to_vec())?);
    let diff = g.sub(out.denoised, target)?;
    let sq = g.square(diff)?;
    let mse = g.sum(sq)?;
    match out.class_logits {
        Some(logits) => {
            let label = label.ok_or_else(|| Error::Contract("classification variant needs a noise label".into()))?;
            let frames = g.value(logits).shape()[0];
            let ce = g.cross_entropy(logits, &vec![label; frames])?;
            let a = g.scale(mse, 1.0 - alpha)?;
            let b = g.scale(ce, alpha)?;
            g.add(a, b)
        }
        None => Ok(mse),
    }
}

/// Records forward and loss for one utterance; returns the loss, the
/// forward handles and the bound parameters.
pub fn utterance_loss(
    g: &mut Graph,
    params: &ModelParams,
    track: bool,
    noisy: &[f64],
    clean: &[f64],
    label: Option<usize>,
    alpha: f64,
) -> Result<(Var, ForwardVars, BoundParams)> {
    let cfg = &params.config;
    let seg = SegmentBatch::from_waveform(noisy, cfg.segment_len, cfg.hop)?;
    let bound = BoundParams::bind(g, params, track);
    let out = build_forward(g, cfg, &bound, &seg, ForwardOptions::default())?;
    let loss = joint_loss(g, &out, clean, label, alpha)?;
    Ok((loss, out, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn vars(g: &mut Graph, denoised: &[f64], logits: Option<Tensor>) -> ForwardVars {
        let d = g.constant(Tensor::vector(denoised.to_vec()).unwrap());
        let z = g.constant(Tensor::zeros(&[1, 1]));
        ForwardVars {
            spectrogram: z,
            mask: z,
            masked: z,
            class_logits: logits.map(|l| g.constant(l)),
            denoised: d,
            noise_attention: None,
            speech_attention: None,
        }
    }

    #[test]
    fn alpha_zero_is_summed_squared_error() {
        let mut g = Graph::new();
        let logits = Tensor::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.0]]).unwrap();
        let out = vars(&mut g, &[0.5, -0.25, 1.0], Some(logits));
        let loss = joint_loss(&mut g, &out, &[0.0, 0.25, 2.0], Some(1), 0.0).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.25 + 0.25 + 1.0);
    }

    #[test]
    fn weighted_sum_of_both_terms() {
        let mut g = Graph::new();
        let logits = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let out = vars(&mut g, &[1.0, 1.0], Some(logits));
        let loss = joint_loss(&mut g, &out, &[0.0, 0.0], Some(0), 0.25).unwrap();
        let ce = 2f64.ln() + ((1f64).exp() + 1.0).ln() - 1.0;
        assert!((g.value(loss).data()[0] - (0.75 * 2.0 + 0.25 * ce)).abs() < 1e-14);
    }

    #[test]
    fn perfect_prediction_tends_to_zero() {
        let mut g = Graph::new();
        let logits = Tensor::from_rows(&vec![vec![-40.0, 40.0]; 3]).unwrap();
        let s = [0.1, -0.2, 0.3];
        let out = vars(&mut g, &s, Some(logits));
        let loss = joint_loss(&mut g, &out, &s, Some(1), 0.5).unwrap();
        assert!(g.value(loss).data()[0] < 1e-30);
    }

    #[test]
    fn classifier_needs_label_and_matching_length() {
        let mut g = Graph::new();
        let out = vars(&mut g, &[0.0, 0.0], Some(Tensor::zeros(&[1, 2])));
        assert!(matches!(joint_loss(&mut g, &out, &[0.0, 0.0], None, 0.1), Err(Error::Contract(_))));
        assert!(matches!(joint_loss(&mut g, &out, &[0.0], Some(0), 0.1), Err(Error::Contract(_))));
    }
}
