use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{AttentionWeights, Graph, Var};
use crate::layers::{
    CausalLocalAttention, Conv1dDecoder, Conv1dEncoder, LinearLayer, LstmLayer, SegmentBatch,
};
use crate::tensor::Tensor;

use super::{ModelConfig, ModelParams, Variant};

/// Parameters recorded into a graph, by name.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Records every tensor of `params`; `track` selects whether gradients
    /// flow to them.
    pub fn bind(g: &mut Graph, params: &ModelParams, track: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if track { g.param(t.clone()) } else { g.constant(t.clone()) };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Wraps already-recorded vars, e.g. when a caller owns the leaves.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        BoundParams { vars: vars.into_iter().collect() }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    fn lstm(&self, prefix: &str) -> Result<LstmLayer> {
        Ok(LstmLayer {
            w_ih: self.var(&format!("{prefix}.w_ih"))?,
            w_hh: self.var(&format!("{prefix}.w_hh"))?,
            bias: self.var(&format!("{prefix}.bias"))?,
        })
    }

    fn linear(&self, prefix: &str) -> Result<LinearLayer> {
        Ok(LinearLayer { weight: self.var(&format!("{prefix}.weight"))?, bias: self.var(&format!("{prefix}.bias"))? })
    }
}

/// Test and analysis hooks for the forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Replace the noise descriptor `[c^n ; h^n]` by zeros before it reaches
    /// the speech branch and the classifier.
    pub zero_noise_context: bool,
}

/// Graph handles for the outputs of one forward pass.
pub struct ForwardVars {
    pub spectrogram: Var,
    pub mask: Var,
    pub masked: Var,
    pub class_logits: Option<Var>,
    pub denoised: Var,
    pub noise_attention: Option<AttentionWeights>,
    pub speech_attention: Option<AttentionWeights>,
}

/// Materialized result of [`forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// Encoder output `w`, `[T × N]`.
    pub spectrogram: Tensor,
    /// Mask in (0, 1), `[T × N]`.
    pub mask: Tensor,
    /// `w ⊙ mask`.
    pub masked: Tensor,
    /// Per-frame noise-class logits `[T × C]` (classification variants).
    pub class_logits: Option<Tensor>,
    pub denoised: Vec<f64>,
    pub noise_attention: Option<AttentionWeights>,
    pub speech_attention: Option<AttentionWeights>,
}

impl ForwardOutput {
    pub fn frames(&self) -> usize {
        self.mask.shape()[0]
    }

    /// Utterance-level class: majority vote over per-frame argmax.
    pub fn predicted_class(&self) -> Option<usize> {
        self.class_logits.as_ref().map(majority_class)
    }
}

/// Majority vote of per-row argmax; ties go to the lower class id, both
/// inside a row and between vote counts.
pub fn majority_class(logits: &Tensor) -> usize {
    let c = logits.shape()[1];
    let mut votes = vec![0usize; c];
    for row in logits.data().chunks(c) {
        let mut best = 0;
        for (j, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = j;
            }
        }
        votes[best] += 1;
    }
    let mut winner = 0;
    for (j, &n) in votes.iter().enumerate() {
        if n > votes[winner] {
            winner = j;
        }
    }
    winner
}

/// Records the full network on `g` for one segmented utterance.
pub fn build_forward(
    g: &mut Graph,
    config: &ModelConfig,
    p: &BoundParams,
    segments: &SegmentBatch,
    opts: ForwardOptions,
) -> Result<ForwardVars> {
    if segments.meta.segment_len != config.segment_len || segments.meta.hop != config.hop {
        return Err(Error::Config(format!(
            "segmentation L={} hop={} does not match the model (L={} hop={})",
            segments.meta.segment_len, segments.meta.hop, config.segment_len, config.hop
        )));
    }
    let encoder = Conv1dEncoder { basis: p.var("encoder.basis")? };
    let decoder = Conv1dDecoder { basis: p.var("decoder.basis")? };
    let w = encoder.encode(g, segments)?;
    let h = p.lstm("spec_lstm")?.forward(g, w)?;

    let mut noise_attention = None;
    let mut class_logits = None;
    let noise_descriptor = if config.variant.has_classifier() {
        let hn = p.lstm("noise_lstm")?.forward(g, h)?;
        let attn = CausalLocalAttention { weight: p.var("noise_attention.weight")?, window: config.window };
        let (cn, weights) = attn.attend(g, h, hn, h)?;
        noise_attention = Some(weights);
        let mut dn = g.concat_cols(&[cn, hn])?;
        if opts.zero_noise_context {
            dn = g.scale(dn, 0.0)?;
        }
        class_logits = Some(p.linear("classifier")?.forward(g, dn)?);
        Some(dn)
    } else {
        None
    };

    let hs = p.lstm("speech_lstm")?.forward(g, h)?;
    let mut speech_attention = None;
    let features = match (config.variant, noise_descriptor) {
        (Variant::PureLstm, _) => hs,
        (Variant::AttLstm, _) => {
            let attn = CausalLocalAttention { weight: p.var("speech_attention.weight")?, window: config.window };
            let (cs, weights) = attn.attend(g, h, hs, h)?;
            speech_attention = Some(weights);
            g.concat_cols(&[cs, hs])?
        }
        (Variant::CaAttLstm1, Some(dn)) => {
            let attn = CausalLocalAttention { weight: p.var("speech_attention.weight")?, window: config.window };
            let (cs, weights) = attn.attend(g, h, hs, h)?;
            speech_attention = Some(weights);
            g.concat_cols(&[cs, hs, dn])?
        }
        (Variant::CaAttLstm2, Some(dn)) => {
            // keys [d^n_t ; h_k], query [d^n_t ; h^s_t], values h_k
            let attn = CausalLocalAttention { weight: p.var("speech_attention.weight")?, window: config.window };
            let query = g.concat_cols(&[dn, hs])?;
            let (cs, weights) = attn.attend_with_prefix(g, dn, h, query, h)?;
            speech_attention = Some(weights);
            g.concat_cols(&[cs, hs, dn])?
        }
        (v, None) => unreachable!("{v} always has a noise branch"),
    };
    let e = p.linear("enhance")?.forward(g, features)?;
    let e = g.tanh(e)?;
    let m = p.linear("mask")?.forward(g, e)?;
    let mask = g.sigmoid(m)?;
    let masked = g.mul(w, mask)?;
    let denoised = decoder.decode(g, masked, &segments.meta)?;
    Ok(ForwardVars { spectrogram: w, mask, masked, class_logits, denoised, noise_attention, speech_attention })
}

/// Runs the network on a waveform without tracking gradients.
pub fn forward(samples: &[f64], params: &ModelParams) -> Result<ForwardOutput> {
    forward_with(samples, params, ForwardOptions::default())
}

pub fn forward_with(samples: &[f64], params: &ModelParams, opts: ForwardOptions) -> Result<ForwardOutput> {
    params.validate()?;
    let cfg = &params.config;
    let segments = SegmentBatch::from_waveform(samples, cfg.segment_len, cfg.hop)?;
    forward_segments(&segments, params, opts)
}

pub fn forward_segments(segments: &SegmentBatch, params: &ModelParams, opts: ForwardOptions) -> Result<ForwardOutput> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let out = build_forward(&mut g, &params.config, &bound, segments, opts)?;
    Ok(ForwardOutput {
        spectrogram: g.value(out.spectrogram).clone(),
        mask: g.value(out.mask).clone(),
        masked: g.value(out.masked).clone(),
        class_logits: out.class_logits.map(|v| g.value(v).clone()),
        denoised: g.value(out.denoised).data().to_vec(),
        noise_attention: out.noise_attention,
        speech_attention: out.speech_attention,
    })
}
