use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Network variant, from the plain two-layer LSTM up to the model whose
/// speech attention is conditioned on the noise embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    PureLstm,
    AttLstm,
    CaAttLstm1,
    CaAttLstm2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::PureLstm, Variant::AttLstm, Variant::CaAttLstm1, Variant::CaAttLstm2];

    pub fn has_classifier(self) -> bool {
        matches!(self, Variant::CaAttLstm1 | Variant::CaAttLstm2)
    }

    pub fn has_speech_attention(self) -> bool {
        self != Variant::PureLstm
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::PureLstm => "pure-lstm",
            Variant::AttLstm => "att-lstm",
            Variant::CaAttLstm1 => "ca-att-lstm1",
            Variant::CaAttLstm2 => "ca-att-lstm2",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (expected one of pure-lstm, att-lstm, ca-att-lstm1, ca-att-lstm2)")))
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder/decoder filters (N); also the mask width.
    pub n_filters: usize,
    /// Segment length in samples (L).
    pub segment_len: usize,
    pub hop: usize,
    /// Spectrogram encoder hidden size (H).
    pub spec_hidden: usize,
    pub noise_hidden: usize,
    pub speech_hidden: usize,
    /// Enhancement vector size.
    pub enhance_dim: usize,
    pub classes: usize,
    /// Causal attention looks back this many frames.
    pub window: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_filters: 512,
            segment_len: 160,
            hop: 80,
            spec_hidden: 256,
            noise_hidden: 112,
            speech_hidden: 112,
            enhance_dim: 256,
            classes: 20,
            window: 5,
            variant: Variant::CaAttLstm2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("n_filters", self.n_filters),
            ("segment_len", self.segment_len),
            ("hop", self.hop),
            ("spec_hidden", self.spec_hidden),
            ("noise_hidden", self.noise_hidden),
            ("speech_hidden", self.speech_hidden),
            ("enhance_dim", self.enhance_dim),
            ("window", self.window),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hop > self.segment_len {
            return Err(Error::Config(format!("hop {} exceeds segment length {}", self.hop, self.segment_len)));
        }
        if self.variant.has_classifier() && self.classes < 2 {
            return Err(Error::Config(format!("{} needs at least 2 noise classes", self.variant)));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.to_string()),
            ("n_filters", self.n_filters.to_string()),
            ("segment_len", self.segment_len.to_string()),
            ("hop", self.hop.to_string()),
            ("spec_hidden", self.spec_hidden.to_string()),
            ("noise_hidden", self.noise_hidden.to_string()),
            ("speech_hidden", self.speech_hidden.to_string()),
            ("enhance_dim", self.enhance_dim.to_string()),
            ("classes", self.classes.to_string()),
            ("window", self.window.to_string()),
        ]
    }

    /// Applies one `key = value` setting; returns `false` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let parse = |v: &str| {
            v.trim().parse::<usize>().map_err(|_| Error::Config(format!("{key}: '{v}' is not a positive integer")))
        };
        match key {
            "variant" => self.variant = value.parse()?,
            "n_filters" => self.n_filters = parse(value)?,
            "segment_len" => self.segment_len = parse(value)?,
            "hop" => self.hop = parse(value)?,
            "spec_hidden" => self.spec_hidden = parse(value)?,
            "noise_hidden" => self.noise_hidden = parse(value)?,
            "speech_hidden" => self.speech_hidden = parse(value)?,
            "enhance_dim" => self.enhance_dim = parse(value)?,
            "classes" => self.classes = parse(value)?,
            "window" => self.window = parse(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Input width of the enhancement head.
    pub fn enhance_input(&self) -> usize {
        let noise = self.spec_hidden + self.noise_hidden;
        match self.variant {
            Variant::PureLstm => self.speech_hidden,
            Variant::AttLstm => self.spec_hidden + self.speech_hidden,
            Variant::CaAttLstm1 | Variant::CaAttLstm2 => self.spec_hidden + self.speech_hidden + noise,
        }
    }

    /// Named parameter shapes for this configuration, in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (n, l, h) = (self.n_filters, self.segment_len, self.spec_hidden);
        let (hn, hs, es) = (self.noise_hidden, self.speech_hidden, self.enhance_dim);
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>| shapes.push((name.to_string(), shape));
        let lstm = |push: &mut dyn FnMut(&str, Vec<usize>), name: &str, din: usize, hid: usize| {
            push(&format!("{name}.w_ih"), vec![4 * hid, din]);
            push(&format!("{name}.w_hh"), vec![4 * hid, hid]);
            push(&format!("{name}.bias"), vec![4 * hid]);
        };
        push("encoder.basis", vec![n, l]);
        push("decoder.basis", vec![n, l]);
        lstm(&mut push, "spec_lstm", n, h);
        if self.variant.has_classifier() {
            lstm(&mut push, "noise_lstm", h, hn);
            push("noise_attention.weight", vec![h, hn]);
            push("classifier.weight", vec![self.classes, h + hn]);
            push("classifier.bias", vec![self.classes]);
        }
        lstm(&mut push, "speech_lstm", h, hs);
        match self.variant {
            Variant::PureLstm => {}
            Variant::AttLstm | Variant::CaAttLstm1 => push("speech_attention.weight", vec![h, hs]),
            Variant::CaAttLstm2 => push("speech_attention.weight", vec![h + hn + h, h + hn + hs]),
        }
        push("enhance.weight", vec![es, self.enhance_input()]);
        push("enhance.bias", vec![es]);
        push("mask.weight", vec![n, es]);
        push("mask.bias", vec![n]);
        shapes
    }
}
