//! Corpora: WAV I/O, SNR-controlled mixing, manifests and a procedural
//! generator for desk-scale experiments.

mod corpus;
mod manifest;
mod mix;
mod procedural;
mod wav;

pub use corpus::{load_split, synthesize_corpus, write_mixtures, SynthSpec};
pub use manifest::{MixtureManifest, MixtureRow, Split};
pub use mix::{mix_at_snr, mix_details, noise_offset, power, Mixture};
pub use procedural::{procedural_testset, pseudo_speech, synth_noise, ProceduralSpec, NOISE_RECIPES};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav, SampleFormat, WavHeader};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with optional noise label and clean reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Option<usize>,
    pub clean_ref: Option<Vec<f64>>,
}

impl Utterance {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        Ok(Utterance { samples, sample_rate, label: None, clean_ref: None })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_clean_ref(mut self, clean: Vec<f64>) -> Result<Self> {
        if clean.len() != self.samples.len() {
            return Err(Error::Contract(format!(
                "clean reference has {} samples, utterance has {}",
                clean.len(),
                self.samples.len()
            )));
        }
        self.clean_ref = Some(clean);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
