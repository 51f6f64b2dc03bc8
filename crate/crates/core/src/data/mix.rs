use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::Utterance;

/// Peak ceiling applied after mixing.
pub const PEAK_LIMIT: f64 = 0.99;

/// Mean squared amplitude.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Everything [`mix_at_snr`] computes, before and after peak limiting.
#[derive(Clone, Debug)]
pub struct Mixture {
    /// Noise segment aligned with the clean signal, before gain.
    pub noise_segment: Vec<f64>,
    pub offset: usize,
    pub gain: f64,
    /// Scalar applied to both the mixture and the clean reference.
    pub peak_scale: f64,
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
}

/// Crop offset into the noise after tiling it to at least `clean_len`.
pub fn noise_offset(seed: u64, noise_len: usize, clean_len: usize) -> usize {
    let tiled = clean_len.div_ceil(noise_len.max(1)) * noise_len;
    let span = tiled.saturating_sub(clean_len);
    if span == 0 {
        0
    } else {
        ChaCha8Rng::seed_from_u64(seed).gen_range(0..=span)
    }
}

pub fn mix_details(clean: &Utterance, noise: &Utterance, snr_db: f64, seed: u64) -> Result<Mixture> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::Input(format!(
            "sample rates differ: clean {} Hz, noise {} Hz",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Input(format!("SNR {snr_db} is not finite")));
    }
    let p_clean = power(&clean.samples);
    if p_clean == 0.0 {
        return Err(Error::Degenerate("clean signal is silent".into()));
    }
    if noise.is_empty() {
        return Err(Error::Degenerate("noise signal is empty".into()));
    }
    let n = clean.len();
    let offset = noise_offset(seed, noise.len(), n);
    let noise_segment: Vec<f64> = (0..n).map(|i| noise.samples[(offset + i) % noise.len()]).collect();
    let p_noise = power(&noise_segment);
    if p_noise == 0.0 {
        return Err(Error::Degenerate("noise segment is silent".into()));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut noisy: Vec<f64> = clean.samples.iter().zip(&noise_segment).map(|(s, v)| s + gain * v).collect();
    let peak = noisy.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let peak_scale = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    let mut clean_scaled = clean.samples.clone();
    if peak_scale != 1.0 {
        noisy.iter_mut().for_each(|x| *x *= peak_scale);
        clean_scaled.iter_mut().for_each(|x| *x *= peak_scale);
    }
    Ok(Mixture { noise_segment, offset, gain, peak_scale, noisy, clean: clean_scaled })
}

/// Adds noise to `clean` at `snr_db`, then peak-limits mixture and clean
/// reference by the same factor. The result carries the clean reference.
pub fn mix_at_snr(clean: &Utterance, noise: &Utterance, snr_db: f64, seed: u64) -> Result<Utterance> {
    let m = mix_details(clean, noise, snr_db, seed)?;
    Utterance::new(m.noisy, clean.sample_rate)?.with_clean_ref(m.clean)
}
