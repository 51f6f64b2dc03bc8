use crate::error::{Error, Result};

/// SI-SDR magnitude cap, in dB, applied to exact (or exactly zero) estimates.
pub const SI_SDR_CAP_DB: f64 = 100.0;

fn check_lengths(estimate: &[f64], reference: &[f64]) -> Result<()> {
    if estimate.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Dimension("empty signals".into()));
    }
    Ok(())
}

fn ratio_db(signal: f64, noise: f64, lo: f64, hi: f64) -> f64 {
    if noise == 0.0 {
        return hi;
    }
    if signal == 0.0 {
        return lo;
    }
    (10.0 * (signal / noise).log10()).clamp(lo, hi)
}

/// Scale-invariant signal-to-distortion ratio in dB, clamped to ±[`SI_SDR_CAP_DB`].
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(estimate, reference)?;
    let ref_energy: f64 = reference.iter().map(|s| s * s).sum();
    if ref_energy == 0.0 {
        return Err(Error::Degenerate("SI-SDR reference is all zeros".into()));
    }
    let alpha = estimate.iter().zip(reference).map(|(e, s)| e * s).sum::<f64>() / ref_energy;
    let mut target = 0.0;
    let mut residual = 0.0;
    for (e, s) in estimate.iter().zip(reference) {
        let t = alpha * s;
        target += t * t;
        residual += (t - e) * (t - e);
    }
    Ok(ratio_db(target, residual, -SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegSnrParams {
    pub frame_len: usize,
    pub floor_db: f64,
    pub ceil_db: f64,
    /// Frames whose reference energy is this many dB below the loudest
    /// frame are skipped.
    pub silence_db: f64,
}

impl Default for SegSnrParams {
    fn default() -> Self {
        SegSnrParams { frame_len: 256, floor_db: -10.0, ceil_db: 35.0, silence_db: 40.0 }
    }
}

/// Mean per-frame SNR over non-silent reference frames. A trailing partial
/// frame counts as a frame.
pub fn segmental_snr(estimate: &[f64], reference: &[f64], p: &SegSnrParams) -> Result<f64> {
    check_lengths(estimate, reference)?;
    if p.frame_len == 0 || !(p.floor_db < p.ceil_db) {
        return Err(Error::Config(format!("bad segmental SNR parameters {p:?}")));
    }
    let frames: Vec<(f64, f64)> = reference
        .chunks(p.frame_len)
        .zip(estimate.chunks(p.frame_len))
        .map(|(s, e)| {
            let sig = s.iter().map(|x| x * x).sum::<f64>();
            let err = s.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (sig, err)
        })
        .collect();
    let loudest = frames.iter().map(|f| f.0).fold(0.0, f64::max);
    if loudest == 0.0 {
        return Err(Error::Degenerate("segmental SNR reference is silent".into()));
    }
    let threshold = loudest * 10f64.powf(-p.silence_db / 10.0);
    let active: Vec<f64> = frames
        .iter()
        .filter(|f| f.0 > threshold)
        .map(|&(sig, err)| ratio_db(sig, err, p.floor_db, p.ceil_db))
        .collect();
    Ok(active.iter().sum::<f64>() / active.len() as f64)
}
