//! Procedural stand-ins for speech and noise corpora.
//!
//! Clean signals are harmonic "syllables" with gliding pitch and two
//! formant-like spectral bumps; noise classes are spectrally distinct
//! stochastic processes, one recipe per class id.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::manifest::{MixtureManifest, MixtureRow, Split};
use super::wav::{write_wav, SampleFormat};
use super::Utterance;

pub const NOISE_RECIPES: [&str; 8] = ["white", "lowpass", "am-tones", "chirp", "highpass", "clicks", "hum", "babble"];

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}

/// Rounds to `f32` so that WAV round-trips are exact.
fn to_f32_grid(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = f64::from(*v as f32));
}

/// Harmonic pseudo-speech of `len` samples. Never silent.
pub fn pseudo_speech(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    let mut out = vec![0.0; len];
    let mut pos = rng.gen_range(0..(0.05 * sr) as usize + 1);
    let mut voiced_any = false;
    while pos < len || !voiced_any {
        let start = if pos >= len { 0 } else { pos };
        let dur = ((rng.gen_range(0.08..0.25) * sr) as usize).clamp(1, len - start);
        let f0_start = rng.gen_range(90.0..250.0);
        let f0_end = f0_start * rng.gen_range(0.8..1.25);
        let formants = [rng.gen_range(300.0..900.0), rng.gen_range(1000.0..2800.0)];
        let mut phase = 0.0;
        for i in 0..dur {
            let frac = i as f64 / dur as f64;
            let f0 = f0_start + (f0_end - f0_start) * frac;
            phase += 2.0 * PI * f0 / sr;
            let env = (PI * frac).sin().powi(2);
            let mut s = 0.0;
            let mut k = 1.0;
            while k * f0 < 0.45 * sr.min(8000.0 * 2.0) && k <= 30.0 {
                let f = k * f0;
                let amp = formants.iter().map(|&fc| (-((f - fc) / 250.0).powi(2)).exp()).sum::<f64>() + 0.15 / k;
                s += amp * (k * phase).sin();
                k += 1.0;
            }
            out[start + i] += env * s;
        }
        voiced_any = true;
        pos = start + dur + (rng.gen_range(0.03..0.12) * sr) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    out
}

/// One noise recipe per class id; RMS normalized to 0.1.
pub fn synth_noise(class_id: usize, rng: &mut ChaCha8Rng, len: usize, sample_rate: u32) -> Result<Vec<f64>> {
    let sr = f64::from(sample_rate);
    let mut x: Vec<f64> = match NOISE_RECIPES.get(class_id) {
        None => {
            return Err(Error::Config(format!(
                "only {} noise recipes exist, class id {class_id} requested",
                NOISE_RECIPES.len()
            )))
        }
        Some(&"white") => (0..len).map(|_| gaussian(rng)).collect(),
        Some(&"lowpass") => {
            let mut y = 0.0;
            (0..len)
                .map(|_| {
                    y = 0.97 * y + gaussian(rng);
                    y
                })
                .collect()
        }
        Some(&"am-tones") => {
            let tones: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| (rng.gen_range(300.0..3000.0), rng.gen_range(2.0..8.0), rng.gen_range(0.0..2.0 * PI)))
                .collect();
            (0..len)
                .map(|n| {
                    let t = n as f64 / sr;
                    tones.iter().map(|&(f, m, p)| (1.0 + (2.0 * PI * m * t + p).sin()) * (2.0 * PI * f * t).sin()).sum()
                })
                .collect()
        }
        Some(&"chirp") => {
            let period = rng.gen_range(0.3..0.8);
            let (f_lo, f_hi) = (200.0, 6000.0f64.min(0.45 * sr));
            let offset = rng.gen_range(0.0..period);
            (0..len)
                .map(|n| {
                    let t = (n as f64 / sr + offset) % period;
                    let k = (f_hi - f_lo) / period;
                    (2.0 * PI * (f_lo * t + 0.5 * k * t * t)).sin()
                })
                .collect()
        }
        Some(&"highpass") => {
            let mut prev = 0.0;
            (0..len)
                .map(|_| {
                    let w = gaussian(rng);
                    let y = w - prev;
                    prev = w;
                    y
                })
                .collect()
        }
        Some(&"clicks") => {
            let rate = 25.0 / sr;
            let mut env = 0.0f64;
            let mut sign = 1.0;
            (0..len)
                .map(|_| {
                    if rng.gen::<f64>() < rate {
                        env = rng.gen_range(0.5..1.0);
                        sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    }
                    env *= 0.995;
                    sign = -sign;
                    env * sign + 0.01 * gaussian(rng)
                })
                .collect()
        }
        Some(&"hum") => {
            let base = if rng.gen::<bool>() { 50.0 } else { 60.0 };
            (0..len)
                .map(|n| {
                    let t = n as f64 / sr;
                    (1..=8).map(|k| (2.0 * PI * base * k as f64 * t).sin() / k as f64).sum::<f64>()
                        + 0.05 * gaussian(rng)
                })
                .collect()
        }
        Some(_) => {
            let mut acc = vec![0.0; len];
            for _ in 0..5 {
                for (a, s) in acc.iter_mut().zip(pseudo_speech(rng, len, sample_rate)) {
                    *a += s;
                }
            }
            acc
        }
    };
    normalize_rms(&mut x, 0.1);
    Ok(x)
}

/// Shape of a procedural corpus.
#[derive(Clone, Debug)]
pub struct ProceduralSpec {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub snr_min: f64,
    pub snr_max: f64,
    pub valid: usize,
    pub test: usize,
}

impl ProceduralSpec {
    /// Default split: 15 % validation, 15 % test, rest training.
    pub fn new(classes: usize, per_class: usize, seed: u64) -> Self {
        let total = classes * per_class;
        let held = (total as f64 * 0.15).round() as usize;
        ProceduralSpec {
            classes,
            per_class,
            seed,
            duration_s: 1.0,
            sample_rate: super::DEFAULT_SAMPLE_RATE,
            snr_min: 0.0,
            snr_max: 20.0,
            valid: held,
            test: held,
        }
    }
}

/// Writes `clean/`, `noise/<class>/` WAVs and `manifest.txt` under `out_dir`.
///
/// Row `i` has class `i mod C`, its own clean and noise file, and is
/// assigned to train, valid, test in that order of blocks.
pub fn procedural_testset(out_dir: impl AsRef<Path>, spec: &ProceduralSpec) -> Result<MixtureManifest> {
    let out = out_dir.as_ref();
    if spec.classes < 2 {
        return Err(Error::Config("procedural corpus needs at least 2 classes".into()));
    }
    if spec.classes > NOISE_RECIPES.len() {
        return Err(Error::Config(format!(
            "{} classes requested, only {} noise recipes available",
            spec.classes,
            NOISE_RECIPES.len()
        )));
    }
    if spec.snr_min > spec.snr_max || !spec.snr_min.is_finite() || !spec.snr_max.is_finite() {
        return Err(Error::Config(format!("bad SNR range [{}, {}]", spec.snr_min, spec.snr_max)));
    }
    let total = spec.classes * spec.per_class;
    if total == 0 {
        return Err(Error::Config("procedural corpus would be empty".into()));
    }
    if spec.valid + spec.test > total {
        return Err(Error::Config(format!("{} held-out rows exceed {total} total", spec.valid + spec.test)));
    }
    let len = (spec.duration_s * f64::from(spec.sample_rate)).round() as usize;
    if len == 0 {
        return Err(Error::Config("duration too short".into()));
    }
    let classes: Vec<String> = NOISE_RECIPES[..spec.classes].iter().map(|s| s.to_string()).collect();
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(&out.join("clean"))?;
    for c in &classes {
        mkdir(&out.join("noise").join(c))?;
    }
    let train = total - spec.valid - spec.test;
    let mut rows = Vec::with_capacity(total);
    for i in 0..total {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64 + 1);
        let class_id = i % spec.classes;
        let mut clean = pseudo_speech(&mut rng, len, spec.sample_rate);
        let noise_len = len + len / 2;
        let mut noise = synth_noise(class_id, &mut rng, noise_len, spec.sample_rate)?;
        to_f32_grid(&mut clean);
        to_f32_grid(&mut noise);
        let snr_db = if spec.snr_max > spec.snr_min { rng.gen_range(spec.snr_min..=spec.snr_max) } else { spec.snr_min };
        let seed: u64 = rng.gen();
        let clean_path = Path::new("clean").join(format!("clean_{i:05}.wav"));
        let noise_path = Path::new("noise").join(&classes[class_id]).join(format!("noise_{i:05}.wav"));
        write_wav(&Utterance::new(clean, spec.sample_rate)?, out.join(&clean_path), SampleFormat::Float32)?;
        write_wav(&Utterance::new(noise, spec.sample_rate)?, out.join(&noise_path), SampleFormat::Float32)?;
        let split = if i < train {
            Split::Train
        } else if i < train + spec.valid {
            Split::Valid
        } else {
            Split::Test
        };
        rows.push(MixtureRow { clean_path, noise_path, class_id, snr_db, seed, split });
    }
    let manifest = MixtureManifest { sample_rate: spec.sample_rate, classes, rows, base_dir: out.to_path_buf() };
    manifest.save(out.join("manifest.txt"))?;
    Ok(manifest)
}
