use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::manifest::{MixtureManifest, MixtureRow, Split};
use super::mix::{mix_at_snr, noise_offset};
use super::wav::{read_wav, write_wav, SampleFormat};
use super::Utterance;

/// Row counts, SNR range and seed for [`synthesize_corpus`].
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub snr_min: f64,
    pub snr_max: f64,
    pub seed: u64,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::Input(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

/// Pairs random clean files with random class-labelled noise files.
///
/// `noise_root` holds one directory per class (`noise_root/<class>/*.wav`);
/// classes are numbered in sorted name order. The manifest is written to
/// `manifest_path` and its paths are relative to that file's directory.
pub fn synthesize_corpus(
    clean_dir: impl AsRef<Path>,
    noise_root: impl AsRef<Path>,
    spec: &SynthSpec,
    manifest_path: impl AsRef<Path>,
) -> Result<MixtureManifest> {
    if !(spec.snr_min <= spec.snr_max) {
        return Err(Error::Config(format!("bad SNR range [{}, {}]", spec.snr_min, spec.snr_max)));
    }
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base_abs = std::fs::canonicalize(&base).unwrap_or_else(|_| base.clone());
    let clean_files = wav_files(clean_dir.as_ref())?;
    if clean_files.is_empty() {
        return Err(Error::Input(format!("no clean WAV files in {}", clean_dir.as_ref().display())));
    }
    let root = noise_root.as_ref();
    let rd = std::fs::read_dir(root).map_err(|e| Error::Input(format!("cannot read {}: {e}", root.display())))?;
    let mut class_dirs: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    class_dirs.sort();
    let mut classes = Vec::new();
    let mut noise_files = Vec::new();
    for d in class_dirs {
        let files = wav_files(&d)?;
        if !files.is_empty() {
            classes.push(d.file_name().unwrap().to_string_lossy().into_owned());
            noise_files.push(files);
        }
    }
    if classes.is_empty() {
        return Err(Error::Input(format!("no noise class directories with WAV files under {}", root.display())));
    }

    let lengths = |files: &[PathBuf]| -> Result<Vec<(usize, u32)>> {
        files.iter().map(|p| read_wav(p).map(|u| (u.len(), u.sample_rate))).collect()
    };
    let clean_info = lengths(&clean_files)?;
    let noise_info: Vec<Vec<(usize, u32)>> = noise_files.iter().map(|f| lengths(f)).collect::<Result<_>>()?;
    let sample_rate = clean_info[0].1;
    if clean_info.iter().chain(noise_info.iter().flatten()).any(|&(_, sr)| sr != sample_rate) {
        return Err(Error::Input("corpus files do not share one sample rate".into()));
    }

    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let mut used: HashMap<(usize, usize, usize, usize), Split> = HashMap::new();
    let total = spec.train + spec.valid + spec.test;
    let mut rows = Vec::with_capacity(total);
    for i in 0..total {
        let split = if i < spec.train {
            Split::Train
        } else if i < spec.train + spec.valid {
            Split::Valid
        } else {
            Split::Test
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64 + 1);
        let mut attempt = 0;
        let row = loop {
            let ci = rng.gen_range(0..clean_files.len());
            let class_id = rng.gen_range(0..classes.len());
            let ni = rng.gen_range(0..noise_files[class_id].len());
            let snr_db = if spec.snr_max > spec.snr_min { rng.gen_range(spec.snr_min..=spec.snr_max) } else { spec.snr_min };
            let seed: u64 = rng.gen();
            let offset = noise_offset(seed, noise_info[class_id][ni].0, clean_info[ci].0);
            let key = (ci, class_id, ni, offset);
            match used.get(&key) {
                Some(&s) if s != split => {
                    attempt += 1;
                    if attempt > 1000 {
                        return Err(Error::Input(
                            "corpus too small to keep train/valid/test pairings disjoint".into(),
                        ));
                    }
                }
                _ => {
                    used.insert(key, split);
                    break MixtureRow {
                        clean_path: relative_to(&abs(&clean_files[ci]), &base_abs),
                        noise_path: relative_to(&abs(&noise_files[class_id][ni]), &base_abs),
                        class_id,
                        snr_db,
                        seed,
                        split,
                    };
                }
            }
        };
        rows.push(row);
    }
    let manifest = MixtureManifest { sample_rate, classes, rows, base_dir: base };
    manifest.save(manifest_path)?;
    Ok(manifest)
}

fn build_row(m: &MixtureManifest, row: &MixtureRow) -> Result<Utterance> {
    let clean = read_wav(m.resolve(&row.clean_path))?;
    let noise = read_wav(m.resolve(&row.noise_path))?;
    Ok(mix_at_snr(&clean, &noise, row.snr_db, row.seed)?.with_label(row.class_id))
}

/// Mixes every row of one split: noisy samples, clean reference and label.
pub fn load_split(m: &MixtureManifest, split: Split) -> Result<Vec<Utterance>> {
    m.check_files()?;
    let rows: Vec<&MixtureRow> = m.rows_in(split).collect();
    rows.par_iter().map(|r| build_row(m, r)).collect()
}

/// Writes `mix_XXXXX.wav` per row into `out_dir` (float32).
pub fn write_mixtures(m: &MixtureManifest, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    m.check_files()?;
    m.rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let u = build_row(m, r)?;
            let p = out.join(format!("mix_{i:05}.wav"));
            write_wav(&u, &p, SampleFormat::Float32)?;
            Ok(p)
        })
        .collect()
}
