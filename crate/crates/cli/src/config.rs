use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ca_denoise::model::ModelConfig;
use ca_denoise::train::TrainConfig;
use ca_denoise::Error;

/// Name of the resolved configuration written into every output directory.
pub const RESOLVED_FILE: &str = "run.conf";

/// Environment variable that relocates relative output directories.
pub const OUT_ROOT_ENV: &str = "CA_DENOISE_OUT_ROOT";

/// Corpus synthesis settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub procedural: bool,
    pub classes: usize,
    pub per_class: usize,
    pub duration_s: f64,
    pub snr_min: f64,
    pub snr_max: f64,
    pub train: Option<usize>,
    pub valid: Option<usize>,
    pub test: Option<usize>,
    pub clean_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub write_mixtures: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            procedural: false,
            classes: 4,
            per_class: 25,
            duration_s: 1.0,
            snr_min: 0.0,
            snr_max: 20.0,
            train: None,
            valid: None,
            test: None,
            clean_dir: None,
            noise_dir: None,
            write_mixtures: false,
        }
    }
}

/// Fully merged settings for one subcommand invocation.
///
/// Keys: `seed`, `out`, `manifest`, `checkpoint`, `split`, `model.<key>`,
/// `train.<key>` and `synth.<key>`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            manifest: None,
            checkpoint: None,
            split: "test".into(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            explicit: BTreeSet::new(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: '{v}' is not a boolean")).into()),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")).into())
}

fn parse_opt_count(key: &str, v: &str) -> Result<Option<usize>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (v != "none").then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("none".into(), |p| p.display().to_string())
}

fn show_count(c: Option<usize>) -> String {
    c.map_or("auto".into(), |c| c.to_string())
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => {
                self.seed = parse_num(key, v)?;
                self.train.seed = self.seed;
            }
            "out" => self.out = opt_path(v),
            "manifest" => self.manifest = opt_path(v),
            "checkpoint" => self.checkpoint = opt_path(v),
            "split" => self.split = v.to_string(),
            _ => {
                if let Some(k) = key.strip_prefix("model.") {
                    if !self.model.set(k, v)? {
                        bail!(Error::Config(format!("unknown key '{key}'")));
                    }
                } else if let Some(k) = key.strip_prefix("train.") {
                    if !self.train.set(k, v)? {
                        bail!(Error::Config(format!("unknown key '{key}'")));
                    }
                } else if let Some(k) = key.strip_prefix("synth.") {
                    self.set_synth(key, k, v)?;
                } else {
                    bail!(Error::Config(format!("unknown key '{key}'")));
                }
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    fn set_synth(&mut self, key: &str, k: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        match k {
            "procedural" => s.procedural = parse_bool(key, v)?,
            "classes" => s.classes = parse_num(key, v)?,
            "per_class" => s.per_class = parse_num(key, v)?,
            "duration" => s.duration_s = parse_num(key, v)?,
            "snr_min" => s.snr_min = parse_num(key, v)?,
            "snr_max" => s.snr_max = parse_num(key, v)?,
            "train" => s.train = parse_opt_count(key, v)?,
            "valid" => s.valid = parse_opt_count(key, v)?,
            "test" => s.test = parse_opt_count(key, v)?,
            "clean_dir" => s.clean_dir = opt_path(v),
            "noise_dir" => s.noise_dir = opt_path(v),
            "write_mixtures" => s.write_mixtures = parse_bool(key, v)?,
            _ => bail!(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Whether `key` was given by a file or a flag.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            self.set(k.trim(), v).with_context(|| format!("config line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("out".into(), show_path(&self.out)),
            ("manifest".into(), show_path(&self.manifest)),
            ("checkpoint".into(), show_path(&self.checkpoint)),
            ("split".into(), self.split.clone()),
        ];
        pairs.extend(self.model.to_pairs().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        pairs.extend(self.train.to_pairs().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
        let s = &self.synth;
        let synth: BTreeMap<&str, String> = BTreeMap::from([
            ("procedural", s.procedural.to_string()),
            ("classes", s.classes.to_string()),
            ("per_class", s.per_class.to_string()),
            ("duration", format!("{:?}", s.duration_s)),
            ("snr_min", format!("{:?}", s.snr_min)),
            ("snr_max", format!("{:?}", s.snr_max)),
            ("train", show_count(s.train)),
            ("valid", show_count(s.valid)),
            ("test", show_count(s.test)),
            ("clean_dir", show_path(&s.clean_dir)),
            ("noise_dir", show_path(&s.noise_dir)),
            ("write_mixtures", s.write_mixtures.to_string()),
        ]);
        pairs.extend(synth.into_iter().map(|(k, v)| (format!("synth.{k}"), v)));
        pairs
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Output directory, relocated under `$CA_DENOISE_OUT_ROOT` when relative.
    pub fn out_dir(&self) -> Result<PathBuf> {
        let out = self.out.clone().ok_or_else(|| Error::Config("no output directory (--out or out =)".into()))?;
        Ok(resolve_out(&out, std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).as_deref()))
    }

    pub fn save_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let p = dir.join(RESOLVED_FILE);
        std::fs::write(&p, self.to_text()).with_context(|| format!("writing {}", p.display()))
    }
}

pub fn resolve_out(out: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if out.is_relative() => r.join(out),
        _ => out.to_path_buf(),
    }
}
