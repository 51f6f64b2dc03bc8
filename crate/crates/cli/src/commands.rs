use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ca_denoise::data::{
    decode_wav, encode_wav, load_split, procedural_testset, synthesize_corpus, write_mixtures, MixtureManifest,
    ProceduralSpec, Split, SynthSpec, WavHeader,
};
use ca_denoise::eval::evaluate;
use ca_denoise::model::{forward, ModelParams, Variant};
use ca_denoise::train::{resume_training, train_model, TrainOutcome, BEST_FILE, STATE_FILE};
use ca_denoise::Error;

use crate::config::RunConfig;

const MANIFEST_FILE: &str = "manifest.txt";

fn print_counts(path: &Path, m: &MixtureManifest) {
    println!("manifest: {}", path.display());
    println!(
        "rows: train={} valid={} test={}",
        m.count(Split::Train),
        m.count(Split::Valid),
        m.count(Split::Test)
    );
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    let s = &cfg.synth;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = if s.procedural {
        let mut spec = ProceduralSpec::new(s.classes, s.per_class, cfg.seed);
        spec.duration_s = s.duration_s;
        spec.snr_min = s.snr_min;
        spec.snr_max = s.snr_max;
        spec.valid = s.valid.unwrap_or(spec.valid);
        spec.test = s.test.unwrap_or(spec.test);
        if let Some(train) = s.train {
            if train + spec.valid + spec.test != s.classes * s.per_class {
                bail!(Error::Config(format!(
                    "train={train} + valid={} + test={} must equal classes x per_class = {}",
                    spec.valid,
                    spec.test,
                    s.classes * s.per_class
                )));
            }
        }
        procedural_testset(&out, &spec)?
    } else {
        let (Some(clean), Some(noise)) = (&s.clean_dir, &s.noise_dir) else {
            bail!(Error::Config("synth needs --procedural or both --clean-dir and --noise-dir".into()));
        };
        let (Some(train), Some(valid), Some(test)) = (s.train, s.valid, s.test) else {
            bail!(Error::Config("synth from directories needs --train, --valid and --test counts".into()));
        };
        let spec = SynthSpec { train, valid, test, snr_min: s.snr_min, snr_max: s.snr_max, seed: cfg.seed };
        synthesize_corpus(clean, noise, &spec, out.join(MANIFEST_FILE))?
    };
    if s.write_mixtures {
        let files = write_mixtures(&manifest, out.join("mixtures"))?;
        println!("mixtures: {} files in {}", files.len(), out.join("mixtures").display());
    }
    cfg.save_resolved(&out)?;
    print_counts(&out.join(MANIFEST_FILE), &manifest);
    Ok(())
}

fn report_outcome(out: &Path, o: &TrainOutcome) {
    if let Some(last) = o.log.last() {
        println!("{}", last.to_line());
    }
    if o.interrupted {
        println!("interrupted after epoch {}; resume with --resume", o.log.len());
    } else {
        println!(
            "best epoch {} valid loss {:?}; checkpoint {}",
            o.best_epoch,
            o.best_valid_loss,
            out.join(BEST_FILE).display()
        );
    }
}

pub fn train(mut cfg: RunConfig, resume: bool, stop_after: Option<usize>) -> Result<()> {
    let out = cfg.out_dir()?;
    let manifest_path = cfg.manifest.clone().ok_or_else(|| Error::Config("no manifest (--manifest)".into()))?;
    let manifest = MixtureManifest::load(&manifest_path)?;
    if cfg.model.variant.has_classifier() {
        if !cfg.is_explicit("model.classes") {
            cfg.model.classes = manifest.num_classes();
        }
    } else if !cfg.is_explicit("train.alpha") {
        cfg.train.alpha = 0.0;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    if cfg.model.variant.has_classifier() && cfg.model.classes != manifest.num_classes() {
        bail!(Error::Config(format!(
            "model.classes = {} but the manifest has {} classes",
            cfg.model.classes,
            manifest.num_classes()
        )));
    }
    if !cfg.model.variant.has_classifier() && cfg.train.alpha != 0.0 {
        bail!(Error::Config(format!("{} has no classifier; alpha must be 0", cfg.model.variant)));
    }
    let train = load_split(&manifest, Split::Train)?;
    let valid = load_split(&manifest, Split::Valid)?;
    let outcome = if resume {
        if !out.join(STATE_FILE).exists() {
            bail!(Error::Input(format!("no training state in {}", out.display())));
        }
        resume_training(&out, &train, &valid, stop_after)?
    } else {
        cfg.save_resolved(&out)?;
        let mut tc = cfg.train.clone();
        tc.stop_after = stop_after;
        train_model(&train, &valid, &cfg.model, &tc, Some(&out))?
    };
    report_outcome(&out, &outcome);
    Ok(())
}

fn load_checked(cfg: &RunConfig, variant: Option<&str>) -> Result<(PathBuf, ModelParams)> {
    let ckpt = cfg.checkpoint.clone().ok_or_else(|| Error::Config("no checkpoint (--checkpoint)".into()))?;
    let params = ModelParams::load(&ckpt)?;
    if let Some(v) = variant {
        let want: Variant = v.parse()?;
        if want != params.config.variant {
            bail!(Error::Config(format!(
                "checkpoint {} holds a {} model, expected {want}",
                ckpt.display(),
                params.config.variant
            )));
        }
    }
    Ok((ckpt, params))
}

fn set_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = if stem == "manifest" {
        path.parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or(stem)
    } else {
        stem
    };
    name.split_whitespace().collect::<Vec<_>>().join("_")
}

/// `NAME=PATH` or `PATH`; unnamed duplicates get a numeric suffix.
fn named_manifests(args: &[String], fallback: Option<&PathBuf>) -> Result<Vec<(String, PathBuf)>> {
    let mut items: Vec<(String, PathBuf)> = Vec::new();
    let given: Vec<String> = if args.is_empty() {
        fallback.map(|p| vec![p.display().to_string()]).unwrap_or_default()
    } else {
        args.to_vec()
    };
    if given.is_empty() {
        bail!(Error::Config("eval needs at least one manifest".into()));
    }
    for a in given {
        let (name, path) = match a.split_once('=') {
            Some((n, p)) if !n.is_empty() && !n.contains(['/', '\\']) => (n.to_string(), PathBuf::from(p)),
            _ => (set_name(Path::new(&a)), PathBuf::from(&a)),
        };
        let mut unique = name.clone();
        let mut k = 2;
        while items.iter().any(|(n, _)| *n == unique) {
            unique = format!("{name}_{k}");
            k += 1;
        }
        items.push((unique, path));
    }
    Ok(items)
}

pub fn eval(
    cfg: &RunConfig,
    manifests: &[String],
    variant: Option<&str>,
    dump: bool,
    extra: Option<&Path>,
) -> Result<()> {
    let (ckpt, _) = load_checked(cfg, variant)?;
    let split: Split =
        cfg.split.parse().map_err(|_| Error::Config(format!("unknown split '{}' (train, valid, test)", cfg.split)))?;
    let sets = named_manifests(manifests, cfg.manifest.as_ref())?
        .into_iter()
        .map(|(n, p)| Ok((n, MixtureManifest::load(&p)?)))
        .collect::<Result<Vec<_>>>()?;
    let out = if cfg.out.is_some() { Some(cfg.out_dir()?) } else { None };
    if dump && out.is_none() {
        bail!(Error::Config("--dump-spectrograms needs --out".into()));
    }
    let dump_root = out.as_ref().filter(|_| dump).map(|o| o.join("spectrograms"));
    let mut report = evaluate(&ckpt, &sets, split, dump_root.as_deref())?;
    if let Some(p) = extra {
        let text = std::fs::read_to_string(p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
        report.merge_extra(&text)?;
    }
    print!("{}", report.to_table());
    print!("{}", report.to_lines());
    if let Some(o) = &out {
        report.save(o)?;
        cfg.save_resolved(o)?;
    }
    Ok(())
}

pub fn denoise(cfg: &RunConfig, variant: Option<&str>, input: &Path, output: &Path) -> Result<()> {
    let (_, params) = load_checked(cfg, variant)?;
    let bytes = std::fs::read(input).map_err(|e| Error::Input(format!("{}: {e}", input.display())))?;
    let format = WavHeader::parse(&bytes)?.sample_format()?;
    let utt = decode_wav(&bytes)?;
    let out = forward(&utt.samples, &params)?;
    if out.denoised.len() != utt.samples.len() {
        bail!(Error::Contract("denoised length differs from input".into()));
    }
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(output, encode_wav(&out.denoised, utt.sample_rate, format))
        .with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {} ({} samples at {} Hz)", output.display(), out.denoised.len(), utt.sample_rate);
    Ok(())
}
