use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{load_split, MixtureManifest, Split, Utterance};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{config_from_meta, majority_class, Container, ModelConfig, ModelParams};
use crate::tensor::Tensor;

use super::adam::{adam_step, clip_global_norm, AdamState};
use super::loss::utterance_loss;
use super::schedule::{lr_schedule, EarlyStopping};
use super::TrainConfig;

pub const BEST_FILE: &str = "best.ckpt";
pub const STATE_FILE: &str = "state.ckpt";
pub const METRICS_FILE: &str = "metrics.log";

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_accuracy: Option<f64>,
    pub lr: f64,
}

impl EpochMetrics {
    /// `epoch=3 train_loss=… valid_loss=… valid_acc=…|na lr=…`
    pub fn to_line(&self) -> String {
        let acc = self.valid_accuracy.map_or("na".to_string(), |a| format!("{a:?}"));
        format!(
            "epoch={} train_loss={:?} valid_loss={:?} valid_acc={} lr={:?}",
            self.epoch, self.train_loss, self.valid_loss, acc, self.lr
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Format(format!("bad metrics token '{tok}'")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Format(format!("metrics line lacks {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
        Ok(EpochMetrics {
            epoch: get("epoch")?.parse().map_err(|_| Error::Format("bad epoch".into()))?,
            train_loss: num("train_loss")?,
            valid_loss: num("valid_loss")?,
            valid_accuracy: match get("valid_acc")? {
                "na" => None,
                v => Some(v.parse().map_err(|_| Error::Format("bad valid_acc".into()))?),
            },
            lr: num("lr")?,
        })
    }
}

pub fn parse_metrics_log(text: &str) -> Result<Vec<EpochMetrics>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(EpochMetrics::parse_line).collect()
}

fn log_text(log: &[EpochMetrics]) -> String {
    log.iter().map(|m| m.to_line() + "\n").collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    /// Parameters after the last completed epoch.
    pub last: ModelParams,
    pub log: Vec<EpochMetrics>,
    pub stopped_early: bool,
    /// Halted by `stop_after`; resumable.
    pub interrupted: bool,
}

struct Session {
    params: ModelParams,
    best: ModelParams,
    adam: AdamState,
    stopper: EarlyStopping,
    log: Vec<EpochMetrics>,
    finished: bool,
}

impl Session {
    fn epochs_done(&self) -> usize {
        self.log.len()
    }

    fn to_container(&self, cfg: &TrainConfig) -> Container {
        let mut meta: BTreeMap<String, String> = BTreeMap::new();
        meta.insert("kind".into(), "train-state".into());
        for (k, v) in self.params.config.to_pairs() {
            meta.insert(k.into(), v);
        }
        for (k, v) in cfg.to_pairs() {
            meta.insert(format!("train.{k}"), v);
        }
        meta.insert("state.step".into(), self.adam.step.to_string());
        meta.insert("state.best_valid".into(), format!("{:?}", self.stopper.best));
        meta.insert("state.best_epoch".into(), self.stopper.best_epoch.to_string());
        meta.insert("state.stale".into(), self.stopper.stale.to_string());
        meta.insert("state.finished".into(), self.finished.to_string());
        for m in &self.log {
            meta.insert(format!("log.{:06}", m.epoch), m.to_line());
        }
        let mut tensors = BTreeMap::new();
        for (name, t) in &self.params.tensors {
            tensors.insert(format!("param/{name}"), t.clone());
            tensors.insert(format!("best/{name}"), self.best.tensors[name].clone());
            let m = Tensor::new(t.shape(), self.adam.m[name].clone()).expect("moment shape");
            let v = Tensor::new(t.shape(), self.adam.v[name].clone()).expect("moment shape");
            tensors.insert(format!("adam_m/{name}"), m);
            tensors.insert(format!("adam_v/{name}"), v);
        }
        Container { meta, tensors }
    }

    fn from_container(c: Container) -> Result<(Self, TrainConfig)> {
        let fmt = |m: &str| Error::Format(format!("train state: {m}"));
        if c.meta.get("kind").map(String::as_str) != Some("train-state") {
            return Err(fmt("not a training state checkpoint"));
        }
        let model_cfg = config_from_meta(&c.meta)?;
        let mut cfg = TrainConfig::default();
        for (k, v) in c.meta.iter().filter_map(|(k, v)| k.strip_prefix("train.").map(|k| (k, v))) {
            cfg.set(k, v)?;
        }
        let get = |k: &str| c.meta.get(k).ok_or_else(|| fmt(&format!("missing {k}")));
        let section = |prefix: &str| -> BTreeMap<String, Tensor> {
            c.tensors
                .iter()
                .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
                .collect()
        };
        let params = ModelParams { config: model_cfg.clone(), tensors: section("param/") };
        params.validate()?;
        let best = ModelParams { config: model_cfg, tensors: section("best/") };
        best.validate()?;
        let mut adam = AdamState::new(&params.tensors, cfg.beta1, cfg.beta2, cfg.eps);
        adam.step = get("state.step")?.parse().map_err(|_| fmt("bad step"))?;
        adam.m = section("adam_m/").into_iter().map(|(k, t)| (k, t.into_data())).collect();
        adam.v = section("adam_v/").into_iter().map(|(k, t)| (k, t.into_data())).collect();
        let stopper = EarlyStopping {
            patience: cfg.patience,
            best: get("state.best_valid")?.parse().map_err(|_| fmt("bad best_valid"))?,
            best_epoch: get("state.best_epoch")?.parse().map_err(|_| fmt("bad best_epoch"))?,
            stale: get("state.stale")?.parse().map_err(|_| fmt("bad stale"))?,
        };
        let log = c
            .meta
            .iter()
            .filter(|(k, _)| k.starts_with("log."))
            .map(|(_, v)| EpochMetrics::parse_line(v))
            .collect::<Result<Vec<_>>>()?;
        let finished = get("state.finished")? == "true";
        Ok((Session { params, best, adam, stopper, log, finished }, cfg))
    }

    fn outcome(&self, interrupted: bool) -> TrainOutcome {
        TrainOutcome {
            best: self.best.clone(),
            best_epoch: self.stopper.best_epoch,
            best_valid_loss: self.stopper.best,
            last: self.params.clone(),
            log: self.log.clone(),
            stopped_early: false,
            interrupted,
        }
    }
}

fn check_data(params: &ModelParams, cfg: &TrainConfig, train: &[Utterance], valid: &[Utterance]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    if valid.is_empty() {
        return Err(Error::Input("validation split is empty".into()));
    }
    let mcfg = &params.config;
    if !mcfg.variant.has_classifier() && cfg.alpha != 0.0 {
        return Err(Error::Config(format!("{} has no classifier; alpha must be 0, got {}", mcfg.variant, cfg.alpha)));
    }
    for u in train.iter().chain(valid) {
        if u.clean_ref.is_none() {
            return Err(Error::Input("utterance without clean reference".into()));
        }
        if mcfg.variant.has_classifier() {
            match u.label {
                None => return Err(Error::Input("utterance without noise label".into())),
                Some(l) if l >= mcfg.classes => {
                    return Err(Error::Config(format!("label {l} but the model has {} classes", mcfg.classes)))
                }
                Some(_) => {}
            }
        }
    }
    Ok(())
}

fn named_grads(
    g: &Graph,
    loss: crate::Var,
    bound: &crate::model::BoundParams,
) -> Result<BTreeMap<String, Tensor>> {
    let mut grads = g.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, var) in bound.iter() {
        let t = grads.take(*var).ok_or_else(|| Error::Contract(format!("no gradient for '{name}'")))?;
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter '{name}'")));
        }
        out.insert(name.clone(), t);
    }
    Ok(out)
}

/// Mean validation loss and utterance-level accuracy (classifier variants).
fn validate(params: &ModelParams, valid: &[Utterance], alpha: f64) -> Result<(f64, Option<f64>)> {
    let results: Vec<(f64, Option<bool>)> = valid
        .par_iter()
        .map(|u| {
            let mut g = Graph::new();
            let clean = u.clean_ref.as_deref().unwrap();
            let (loss, out, _) = utterance_loss(&mut g, params, false, &u.samples, clean, u.label, alpha)?;
            let correct = out.class_logits.map(|l| Some(majority_class(g.value(l))) == u.label);
            Ok((g.value(loss).data()[0], correct))
        })
        .collect::<Result<_>>()?;
    let n = results.len() as f64;
    let loss = results.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = if params.config.variant.has_classifier() {
        Some(results.iter().filter(|r| r.1 == Some(true)).count() as f64 / n)
    } else {
        None
    };
    Ok((loss, acc))
}

fn write_outputs(out_dir: Option<&Path>, s: &Session, cfg: &TrainConfig, improved: bool) -> Result<()> {
    let Some(dir) = out_dir else { return Ok(()) };
    if improved {
        s.best.save(dir.join(BEST_FILE))?;
    }
    s.to_container(cfg).save(dir.join(STATE_FILE))?;
    let p = dir.join(METRICS_FILE);
    std::fs::write(&p, log_text(&s.log)).map_err(|e| Error::io(&p, e))
}

fn run(
    mut s: Session,
    cfg: &TrainConfig,
    train: &[Utterance],
    valid: &[Utterance],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(&s.params, cfg, train, valid)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut session_epochs = 0;
    while !s.finished && s.epochs_done() < cfg.max_epochs {
        if cfg.stop_after.is_some_and(|k| session_epochs >= k) {
            return Ok(s.outcome(true));
        }
        let epoch_idx = s.epochs_done();
        let lr = lr_schedule(epoch_idx, cfg)?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch_idx as u64 + 1);
        order.shuffle(&mut rng);

        let mut total = 0.0;
        let mut pending: Option<BTreeMap<String, Tensor>> = None;
        let mut in_batch = 0;
        for (pos, &idx) in order.iter().enumerate() {
            let u = &train[idx];
            let clean = u.clean_ref.as_deref().unwrap();
            let mut g = Graph::new();
            let (loss, _, bound) = utterance_loss(&mut g, &s.params, true, &u.samples, clean, u.label, cfg.alpha)
                .map_err(|e| match e {
                    Error::NonFinite(op) => {
                        Error::NonFinite(format!("{op} (epoch {}, utterance {idx})", epoch_idx + 1))
                    }
                    other => other,
                })?;
            total += g.value(loss).data()[0];
            let grads = named_grads(&g, loss, &bound)?;
            match pending.as_mut() {
                None => pending = Some(grads),
                Some(acc) => {
                    for (name, t) in grads {
                        let a = acc.get_mut(&name).unwrap();
                        a.data_mut().iter_mut().zip(t.data()).for_each(|(x, y)| *x += y);
                    }
                }
            }
            in_batch += 1;
            if in_batch == cfg.batch_size || pos + 1 == order.len() {
                let mut grads = pending.take().unwrap();
                if let Some(c) = cfg.clip_norm {
                    clip_global_norm(&mut grads, c);
                }
                adam_step(&mut s.params.tensors, &grads, &mut s.adam, lr)?;
                if let Some((name, _)) = s.params.tensors.iter().find(|(_, t)| !t.is_finite()) {
                    return Err(Error::NonFinite(format!("parameter '{name}' after update")));
                }
                in_batch = 0;
            }
        }
        let train_loss = total / train.len() as f64;
        let (valid_loss, valid_accuracy) = validate(&s.params, valid, cfg.alpha)?;
        if !train_loss.is_finite() || !valid_loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at epoch {}", epoch_idx + 1)));
        }
        let epoch = epoch_idx + 1;
        s.log.push(EpochMetrics { epoch, train_loss, valid_loss, valid_accuracy, lr });
        let decision = s.stopper.update(epoch, valid_loss);
        if decision.improved {
            s.best = s.params.clone();
        }
        if decision.stop || epoch == cfg.max_epochs {
            s.finished = true;
        }
        write_outputs(out_dir, &s, cfg, decision.improved)?;
        session_epochs += 1;
    }
    let mut out = s.outcome(false);
    out.stopped_early = out.log.len() < cfg.max_epochs;
    Ok(out)
}

/// Trains a freshly initialized model (seeded by `cfg.seed`).
///
/// With an output directory, writes `best.ckpt` whenever validation loss
/// improves, and `state.ckpt` and `metrics.log` after every epoch.
pub fn train_model(
    train: &[Utterance],
    valid: &[Utterance],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = ModelParams::init(model_cfg, cfg.seed)?;
    let adam = AdamState::new(&params.tensors, cfg.beta1, cfg.beta2, cfg.eps);
    let s = Session {
        best: params.clone(),
        params,
        adam,
        stopper: EarlyStopping::new(cfg.patience),
        log: Vec::new(),
        finished: false,
    };
    run(s, cfg, train, valid, out_dir)
}

/// Continues from `out_dir/state.ckpt` with the persisted configuration.
pub fn resume_training(
    out_dir: &Path,
    train: &[Utterance],
    valid: &[Utterance],
    stop_after: Option<usize>,
) -> Result<TrainOutcome> {
    let (s, mut cfg) = Session::from_container(Container::load(out_dir.join(STATE_FILE))?)?;
    cfg.stop_after = stop_after;
    run(s, &cfg, train, valid, Some(out_dir))
}

/// Loads the train and valid splits of `manifest` and trains on them.
pub fn train_loop(
    manifest: &MixtureManifest,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate()?;
    if model_cfg.variant.has_classifier() && model_cfg.classes != manifest.num_classes() {
        return Err(Error::Config(format!(
            "model has {} classes, manifest has {}",
            model_cfg.classes,
            manifest.num_classes()
        )));
    }
    let train = load_split(manifest, Split::Train)?;
    let valid = load_split(manifest, Split::Valid)?;
    train_model(&train, &valid, model_cfg, cfg, Some(out_dir))
}
