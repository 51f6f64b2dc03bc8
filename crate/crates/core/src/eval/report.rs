use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{load_split, MixtureManifest, Split, Utterance};
use crate::error::{Error, Result};
use crate::model::{forward, majority_class, ModelParams};
use crate::tensor::Tensor;

use super::metrics::{segmental_snr, si_sdr, SegSnrParams};

pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const REPORT_LINES_FILE: &str = "report.lines";

/// Metrics of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceEval {
    pub si_sdr_noisy: f64,
    pub si_sdr_denoised: f64,
    pub seg_snr_noisy: f64,
    pub seg_snr_denoised: f64,
    pub label: Option<usize>,
    pub predicted: Option<usize>,
}

/// One test set: means over exactly `count` utterances.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub set: String,
    pub count: usize,
    pub si_sdr_noisy: f64,
    pub si_sdr_denoised: f64,
    pub seg_snr_improvement: f64,
    pub accuracy: Option<f64>,
    /// Externally computed metrics merged from a file.
    pub extra: BTreeMap<String, f64>,
}

impl EvalRow {
    pub fn si_sdr_improvement(&self) -> f64 {
        self.si_sdr_denoised - self.si_sdr_noisy
    }

    /// `set=… count=… si_sdr_noisy=… si_sdr_denoised=… seg_snr_improvement=… accuracy=…|na [extra.k=…]`
    pub fn to_line(&self) -> String {
        let acc = self.accuracy.map_or("na".to_string(), |a| format!("{a:?}"));
        let mut line = format!(
            "set={} count={} si_sdr_noisy={:?} si_sdr_denoised={:?} seg_snr_improvement={:?} accuracy={}",
            self.set, self.count, self.si_sdr_noisy, self.si_sdr_denoised, self.seg_snr_improvement, acc
        );
        for (k, v) in &self.extra {
            let _ = write!(line, " extra.{k}={v:?}");
        }
        line
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("report line: {m}"));
        let mut fields = BTreeMap::new();
        let mut extra = BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| bad(format!("token '{tok}'")))?;
            if let Some(name) = k.strip_prefix("extra.") {
                extra.insert(name.to_string(), v.parse().map_err(|_| bad(format!("value '{v}'")))?);
            } else {
                fields.insert(k, v);
            }
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
        Ok(EvalRow {
            set: get("set")?.to_string(),
            count: get("count")?.parse().map_err(|_| bad("bad count".into()))?,
            si_sdr_noisy: num("si_sdr_noisy")?,
            si_sdr_denoised: num("si_sdr_denoised")?,
            seg_snr_improvement: num("seg_snr_improvement")?,
            accuracy: match get("accuracy")? {
                "na" => None,
                _ => Some(num("accuracy")?),
            },
            extra,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_lines(&self) -> String {
        self.rows.iter().map(|r| r.to_line() + "\n").collect()
    }

    pub fn parse_lines(text: &str) -> Result<Self> {
        let rows = text.lines().filter(|l| !l.trim().is_empty()).map(EvalRow::parse_line).collect::<Result<_>>()?;
        Ok(EvalReport { rows })
    }

    /// Human-readable table with two-decimal values.
    pub fn to_table(&self) -> String {
        let extra_keys: Vec<&String> = {
            let mut keys: Vec<&String> = self.rows.iter().flat_map(|r| r.extra.keys()).collect();
            keys.sort();
            keys.dedup();
            keys
        };
        let mut header = vec![
            "set".to_string(),
            "count".into(),
            "si-sdr noisy".into(),
            "si-sdr denoised".into(),
            "si-sdr gain".into(),
            "segsnr gain".into(),
            "accuracy".into(),
        ];
        header.extend(extra_keys.iter().map(|k| k.to_string()));
        let mut cells = vec![header];
        for r in &self.rows {
            let mut row = vec![
                r.set.clone(),
                r.count.to_string(),
                format!("{:.2}", r.si_sdr_noisy),
                format!("{:.2}", r.si_sdr_denoised),
                format!("{:.2}", r.si_sdr_improvement()),
                format!("{:.2}", r.seg_snr_improvement),
                r.accuracy.map_or("-".into(), |a| format!("{:.3}", a)),
            ];
            row.extend(extra_keys.iter().map(|k| r.extra.get(*k).map_or("-".into(), |v| format!("{v:.3}"))));
            cells.push(row);
        }
        let widths: Vec<usize> =
            (0..cells[0].len()).map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }

    /// Merges lines of the form `set=<name> <metric>=<value> ...` into the
    /// rows' extra metrics.
    pub fn merge_extra(&mut self, text: &str) -> Result<()> {
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut toks = line.split_whitespace();
            let set = toks
                .next()
                .and_then(|t| t.strip_prefix("set="))
                .ok_or_else(|| Error::Format(format!("extra metrics line must start with set=: '{line}'")))?;
            let row = self
                .rows
                .iter_mut()
                .find(|r| r.set == set)
                .ok_or_else(|| Error::Input(format!("extra metrics for unknown set '{set}'")))?;
            for tok in toks {
                let (k, v) = tok.split_once('=').ok_or_else(|| Error::Format(format!("bad token '{tok}'")))?;
                let v: f64 = v.parse().map_err(|_| Error::Format(format!("bad value '{v}'")))?;
                row.extra.insert(k.to_string(), v);
            }
        }
        Ok(())
    }

    /// Writes the table and the machine-readable lines into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [(REPORT_TABLE_FILE, self.to_table()), (REPORT_LINES_FILE, self.to_lines())] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Plain-text `T × N` array: a `T N` header line, then one line per frame.
pub fn write_spectrogram(t: &Tensor, path: &Path) -> Result<()> {
    let (rows, cols) = t.dims2()?;
    let mut s = format!("{rows} {cols}\n");
    for r in 0..rows {
        let line: Vec<String> = t.row(r).iter().map(|x| x.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_spectrogram(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let mut lines = text.lines();
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("empty file"))?
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| bad("bad header")))
        .collect::<Result<_>>()?;
    let [rows, cols] = header[..] else { return Err(bad("header must be 'T N'")) };
    let data: Vec<f64> = lines
        .flat_map(str::split_whitespace)
        .map(|x| x.parse().map_err(|_| bad("bad value")))
        .collect::<Result<_>>()?;
    if data.len() != rows * cols {
        return Err(bad("value count does not match header"));
    }
    Tensor::new(&[rows, cols], data)
}

fn eval_utterance(params: &ModelParams, u: &Utterance, seg: &SegSnrParams) -> Result<(UtteranceEval, Tensor, Tensor)> {
    let clean = u.clean_ref.as_deref().ok_or_else(|| Error::Input("utterance without clean reference".into()))?;
    let out = forward(&u.samples, params)?;
    let ev = UtteranceEval {
        si_sdr_noisy: si_sdr(&u.samples, clean)?,
        si_sdr_denoised: si_sdr(&out.denoised, clean)?,
        seg_snr_noisy: segmental_snr(&u.samples, clean, seg)?,
        seg_snr_denoised: segmental_snr(&out.denoised, clean, seg)?,
        label: u.label,
        predicted: out.predicted_class(),
    };
    Ok((ev, out.spectrogram, out.masked))
}

/// Evaluates one set of utterances, in parallel, aggregating in input order.
/// With `dump_dir`, writes `NNNNN_w.txt` (encoder output) and `NNNNN_y.txt`
/// (masked spectrogram) per utterance.
pub fn evaluate_set(
    params: &ModelParams,
    set: &str,
    utts: &[Utterance],
    dump_dir: Option<&Path>,
) -> Result<(EvalRow, Vec<UtteranceEval>)> {
    if utts.is_empty() {
        return Err(Error::Input(format!("set '{set}' has no utterances")));
    }
    if set.is_empty() || set.contains(char::is_whitespace) {
        return Err(Error::Input(format!("set name '{set}' must be non-empty without whitespace")));
    }
    if let Some(d) = dump_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let seg = SegSnrParams::default();
    let evals: Vec<UtteranceEval> = utts
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let (ev, w, y) = eval_utterance(params, u, &seg)?;
            if let Some(d) = dump_dir {
                write_spectrogram(&w, &d.join(format!("{i:05}_w.txt")))?;
                write_spectrogram(&y, &d.join(format!("{i:05}_y.txt")))?;
            }
            Ok(ev)
        })
        .collect::<Result<_>>()?;
    let n = evals.len() as f64;
    let mean = |f: fn(&UtteranceEval) -> f64| evals.iter().map(f).sum::<f64>() / n;
    let accuracy = if params.config.variant.has_classifier() && evals.iter().all(|e| e.label.is_some()) {
        Some(evals.iter().filter(|e| e.predicted == e.label).count() as f64 / n)
    } else {
        None
    };
    let row = EvalRow {
        set: set.to_string(),
        count: evals.len(),
        si_sdr_noisy: mean(|e| e.si_sdr_noisy),
        si_sdr_denoised: mean(|e| e.si_sdr_denoised),
        seg_snr_improvement: mean(|e| e.seg_snr_denoised - e.seg_snr_noisy),
        accuracy,
        extra: BTreeMap::new(),
    };
    Ok((row, evals))
}

/// Fraction of utterances whose majority-vote class equals the label.
pub fn classify_accuracy(params: &ModelParams, utts: &[Utterance]) -> Result<f64> {
    if !params.config.variant.has_classifier() {
        return Err(Error::Config(format!("{} has no classifier", params.config.variant)));
    }
    if utts.is_empty() {
        return Err(Error::Input("no utterances to classify".into()));
    }
    let hits: Vec<bool> = utts
        .par_iter()
        .map(|u| {
            let label = u.label.ok_or_else(|| Error::Input("utterance without noise label".into()))?;
            let out = forward(&u.samples, params)?;
            Ok(out.class_logits.as_ref().map(majority_class) == Some(label))
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Evaluates the checkpoint on `split` of every named manifest, one report
/// row per manifest in argument order. Dumps go to `dump_root/<set>/`.
pub fn evaluate(
    checkpoint: &Path,
    sets: &[(String, MixtureManifest)],
    split: Split,
    dump_root: Option<&Path>,
) -> Result<EvalReport> {
    let params = ModelParams::load(checkpoint)?;
    let mut rows = Vec::with_capacity(sets.len());
    for (name, manifest) in sets {
        if params.config.variant.has_classifier() && manifest.num_classes() != params.config.classes {
            return Err(Error::Config(format!(
                "checkpoint has {} classes, manifest '{name}' has {}",
                params.config.classes,
                manifest.num_classes()
            )));
        }
        let utts = load_split(manifest, split)?;
        let dump = dump_root.map(|d| d.join(name));
        rows.push(evaluate_set(&params, name, &utts, dump.as_deref())?.0);
    }
    Ok(EvalReport { rows })
}
