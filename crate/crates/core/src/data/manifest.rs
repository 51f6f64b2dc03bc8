//! Line-oriented manifest of synthesized mixtures.
//!
//! ```text
//! # ca-denoise mixture manifest v1
//! sample_rate=16000
//! classes=white,pink,am-tone
//! <clean_path> \t <noise_path> \t <class_id> \t <snr_db> \t <seed> \t <split>
//! ...
//! ```
//!
//! Lines starting with `#` are comments. Paths are relative to the
//! manifest's directory unless absolute. `snr_db` uses the shortest
//! representation that parses back to the same `f64`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "# ca-denoise mixture manifest v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::Format(format!("unknown split '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureRow {
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub class_id: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureManifest {
    pub sample_rate: u32,
    pub classes: Vec<String>,
    pub rows: Vec<MixtureRow>,
    /// Directory relative paths are resolved against; not serialized.
    pub base_dir: PathBuf,
}

impl MixtureManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &MixtureRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.rows_in(split).count()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Format("manifest sample rate is zero".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.class_id >= self.classes.len() {
                return Err(Error::Format(format!(
                    "row {i}: class id {} but only {} classes",
                    r.class_id,
                    self.classes.len()
                )));
            }
        }
        Ok(())
    }

    /// Fails with an input error naming the first missing file.
    pub fn check_files(&self) -> Result<()> {
        for r in &self.rows {
            for p in [&r.clean_path, &r.noise_path] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Input(format!("manifest references missing file {}", full.display())));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        out.push_str("# clean_path\tnoise_path\tclass_id\tsnr_db\tseed\tsplit\n");
        out.push_str(&format!("sample_rate={}\n", self.sample_rate));
        out.push_str(&format!("classes={}\n", self.classes.join(",")));
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:?}\t{}\t{}\n",
                r.clean_path.display(),
                r.noise_path.display(),
                r.class_id,
                r.snr_db,
                r.seed,
                r.split
            ));
        }
        out
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut sample_rate = None;
        let mut classes = None;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::Format(format!("manifest line {}: {what}", lineno + 1));
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if !line.contains('\t') {
                let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value or a row"))?;
                match k.trim() {
                    "sample_rate" => sample_rate = Some(v.trim().parse().map_err(|_| bad("bad sample rate"))?),
                    "classes" => {
                        classes = Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
                    }
                    other => return Err(bad(&format!("unknown key '{other}'"))),
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad(&format!("expected 6 fields, found {}", f.len())));
            }
            rows.push(MixtureRow {
                clean_path: PathBuf::from(f[0]),
                noise_path: PathBuf::from(f[1]),
                class_id: f[2].parse().map_err(|_| bad("bad class id"))?,
                snr_db: f[3].parse().map_err(|_| bad("bad snr"))?,
                seed: f[4].parse().map_err(|_| bad("bad seed"))?,
                split: f[5].parse()?,
            });
        }
        let m = MixtureManifest {
            sample_rate: sample_rate.ok_or_else(|| Error::Format("manifest lacks sample_rate".into()))?,
            classes: classes.ok_or_else(|| Error::Format("manifest lacks classes".into()))?,
            rows,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Input(format!("manifest {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }
}
