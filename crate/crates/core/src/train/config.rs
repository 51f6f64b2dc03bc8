use crate::error::{Error, Result};

/// Optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the classification term; `1 - alpha` weighs the waveform error.
    pub alpha: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Utterances whose gradients are summed per optimizer step.
    pub batch_size: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Halt after this many epochs in the current session, leaving a
    /// resumable state behind. Not persisted.
    pub stop_after: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            lr_start: 1e-4,
            lr_end: 1e-8,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            batch_size: 1,
            clip_norm: Some(5.0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            stop_after: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad(format!("need lr_start >= lr_end > 0, got {} and {}", self.lr_start, self.lr_end));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return bad("max_epochs, patience and batch_size must be positive".into());
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alpha", format!("{:?}", self.alpha)),
            ("lr_start", format!("{:?}", self.lr_start)),
            ("lr_end", format!("{:?}", self.lr_end)),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("clip_norm", self.clip_norm.map_or("none".into(), |c| format!("{c:?}"))),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("eps", format!("{:?}", self.eps)),
        ]
    }

    /// Applies one `key = value` setting; returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        let float = |v: &str| v.parse::<f64>().map_err(|_| Error::Config(format!("{key}: '{v}' is not a number")));
        let int = |v: &str| v.parse::<usize>().map_err(|_| Error::Config(format!("{key}: '{v}' is not an integer")));
        match key {
            "alpha" => self.alpha = float(v)?,
            "lr_start" => self.lr_start = float(v)?,
            "lr_end" => self.lr_end = float(v)?,
            "max_epochs" => self.max_epochs = int(v)?,
            "patience" => self.patience = int(v)?,
            "seed" => self.seed = v.parse().map_err(|_| Error::Config(format!("seed: '{v}' is not an integer")))?,
            "batch_size" => self.batch_size = int(v)?,
            "clip_norm" => self.clip_norm = if v == "none" { None } else { Some(float(v)?) },
            "beta1" => self.beta1 = float(v)?,
            "beta2" => self.beta2 = float(v)?,
            "eps" => self.eps = float(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let cfg = TrainConfig { alpha: 0.3, clip_norm: None, seed: 99, ..Default::default() };
        let mut back = TrainConfig::default();
        for (k, v) in cfg.to_pairs() {
            assert!(back.set(k, &v).unwrap());
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_settings() {
        assert!(TrainConfig { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr_start: 1e-9, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
