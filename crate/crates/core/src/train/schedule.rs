use crate::error::{Error, Result};

use super::TrainConfig;

/// Exponential decay from `lr_start` at epoch 0 to `lr_end` at the last
/// epoch: `lr_start · (lr_end / lr_start)^(e / (max_epochs - 1))`.
///
/// The endpoints are returned exactly rather than through `powf`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.max_epochs {
        return Err(Error::Contract(format!("epoch {epoch} outside [0, {})", cfg.max_epochs)));
    }
    if epoch == 0 || cfg.max_epochs == 1 {
        return Ok(cfg.lr_start);
    }
    if epoch == cfg.max_epochs - 1 {
        return Ok(cfg.lr_end);
    }
    let frac = epoch as f64 / (cfg.max_epochs - 1) as f64;
    Ok(cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(frac))
}

/// Patience-based stopping on validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    /// 1-based epoch of the best loss; 0 before any update.
    pub best_epoch: usize,
    pub stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Records the validation loss of 1-based `epoch`. Only a strict
    /// decrease counts as improvement.
    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision { improved: true, stop: false }
        } else {
            self.stale += 1;
            StopDecision { improved: false, stop: self.stale >= self.patience }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_match_recipe() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_schedule(199, &cfg).unwrap(), 1e-8);
        assert!(lr_schedule(200, &cfg).is_err());
    }

    #[test]
    fn midpoint_is_geometric() {
        let cfg = TrainConfig::default();
        // geometric interpolation evaluated in log space
        let oracle = 10f64.powf(-4.0 + (-8.0 + 4.0) * 100.0 / 199.0);
        let lr = lr_schedule(100, &cfg).unwrap();
        assert!((lr - oracle).abs() / oracle < 1e-12);
        assert!((lr / 1e-6 - 1.0).abs() < 0.05);
    }

    #[test]
    fn schedule_is_monotone() {
        let cfg = TrainConfig { max_epochs: 30, ..Default::default() };
        let lrs: Vec<f64> = (0..30).map(|e| lr_schedule(e, &cfg).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn stops_after_patience_epochs_without_improvement() {
        let mut es = EarlyStopping::new(1);
        assert_eq!(es.update(1, 1.0), StopDecision { improved: true, stop: false });
        assert_eq!(es.update(2, 1.5), StopDecision { improved: false, stop: true });
        let mut es = EarlyStopping::new(3);
        es.update(1, 1.0);
        assert!(!es.update(2, 1.0).stop);
        assert!(!es.update(3, 0.9).stop);
        assert!(!es.update(4, 2.0).stop);
        assert!(!es.update(5, 2.0).stop);
        assert!(es.update(6, 2.0).stop);
        assert_eq!(es.best_epoch, 3);
    }
}
