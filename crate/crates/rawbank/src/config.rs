//! Training configuration. Serialized as a flat JSON object; every field
//! has a default so config files may specify only what they change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::{MU_MAX, MU_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Sub-bands.
    pub f: usize,
    /// Taps per kernel (odd).
    pub k: usize,
    /// Samples per frame.
    pub s: usize,
    /// Context frames per window (odd).
    pub t: usize,
    /// Center frames kept after normalization (odd).
    pub t_keep: usize,
    /// Frame shift in samples.
    pub shift: usize,
    /// Hidden width of the attention weight generator.
    pub h: usize,
    /// Relevance constant of the soft normalization.
    pub c: f64,
    /// Hidden widths of the classifier head.
    pub head_widths: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of labeled training utterances used, class-stratified.
    pub label_fraction: f64,
    pub sample_rate: u32,
    /// Clamp bounds for μ, in cycles/sample.
    pub mu_min: f64,
    pub mu_max: f64,
    /// Keep μ at its initialization (ablation).
    pub freeze_mu: bool,
    /// Replace the learned attention weights with fixed 1/f (ablation).
    pub uniform_attention: bool,
    /// Training/validation windows sampled per utterance, evenly spaced;
    /// 0 means every complete window.
    pub windows_per_utt: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            f: 80,
            k: 129,
            s: 400,
            t: 101,
            t_keep: 21,
            shift: 160,
            h: 128,
            c: 0.01,
            head_widths: vec![256, 64],
            lr: 1e-3,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            label_fraction: 1.0,
            sample_rate: 16000,
            mu_min: MU_MIN,
            mu_max: MU_MAX,
            freeze_mu: false,
            uniform_attention: false,
            windows_per_utt: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f < 2 {
            return Err(Error::Argument(format!("f={} must be at least 2", self.f)));
        }
        if self.k % 2 == 0 || self.k == 0 {
            return Err(Error::Argument(format!("k={} must be odd", self.k)));
        }
        if self.k > self.s {
            return Err(Error::Argument(format!(
                "k={} cannot exceed s={}",
                self.k, self.s
            )));
        }
        if self.t % 2 == 0 || self.t_keep % 2 == 0 || self.t_keep > self.t || self.t_keep == 0 {
            return Err(Error::Argument(format!(
                "t={} and t_keep={} must be odd with t_keep <= t",
                self.t, self.t_keep
            )));
        }
        if self.t < 2 {
            return Err(Error::Argument(
                "t must be at least 3 for the soft normalization".into(),
            ));
        }
        if self.shift == 0 {
            return Err(Error::Argument("shift must be positive".into()));
        }
        if self.h == 0 {
            return Err(Error::Argument("h must be positive".into()));
        }
        if !(self.c >= 0.0) {
            return Err(Error::Domain(format!("c={} must be non-negative", self.c)));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Domain(format!(
                "lr={} must be finite and non-negative",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be positive".into()));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Domain(format!(
                "label_fraction={} must be in (0, 1]",
                self.label_fraction
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Argument("sample_rate must be positive".into()));
        }
        if !(self.mu_min > 0.0 && self.mu_min < self.mu_max && self.mu_max < 0.5) {
            return Err(Error::Domain(format!(
                "mu bounds ({}, {}) must satisfy 0 < mu_min < mu_max < 0.5",
                self.mu_min, self.mu_max
            )));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(json).map_err(|e| Error::Format(format!("config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// The desk-scale variant used by the synthetic-task reference runs.
    pub fn desk_scale() -> Self {
        TrainConfig {
            f: 32,
            k: 65,
            t: 21,
            t_keep: 11,
            h: 128,
            epochs: 8,
            windows_per_utt: 2,
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reach_the_reference_geometry() {
        let cfg = TrainConfig::default();
        assert_eq!(
            (cfg.f, cfg.k, cfg.s, cfg.t, cfg.t_keep, cfg.shift),
            (80, 129, 400, 101, 21, 160)
        );
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_json_merges_with_defaults() {
        let cfg = TrainConfig::from_json(r#"{"f": 32, "k": 65, "epochs": 3}"#).unwrap();
        assert_eq!(cfg.f, 32);
        assert_eq!(cfg.k, 65);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.s, 400);
        assert_eq!(cfg.t, 101);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        assert!(TrainConfig::from_json(r#"{"k": 128}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"t_keep": 200}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"label_fraction": 0.0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"mu_min": 0.4, "mu_max": 0.1}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = TrainConfig::desk_scale();
        let back = TrainConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
    }
}
