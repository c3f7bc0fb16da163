use crate::error::{GbdtError, Result};
use serde::{Deserialize, Serialize};

/// Booster hyperparameters. Defaults are the L2 regression settings used by
/// the forecasting pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    /// `-1` for unlimited.
    pub max_depth: i32,
    pub learning_rate: f64,
    pub min_sum_hessian_in_leaf: f64,
    pub feature_fraction: f64,
    pub bagging_freq: usize,
    pub bagging_fraction: f64,
    pub bagging_seed: u64,
    pub lambda_l1: f64,
    pub random_state: u64,
    pub max_bins: usize,
    pub num_rounds: usize,
    /// `None` disables early stopping; serialized as `0`.
    #[serde(with = "zero_is_none")]
    pub early_stopping_rounds: Option<usize>,
    /// Chronological tail of the training rows held out for early stopping.
    pub validation_fraction: f64,
    /// Accepted for compatibility; training is single-threaded.
    pub nthread: usize,
    pub verbosity: i32,
    pub enable_bundle: bool,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            num_leaves: 38,
            min_data_in_leaf: 50,
            max_depth: -1,
            learning_rate: 0.02,
            min_sum_hessian_in_leaf: 6.0,
            feature_fraction: 0.9,
            bagging_freq: 1,
            bagging_fraction: 0.7,
            bagging_seed: 11,
            lambda_l1: 0.1,
            random_state: 2019,
            max_bins: 255,
            num_rounds: 500,
            early_stopping_rounds: Some(50),
            validation_fraction: 0.1,
            nthread: 4,
            verbosity: -1,
            enable_bundle: true,
        }
    }
}

mod zero_is_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        Ok(Option::<usize>::deserialize(d)?.filter(|&n| n > 0))
    }
}

/// Largest bin count representable by the `u8` bin indices.
pub const MAX_BINS_LIMIT: usize = 256;

impl GbdtConfig {
    /// No sampling, no regularization, unit learning rate, single-sample
    /// leaves allowed.
    pub fn relaxed() -> Self {
        GbdtConfig {
            min_data_in_leaf: 1,
            min_sum_hessian_in_leaf: 0.0,
            lambda_l1: 0.0,
            learning_rate: 1.0,
            bagging_fraction: 1.0,
            feature_fraction: 1.0,
            early_stopping_rounds: None,
            ..GbdtConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GbdtError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0, 1]", self.learning_rate));
        }
        if self.num_leaves < 2 {
            return bad(format!("num_leaves {} < 2", self.num_leaves));
        }
        for (name, v) in [("feature_fraction", self.feature_fraction), ("bagging_fraction", self.bagging_fraction)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} {v} outside (0, 1]"));
            }
        }
        if !(self.validation_fraction >= 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction {} outside [0, 1)", self.validation_fraction));
        }
        if self.max_bins < 2 || self.max_bins > MAX_BINS_LIMIT {
            return bad(format!("max_bins {} outside [2, {MAX_BINS_LIMIT}]", self.max_bins));
        }
        if self.lambda_l1 < 0.0 || self.min_sum_hessian_in_leaf < 0.0 {
            return bad("regularization terms must be non-negative".into());
        }
        if self.max_depth == 0 || self.max_depth < -1 {
            return bad(format!("max_depth {} (use -1 for unlimited)", self.max_depth));
        }
        if self.num_rounds == 0 {
            return bad("num_rounds must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = GbdtConfig::default();
        c.validate().unwrap();
        assert_eq!((c.num_leaves, c.min_data_in_leaf, c.bagging_seed, c.random_state), (38, 50, 11, 2019));
        GbdtConfig::relaxed().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let cases = [
            GbdtConfig { learning_rate: 0.0, ..Default::default() },
            GbdtConfig { learning_rate: 1.5, ..Default::default() },
            GbdtConfig { num_leaves: 1, ..Default::default() },
            GbdtConfig { bagging_fraction: 0.0, ..Default::default() },
            GbdtConfig { feature_fraction: 1.2, ..Default::default() },
            GbdtConfig { max_bins: 300, ..Default::default() },
            GbdtConfig { max_depth: 0, ..Default::default() },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(GbdtError::InvalidConfig(_))), "{c:?}");
        }
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: GbdtConfig = serde_json::from_str(r#"{"num_rounds": 7}"#).unwrap();
        assert_eq!(c.num_rounds, 7);
        assert_eq!(c.num_leaves, 38);
        let off: GbdtConfig = serde_json::from_str(r#"{"early_stopping_rounds": 0}"#).unwrap();
        assert_eq!(off.early_stopping_rounds, None);
        let back: GbdtConfig = serde_json::from_str(&serde_json::to_string(&off).unwrap()).unwrap();
        assert_eq!(back, off);
    }
}
