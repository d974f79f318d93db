use serde::{Deserialize, Serialize};

use super::losses::{EntropyForm, Reduction};
use crate::error::{Error, Result};
use crate::segnet::NetConfig;

/// Which optional components of the method are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub use_cgftda: bool,
    pub use_consistency: bool,
    pub use_entropy: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Self = Self {
        use_cgftda: true,
        use_consistency: true,
        use_entropy: true,
    };
    pub const SOURCE_ONLY: Self = Self {
        use_cgftda: false,
        use_consistency: false,
        use_entropy: false,
    };
    pub const NO_CGFTDA: Self = Self {
        use_cgftda: false,
        ..Self::FULL
    };
    pub const NO_CONSISTENCY: Self = Self {
        use_consistency: false,
        ..Self::FULL
    };
    pub const NO_ENTROPY: Self = Self {
        use_entropy: false,
        ..Self::FULL
    };

    /// Named setups: `full`, `source-only`, `no-cgftda`, `no-con`, `no-ent`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::FULL),
            "source-only" => Some(Self::SOURCE_ONLY),
            "no-cgftda" => Some(Self::NO_CGFTDA),
            "no-con" => Some(Self::NO_CONSISTENCY),
            "no-ent" => Some(Self::NO_ENTROPY),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match *self {
            Self::FULL => "full",
            Self::SOURCE_ONLY => "source-only",
            Self::NO_CGFTDA => "no-cgftda",
            Self::NO_CONSISTENCY => "no-con",
            Self::NO_ENTROPY => "no-ent",
            _ => "custom",
        }
    }

    /// Whether the student must see the warped target slice.
    pub fn uses_target(&self) -> bool {
        self.use_consistency || self.use_entropy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub net: u64,
    pub data: u64,
    pub tau: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            net: 0,
            data: 1,
            tau: 2,
        }
    }
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            net: super::mix_seed(seed, 0x6e65),
            data: super::mix_seed(seed, 0x6461),
            tau: super::mix_seed(seed, 0x7461),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySource {
    /// Student prediction on the warped target slice (trainable).
    #[default]
    Student,
    /// Teacher prediction on the raw target slice; carries no gradient.
    Teacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgftdaMode {
    /// Every source slice is transferred once before training.
    #[default]
    Offline,
    /// Source slices are re-paired with fresh target slices every epoch.
    PerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampForm {
    /// `lambda_max * exp(-ramp_coeff * (1 - p)^2)`
    #[default]
    Exponential,
    /// `lambda_max * 1e-5 * (1 - p)^2`, the alternative typographic reading.
    Scientific,
}

/// Elastic warp settings; `None` picks `H / 8` and `H / 32`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticSettings {
    pub grid_sigma: Option<f64>,
    pub magnitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_max: f64,
    pub ramp_coeff: f64,
    /// Multiplier on the entropy term.
    pub entropy_weight: f64,
    pub dice_eps: f64,
    pub ablation: Ablation,
    pub seeds: Seeds,
    pub consistency_reduction: Reduction,
    pub entropy_form: EntropyForm,
    pub entropy_source: EntropySource,
    pub cgftda_mode: CgftdaMode,
    pub ramp_form: RampForm,
    pub elastic: ElasticSettings,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 1,
            lr: 6e-4,
            weight_decay: 5e-4,
            alpha: 0.005,
            beta: 0.99,
            lambda_max: 1.5,
            ramp_coeff: 5.0,
            entropy_weight: 0.01,
            dice_eps: 1e-6,
            ablation: Ablation::FULL,
            seeds: Seeds::default(),
            consistency_reduction: Reduction::Mean,
            entropy_form: EntropyForm::BinaryFull,
            entropy_source: EntropySource::Student,
            cgftda_mode: CgftdaMode::Offline,
            ramp_form: RampForm::Exponential,
            elastic: ElasticSettings::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, v) in [
            ("lr", self.lr),
            ("ramp_coeff", self.ramp_coeff),
            ("dice_eps", self.dice_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.lambda_max.is_finite() && self.lambda_max >= 0.0) {
            return bad(format!("lambda_max must be >= 0, got {}", self.lambda_max));
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return bad(format!("entropy_weight must be >= 0, got {}", self.entropy_weight));
        }
        if !(0.0..=0.5).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 0.5], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        self.net.validate()?;
        let (h, w) = self.net.input_size;
        self.elastic_params(0).validate(h, w)
    }

    pub fn elastic_params(&self, seed: u64) -> crate::elastic::ElasticParams {
        let h = self.net.input_size.0 as f64;
        crate::elastic::ElasticParams {
            grid_sigma: self.elastic.grid_sigma.unwrap_or(h / 8.0),
            magnitude: self.elastic.magnitude.unwrap_or(h / 32.0),
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 1);
        assert_eq!(c.lr, 6e-4);
        assert_eq!(c.weight_decay, 5e-4);
        assert_eq!(c.alpha, 0.005);
        assert_eq!(c.beta, 0.99);
        assert_eq!(c.lambda_max, 1.5);
        assert_eq!(c.ramp_coeff, 5.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = TrainConfig {
            epochs: 3,
            ablation: Ablation::NO_ENTROPY,
            ..TrainConfig::default()
        };
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(TrainConfig::from_json(&text).unwrap(), c);

        let partial = r#"{"epochs": 2, "ablation": {"use_entropy": false}}"#;
        let p = TrainConfig::from_json(partial).unwrap();
        assert_eq!(p.epochs, 2);
        assert_eq!(p.ablation, Ablation::NO_ENTROPY);
        assert_eq!(p.lr, 6e-4);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            r#"{"epochs": 0}"#,
            r#"{"lr": -1.0}"#,
            r#"{"alpha": 0.7}"#,
            r#"{"beta": 1.5}"#,
            r#"{"lambda_max": -0.1}"#,
            r#"{"elastic": {"magnitude": 40.0}}"#,
        ] {
            assert!(TrainConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn ablation_names_round_trip() {
        for name in ["full", "source-only", "no-cgftda", "no-con", "no-ent"] {
            assert_eq!(Ablation::from_name(name).unwrap().name(), name);
        }
        assert!(Ablation::from_name("bogus").is_none());
    }
}
