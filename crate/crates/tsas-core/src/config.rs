//! Run configuration records: sampling, filtering, and training knobs.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::types::{DecodeMode, Ratio};

/// An exact filtering threshold in [0, 1].
///
/// Parsed from the decimal the user actually typed (`"0.7"` becomes 7/10) or
/// from a fraction (`"7/10"`), so that comparisons against vote agreement are
/// exact: 11/15 >= 0.7 holds, 6/15 >= 0.7 does not, with no float boundary
/// involved. Floats coming from config files are converted through their
/// shortest round-trip decimal, which recovers the typed literal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tau {
    num: u64,
    den: u64,
}

impl Tau {
    pub const ZERO: Tau = Tau { num: 0, den: 1 };
    pub const ONE: Tau = Tau { num: 1, den: 1 };

    /// The default threshold, 0.7.
    pub const DEFAULT: Tau = Tau { num: 7, den: 10 };

    pub fn new(num: u64, den: u64) -> Result<Self, TauError> {
        if den == 0 {
            return Err(TauError::ZeroDenominator);
        }
        if num > den {
            return Err(TauError::OutOfRange);
        }
        Ok(Tau { num, den })
    }

    /// Exact conversion from a float via its shortest round-trip decimal.
    pub fn from_f64(value: f64) -> Result<Self, TauError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(TauError::OutOfRange);
        }
        value.to_string().parse()
    }

    /// Whether an agreement ratio meets this threshold: `ratio >= tau`,
    /// compared exactly by cross-multiplication.
    pub fn accepts(&self, ratio: Ratio) -> bool {
        u128::from(ratio.num()) * u128::from(self.den)
            >= u128::from(self.num) * u128::from(ratio.den())
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl FromStr for Tau {
    type Err = TauError;

    /// Accepts `"0.7"`, `".5"`, `"1"`, `"7/10"`, and scientific notation
    /// like `"1e-3"`.
    fn from_str(s: &str) -> Result<Self, TauError> {
        let s = s.trim();
        if let Some((num, den)) = s.split_once('/') {
            let num: u64 = num.trim().parse().map_err(|_| TauError::Malformed(s.to_owned()))?;
            let den: u64 = den.trim().parse().map_err(|_| TauError::Malformed(s.to_owned()))?;
            return Tau::new(num, den);
        }

        let (mantissa, exponent) = match s.split_once(['e', 'E']) {
            Some((m, e)) => {
                let exp: i32 = e.parse().map_err(|_| TauError::Malformed(s.to_owned()))?;
                (m, exp)
            }
            None => (s, 0),
        };
        let (int_part, frac_part) = match mantissa.split_once('.') {
            Some((i, f)) => (i, f),
            None => (mantissa, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(TauError::Malformed(s.to_owned()));
        }
        let digits_ok =
            |d: &str| d.bytes().all(|b| b.is_ascii_digit());
        if !digits_ok(int_part) || !digits_ok(frac_part) {
            return Err(TauError::Malformed(s.to_owned()));
        }

        // value = digits * 10^(exponent - frac_len)
        let digits = {
            let mut joined = String::with_capacity(int_part.len() + frac_part.len());
            joined.push_str(int_part);
            joined.push_str(frac_part);
            if joined.is_empty() {
                "0".to_owned()
            } else {
                joined
            }
        };
        let mut num: u128 = digits.parse().map_err(|_| TauError::Malformed(s.to_owned()))?;
        let mut den: u128 = 1;
        let scale = exponent - frac_part.len() as i32;
        if scale >= 0 {
            num = num
                .checked_mul(10u128.checked_pow(scale as u32).ok_or(TauError::OutOfRange)?)
                .ok_or(TauError::OutOfRange)?;
        } else {
            den = 10u128
                .checked_pow(scale.unsigned_abs())
                .ok_or(TauError::OutOfRange)?;
        }
        if num > den {
            return Err(TauError::OutOfRange);
        }
        // reduce so the u64 fields stay small
        let g = gcd(num, den);
        let (num, den) = (num / g, den / g);
        if num > u64::MAX as u128 || den > u64::MAX as u128 {
            return Err(TauError::OutOfRange);
        }
        Tau::new(num as u64, den as u64)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

impl fmt::Display for Tau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Tau {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        let tau = match Repr::deserialize(deserializer)? {
            Repr::Number(x) => Tau::from_f64(x),
            Repr::Text(s) => s.parse(),
        };
        tau.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TauError {
    ZeroDenominator,
    OutOfRange,
    Malformed(String),
}

impl fmt::Display for TauError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauError::ZeroDenominator => f.write_str("threshold denominator must be nonzero"),
            TauError::OutOfRange => f.write_str("threshold must lie in [0, 1]"),
            TauError::Malformed(s) => write!(f, "malformed threshold `{s}`"),
        }
    }
}

impl core::error::Error for TauError {}

/// How many answers to sample per example, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Number of stochastic generations per example.
    pub n: u32,
    pub decode_mode: DecodeMode,
    /// Dropout rate for mc_dropout decoding; in (0, 1).
    pub dropout_rate: f64,
    /// Candidate pool size for top_k decoding.
    pub top_k: u32,
    /// Softmax temperature for top_k decoding; > 0.
    pub temperature: f64,
    /// Per-sample seeds derive from this, the example id, and the sample
    /// index; see [`crate::seed::derive_sample_seed`].
    pub base_seed: u64,
    /// Generation length cap, in tokens.
    pub max_new_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n: 15,
            decode_mode: DecodeMode::McDropout,
            dropout_rate: 0.1,
            top_k: 40,
            temperature: 0.7,
            base_seed: 0,
            max_new_tokens: 16,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 1 {
            return Err(ConfigError::new("sampling.n must be >= 1"));
        }
        if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return Err(ConfigError::new("sampling.dropout_rate must lie in (0, 1)"));
        }
        if self.top_k < 1 {
            return Err(ConfigError::new("sampling.top_k must be >= 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(ConfigError::new("sampling.temperature must be > 0"));
        }
        if self.max_new_tokens < 1 {
            return Err(ConfigError::new("sampling.max_new_tokens must be >= 1"));
        }
        Ok(())
    }
}

/// Which pseudo-labels survive into the self-training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Keep examples whose vote agreement is >= tau.
    AgreementThreshold,
    /// Keep samples whose sequence log-probability is >= the floor.
    ConfidenceThreshold,
    /// Keep everything.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub kind: FilterKind,
    /// Agreement threshold; used only with `agreement_threshold`.
    pub tau: Tau,
    /// Log-prob floor; used only with `confidence_threshold`. When absent,
    /// the pipeline substitutes the per-run median sequence log-prob.
    pub confidence_floor: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { kind: FilterKind::AgreementThreshold, tau: Tau::DEFAULT, confidence_floor: None }
    }
}

/// Fine-tuning hyperparameters. Plain SGD keeps runs bit-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    /// Seeds the epoch shuffle and the per-batch dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 5, learning_rate: 0.1, batch_size: 8, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epochs < 1 {
            return Err(ConfigError::new("train.epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ConfigError::new("train.learning_rate must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(ConfigError::new("train.batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Everything a run depends on, snapshotted into each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub prompt_template: String,
    pub sampling: SamplingConfig,
    pub filter: FilterConfig,
    pub train: TrainConfig,
    pub grouping: crate::ensemble::GroupingMode,
    /// Worker threads for the sampling and evaluation fan-out.
    pub workers: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            prompt_template: crate::backend::DEFAULT_PROMPT_TEMPLATE.to_owned(),
            sampling: SamplingConfig::default(),
            filter: FilterConfig::default(),
            train: TrainConfig::default(),
            grouping: crate::ensemble::GroupingMode::Normalized,
            workers: 4,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sampling.validate()?;
        self.train.validate()?;
        if self.workers < 1 {
            return Err(ConfigError::new("workers must be >= 1"));
        }
        crate::backend::check_template(&self.prompt_template)
            .map_err(|e| ConfigError { message: e.to_string() })?;
        Ok(())
    }
}

/// A named configuration violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    message: String,
}

impl ConfigError {
    fn new(message: &str) -> Self {
        ConfigError { message: message.to_owned() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.message)
    }
}

impl core::error::Error for ConfigError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_parses_decimals_exactly() {
        let tau: Tau = "0.7".parse().unwrap();
        assert_eq!(tau, Tau::new(7, 10).unwrap());
        assert_eq!(".5".parse::<Tau>().unwrap(), Tau::new(1, 2).unwrap());
        assert_eq!("1".parse::<Tau>().unwrap(), Tau::ONE);
        assert_eq!("7/10".parse::<Tau>().unwrap(), Tau::new(7, 10).unwrap());
        assert_eq!("1e-3".parse::<Tau>().unwrap(), Tau::new(1, 1000).unwrap());
    }

    #[test]
    fn tau_rejects_out_of_range_and_garbage() {
        assert!(matches!("1.5".parse::<Tau>(), Err(TauError::OutOfRange)));
        assert!("".parse::<Tau>().is_err());
        assert!("0.x".parse::<Tau>().is_err());
        assert!(matches!(Tau::new(1, 0), Err(TauError::ZeroDenominator)));
    }

    #[test]
    fn tau_boundary_comparisons_are_exact() {
        let tau = Tau::DEFAULT;
        assert!(tau.accepts(Ratio::new(11, 15)), "11/15 = 0.7333 >= 0.7");
        assert!(tau.accepts(Ratio::new(7, 10)), "7/10 >= 0.7 on the closed boundary");
        assert!(!tau.accepts(Ratio::new(6, 15)), "6/15 = 0.4 < 0.7");
        assert!(tau.accepts(Ratio::new(21, 30)), "21/30 reduces to the boundary");
    }

    #[test]
    fn tau_from_f64_recovers_typed_decimal() {
        assert_eq!(Tau::from_f64(0.7).unwrap(), Tau::new(7, 10).unwrap());
        assert_eq!(Tau::from_f64(0.0).unwrap(), Tau::ZERO);
        assert_eq!(Tau::from_f64(1.0).unwrap(), Tau::ONE);
        assert!(Tau::from_f64(-0.1).is_err());
    }

    #[test]
    fn config_validation_names_the_field() {
        let cfg = SamplingConfig { n: 0, ..SamplingConfig::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("sampling.n"));
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("epochs"));
    }
}
