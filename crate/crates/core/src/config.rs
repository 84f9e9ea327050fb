use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FusorError, Result};

/// How the fusor combines encoder views.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FusorMode {
    /// Language-guided query generation and gated fusion at every layer.
    #[default]
    Full,
    /// Gate forced to one-hot at encoder `k` (1-based) in every layer.
    SingleEncoder(usize),
    /// No fusor: encoder 1's aligned map goes straight to the output projection.
    BaselineNoFusor,
}

impl fmt::Display for FusorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusorMode::Full => f.write_str("full"),
            FusorMode::SingleEncoder(k) => write!(f, "single_encoder:{k}"),
            FusorMode::BaselineNoFusor => f.write_str("baseline_no_fusor"),
        }
    }
}

impl FromStr for FusorMode {
    type Err = FusorError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "full" => Ok(FusorMode::Full),
            "baseline_no_fusor" | "baseline" => Ok(FusorMode::BaselineNoFusor),
            _ => {
                let k = s
                    .strip_prefix("single_encoder:")
                    .or_else(|| s.strip_prefix("single_encoder(").and_then(|r| r.strip_suffix(')')))
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| FusorError::UnknownMode(s.to_string()))?;
                Ok(FusorMode::SingleEncoder(k))
            }
        }
    }
}

impl Serialize for FusorMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FusorMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Shapes and hyperparameters of a fusor. `encoder_channels[n]` is encoder
/// `n`'s native channel count; encoders whose count differs from `channels`
/// get a learned 1×1 projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusorConfig {
    pub num_encoders: usize,
    pub num_queries: usize,
    pub num_layers: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub text_dim: usize,
    pub heads: usize,
    pub gate_hidden: usize,
    pub ffn_hidden: usize,
    pub out_dim: usize,
    pub encoder_channels: Vec<usize>,
    pub mode: FusorMode,
    pub seed: u64,
}

impl Default for FusorConfig {
    fn default() -> Self {
        Self {
            num_encoders: 4,
            num_queries: 8,
            num_layers: 3,
            channels: 8,
            height: 4,
            width: 4,
            text_dim: 16,
            heads: 2,
            gate_hidden: 16,
            ffn_hidden: 16,
            out_dim: 16,
            encoder_channels: vec![8; 4],
            mode: FusorMode::Full,
            seed: 0,
        }
    }
}

impl FusorConfig {
    /// The configuration used on the synthetic routing task, sized for the
    /// four mock encoder views.
    pub fn routing() -> Self {
        Self {
            num_layers: 1,
            encoder_channels: vec![3, 2, 2, 1],
            ..Self::default()
        }
    }

    /// The shipped gradient-check configuration (well under 2,000 parameters).
    pub fn tiny() -> Self {
        Self {
            num_encoders: 2,
            num_queries: 2,
            num_layers: 2,
            channels: 4,
            height: 2,
            width: 2,
            text_dim: 4,
            heads: 2,
            gate_hidden: 4,
            ffn_hidden: 8,
            out_dim: 3,
            encoder_channels: vec![4, 3],
            mode: FusorMode::Full,
            seed: 7,
        }
    }

    pub fn canonical_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn with_mode(&self, mode: FusorMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_encoders", self.num_encoders),
            ("num_queries", self.num_queries),
            ("num_layers", self.num_layers),
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("text_dim", self.text_dim),
            ("heads", self.heads),
            ("gate_hidden", self.gate_hidden),
            ("ffn_hidden", self.ffn_hidden),
            ("out_dim", self.out_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(FusorError::Config(format!("{name} must be >= 1")));
            }
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(FusorError::Config(format!(
                "heads ({}) must divide channels ({})",
                self.heads, self.channels
            )));
        }
        if self.encoder_channels.len() != self.num_encoders {
            return Err(FusorError::Config(format!(
                "encoder_channels has {} entries for {} encoders",
                self.encoder_channels.len(),
                self.num_encoders
            )));
        }
        if self.encoder_channels.contains(&0) {
            return Err(FusorError::Config("encoder channel counts must be >= 1".into()));
        }
        if let FusorMode::SingleEncoder(k) = self.mode {
            if k == 0 || k > self.num_encoders {
                return Err(FusorError::Config(format!(
                    "single_encoder({k}) requires 1 <= k <= {}",
                    self.num_encoders
                )));
            }
        }
        Ok(())
    }
}
