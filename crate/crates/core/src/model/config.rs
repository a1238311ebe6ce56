use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{what} mismatch: config says {config}, data has {data}")]
    Dimension {
        what: &'static str,
        config: usize,
        data: usize,
    },
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
}

/// Model family under test, from plain self-attention up to the full
/// spatio-temporal aware window attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Canonical self-attention with shared projections.
    #[serde(rename = "SA")]
    SelfAttention,
    /// One window-attention layer with shared projections.
    #[serde(rename = "WA-1")]
    WindowSingle,
    /// Stacked window attention with shared projections.
    #[serde(rename = "WA")]
    Window,
    /// Stacked window attention with per-sensor generated projections.
    #[serde(rename = "S-WA")]
    SpatialWindow,
    /// Per-sensor and per-window generated projections.
    #[serde(rename = "ST-WA")]
    SpatioTemporalWindow,
    /// `ST-WA` with the latent variances removed.
    #[serde(rename = "ST-WA-det")]
    DeterministicWindow,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::SelfAttention,
        Variant::WindowSingle,
        Variant::Window,
        Variant::SpatialWindow,
        Variant::SpatioTemporalWindow,
        Variant::DeterministicWindow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SelfAttention => "SA",
            Variant::WindowSingle => "WA-1",
            Variant::Window => "WA",
            Variant::SpatialWindow => "S-WA",
            Variant::SpatioTemporalWindow => "ST-WA",
            Variant::DeterministicWindow => "ST-WA-det",
        }
    }

    pub fn uses_windows(self) -> bool {
        self != Variant::SelfAttention
    }

    pub fn generates_params(self) -> bool {
        matches!(
            self,
            Variant::SpatialWindow | Variant::SpatioTemporalWindow | Variant::DeterministicWindow
        )
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown variant `{s}`; valid variants: {}", Self::valid_names())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Weighted,
    Mean,
}

/// Every hyperparameter of a run. Serialized as a flat JSON object; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Sensor count; taken from the data when absent.
    #[serde(rename = "N")]
    pub n_sensors: Option<usize>,
    /// Features per timestamp; taken from the data when absent.
    #[serde(rename = "F")]
    pub features: Option<usize>,
    #[serde(rename = "H")]
    pub history: usize,
    #[serde(rename = "U")]
    pub horizon: usize,
    pub d: usize,
    pub k: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    /// Window size per layer.
    #[serde(rename = "S")]
    pub windows: Vec<usize>,
    /// Proxies per window.
    pub p: usize,
    pub heads: usize,
    pub alpha: f64,
    pub delta: f64,
    pub lr: f64,
    pub batch: usize,
    pub patience: usize,
    pub epochs: usize,
    pub variant: Variant,
    pub seed: u64,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub predictor_hidden: usize,
    /// Width of the skip-connection sum; `4 * d` when absent.
    pub d_skip: Option<usize>,
    /// Fuse the previous window's output into the current proxies.
    pub recurrent: bool,
    pub aggregator: AggregatorKind,
    pub sensor_correlation: bool,
    /// Max global gradient norm; no clipping when absent.
    pub grad_clip: Option<f64>,
    /// Optimizer steps per epoch; all batches when absent.
    pub max_batches: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_sensors: None,
            features: None,
            history: 12,
            horizon: 12,
            d: 32,
            k: 16,
            layers: 3,
            windows: vec![3, 2, 2],
            p: 1,
            heads: 1,
            alpha: 0.1,
            delta: 1.0,
            lr: 0.001,
            batch: 64,
            patience: 15,
            epochs: 50,
            variant: Variant::SpatioTemporalWindow,
            seed: 0,
            encoder_hidden: vec![32, 32],
            decoder_hidden: vec![16, 32],
            predictor_hidden: 64,
            d_skip: None,
            recurrent: true,
            aggregator: AggregatorKind::Weighted,
            sensor_correlation: true,
            grad_clip: None,
            max_batches: None,
        }
    }
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn d_skip(&self) -> usize {
        self.d_skip.unwrap_or(4 * self.d)
    }

    /// Window sizes of the layers this variant actually builds.
    pub fn active_windows(&self) -> &[usize] {
        match self.variant {
            Variant::SelfAttention => &[],
            Variant::WindowSingle => &self.windows[..self.windows.len().min(1)],
            _ => &self.windows,
        }
    }

    /// Number of attention layers this variant builds.
    pub fn active_layers(&self) -> usize {
        match self.variant {
            Variant::SelfAttention => self.layers,
            _ => self.active_windows().len(),
        }
    }

    /// Sequence length entering each window layer.
    pub fn layer_input_lengths(&self) -> Vec<usize> {
        let mut len = self.history;
        self.active_windows()
            .iter()
            .map(|&s| {
                let current = len;
                len /= s.max(1);
                current
            })
            .collect()
    }

    /// Tokens (windows) each window layer emits.
    pub fn layer_output_lengths(&self) -> Vec<usize> {
        self.layer_input_lengths()
            .iter()
            .zip(self.active_windows())
            .map(|(len, s)| len / s)
            .collect()
    }

    /// Fills in or checks the data-dependent dimensions.
    pub fn with_dims(mut self, n_sensors: usize, features: usize) -> Result<Self, ConfigError> {
        for (slot, data, what) in [
            (&mut self.n_sensors, n_sensors, "sensor count N"),
            (&mut self.features, features, "feature count F"),
        ] {
            match *slot {
                Some(config) if config != data => return Err(ConfigError::Dimension { what, config, data }),
                _ => *slot = Some(data),
            }
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        for (name, value) in [
            ("H", self.history),
            ("U", self.horizon),
            ("d", self.d),
            ("k", self.k),
            ("L", self.layers),
            ("p", self.p),
            ("heads", self.heads),
            ("batch", self.batch),
            ("predictor_hidden", self.predictor_hidden),
        ] {
            if value == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if matches!(self.n_sensors, Some(0)) || matches!(self.features, Some(0)) {
            return bad("N and F must be positive".into());
        }
        if self.d % self.heads != 0 {
            return bad(format!("heads ({}) must divide d ({})", self.heads, self.d));
        }
        if !(self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.d_skip == Some(0) || self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.max_batches == Some(0) {
            return bad("max_batches must be positive".into());
        }
        if let Some(clip) = self.grad_clip {
            if !(clip > 0.0) {
                return bad(format!("grad_clip must be positive, got {clip}"));
            }
        }
        if self.variant.uses_windows() {
            if self.windows.len() != self.layers {
                return bad(format!("S lists {} window sizes for L = {} layers", self.windows.len(), self.layers));
            }
            let mut len = self.history;
            for (l, &s) in self.active_windows().iter().enumerate() {
                if s == 0 || len % s != 0 {
                    return bad(format!("window size S[{l}] = {s} does not divide layer input length {len}"));
                }
                len /= s;
            }
        }
        Ok(())
    }
}
