//! Analytic attention-score counts.
//!
//! A layer of canonical self-attention over `H` timestamps scores `H^2`
//! query-key pairs per sensor. A window layer scores each of its `T`
//! input timestamps against `p` proxies, i.e. `p * T`, and hands `T / S`
//! tokens to the next layer, so a stack costs `p * (H + H/S1 + H/(S1 S2) + ...)`,
//! which is bounded by `p * H * S_min / (S_min - 1)`.

use super::config::{ModelConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ScoreTotals {
    /// Stacked window attention over the configured layers.
    pub window: u64,
    /// The same number of canonical self-attention layers.
    pub canonical: u64,
}

fn sensors(config: &ModelConfig) -> u64 {
    config.n_sensors.unwrap_or(1) as u64
}

/// Score counts for one input sample (all `N` sensors) under both attention
/// types, using `S` and `L` from `config` regardless of its variant.
pub fn count_scores(config: &ModelConfig) -> ScoreTotals {
    let n = sensors(config);
    let h = config.history as u64;
    let mut len = h;
    let mut window = 0;
    for &s in &config.windows {
        window += n * config.p as u64 * len;
        len /= s.max(1) as u64;
    }
    ScoreTotals {
        window,
        canonical: config.layers as u64 * n * h * h,
    }
}

/// Scores one forward pass of `config.variant` computes per sample.
pub fn expected_scores(config: &ModelConfig) -> u64 {
    let n = sensors(config);
    match config.variant {
        Variant::SelfAttention => count_scores(config).canonical,
        _ => config
            .layer_input_lengths()
            .iter()
            .map(|&len| n * config.p as u64 * len as u64)
            .sum(),
    }
}

/// `S_min / (S_min - 1) * H * p * N`, the linear bound on stacked window cost.
pub fn window_bound(config: &ModelConfig) -> f64 {
    let s_min = config.windows.iter().copied().min().unwrap_or(1) as f64;
    s_min / (s_min - 1.0) * config.history as f64 * config.p as f64 * sensors(config) as f64
}
