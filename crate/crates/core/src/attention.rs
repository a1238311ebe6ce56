//! Attention kernels.
//!
//! Tensors are laid out row-major with one row per (sample, sensor) pair:
//! sequences are `[rows, len, d]`. Projection matrices are either a single
//! `[d_in, d]` matrix shared by all rows or one `[rows, d_in, d]` matrix per
//! row; [`Tensor::matmul`] handles both.

use crate::params::{Bindings, Linear, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Result, Tensor, TensorError};

/// Query-key pairs scored during a forward pass. Multi-head attention
/// scores each pair once per head but counts it once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreCount(pub u64);

impl ScoreCount {
    fn add(&mut self, rows: usize, queries: usize, keys: usize) {
        self.0 += (rows * queries * keys) as u64;
    }
}

/// Scaled dot-product attention of `queries: [rows, q, d]` over
/// `keys, values: [rows, s, d]`, with `heads` equal slices of `d`.
pub fn attend(queries: &Tensor, keys: &Tensor, values: &Tensor, heads: usize, counter: &mut ScoreCount) -> Result<Tensor> {
    let d = *queries.shape().last().unwrap_or(&0);
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::Invalid {
            op: "attend",
            reason: format!("{heads} heads do not divide width {d}"),
        });
    }
    let (rows, nq, nk) = (queries.shape()[0], queries.shape()[1], keys.shape()[1]);
    counter.add(rows, nq, nk);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (q, k, v) = if heads == 1 {
            (queries.clone(), keys.clone(), values.clone())
        } else {
            (queries.narrow(2, h * dh, dh)?, keys.narrow(2, h * dh, dh)?, values.narrow(2, h * dh, dh)?)
        };
        let weights = q.matmul(&k.transpose()?)?.scale(scale).softmax_lastdim();
        outputs.push(weights.matmul(&v)?);
    }
    if heads == 1 {
        return Ok(outputs.pop().expect("one head"));
    }
    let refs: Vec<&Tensor> = outputs.iter().collect();
    Tensor::concat(&refs, 2)
}

/// Canonical self-attention over a whole sequence `x: [rows, H, d_in]`.
/// Every timestamp scores every other, so the cost is `rows * H^2`.
pub fn canonical_attention(
    x: &Tensor,
    query: &Tensor,
    key: &Tensor,
    value: &Tensor,
    heads: usize,
    counter: &mut ScoreCount,
) -> Result<Tensor> {
    attend(&x.matmul(query)?, &x.matmul(key)?, &x.matmul(value)?, heads, counter)
}

/// Attention of one window `x_w: [rows, S, d_in]` with the proxies
/// `[rows, p, d]` standing in for the queries. Cost is `rows * p * S`.
pub fn window_attention(
    x_w: &Tensor,
    proxies: &Tensor,
    key: &Tensor,
    value: &Tensor,
    heads: usize,
    counter: &mut ScoreCount,
) -> Result<Tensor> {
    attend(proxies, &x_w.matmul(key)?, &x_w.matmul(value)?, heads, counter)
}

/// Two-layer gate over all `p` proxies of a window jointly:
/// `sigmoid(W2 tanh(W1 h))`.
#[derive(Debug, Clone)]
pub struct WeightingNetwork {
    pub first: Linear,
    pub second: Linear,
    proxies: usize,
    d: usize,
}

impl WeightingNetwork {
    pub fn new(store: &mut ParamStore, name: &str, proxies: usize, d: usize, rng: &mut Rng) -> Self {
        let width = proxies * d;
        WeightingNetwork {
            first: Linear::new(store, &format!("{name}.w1"), width, width, rng),
            second: Linear::new(store, &format!("{name}.w2"), width, width, rng),
            proxies,
            d,
        }
    }

    /// Weights in (0, 1) for `h_w: [rows, p, d]`.
    pub fn weights(&self, p: &Bindings, h_w: &Tensor) -> Result<Tensor> {
        let rows = h_w.shape()[0];
        let flat = h_w.reshape(&[rows, self.proxies * self.d])?;
        let gate = self.second.forward(p, &self.first.forward(p, &flat)?.tanh())?.sigmoid();
        gate.reshape(&[rows, self.proxies, self.d])
    }
}

/// `sum_j A_j * h_j` over the proxy axis: `[rows, p, d] -> [rows, d]`.
pub fn aggregate_proxies(weights: &Tensor, h_w: &Tensor) -> Result<Tensor> {
    weights.mul(h_w)?.sum_axis(1)
}

/// Collapses the proxies of a window into one vector.
#[derive(Debug, Clone)]
pub enum Aggregator {
    Weighted(WeightingNetwork),
    /// Every proxy weighted `1/p`.
    Mean,
}

impl Aggregator {
    pub fn aggregate(&self, p: &Bindings, h_w: &Tensor) -> Result<Tensor> {
        match self {
            Aggregator::Weighted(net) => aggregate_proxies(&net.weights(p, h_w)?, h_w),
            Aggregator::Mean => {
                let proxies = h_w.shape()[1] as f64;
                Ok(h_w.sum_axis(1)?.scale(1.0 / proxies))
            }
        }
    }
}

/// Single linear layer `2d -> d` that mixes the previous window's output
/// into each proxy of the current window.
#[derive(Debug, Clone)]
pub struct FusionNetwork {
    pub linear: Linear,
}

impl FusionNetwork {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut Rng) -> Self {
        FusionNetwork {
            linear: Linear::new(store, name, 2 * d, d, rng),
        }
    }

    /// `h_prev: [rows, d]`, `proxies: [rows, p, d]` -> fused `[rows, p, d]`.
    pub fn fuse(&self, p: &Bindings, h_prev: &Tensor, proxies: &Tensor) -> Result<Tensor> {
        let (rows, count, d) = (proxies.shape()[0], proxies.shape()[1], proxies.shape()[2]);
        let prev = h_prev.reshape(&[rows, 1, d])?;
        let repeated = if count == 1 {
            prev
        } else {
            Tensor::concat(&vec![&prev; count], 1)?
        };
        self.linear.forward(p, &Tensor::concat(&[&repeated, proxies], 2)?)
    }
}

/// Per-sensor or shared embedding for sensor-correlation attention.
#[derive(Debug, Clone)]
pub enum Embedding<'a> {
    /// `[d, d]` applied to every sensor
    Shared(&'a Tensor),
    /// `[rows, d, d]`, one matrix per (sample, sensor) row
    PerRow(&'a Tensor),
}

impl Embedding<'_> {
    fn apply(&self, h: &Tensor) -> Result<Tensor> {
        match self {
            Embedding::Shared(theta) => h.matmul(theta),
            Embedding::PerRow(theta) => {
                let (rows, d) = (h.shape()[0], h.shape()[1]);
                h.reshape(&[rows, 1, d])?.matmul(theta)?.reshape(&[rows, d])
            }
        }
    }
}

/// Row-normalized similarity `B[i, j] = softmax_j((θ1 h_i) · (θ2 h_j))`
/// within each sample. `h_hat: [batch * n, d]` -> `[batch, n, n]`.
pub fn correlation_weights(theta1: &Embedding<'_>, theta2: &Embedding<'_>, h_hat: &Tensor, n_sensors: usize) -> Result<Tensor> {
    let (rows, d) = (h_hat.shape()[0], h_hat.shape()[1]);
    let batch = rows / n_sensors;
    let q = theta1.apply(h_hat)?.reshape(&[batch, n_sensors, d])?;
    let k = theta2.apply(h_hat)?.reshape(&[batch, n_sensors, d])?;
    Ok(q.matmul(&k.transpose()?)?.softmax_lastdim())
}

/// Sensor-correlation attention: each sensor's window representation
/// becomes the `B`-weighted mix of all sensors' representations.
pub fn sensor_correlation(theta1: &Embedding<'_>, theta2: &Embedding<'_>, h_hat: &Tensor, n_sensors: usize) -> Result<Tensor> {
    let (rows, d) = (h_hat.shape()[0], h_hat.shape()[1]);
    if rows % n_sensors != 0 {
        return Err(TensorError::Invalid {
            op: "sensor_correlation",
            reason: format!("{rows} rows is not a multiple of {n_sensors} sensors"),
        });
    }
    let weights = correlation_weights(theta1, theta2, h_hat, n_sensors)?;
    let h = h_hat.reshape(&[rows / n_sensors, n_sensors, d])?;
    weights.matmul(&h)?.reshape(&[rows, d])
}
