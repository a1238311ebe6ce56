//! Spatio-temporal aware parameter generation.
//!
//! Each sensor owns a learnable Gaussian (the spatial latent). An encoder
//! looks at the recent input window and emits a second Gaussian (the
//! temporal adaptation). A sample of their sum is decoded into the
//! projection matrices that the attention layers use for that sensor and
//! that window of time.

use crate::params::{Bindings, Init, Mlp, ParamId, ParamStore};
use crate::rng::{Rng, Sampling};
use crate::tensor::{Result, Tensor, TensorError};

/// Initial log-variance of every spatial latent.
pub const LOGVAR_INIT: f64 = -3.0;

/// Which latent variables feed the decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    /// Per-sensor latent only; no temporal adaptation.
    Spatial,
    /// Per-sensor latent plus the encoder's temporal adaptation.
    SpatioTemporal,
    /// Like `SpatioTemporal` with all variances pinned to zero and no KL.
    Deterministic,
}

impl LatentMode {
    pub fn is_stochastic(self) -> bool {
        !matches!(self, LatentMode::Deterministic)
    }
}

/// Per-sensor Gaussian `N(mu, diag(exp(logvar)))`, rows indexed by sensor.
#[derive(Debug, Clone)]
pub struct SpatialLatent {
    pub mu: ParamId,
    /// Absent in the deterministic variant.
    pub logvar: Option<ParamId>,
}

impl SpatialLatent {
    pub fn new(store: &mut ParamStore, n_sensors: usize, k: usize, stochastic: bool, rng: &mut Rng) -> Self {
        let mu = store.add("spatial.mu", &[n_sensors, k], Init::Normal(1.0), rng);
        let logvar = stochastic.then(|| store.add("spatial.logvar", &[n_sensors, k], Init::Constant(LOGVAR_INIT), rng));
        SpatialLatent { mu, logvar }
    }
}

/// Three fully connected layers from the flattened input window to a
/// Gaussian over the k-dimensional latent (or only its mean when
/// deterministic).
#[derive(Debug, Clone)]
pub struct TemporalEncoder {
    mlp: Mlp,
    k: usize,
    stochastic: bool,
}

impl TemporalEncoder {
    pub fn new(
        store: &mut ParamStore,
        input_width: usize,
        hidden: &[usize],
        k: usize,
        stochastic: bool,
        rng: &mut Rng,
    ) -> Self {
        let out = if stochastic { 2 * k } else { k };
        let widths: Vec<usize> = std::iter::once(input_width).chain(hidden.iter().copied()).chain([out]).collect();
        TemporalEncoder {
            mlp: Mlp::new(store, "encoder", &widths, rng),
            k,
            stochastic,
        }
    }

    /// Maps `[rows, H*F]` to `(mu_t, logvar_t)`, each `[rows, k]`. The
    /// log-variance is offset by [`LOGVAR_INIT`] so both latents start
    /// equally narrow; it is `None` for a deterministic encoder.
    pub fn encode(&self, p: &Bindings, x_recent: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let out = self.mlp.forward(p, x_recent)?;
        let last = out.rank() - 1;
        if !self.stochastic {
            return Ok((out, None));
        }
        let logvar = out.narrow(last, self.k, self.k)?.add_scalar(LOGVAR_INIT);
        Ok((out.narrow(last, 0, self.k)?, Some(logvar)))
    }
}

/// Sizes of the matrices one decoder produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub d_in: usize,
    pub d: usize,
    /// Also emit the two sensor-correlation transforms.
    pub sensor_correlation: bool,
}

impl BlockLayout {
    pub fn size(&self) -> usize {
        let projections = 2 * self.d_in * self.d;
        if self.sensor_correlation {
            projections + 2 * self.d * self.d
        } else {
            projections
        }
    }
}

/// Projection matrices for one attention layer, one set per row.
#[derive(Debug, Clone)]
pub struct GeneratedParams {
    /// `[rows, d_in, d]`
    pub key: Tensor,
    /// `[rows, d_in, d]`
    pub value: Tensor,
    /// `[rows, d, d]`
    pub theta1: Option<Tensor>,
    /// `[rows, d, d]`
    pub theta2: Option<Tensor>,
}

impl GeneratedParams {
    /// Repeats rows by `index` (used to tile per-sensor matrices across a batch).
    pub fn gather_rows(&self, index: &[usize]) -> Result<Self> {
        let pick = |t: &Option<Tensor>| t.as_ref().map(|t| t.gather_rows(index)).transpose();
        Ok(GeneratedParams {
            key: self.key.gather_rows(index)?,
            value: self.value.gather_rows(index)?,
            theta1: pick(&self.theta1)?,
            theta2: pick(&self.theta2)?,
        })
    }
}

/// Three fully connected layers from the latent to a flat parameter block.
#[derive(Debug, Clone)]
pub struct ParamDecoder {
    mlp: Mlp,
    layout: BlockLayout,
}

impl ParamDecoder {
    pub fn new(store: &mut ParamStore, name: &str, k: usize, hidden: &[usize], layout: BlockLayout, rng: &mut Rng) -> Self {
        let widths: Vec<usize> = std::iter::once(k).chain(hidden.iter().copied()).chain([layout.size()]).collect();
        ParamDecoder {
            mlp: Mlp::new(store, name, &widths, rng),
            layout,
        }
    }

    /// Wraps an existing MLP; fails when its output width does not match
    /// the declared block.
    pub fn from_mlp(mlp: Mlp, layout: BlockLayout) -> Result<Self> {
        if mlp.output_width() != layout.size() {
            return Err(TensorError::Invalid {
                op: "ParamDecoder",
                reason: format!("decoder emits {} values, layout needs {}", mlp.output_width(), layout.size()),
            });
        }
        Ok(ParamDecoder { mlp, layout })
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    /// Decodes `theta: [rows, k]` into per-row matrices. Each matrix is
    /// scaled by `1 / sqrt(fan_in)` so unit-scale decoder outputs give
    /// projections of the same gain as the static ones.
    pub fn decode(&self, p: &Bindings, theta: &Tensor) -> Result<GeneratedParams> {
        let flat = self.mlp.forward(p, theta)?;
        let rows = flat.shape()[0];
        let BlockLayout { d_in, d, sensor_correlation } = self.layout;
        let proj = d_in * d;
        let block = |start: usize, fan_in: usize| -> Result<Tensor> {
            flat.narrow(1, start, fan_in * d)?
                .scale(1.0 / (fan_in as f64).sqrt())
                .reshape(&[rows, fan_in, d])
        };
        let key = block(0, d_in)?;
        let value = block(proj, d_in)?;
        let (theta1, theta2) = if sensor_correlation {
            (Some(block(2 * proj, d)?), Some(block(2 * proj + d * d, d)?))
        } else {
            (None, None)
        };
        Ok(GeneratedParams {
            key,
            value,
            theta1,
            theta2,
        })
    }
}

/// Reparameterized draw `mu + exp(logvar / 2) * eps`.
pub fn sample_spatial(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Result<Tensor> {
    mu.add(&logvar.scale(0.5).exp().mul(eps)?)
}

/// Same reparameterization for the encoder's temporal Gaussian.
pub fn sample_temporal(mu_t: &Tensor, logvar_t: &Tensor, eps: &Tensor) -> Result<Tensor> {
    sample_spatial(mu_t, logvar_t, eps)
}

/// `z + z_t`
pub fn combine_latent(z_spatial: &Tensor, z_temporal: &Tensor) -> Result<Tensor> {
    z_spatial.add(z_temporal)
}

/// `KL(N(mu, diag(exp(logvar))) || N(0, I))`, summed over the latent
/// dimensions and averaged over rows.
pub fn kl_to_standard_normal(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    let rows = mu.shape().first().copied().unwrap_or(1) as f64;
    let per_entry = logvar.exp().add(&mu.square())?.sub(logvar)?.add_scalar(-1.0);
    Ok(per_entry.sum().scale(0.5 / rows))
}

/// KL of the sum of two independent Gaussians against the standard normal:
/// the sum is `N(mu_a + mu_b, diag(exp(logvar_a) + exp(logvar_b)))`.
pub fn kl_of_sum(mu_a: &Tensor, logvar_a: &Tensor, mu_b: &Tensor, logvar_b: &Tensor) -> Result<Tensor> {
    let mu = mu_a.add(mu_b)?;
    let logvar = logvar_a.exp().add(&logvar_b.exp())?.ln();
    kl_to_standard_normal(&mu, &logvar)
}

/// Decoded parameters for every layer plus the KL regularizer.
#[derive(Debug, Clone)]
pub struct Generated {
    pub layers: Vec<GeneratedParams>,
    pub kl: Tensor,
}

/// Spatial latents and temporal encoder shared by all layers, with one
/// decoder per attention layer.
#[derive(Debug, Clone)]
pub struct Generator {
    mode: LatentMode,
    n_sensors: usize,
    k: usize,
    latent: SpatialLatent,
    encoder: Option<TemporalEncoder>,
    decoders: Vec<ParamDecoder>,
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec<'a> {
    pub mode: LatentMode,
    pub n_sensors: usize,
    pub k: usize,
    /// Width of the flattened input window, `H * F`.
    pub input_width: usize,
    pub encoder_hidden: &'a [usize],
    pub decoder_hidden: &'a [usize],
    pub layouts: &'a [BlockLayout],
}

impl Generator {
    pub fn new(store: &mut ParamStore, spec: &GeneratorSpec<'_>, rng: &mut Rng) -> Self {
        let stochastic = spec.mode.is_stochastic();
        let latent = SpatialLatent::new(store, spec.n_sensors, spec.k, stochastic, rng);
        let encoder = (spec.mode != LatentMode::Spatial)
            .then(|| TemporalEncoder::new(store, spec.input_width, spec.encoder_hidden, spec.k, stochastic, rng));
        let decoders = spec
            .layouts
            .iter()
            .enumerate()
            .map(|(l, layout)| ParamDecoder::new(store, &format!("decoder{l}"), spec.k, spec.decoder_hidden, *layout, rng))
            .collect();
        Generator {
            mode: spec.mode,
            n_sensors: spec.n_sensors,
            k: spec.k,
            latent,
            encoder,
            decoders,
        }
    }

    pub fn mode(&self) -> LatentMode {
        self.mode
    }

    pub fn latent(&self) -> &SpatialLatent {
        &self.latent
    }

    /// Generates per-row parameters for a batch laid out as
    /// `rows = batch * n_sensors`, sensor-minor.
    ///
    /// `x_recent` is `[rows, H*F]`.
    pub fn generate(&self, p: &Bindings, x_recent: &Tensor, sampling: &mut Sampling<'_>) -> Result<Generated> {
        let rows = x_recent.shape()[0];
        let n = self.n_sensors;
        if rows % n != 0 {
            return Err(TensorError::Invalid {
                op: "generate",
                reason: format!("{rows} rows is not a whole number of {n}-sensor samples"),
            });
        }
        let tile: Vec<usize> = (0..rows).map(|r| r % n).collect();
        let mu = &p[self.latent.mu];

        match self.mode {
            LatentMode::Spatial => {
                let logvar = &p[self.latent.logvar.expect("spatial mode is stochastic")];
                let z = sample_spatial(mu, logvar, &sampling.noise(&[n, self.k]))?;
                let kl = kl_to_standard_normal(mu, logvar)?;
                // decode once per sensor, then tile across the batch
                let layers = self
                    .decoders
                    .iter()
                    .map(|dec| {
                        let per_sensor = dec.decode(p, &z)?;
                        if rows == n {
                            Ok(per_sensor)
                        } else {
                            per_sensor.gather_rows(&tile)
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(Generated { layers, kl })
            }
            LatentMode::SpatioTemporal => {
                let encoder = self.encoder.as_ref().expect("temporal mode has an encoder");
                let logvar = &p[self.latent.logvar.expect("temporal mode is stochastic")];
                let z = sample_spatial(mu, logvar, &sampling.noise(&[n, self.k]))?.gather_rows(&tile)?;
                let (mu_t, logvar_t) = encoder.encode(p, x_recent)?;
                let logvar_t = logvar_t.expect("stochastic encoder");
                let z_t = sample_temporal(&mu_t, &logvar_t, &sampling.noise(&[rows, self.k]))?;
                let theta = combine_latent(&z, &z_t)?;
                let kl = kl_of_sum(&mu.gather_rows(&tile)?, &logvar.gather_rows(&tile)?, &mu_t, &logvar_t)?;
                let layers = self.decoders.iter().map(|dec| dec.decode(p, &theta)).collect::<Result<_>>()?;
                Ok(Generated { layers, kl })
            }
            LatentMode::Deterministic => {
                let encoder = self.encoder.as_ref().expect("deterministic mode has an encoder");
                let (mu_t, _) = encoder.encode(p, x_recent)?;
                let theta = combine_latent(&mu.gather_rows(&tile)?, &mu_t)?;
                let layers = self.decoders.iter().map(|dec| dec.decode(p, &theta)).collect::<Result<_>>()?;
                Ok(Generated {
                    layers,
                    kl: Tensor::scalar(0.0),
                })
            }
        }
    }
}
