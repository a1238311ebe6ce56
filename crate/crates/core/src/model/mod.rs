//! The full forecasting network: input embedding, stacked attention layers,
//! skip connections into a shared predictor, and optional parameter
//! generation.

pub mod complexity;
pub mod config;

pub use complexity::{count_scores, expected_scores, ScoreTotals};
pub use config::{AggregatorKind, ConfigError, ModelConfig, Variant};

use crate::attention::{self, Aggregator, Embedding, FusionNetwork, ScoreCount, WeightingNetwork};
use crate::params::{Bindings, Init, Linear, Mlp, ParamId, ParamStore};
use crate::rng::{Rng, Sampling};
use crate::stgen::{BlockLayout, GeneratedParams, Generator, GeneratorSpec, LatentMode};
use crate::tensor::{Result, Tape, Tensor, TensorError};

#[derive(Debug, Clone)]
struct CanonicalLayer {
    query: ParamId,
    key: ParamId,
    value: ParamId,
}

#[derive(Debug, Clone)]
struct WindowLayer {
    window: usize,
    input_len: usize,
    /// `[W, N, p, d]`
    proxies: ParamId,
    /// Shared key/value projections when not generated.
    shared_kv: Option<(ParamId, ParamId)>,
    /// Shared sensor-correlation embeddings when not generated.
    shared_theta: Option<(ParamId, ParamId)>,
    fusion: Option<FusionNetwork>,
    aggregator: Aggregator,
}

#[derive(Debug, Clone)]
enum Body {
    Canonical(Vec<CanonicalLayer>),
    Window(Vec<WindowLayer>),
}

/// Result of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[B, N, U, F]`
    pub prediction: Tensor,
    /// KL regularizer (zero for variants without stochastic latents).
    pub kl: Tensor,
    /// Attention scores computed for the whole batch.
    pub scores: ScoreCount,
    /// Tokens emitted by each attention layer.
    pub layer_tokens: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    n_sensors: usize,
    features: usize,
    embed: Linear,
    generator: Option<Generator>,
    body: Body,
    skips: Vec<Linear>,
    predictor: Mlp,
}

impl Model {
    /// Builds a freshly initialized model. `config` must carry `N` and `F`.
    pub fn new(config: &ModelConfig, rng: &mut Rng) -> std::result::Result<Self, ConfigError> {
        config.validate()?;
        let (Some(n), Some(f)) = (config.n_sensors, config.features) else {
            return Err(ConfigError::Invalid("N and F must be known before building a model".into()));
        };
        let c = config;
        let d = c.d;
        let mut store = ParamStore::new();
        let embed = Linear::new(&mut store, "embed", f, d, rng);

        let generator = c.variant.generates_params().then(|| {
            let mode = match c.variant {
                Variant::SpatialWindow => LatentMode::Spatial,
                Variant::DeterministicWindow => LatentMode::Deterministic,
                _ => LatentMode::SpatioTemporal,
            };
            let layouts: Vec<BlockLayout> = c
                .active_windows()
                .iter()
                .map(|_| BlockLayout {
                    d_in: d,
                    d,
                    sensor_correlation: c.sensor_correlation,
                })
                .collect();
            Generator::new(
                &mut store,
                &GeneratorSpec {
                    mode,
                    n_sensors: n,
                    k: c.k,
                    input_width: c.history * f,
                    encoder_hidden: &c.encoder_hidden,
                    decoder_hidden: &c.decoder_hidden,
                    layouts: &layouts,
                },
                rng,
            )
        });

        let d_skip = c.d_skip();
        let mut skips = Vec::new();
        let body = if c.variant.uses_windows() {
            let generated = generator.is_some();
            let mut layers = Vec::new();
            for (l, (&window, input_len)) in c.active_windows().iter().zip(c.layer_input_lengths()).enumerate() {
                let tokens = input_len / window;
                let proxies = store.add(format!("layer{l}.proxies"), &[tokens, n, c.p, d], Init::Normal(1.0), rng);
                let shared_kv = (!generated).then(|| {
                    (
                        store.add(format!("layer{l}.key"), &[d, d], Init::LeCun(d), rng),
                        store.add(format!("layer{l}.value"), &[d, d], Init::LeCun(d), rng),
                    )
                });
                let shared_theta = (!generated && c.sensor_correlation).then(|| {
                    (
                        store.add(format!("layer{l}.theta1"), &[d, d], Init::LeCun(d), rng),
                        store.add(format!("layer{l}.theta2"), &[d, d], Init::LeCun(d), rng),
                    )
                });
                let fusion = c
                    .recurrent
                    .then(|| FusionNetwork::new(&mut store, &format!("layer{l}.fusion"), d, rng));
                let aggregator = match c.aggregator {
                    AggregatorKind::Weighted => {
                        Aggregator::Weighted(WeightingNetwork::new(&mut store, &format!("layer{l}.weighting"), c.p, d, rng))
                    }
                    AggregatorKind::Mean => Aggregator::Mean,
                };
                skips.push(Linear::new(&mut store, &format!("skip{l}"), tokens * d, d_skip, rng));
                layers.push(WindowLayer {
                    window,
                    input_len,
                    proxies,
                    shared_kv,
                    shared_theta,
                    fusion,
                    aggregator,
                });
            }
            Body::Window(layers)
        } else {
            let layers = (0..c.layers)
                .map(|l| {
                    let layer = CanonicalLayer {
                        query: store.add(format!("layer{l}.query"), &[d, d], Init::LeCun(d), rng),
                        key: store.add(format!("layer{l}.key"), &[d, d], Init::LeCun(d), rng),
                        value: store.add(format!("layer{l}.value"), &[d, d], Init::LeCun(d), rng),
                    };
                    skips.push(Linear::new(&mut store, &format!("skip{l}"), d, d_skip, rng));
                    layer
                })
                .collect();
            Body::Canonical(layers)
        };
        let predictor = Mlp::new(&mut store, "predictor", &[d_skip, c.predictor_hidden, c.horizon * f], rng);

        Ok(Model {
            config: config.clone(),
            store,
            n_sensors: n,
            features: f,
            embed,
            generator,
            body,
            skips,
            predictor,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn bind(&self, tape: Option<&Tape>) -> Bindings {
        self.store.bind(tape)
    }

    /// Convenience forward pass with the stored parameters and no tape.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(&self.bind(None), x, &mut Sampling::Mean)?.prediction)
    }

    /// Runs the network on `x: [B, N, H, F]`.
    pub fn forward(&self, p: &Bindings, x: &Tensor, sampling: &mut Sampling<'_>) -> Result<ForwardOutput> {
        let (combined, mut out) = self.skip_sum(p, x, sampling)?;
        let batch = x.shape()[0];
        out.prediction = self
            .predictor
            .forward(p, &combined)?
            .reshape(&[batch, self.n_sensors, self.config.horizon, self.features])?;
        Ok(out)
    }

    /// Everything up to the predictor: the summed skip projections `[B*N, d_skip]`.
    /// The returned output carries everything except the prediction.
    fn skip_sum(&self, p: &Bindings, x: &Tensor, sampling: &mut Sampling<'_>) -> Result<(Tensor, ForwardOutput)> {
        let c = &self.config;
        let (n, f, h) = (self.n_sensors, self.features, c.history);
        if x.rank() != 4 || x.shape()[1..] != [n, h, f] {
            return Err(TensorError::Shape {
                op: "forward",
                lhs: x.shape().to_vec(),
                rhs: vec![0, n, h, f],
            });
        }
        let batch = x.shape()[0];
        let rows = batch * n;
        let d = c.d;

        let embedded = self
            .embed
            .forward(p, &x.reshape(&[rows * h, f])?)?
            .reshape(&[rows, h, d])?;
        let generated = match &self.generator {
            Some(generator) => Some(generator.generate(p, &x.reshape(&[rows, h * f])?, sampling)?),
            None => None,
        };

        let mut scores = ScoreCount::default();
        let mut skip_sum: Option<Tensor> = None;
        let mut add_skip = |term: Tensor| -> Result<()> {
            skip_sum = Some(match skip_sum.take() {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
            Ok(())
        };
        let mut layer_tokens = Vec::new();

        match &self.body {
            Body::Canonical(layers) => {
                let mut hidden = embedded;
                for (layer, skip) in layers.iter().zip(&self.skips) {
                    hidden = attention::canonical_attention(
                        &hidden,
                        &p[layer.query],
                        &p[layer.key],
                        &p[layer.value],
                        c.heads,
                        &mut scores,
                    )?;
                    let pooled = hidden.sum_axis(1)?.scale(1.0 / h as f64);
                    add_skip(skip.forward(p, &pooled)?)?;
                    layer_tokens.push(h);
                }
            }
            Body::Window(layers) => {
                let tile: Vec<usize> = (0..rows).map(|r| r % n).collect();
                let mut hidden = embedded;
                for (l, (layer, skip)) in layers.iter().zip(&self.skips).enumerate() {
                    let gen = generated.as_ref().map(|g| &g.layers[l]);
                    let out = self.window_layer(p, layer, &hidden, gen, &tile, batch, &mut scores)?;
                    let tokens = out.shape()[1];
                    add_skip(skip.forward(p, &out.reshape(&[rows, tokens * d])?)?)?;
                    layer_tokens.push(tokens);
                    hidden = out;
                }
            }
        }

        let combined = skip_sum.expect("at least one layer");
        let kl = generated.map_or_else(|| Tensor::scalar(0.0), |g| g.kl);
        let out = ForwardOutput {
            prediction: Tensor::scalar(0.0),
            kl,
            scores,
            layer_tokens,
        };
        Ok((combined, out))
    }

    /// One window-attention layer: `[rows, T, d] -> [rows, T / S, d]`.
    #[allow(clippy::too_many_arguments)]
    fn window_layer(
        &self,
        p: &Bindings,
        layer: &WindowLayer,
        input: &Tensor,
        generated: Option<&GeneratedParams>,
        tile: &[usize],
        batch: usize,
        scores: &mut ScoreCount,
    ) -> Result<Tensor> {
        let c = &self.config;
        let (n, d, s) = (self.n_sensors, c.d, layer.window);
        let rows = input.shape()[0];
        debug_assert_eq!(input.shape()[1], layer.input_len);
        let windows = layer.input_len / s;

        let (key, value) = match (generated, layer.shared_kv) {
            (Some(g), _) => (g.key.clone(), g.value.clone()),
            (None, Some((k, v))) => (p[k].clone(), p[v].clone()),
            (None, None) => unreachable!("window layer without key/value projections"),
        };
        let keys = input.matmul(&key)?;
        let values = input.matmul(&value)?;
        let theta = match (generated, layer.shared_theta) {
            (Some(g), _) => g.theta1.as_ref().zip(g.theta2.as_ref()).map(|(a, b)| (Embedding::PerRow(a), Embedding::PerRow(b))),
            (None, Some((t1, t2))) => Some((Embedding::Shared(&p[t1]), Embedding::Shared(&p[t2]))),
            (None, None) => None,
        };

        let all_proxies = &p[layer.proxies];
        let mut h_prev = Tensor::zeros(&[rows, d]);
        let mut outputs = Vec::with_capacity(windows);
        for w in 0..windows {
            let mut proxies = all_proxies.narrow(0, w, 1)?.reshape(&[n, c.p, d])?;
            if batch > 1 {
                proxies = proxies.gather_rows(tile)?;
            }
            if let Some(fusion) = &layer.fusion {
                proxies = fusion.fuse(p, &h_prev, &proxies)?;
            }
            let h_w = attention::attend(
                &proxies,
                &keys.narrow(1, w * s, s)?,
                &values.narrow(1, w * s, s)?,
                c.heads,
                scores,
            )?;
            let h_hat = layer.aggregator.aggregate(p, &h_w)?;
            let h_bar = match &theta {
                Some((t1, t2)) => attention::sensor_correlation(t1, t2, &h_hat, n)?,
                None => h_hat.clone(),
            };
            h_prev = h_hat;
            outputs.push(h_bar.reshape(&[rows, 1, d])?);
        }
        let refs: Vec<&Tensor> = outputs.iter().collect();
        Tensor::concat(&refs, 1)
    }
}

#[cfg(test)]
mod tests;
