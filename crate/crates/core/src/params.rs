//! Named trainable parameters and the small dense building blocks that use
//! them.

use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, TensorError};

pub type ParamId = usize;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// How a parameter starts out.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    /// Uniform in `[-sqrt(3/fan_in), sqrt(3/fan_in)]` (unit gain).
    LeCun(usize),
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
    Constant(f64),
}

/// Flat, ordered collection of parameters. Order is creation order and is
/// what checkpoints and optimizers index by.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
            Init::LeCun(fan_in) => {
                let bound = (3.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
            Init::Normal(std) => (0..n).map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect(),
            Init::Constant(c) => vec![c; n],
        };
        self.push(name.into(), Tensor::new(shape, data).expect("valid parameter shape"))
    }

    pub fn push(&mut self, name: String, value: Tensor) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value: value.detach(),
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), TensorError> {
        let current = &self.params[id].value;
        if current.shape() != value.shape() {
            return Err(TensorError::Shape {
                op: "set_param",
                lhs: current.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.params[id].value = value.detach();
        Ok(())
    }

    /// Total trainable scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_values(&mut self, values: &[Tensor]) -> Result<(), TensorError> {
        assert_eq!(values.len(), self.params.len(), "parameter count mismatch");
        for (id, v) in values.iter().enumerate() {
            self.set(id, v.clone())?;
        }
        Ok(())
    }

    /// Binds every parameter for one forward pass, as tape leaves when a
    /// tape is given.
    pub fn bind(&self, tape: Option<&Tape>) -> Bindings {
        let tensors = self
            .params
            .iter()
            .map(|p| match tape {
                Some(tape) => tape.leaf(&p.value),
                None => p.value.clone(),
            })
            .collect();
        Bindings(tensors)
    }
}

/// Parameter tensors as seen by one forward pass, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bindings(pub Vec<Tensor>);

impl Bindings {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id]
    }

    pub fn as_slice(&self) -> &[Tensor] {
        &self.0
    }
}

impl std::ops::Index<ParamId> for Bindings {
    type Output = Tensor;

    fn index(&self, id: ParamId) -> &Tensor {
        &self.0[id]
    }
}

/// Affine map over the last axis: `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), &[fan_in, fan_out], Init::LeCun(fan_in), rng);
        let bias = store.add(format!("{name}.bias"), &[fan_out], Init::FanIn(fan_in), rng);
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, p: &Bindings, x: &Tensor) -> Result<Tensor, TensorError> {
        x.matmul(&p[self.weight])?.add_bias(&p[self.bias])
    }
}

/// Stack of [`Linear`] layers with ReLU between them and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists input, hidden and output sizes in order.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, p: &Bindings, x: &Tensor) -> Result<Tensor, TensorError> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = h.relu();
            }
            h = layer.forward(p, &h)?;
        }
        Ok(h)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}
