//! The single seedable generator that drives initialization, latent sampling
//! and batch shuffling.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::tensor::Tensor;

pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Standard-normal draw of the given shape.
pub fn standard_normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape and length agree")
}

/// Where the reparameterization noise comes from during a forward pass.
pub enum Sampling<'a> {
    /// Evaluation: every latent takes its mean (noise fixed at zero).
    Mean,
    /// Training: fresh standard-normal noise per draw.
    Draw(&'a mut Rng),
}

impl Sampling<'_> {
    pub fn noise(&mut self, shape: &[usize]) -> Tensor {
        match self {
            Sampling::Mean => Tensor::zeros(shape),
            Sampling::Draw(rng) => standard_normal(rng, shape),
        }
    }

    pub fn is_mean(&self) -> bool {
        matches!(self, Sampling::Mean)
    }
}
