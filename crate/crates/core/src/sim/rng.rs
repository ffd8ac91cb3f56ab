use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Pareto};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("mean must be positive and finite, got {0}")]
    InvalidMean(f64),
    #[error("Pareto shape must exceed 1 for a finite mean, got {0}")]
    InvalidShape(f64),
}

/// Mixes a master seed with a stream label into an independent 64-bit seed.
///
/// FNV-1a over the label followed by a splitmix64 finalizer; stable across
/// platforms and compiler versions.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One named random stream. Each stochastic process owns its own stream so
/// that perturbing one process leaves the draws of the others untouched.
#[derive(Clone, Debug)]
pub struct RngStream {
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, &label));
        RngStream { label, rng }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub(crate) fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Exponential distribution parameterized by its mean.
#[derive(Clone, Copy, Debug)]
pub struct Exponential {
    mean: f64,
    dist: Exp<f64>,
}

impl Exponential {
    pub fn with_mean(mean: f64) -> Result<Self, DistError> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(DistError::InvalidMean(mean));
        }
        let dist = Exp::new(1.0 / mean).map_err(|_| DistError::InvalidMean(mean))?;
        Ok(Exponential { mean, dist })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        loop {
            let x = self.dist.sample(stream.inner());
            if x > 0.0 {
                return x;
            }
        }
    }
}

/// Burst sizes in whole packets: the ceiling of a Pareto draw whose scale is
/// chosen so that the continuous distribution has the requested mean.
#[derive(Clone, Copy, Debug)]
pub struct ParetoBurst {
    shape: f64,
    scale: f64,
    dist: Pareto<f64>,
}

impl ParetoBurst {
    pub fn new(shape: f64, mean: f64) -> Result<Self, DistError> {
        if !(shape > 1.0 && shape.is_finite()) {
            return Err(DistError::InvalidShape(shape));
        }
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(DistError::InvalidMean(mean));
        }
        let scale = mean * (shape - 1.0) / shape;
        let dist = Pareto::new(scale, shape).map_err(|_| DistError::InvalidShape(shape))?;
        Ok(ParetoBurst { shape, scale, dist })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    /// Minimum of the continuous distribution, `mean * (k - 1) / k`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sample(&self, stream: &mut RngStream) -> u64 {
        let x = self.dist.sample(stream.inner());
        // Float-to-int `as` saturates, which is what we want for the far tail.
        (x.ceil() as u64).max(1)
    }
}

pub fn sample_exponential(stream: &mut RngStream, mean: f64) -> Result<f64, DistError> {
    Ok(Exponential::with_mean(mean)?.sample(stream))
}

pub fn sample_pareto_burst(stream: &mut RngStream, shape: f64, mean: f64) -> Result<u64, DistError> {
    Ok(ParetoBurst::new(shape, mean)?.sample(stream))
}
