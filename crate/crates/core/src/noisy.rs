//! Plain and noisy linear layers.
//!
//! A noisy layer computes `y = (μʷ + σʷ ⊙ εʷ) x + μᵇ + σᵇ ⊙ εᵇ`. The noise
//! `(εʷ, εᵇ)` lives in a separate [`LayerNoise`] value so that one draw can be
//! held fixed over a minibatch or a rollout and replayed exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::math::{gaussian, matvec, squash, Matrix};

/// Initial σ for independent-noise layers.
pub const INDEPENDENT_SIGMA_INIT: f64 = 0.017;

/// Default σ₀ for factorised-noise layers; σ is initialised to `σ₀ / √p`.
pub const DEFAULT_SIGMA0: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// One unit Gaussian per weight and per bias (`pq + q` draws).
    Independent,
    /// Rank-one noise `f(ε_out) f(ε_in)ᵀ` from `p + q` draws.
    Factorised,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(NoiseKind::Independent),
            "factorised" | "factorized" => Ok(NoiseKind::Factorised),
            other => Err(Error::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::Independent => "independent",
            NoiseKind::Factorised => "factorised",
        })
    }
}

/// `y = w x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl LinearLayer {
    pub fn new(w: Matrix, b: Vec<f64>) -> Result<Self> {
        if w.rows() != b.len() {
            return shape_err(format!(
                "weight {:?} with bias of length {}",
                w.shape(),
                b.len()
            ));
        }
        Ok(Self { w, b })
    }

    /// Uniform `U[-1/√p, 1/√p]` initialisation, weights first then biases.
    ///
    /// Consumes the random stream in exactly the same order as the μ part of
    /// [`NoisyLinear::init_factorised`], so both produce identical means from
    /// the same stream.
    pub fn init<R: Rng + ?Sized>(p: usize, q: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (p as f64).sqrt();
        let w = Matrix::from_fn(q, p, |_, _| rng.random_range(-bound..=bound));
        let b = (0..q).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { w, b }
    }

    pub fn inputs(&self) -> usize {
        self.w.cols()
    }

    pub fn outputs(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = matvec(&self.w, x)?;
        for (yi, bi) in y.iter_mut().zip(&self.b) {
            *yi += bi;
        }
        Ok(y)
    }
}

/// A linear layer with learnable Gaussian perturbations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyLinear {
    pub mu_w: Matrix,
    pub sigma_w: Matrix,
    pub mu_b: Vec<f64>,
    pub sigma_b: Vec<f64>,
    pub kind: NoiseKind,
}

/// Squashed factor vectors behind a factorised draw.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseFactors {
    /// `f(ε_i)` for each of the `p` inputs.
    pub input: Vec<f64>,
    /// `f(ε_j)` for each of the `q` outputs.
    pub output: Vec<f64>,
}

/// One materialised draw of `(εʷ, εᵇ)` for a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNoise {
    pub eps_w: Matrix,
    pub eps_b: Vec<f64>,
    /// Present for factorised draws.
    pub factors: Option<NoiseFactors>,
}

impl LayerNoise {
    pub fn zeros(q: usize, p: usize) -> Self {
        Self {
            eps_w: Matrix::zeros(q, p),
            eps_b: vec![0.0; q],
            factors: None,
        }
    }

    /// Builds factorised noise from raw unit-Gaussian input and output draws.
    pub fn from_factors(eps_in: &[f64], eps_out: &[f64]) -> Self {
        let input: Vec<f64> = eps_in.iter().map(|&e| squash(e)).collect();
        let output: Vec<f64> = eps_out.iter().map(|&e| squash(e)).collect();
        Self {
            eps_w: Matrix::outer(&output, &input),
            eps_b: output.clone(),
            factors: Some(NoiseFactors { input, output }),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.eps_w.is_finite() && self.eps_b.iter().all(|v| v.is_finite())
    }
}

impl NoisyLinear {
    /// Independent-noise initialisation: `μ ~ U[-√(3/p), √(3/p)]`, σ = 0.017.
    pub fn init_independent<R: Rng + ?Sized>(p: usize, q: usize, rng: &mut R) -> Self {
        assert!(p >= 1 && q >= 1, "layer dimensions must be positive");
        let bound = (3.0 / p as f64).sqrt();
        let mu_w = Matrix::from_fn(q, p, |_, _| rng.random_range(-bound..=bound));
        let mu_b = (0..q).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            mu_w,
            sigma_w: Matrix::filled(q, p, INDEPENDENT_SIGMA_INIT),
            mu_b,
            sigma_b: vec![INDEPENDENT_SIGMA_INIT; q],
            kind: NoiseKind::Independent,
        }
    }

    /// Factorised-noise initialisation: `μ ~ U[-1/√p, 1/√p]`, σ = σ₀/√p.
    pub fn init_factorised<R: Rng + ?Sized>(p: usize, q: usize, sigma0: f64, rng: &mut R) -> Self {
        assert!(p >= 1 && q >= 1, "layer dimensions must be positive");
        assert!(sigma0 > 0.0, "sigma0 must be positive");
        let plain = LinearLayer::init(p, q, rng);
        let sigma = sigma0 / (p as f64).sqrt();
        Self {
            mu_w: plain.w,
            sigma_w: Matrix::filled(q, p, sigma),
            mu_b: plain.b,
            sigma_b: vec![sigma; q],
            kind: NoiseKind::Factorised,
        }
    }

    /// Initialisation for `kind` with its standard σ.
    pub fn init<R: Rng + ?Sized>(
        p: usize,
        q: usize,
        kind: NoiseKind,
        sigma0: f64,
        rng: &mut R,
    ) -> Self {
        match kind {
            NoiseKind::Independent => Self::init_independent(p, q, rng),
            NoiseKind::Factorised => Self::init_factorised(p, q, sigma0, rng),
        }
    }

    /// Noisy layer whose means are `plain`'s parameters and whose σ is `sigma`.
    pub fn from_plain(plain: &LinearLayer, kind: NoiseKind, sigma: f64) -> Self {
        Self {
            mu_w: plain.w.clone(),
            sigma_w: Matrix::filled(plain.outputs(), plain.inputs(), sigma),
            mu_b: plain.b.clone(),
            sigma_b: vec![sigma; plain.outputs()],
            kind,
        }
    }

    pub fn inputs(&self) -> usize {
        self.mu_w.cols()
    }

    pub fn outputs(&self) -> usize {
        self.mu_w.rows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (q, p) = self.mu_w.shape();
        if self.sigma_w.shape() != (q, p) || self.mu_b.len() != q || self.sigma_b.len() != q {
            return shape_err(format!(
                "inconsistent noisy layer blocks: mu_w {:?}, sigma_w {:?}, mu_b {}, sigma_b {}",
                self.mu_w.shape(),
                self.sigma_w.shape(),
                self.mu_b.len(),
                self.sigma_b.len()
            ));
        }
        Ok(())
    }

    pub fn sample_noise_independent<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LayerNoise> {
        if self.kind != NoiseKind::Independent {
            return Err(Error::Usage(
                "independent sampler on a factorised layer".into(),
            ));
        }
        let (q, p) = self.mu_w.shape();
        let eps_w = Matrix::from_vec(q, p, gaussian(rng, q * p))?;
        let eps_b = gaussian(rng, q);
        Ok(LayerNoise {
            eps_w,
            eps_b,
            factors: None,
        })
    }

    /// Draws `p` input then `q` output unit Gaussians and squashes them.
    pub fn sample_noise_factorised<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LayerNoise> {
        if self.kind != NoiseKind::Factorised {
            return Err(Error::Usage(
                "factorised sampler on an independent layer".into(),
            ));
        }
        let eps_in = gaussian(rng, self.inputs());
        let eps_out = gaussian(rng, self.outputs());
        Ok(LayerNoise::from_factors(&eps_in, &eps_out))
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> LayerNoise {
        let noise = match self.kind {
            NoiseKind::Independent => self.sample_noise_independent(rng),
            NoiseKind::Factorised => self.sample_noise_factorised(rng),
        };
        noise.expect("sampler matches layer kind")
    }

    fn check_noise(&self, noise: &LayerNoise) -> Result<()> {
        if noise.eps_w.shape() != self.mu_w.shape() || noise.eps_b.len() != self.mu_b.len() {
            return shape_err(format!(
                "noise {:?}/{} for layer {:?}/{}",
                noise.eps_w.shape(),
                noise.eps_b.len(),
                self.mu_w.shape(),
                self.mu_b.len()
            ));
        }
        Ok(())
    }

    /// The deterministic layer obtained by fixing the noise.
    pub fn effective(&self, noise: &LayerNoise) -> Result<LinearLayer> {
        self.check_noise(noise)?;
        let w = self.mu_w.add_hadamard(&self.sigma_w, &noise.eps_w)?;
        let b = self
            .mu_b
            .iter()
            .zip(&self.sigma_b)
            .zip(&noise.eps_b)
            .map(|((m, s), e)| m + s * e)
            .collect();
        Ok(LinearLayer { w, b })
    }

    pub fn forward(&self, noise: &LayerNoise, x: &[f64]) -> Result<Vec<f64>> {
        self.effective(noise)?.forward(x)
    }

    /// The layer with σ removed.
    pub fn mean_layer(&self) -> LinearLayer {
        LinearLayer {
            w: self.mu_w.clone(),
            b: self.mu_b.clone(),
        }
    }

    pub fn zero_sigma(&mut self) {
        self.sigma_w.as_mut_slice().fill(0.0);
        self.sigma_b.fill(0.0);
    }
}
