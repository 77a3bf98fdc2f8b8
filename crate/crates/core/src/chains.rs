//! Seeded design generators.
//!
//! * `IidUniform`: independent uniform draws on the domain box.
//! * `MhUniformTarget`: Metropolis-Hastings with proposal
//!   `Uniform[x - eps, x + eps]^d` and uniform target, so a proposal is
//!   accepted iff it lands in the box.
//! * `DoeblinMixture`: `P(x, .) = lambda0 * Uniform(Q) + (1 - lambda0) * R(x, .)`
//!   where `R` is a reflected uniform step of half-width a quarter of each
//!   side. Reflection keeps `R` symmetric, so `Uniform(Q)` is stationary for
//!   `R` and hence for `P`. The minorization `P >= lambda0 psi` holds on all
//!   of `Q` with `psi = Uniform(Q)`, which makes the chain exactly
//!   splittable; see [`crate::regen`].
//! * `MhSmoothTarget`: Metropolis-Hastings towards a product of normals
//!   centered on the box with standard deviation a quarter of each side,
//!   truncated to the box.
//!
//! Every run starts at the box center and discards `burn_in` steps.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::density::Design;
use crate::integrate::Domain;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChainKind {
    #[serde(rename = "iid", alias = "iid_uniform")]
    IidUniform,
    #[serde(rename = "mh", alias = "mh_uniform_target")]
    MhUniformTarget,
    #[serde(rename = "mixture", alias = "doeblin_mixture")]
    DoeblinMixture,
    #[serde(rename = "smooth", alias = "mh_smooth_target")]
    MhSmoothTarget,
}

impl fmt::Display for ChainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChainKind::IidUniform => "iid",
            ChainKind::MhUniformTarget => "mh",
            ChainKind::DoeblinMixture => "mixture",
            ChainKind::MhSmoothTarget => "smooth",
        })
    }
}

impl FromStr for ChainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" | "iid_uniform" => Ok(Self::IidUniform),
            "mh" | "markov" | "mh_uniform_target" => Ok(Self::MhUniformTarget),
            "mixture" | "doeblin" | "doeblin_mixture" => Ok(Self::DoeblinMixture),
            "smooth" | "mh_smooth_target" => Ok(Self::MhSmoothTarget),
            other => Err(Error::InvalidArgument(format!("unknown design `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub kind: ChainKind,
    pub dim: usize,
    pub domain: Domain,
    /// Proposal half-width for the Metropolis-Hastings kinds.
    pub epsilon: f64,
    /// Regeneration probability of the mixture chain.
    pub lambda0: f64,
    pub burn_in: usize,
    pub seed: u64,
    /// Small set `A` used when splitting the mixture chain; `None` is `Q`.
    pub small_set: Option<Domain>,
    /// Residual step half-width, as a fraction of each side.
    pub residual_half_width: f64,
    /// Standard deviation of the smooth target, as a fraction of each side.
    pub smooth_sd: f64,
}

impl ChainConfig {
    pub fn new(kind: ChainKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            domain: Domain::unit(dim.max(1)),
            epsilon: 0.2,
            lambda0: 0.5,
            burn_in: 1000,
            seed: 0,
            small_set: None,
            residual_half_width: 0.25,
            smooth_sd: 0.25,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn lambda0(mut self, lambda0: f64) -> Self {
        self.lambda0 = lambda0;
        self
    }

    pub fn burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn small_set(mut self, small_set: Domain) -> Self {
        self.small_set = Some(small_set);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("chain dimension must be at least 1".into()));
        }
        if self.domain.dim() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "domain has dimension {}, chain has {}",
                self.domain.dim(),
                self.dim
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lambda0 > 0.0 && self.lambda0 <= 1.0) {
            return Err(Error::InvalidArgument(format!("lambda0 must lie in (0, 1], got {}", self.lambda0)));
        }
        if !(self.residual_half_width > 0.0 && self.residual_half_width.is_finite()) {
            return Err(Error::InvalidArgument("residual half-width must be positive".into()));
        }
        if !(self.smooth_sd > 0.0 && self.smooth_sd.is_finite()) {
            return Err(Error::InvalidArgument("smooth target sd must be positive".into()));
        }
        if let Some(a) = &self.small_set {
            if a.dim() != self.dim {
                return Err(Error::InvalidArgument("small set dimension differs from chain".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Small set of the split construction.
    pub fn small_set_or_domain(&self) -> &Domain {
        self.small_set.as_ref().unwrap_or(&self.domain)
    }

    /// Metropolis-Hastings acceptance of `proposal` from `current` given a
    /// uniform draw `u` in `[0, 1)`. Independent and mixture kinds always
    /// accept.
    pub fn mh_accept(&self, current: &[f64], proposal: &[f64], u: f64) -> bool {
        match self.kind {
            ChainKind::MhUniformTarget => self.domain.contains(proposal),
            ChainKind::MhSmoothTarget => {
                self.domain.contains(proposal)
                    && u < (self.smooth_log_density(proposal) - self.smooth_log_density(current)).exp()
            }
            ChainKind::IidUniform | ChainKind::DoeblinMixture => true,
        }
    }

    fn smooth_log_density(&self, x: &[f64]) -> f64 {
        let c = self.domain.center();
        (0..self.dim)
            .map(|j| {
                let sd = self.smooth_sd * self.domain.side(j);
                let z = (x[j] - c[j]) / sd;
                -0.5 * z * z
            })
            .sum()
    }

    /// Stationary density of the chain at `x`; zero outside the box.
    pub fn stationary_density(&self, x: &[f64]) -> f64 {
        if !self.domain.contains(x) {
            return 0.0;
        }
        match self.kind {
            ChainKind::IidUniform | ChainKind::MhUniformTarget | ChainKind::DoeblinMixture => {
                1.0 / self.domain.measure()
            }
            ChainKind::MhSmoothTarget => {
                let c = self.domain.center();
                (0..self.dim)
                    .map(|j| {
                        let sd = self.smooth_sd * self.domain.side(j);
                        let (a, b) = (self.domain.lower()[j], self.domain.upper()[j]);
                        let mass = normal_cdf((b - c[j]) / sd) - normal_cdf((a - c[j]) / sd);
                        let z = (x[j] - c[j]) / sd;
                        (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sd * mass)
                    })
                    .product()
            }
        }
    }

    pub(crate) fn draw_psi<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim)
            .map(|j| self.domain.lower()[j] + self.domain.side(j) * rng.random::<f64>())
            .collect()
    }

    /// Reflected uniform step: the residual kernel `R(x, .)`.
    pub(crate) fn residual_step<R: Rng>(&self, rng: &mut R, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                let a = self.domain.lower()[j];
                let side = self.domain.side(j);
                let s = self.residual_half_width * side * (2.0 * rng.random::<f64>() - 1.0);
                a + side * reflect_unit((x[j] + s - a) / side)
            })
            .collect()
    }

    /// One split transition of the mixture chain from `x`. Returns the bit
    /// `Y` drawn given `x` and the next state.
    pub(crate) fn split_step<R: Rng>(&self, rng: &mut R, x: &[f64], small_set: &Domain) -> (bool, Vec<f64>) {
        if small_set.contains(x) {
            let y = rng.random::<f64>() < self.lambda0;
            let next = if y { self.draw_psi(rng) } else { self.residual_step(rng, x) };
            (y, next)
        } else {
            (false, self.unsplit_step(rng, x))
        }
    }

    /// One draw from `P(x, .)` of the mixture chain, without splitting.
    pub(crate) fn unsplit_step<R: Rng>(&self, rng: &mut R, x: &[f64]) -> Vec<f64> {
        if rng.random::<f64>() < self.lambda0 {
            self.draw_psi(rng)
        } else {
            self.residual_step(rng, x)
        }
    }
}

fn reflect_unit(t: f64) -> f64 {
    let t = t.rem_euclid(2.0);
    if t > 1.0 {
        2.0 - t
    } else {
        t
    }
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// A generated trajectory plus per-step metadata.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub design: Design,
    /// Whether the move into state `i` was accepted (Metropolis-Hastings
    /// kinds only, empty otherwise).
    pub accepted: Vec<bool>,
    /// Split bit `Y_i` drawn given state `i` (mixture kind only, empty
    /// otherwise). `Y_i = 1` means state `i + 1` is a fresh draw from `psi`.
    pub split_bits: Vec<bool>,
}

impl ChainRun {
    pub fn acceptance_rate(&self) -> Option<f64> {
        if self.accepted.is_empty() {
            return None;
        }
        Some(self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64)
    }
}

/// Generates `n` states after burn-in.
pub fn generate(config: &ChainConfig, n: usize) -> Result<ChainRun> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("chain length must be at least 1".into()));
    }
    let d = config.dim;
    let mut rng = config.rng();
    let mut pts = Vec::with_capacity(n * d);
    let mut accepted = Vec::new();
    let mut split_bits = Vec::new();
    match config.kind {
        ChainKind::IidUniform => {
            for _ in 0..n {
                pts.extend(config.draw_psi(&mut rng));
            }
        }
        ChainKind::MhUniformTarget | ChainKind::MhSmoothTarget => {
            accepted.reserve(n);
            let mut x = config.domain.center();
            for step in 0..(config.burn_in + n) {
                let proposal: Vec<f64> = x
                    .iter()
                    .map(|v| v + config.epsilon * (2.0 * rng.random::<f64>() - 1.0))
                    .collect();
                let u = rng.random::<f64>();
                let ok = config.mh_accept(&x, &proposal, u);
                if ok {
                    x = proposal;
                }
                if step >= config.burn_in {
                    pts.extend_from_slice(&x);
                    accepted.push(ok);
                }
            }
        }
        ChainKind::DoeblinMixture => {
            let a = config.small_set_or_domain().clone();
            let mut x = config.domain.center();
            for _ in 0..config.burn_in {
                x = config.split_step(&mut rng, &x, &a).1;
            }
            split_bits.reserve(n);
            for _ in 0..n {
                pts.extend_from_slice(&x);
                let (y, next) = config.split_step(&mut rng, &x, &a);
                split_bits.push(y);
                x = next;
            }
        }
    }
    Ok(ChainRun { design: Design::new(pts, d)?, accepted, split_bits })
}
