//! Nummelin splitting of the mixture chain and regeneration diagnostics.
//!
//! The mixture chain satisfies `P(x, .) >= lambda0 * psi` on its small set
//! `A` with `psi = Uniform(Q)`. The split chain draws `Y_i ~ Bernoulli(lambda0)`
//! when `X_i` is in `A` (and `Y_i = 0` otherwise); `Y_i = 1` sends
//! `X_{i+1}` to `psi`, `Y_i = 0` to the residual kernel. Indices with
//! `Y_i = 1` are the visits to the atom and cut the trajectory into i.i.d.
//! blocks.

use serde::Serialize;

use crate::chains::{ChainConfig, ChainKind};
use crate::density::Design;
use crate::integrate::Domain;
use crate::parallel;
use crate::quadrature::integrate_1d;
use crate::{Error, Result};

/// Inclusive index range `[start, end]` of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockSpan {
    pub start: usize,
    pub end: usize,
}

impl BlockSpan {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct SplitTrace {
    states: Design,
    bits: Vec<bool>,
    regen_times: Vec<usize>,
    small_set: Domain,
    domain: Domain,
    lambda0: f64,
}

impl SplitTrace {
    pub fn states(&self) -> &Design {
        &self.states
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Indices `i` with `Z_i` in the atom, strictly increasing.
    pub fn regen_times(&self) -> &[usize] {
        &self.regen_times
    }

    pub fn small_set(&self) -> &Domain {
        &self.small_set
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn n(&self) -> usize {
        self.states.n()
    }

    /// Number of atom visits `l_n`.
    pub fn visit_count(&self) -> usize {
        self.regen_times.len()
    }

    pub fn visit_ratio(&self) -> f64 {
        self.visit_count() as f64 / self.n() as f64
    }

    /// Complete blocks `(theta(k), theta(k+1)]`; there are `l_n - 1` of them.
    pub fn blocks(&self) -> Vec<BlockSpan> {
        self.regen_times
            .windows(2)
            .map(|w| BlockSpan { start: w[0] + 1, end: w[1] })
            .collect()
    }

    pub fn block_lengths(&self) -> Vec<usize> {
        self.regen_times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Gaps between consecutive visits of `X` to `A`.
    pub fn return_times(&self) -> Vec<usize> {
        let visits: Vec<usize> = self
            .states
            .rows()
            .enumerate()
            .filter(|(_, x)| self.small_set.contains(x))
            .map(|(i, _)| i)
            .collect();
        visits.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// States right after each regeneration; these are draws from `psi`.
    pub fn post_regeneration_states(&self) -> Design {
        let idx: Vec<usize> = self
            .regen_times
            .iter()
            .map(|&t| t + 1)
            .filter(|&t| t < self.n())
            .collect();
        // select on an empty list would be an empty design, which Design rejects
        if idx.is_empty() {
            return self.states.select(&[0]).expect("trace is nonempty");
        }
        self.states.select(&idx).expect("indices are in range")
    }
}

/// Simulates the split mixture chain: `n` states after burn-in.
pub fn split_simulate(config: &ChainConfig, n: usize) -> Result<SplitTrace> {
    if config.kind != ChainKind::DoeblinMixture {
        return Err(Error::UnsupportedChain(format!(
            "{} has no explicit minorization; only the mixture chain can be split",
            config.kind
        )));
    }
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("chain length must be at least 1".into()));
    }
    let small_set = config.small_set_or_domain().clone();
    let mut rng = config.rng();
    let mut x = config.domain.center();
    for _ in 0..config.burn_in {
        x = config.split_step(&mut rng, &x, &small_set).1;
    }
    let d = config.dim;
    let mut pts = Vec::with_capacity(n * d);
    let mut bits = Vec::with_capacity(n);
    let mut regen_times = Vec::new();
    for i in 0..n {
        pts.extend_from_slice(&x);
        let (y, next) = config.split_step(&mut rng, &x, &small_set);
        bits.push(y);
        if y {
            regen_times.push(i);
        }
        x = next;
    }
    Ok(SplitTrace {
        states: Design::new(pts, d)?,
        bits,
        regen_times,
        small_set,
        domain: config.domain.clone(),
        lambda0: config.lambda0,
    })
}

/// The mixture chain without the split bits, for comparison runs.
pub fn simulate_unsplit(config: &ChainConfig, n: usize) -> Result<Design> {
    if config.kind != ChainKind::DoeblinMixture {
        return Err(Error::UnsupportedChain(format!("{} is not the mixture chain", config.kind)));
    }
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("chain length must be at least 1".into()));
    }
    let mut rng = config.rng();
    let mut x = config.domain.center();
    for _ in 0..config.burn_in {
        x = config.unsplit_step(&mut rng, &x);
    }
    let mut pts = Vec::with_capacity(n * config.dim);
    for _ in 0..n {
        pts.extend_from_slice(&x);
        x = config.unsplit_step(&mut rng, &x);
    }
    Design::new(pts, config.dim)
}

/// Every `m0`-th state starting at `offset`. For a chain whose minorization
/// holds only for `P^m0`, the sub-sampled chain satisfies it with `m0 = 1`.
pub fn subsample(design: &Design, m0: usize, offset: usize) -> Result<Design> {
    if m0 == 0 {
        return Err(Error::InvalidArgument("sub-sampling step must be at least 1".into()));
    }
    let idx: Vec<usize> = (offset..design.n()).step_by(m0).collect();
    if idx.is_empty() {
        return Err(Error::InsufficientSample { needed: offset + 1, got: design.n() });
    }
    design.select(&idx)
}

/// Consecutive chunks of `len` states, ignoring any remainder. Not
/// regeneration blocks; used to show what the independence check rejects.
pub fn fixed_length_blocks(n: usize, len: usize) -> Vec<BlockSpan> {
    if len == 0 {
        return Vec::new();
    }
    (0..n / len).map(|k| BlockSpan { start: k * len, end: k * len + len - 1 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "param")]
pub enum TestFunction {
    One,
    /// `1{x_1 <= c}`.
    IndicatorBelow(f64),
    /// `x_1`.
    Identity,
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TestFunction::One => 1.0,
            TestFunction::IndicatorBelow(c) => f64::from(u8::from(x[0] <= c)),
            TestFunction::Identity => x[0],
        }
    }

    /// `pi(g)` for the uniform law on `domain`, by quadrature in the first
    /// coordinate (the others integrate out).
    pub fn uniform_mean(&self, domain: &Domain) -> f64 {
        let (a, b) = (domain.lower()[0], domain.upper()[0]);
        let g = |t: f64| self.eval(&[t]);
        let mass = |lo: f64, hi: f64| {
            if hi > lo {
                (integrate_1d(g, lo, hi, 16), integrate_1d(|_| 1.0, lo, hi, 16))
            } else {
                (0.0, 0.0)
            }
        };
        let (num, den) = match *self {
            TestFunction::IndicatorBelow(c) => {
                let cut = c.clamp(a, b);
                let (n1, d1) = mass(a, cut);
                let (n2, d2) = mass(cut, b);
                (n1 + n2, d1 + d2)
            }
            _ => mass(a, b),
        };
        num / den
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KacReport {
    pub test_function: TestFunction,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
    pub alpha_hat: f64,
    pub stationary_mean: f64,
    pub blocks: usize,
}

pub const KAC_MIN_BLOCKS: usize = 100;
pub const INDEPENDENCE_MIN_BLOCKS: usize = 1000;

/// Block average of `sum g(X_i)` against `alpha_hat * pi(g)`.
pub fn kac_check(trace: &SplitTrace, g: TestFunction) -> Result<KacReport> {
    let blocks = trace.blocks();
    if blocks.len() < KAC_MIN_BLOCKS {
        return Err(Error::InsufficientBlocks { needed: KAC_MIN_BLOCKS, got: blocks.len() });
    }
    let sums = block_sums(trace.states(), &blocks, |x| g.eval(x));
    let lengths: Vec<f64> = blocks.iter().map(|b| b.len() as f64).collect();
    let m = blocks.len() as f64;
    let lhs = parallel::ordered_sum(&sums) / m;
    let alpha_hat = parallel::ordered_sum(&lengths) / m;
    let stationary_mean = g.uniform_mean(&trace.domain);
    let rhs = alpha_hat * stationary_mean;
    let rel_err = if rhs != 0.0 { (lhs / rhs - 1.0).abs() } else { (lhs - rhs).abs() };
    Ok(KacReport { test_function: g, lhs, rhs, rel_err, alpha_hat, stationary_mean, blocks: blocks.len() })
}

fn block_sums<F>(states: &Design, blocks: &[BlockSpan], g: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    parallel::map_slice(blocks, |b| (b.start..=b.end).map(|i| g(states.row(i))).sum())
}

#[derive(Debug, Clone, Serialize)]
pub struct ReturnTimeMoments {
    pub p: f64,
    /// Empirical `E_a[theta^p]` over complete blocks.
    pub theta_moment: f64,
    /// Empirical `xi(p)`: pooled `A`-return times stand in for the sup over `A`.
    pub xi_hat: f64,
    /// Right-hand side of the moment bound `lambda0^-1 e^{l/p}/(e^{l/p}-1) xi^{1/p}`.
    pub bound: f64,
    pub bound_holds: bool,
    pub blocks: usize,
    pub returns: usize,
}

pub fn return_time_moments(trace: &SplitTrace, p: f64) -> Result<ReturnTimeMoments> {
    if !(1.0..=6.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("moment order must lie in [1, 6], got {p}")));
    }
    let lengths = trace.block_lengths();
    if lengths.is_empty() {
        return Err(Error::InsufficientBlocks { needed: 1, got: 0 });
    }
    let returns = trace.return_times();
    let moment = |v: &[usize]| v.iter().map(|&t| (t as f64).powf(p)).sum::<f64>() / v.len() as f64;
    let theta_moment = moment(&lengths);
    let xi_hat = if returns.is_empty() { f64::NAN } else { moment(&returns) };
    let l = trace.lambda0;
    let e = (l / p).exp();
    let bound = e / (l * (e - 1.0)) * xi_hat.powf(1.0 / p);
    Ok(ReturnTimeMoments {
        p,
        theta_moment,
        xi_hat,
        bound,
        bound_holds: theta_moment.powf(1.0 / p) <= bound,
        blocks: lengths.len(),
        returns: returns.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceReport {
    pub blocks: usize,
    pub sum_correlation: f64,
    pub length_correlation: f64,
    pub band: f64,
    pub passes: bool,
}

/// Lag-1 correlation of block sums (first coordinate) and block lengths for
/// the regeneration blocks of `trace`.
pub fn block_independence_check(trace: &SplitTrace) -> Result<IndependenceReport> {
    block_independence(trace.states(), &trace.blocks())
}

/// Same statistic for arbitrary blocks of a trajectory. A series with zero
/// variance (constant block lengths) has correlation 0 by convention.
pub fn block_independence(states: &Design, blocks: &[BlockSpan]) -> Result<IndependenceReport> {
    if blocks.len() < INDEPENDENCE_MIN_BLOCKS {
        return Err(Error::InsufficientBlocks { needed: INDEPENDENCE_MIN_BLOCKS, got: blocks.len() });
    }
    let sums = block_sums(states, blocks, |x| x[0]);
    let lengths: Vec<f64> = blocks.iter().map(|b| b.len() as f64).collect();
    let sum_correlation = lag1_correlation(&sums);
    let length_correlation = lag1_correlation(&lengths);
    let band = 3.0 / (blocks.len() as f64).sqrt();
    Ok(IndependenceReport {
        blocks: blocks.len(),
        sum_correlation,
        length_correlation,
        band,
        passes: sum_correlation.abs() <= band && length_correlation.abs() <= band,
    })
}

fn lag1_correlation(s: &[f64]) -> f64 {
    let (a, b) = (&s[..s.len() - 1], &s[1..]);
    let m = a.len() as f64;
    let ma = a.iter().sum::<f64>() / m;
    let mb = b.iter().sum::<f64>() / m;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Everything the `regen` command reports for one split run.
#[derive(Debug, Clone, Serialize)]
pub struct RegenDiagnostics {
    pub config: ChainConfig,
    pub n: usize,
    pub visits: usize,
    pub visit_ratio: f64,
    pub mean_block_length: f64,
    pub kac: Vec<KacReport>,
    pub moments: ReturnTimeMoments,
    pub independence: Option<IndependenceReport>,
    pub bit_legality: bool,
}

pub fn diagnose(config: &ChainConfig, n: usize, p: f64) -> Result<RegenDiagnostics> {
    let trace = split_simulate(config, n)?;
    let split_point = 0.5 * (config.domain.lower()[0] + config.domain.upper()[0]);
    let kac = [TestFunction::One, TestFunction::IndicatorBelow(split_point), TestFunction::Identity]
        .into_iter()
        .map(|g| kac_check(&trace, g))
        .collect::<Result<Vec<_>>>()?;
    let moments = return_time_moments(&trace, p)?;
    let independence = match block_independence_check(&trace) {
        Ok(r) => Some(r),
        Err(Error::InsufficientBlocks { .. }) => None,
        Err(e) => return Err(e),
    };
    let bit_legality = trace
        .bits()
        .iter()
        .zip(trace.states().rows())
        .all(|(&y, x)| !y || trace.small_set().contains(x));
    Ok(RegenDiagnostics {
        config: config.clone(),
        n,
        visits: trace.visit_count(),
        visit_ratio: trace.visit_ratio(),
        mean_block_length: kac[0].alpha_hat,
        kac,
        moments,
        independence,
        bit_legality,
    })
}
