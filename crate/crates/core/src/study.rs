//! Replication harness: test-function models, the replicated estimator
//! study, summary statistics and the convergence-rate experiment.
//!
//! Every replicate `r` of a study draws its design with seed `seed + r`.
//! All models and methods of one replicate reuse that single draw, and the
//! rows carry a hash of it so the pairing can be checked after the fact.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::f64::consts::{E, PI};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bandwidth::{Bandwidth, BandwidthRule};
use crate::chains::{self, ChainConfig, ChainKind};
use crate::density::Design;
use crate::integrate::{estimate_ks_pair, estimate_mc, EstimatorOptions, LabeledSample, Method};
use crate::kernels::KernelSpec;
use crate::parallel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    M1,
    M2,
    M3,
}

impl ModelId {
    pub const ALL: [ModelId; 3] = [ModelId::M1, ModelId::M2, ModelId::M3];

    /// Univariate factor; each integrates to one over `[0, 1]`.
    pub fn factor(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        let s = (PI * t).sin();
        match self {
            ModelId::M1 => 2.0 * s * s,
            ModelId::M2 => (1.0 + PI * PI) / (PI * (1.0 + E)) * s * t.exp(),
            ModelId::M3 => PI / 2.0 * s * (1.0 + (5.0 * PI * t).cos()),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelId::M1 => "m1",
            ModelId::M2 => "m2",
            ModelId::M3 => "m3",
        })
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(ModelId::M1),
            "m2" => Ok(ModelId::M2),
            "m3" => Ok(ModelId::M3),
            other => Err(Error::InvalidArgument(format!("unknown model `{other}`"))),
        }
    }
}

/// A model in a given dimension: `phi(x) = prod_j f(x_j)` on `[0, 1]^d`,
/// so the true integral is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: ModelId,
    pub dim: usize,
}

impl ModelSpec {
    pub fn new(id: ModelId, dim: usize) -> Self {
        Self { id, dim }
    }

    pub const TRUE_INTEGRAL: f64 = 1.0;
}

pub fn eval_model(model: &ModelSpec, x: &[f64]) -> f64 {
    x.iter().map(|&t| model.id.factor(t)).product()
}

/// Trapezoid rule on `m` intervals of one univariate factor.
pub fn trapezoid_factor_integral(id: ModelId, m: usize) -> f64 {
    let h = 1.0 / m as f64;
    let inner: f64 = (1..m).map(|k| id.factor(k as f64 * h)).sum();
    h * (inner + 0.5 * (id.factor(0.0) + id.factor(1.0)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub models: Vec<ModelId>,
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub designs: Vec<ChainKind>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub bandwidth: BandwidthRule,
    pub epsilon: f64,
    pub burn_in: usize,
    /// Include the `d = 3, n = 2000` cells.
    pub full: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            models: ModelId::ALL.to_vec(),
            dims: vec![1, 2, 3],
            sizes: vec![500, 1000, 2000],
            designs: vec![ChainKind::IidUniform, ChainKind::MhUniformTarget],
            methods: vec![Method::Ks, Method::Ksc, Method::Mc],
            replicates: 50,
            seed: 0,
            kernel: KernelSpec::gaussian(),
            bandwidth: BandwidthRule::Auto,
            epsilon: 0.2,
            burn_in: 1000,
            full: false,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("at least one replicate is required".into()));
        }
        if self.models.is_empty() || self.dims.is_empty() || self.sizes.is_empty() {
            return Err(Error::InvalidArgument("models, dims and sizes must be non-empty".into()));
        }
        if self.designs.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument("designs and methods must be non-empty".into()));
        }
        if let Some(m) = self.methods.iter().find(|m| !matches!(m, Method::Ks | Method::Ksc | Method::Mc)) {
            return Err(Error::InvalidArgument(format!("method `{m}` is not available in the study")));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| d == 0) {
            return Err(Error::InvalidArgument(format!("invalid dimension {d}")));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidArgument(format!("sample size {n} is below 2")));
        }
        Ok(())
    }

    fn included(&self, dim: usize, n: usize) -> bool {
        self.full || !(dim >= 3 && n >= 2000)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub model: ModelId,
    pub dim: usize,
    pub n: usize,
    pub design: ChainKind,
    pub method: Method,
    pub replicate: usize,
    pub estimate: f64,
    pub error: f64,
    #[serde(skip)]
    pub bandwidth: Option<Vec<f64>>,
    #[serde(skip)]
    pub design_hash: u64,
    #[serde(skip)]
    pub clamped: usize,
    #[serde(skip)]
    pub failure: Option<String>,
}

/// Hash of the exact bit patterns of a design.
pub fn design_hash(design: &Design) -> u64 {
    let mut h = DefaultHasher::new();
    design.dim().hash(&mut h);
    for v in design.as_slice() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

#[derive(Debug, Clone, Copy)]
struct Unit {
    dim: usize,
    n: usize,
    design: ChainKind,
    replicate: usize,
}

pub fn run_study(config: &StudyConfig) -> Result<Vec<StudyRow>> {
    config.validate()?;
    let mut units = Vec::new();
    for &dim in &config.dims {
        for &n in &config.sizes {
            if !config.included(dim, n) {
                log::warn!("skipping d={dim}, n={n}; enable the full study to include it");
                continue;
            }
            for &design in &config.designs {
                for replicate in 0..config.replicates {
                    units.push(Unit { dim, n, design, replicate });
                }
            }
        }
    }
    let mut rows: Vec<StudyRow> = parallel::map_slice(&units, |u| run_unit(config, *u))
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| {
        (a.model, a.dim, a.n, a.design, a.method, a.replicate)
            .cmp(&(b.model, b.dim, b.n, b.design, b.method, b.replicate))
    });
    Ok(rows)
}

/// Draws the design of one replicate.
pub fn draw_design(config: &StudyConfig, dim: usize, n: usize, design: ChainKind, replicate: usize) -> Result<Design> {
    let chain = ChainConfig::new(design, dim)
        .seed(config.seed.wrapping_add(replicate as u64))
        .epsilon(config.epsilon)
        .burn_in(config.burn_in);
    Ok(chains::generate(&chain, n)?.design)
}

fn run_unit(config: &StudyConfig, u: Unit) -> Vec<StudyRow> {
    let row = |model: ModelId, method: Method| StudyRow {
        model,
        dim: u.dim,
        n: u.n,
        design: u.design,
        method,
        replicate: u.replicate,
        estimate: f64::NAN,
        error: f64::NAN,
        bandwidth: None,
        design_hash: 0,
        clamped: 0,
        failure: None,
    };
    let mut out = Vec::new();
    let design = match draw_design(config, u.dim, u.n, u.design, u.replicate) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("design draw failed for {u:?}: {e}");
            for &model in &config.models {
                for &method in &config.methods {
                    out.push(StudyRow { failure: Some(e.to_string()), ..row(model, method) });
                }
            }
            return out;
        }
    };
    let hash = design_hash(&design);
    let chain = ChainConfig::new(u.design, u.dim);
    let known: Vec<f64> = design.rows().map(|x| chain.stationary_density(x)).collect();
    let needs_h = config.methods.iter().any(|m| matches!(m, Method::Ks | Method::Ksc));
    let bandwidth = needs_h.then(|| config.bandwidth.select(&design, config.kernel).map_err(|e| e.to_string()));

    for &model in &config.models {
        let spec = ModelSpec::new(model, u.dim);
        let values: Vec<f64> = design.rows().map(|x| eval_model(&spec, x)).collect();
        let sample = LabeledSample::new(design.clone(), values)
            .and_then(|s| s.with_known_density(known.clone()))
            .map_err(|e| e.to_string());
        let pair = bandwidth.as_ref().map(|h| {
            let h = h.as_ref().map_err(Clone::clone)?;
            let s = sample.as_ref().map_err(Clone::clone)?;
            estimate_ks_pair(s, config.kernel, h, &EstimatorOptions::default()).map_err(|e| e.to_string())
        });
        for &method in &config.methods {
            let result = match (method, &pair) {
                (Method::Ks, Some(p)) => p.as_ref().map(|p| p.plain.clone()).map_err(Clone::clone),
                (Method::Ksc, Some(p)) => p.as_ref().map(|p| p.corrected.clone()).map_err(Clone::clone),
                _ => sample
                    .as_ref()
                    .map_err(Clone::clone)
                    .and_then(|s| estimate_mc(s).map_err(|e| e.to_string())),
            };
            let mut r = row(model, method);
            r.design_hash = hash;
            match result {
                Ok(rep) => {
                    r.estimate = rep.estimate;
                    r.error = rep.estimate - ModelSpec::TRUE_INTEGRAL;
                    r.bandwidth = rep.bandwidth;
                    r.clamped = rep.clamped;
                }
                Err(e) => {
                    log::warn!("replicate failed ({model}, {u:?}, {method}): {e}");
                    r.failure = Some(e);
                }
            }
            out.push(r);
        }
    }
    out
}

pub const RESULT_COLUMNS: [&str; 8] = ["model", "dim", "n", "design", "method", "replicate", "estimate", "error"];

/// Writes the result table, preceded by `# <comment>` lines.
pub fn write_results<W: Write>(mut w: W, comments: &[String], rows: &[StudyRow]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULT_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.model.to_string(),
            r.dim.to_string(),
            r.n.to_string(),
            r.design.to_string(),
            r.method.to_string(),
            r.replicate.to_string(),
            r.estimate.to_string(),
            r.error.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub model: ModelId,
    pub dim: usize,
    pub n: usize,
    pub design: ChainKind,
    pub method: Method,
    pub count: usize,
    pub failures: usize,
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Quantile by linear interpolation between order statistics: position
/// `q (m - 1)` in the sorted sample (the default of most statistics
/// packages).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary per (model, dim, n, design, method) cell over the finite
/// replicates; failed replicates are counted separately.
pub fn summarize(rows: &[StudyRow]) -> Result<Vec<CellSummary>> {
    type Key = (ModelId, usize, usize, ChainKind, Method);
    let mut cells: BTreeMap<Key, Vec<&StudyRow>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.model, r.dim, r.n, r.design, r.method)).or_default().push(r);
    }
    let mut out = Vec::with_capacity(cells.len());
    for ((model, dim, n, design, method), cell) in cells {
        if cell.len() < 2 {
            return Err(Error::InsufficientSample { needed: 2, got: cell.len() });
        }
        let mut est: Vec<f64> = cell.iter().map(|r| r.estimate).filter(|v| v.is_finite()).collect();
        let errs: Vec<f64> = cell.iter().map(|r| r.error).filter(|v| v.is_finite()).collect();
        let m = est.len() as f64;
        let mean = est.iter().sum::<f64>() / m;
        let bias = errs.iter().sum::<f64>() / m;
        let sd = if est.len() >= 2 {
            (est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / m).sqrt();
        est.sort_by(f64::total_cmp);
        out.push(CellSummary {
            model,
            dim,
            n,
            design,
            method,
            count: est.len(),
            failures: cell.len() - est.len(),
            mean,
            bias,
            sd,
            rmse,
            q1: quantile(&est, 0.25),
            median: quantile(&est, 0.5),
            q3: quantile(&est, 0.75),
        });
    }
    Ok(out)
}

pub fn write_summary<W: Write>(w: W, cells: &[CellSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for c in cells {
        out.serialize(c)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateConfig {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    /// `h(n) = c n^{-1/(r_tilde + d)}`.
    pub c: f64,
    pub r_tilde: f64,
    pub model: ModelId,
    pub epsilon: f64,
    pub burn_in: usize,
    /// Return-time moment order used in the bandwidth growth check.
    pub p0: f64,
    /// Density floor `floor_scale / (n h)`, vanishing as `n` grows; `0`
    /// keeps the fixed default floor. Order-4 kernels can make `pi_hat`
    /// negative at an isolated design point, and a fixed tiny floor turns
    /// that point into a weight of order `1e9` that swamps the RMSE.
    pub floor_scale: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            sizes: vec![250, 500, 1000, 2000, 4000],
            replicates: 200,
            seed: 0,
            kernel: KernelSpec::gaussian_order4(),
            c: 0.5,
            r_tilde: 4.0,
            model: ModelId::M1,
            epsilon: 0.2,
            burn_in: 1000,
            p0: 4.0,
            floor_scale: 1.0,
        }
    }
}

impl RateConfig {
    pub fn bandwidth(&self, n: usize) -> f64 {
        self.c * (n as f64).powf(-1.0 / (self.r_tilde + 1.0))
    }

    pub fn density_floor(&self, n: usize) -> f64 {
        if self.floor_scale > 0.0 {
            self.floor_scale / (n as f64 * self.bandwidth(n))
        } else {
            EstimatorOptions::default().density_floor
        }
    }

    /// `n h^{d p0/(p0-1)} / log n` at each size, with `d = 1`.
    pub fn growth_sequence(&self) -> Vec<f64> {
        let e = self.p0 / (self.p0 - 1.0);
        self.sizes
            .iter()
            .map(|&n| n as f64 * self.bandwidth(n).powf(e) / (n as f64).ln())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RatePoint {
    pub n: usize,
    pub bandwidth: f64,
    pub rmse_ks: f64,
    pub rmse_ksc: f64,
    pub rmse_mc: f64,
    pub density_floor: f64,
    /// Replicates in which at least one density value hit the floor.
    pub clamped_replicates: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub points: Vec<RatePoint>,
    pub slope_ks: f64,
    pub slope_ksc: f64,
    pub slope_mc: f64,
    /// Bandwidths decrease and the growth sequence increases over the grid.
    pub growth_condition: bool,
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// RMSE against `n` on the smooth-target chain in one dimension with a
/// deterministic bandwidth sequence.
pub fn rate_experiment(config: &RateConfig) -> Result<RateReport> {
    if config.sizes.len() < 5 {
        return Err(Error::InvalidArgument("the rate experiment needs at least 5 sample sizes".into()));
    }
    let lo = *config.sizes.iter().min().expect("non-empty");
    let hi = *config.sizes.iter().max().expect("non-empty");
    if (hi as f64) < 16.0 * lo as f64 {
        return Err(Error::InvalidArgument("sample sizes must span at least a factor of 16".into()));
    }
    if config.replicates < 2 || !(config.c > 0.0) || !(config.p0 > 1.0) || !(config.floor_scale >= 0.0) {
        return Err(Error::InvalidArgument("need >= 2 replicates, c > 0, p0 > 1 and floor_scale >= 0".into()));
    }
    let spec = ModelSpec::new(config.model, 1);
    let mut points = Vec::with_capacity(config.sizes.len());
    for &n in &config.sizes {
        let h = Bandwidth::scalar(config.bandwidth(n), 1)?;
        let opts = EstimatorOptions { density_floor: config.density_floor(n), ..EstimatorOptions::default() };
        let errs = parallel::map_range(config.replicates, |r| -> Result<([f64; 3], bool)> {
            let chain = ChainConfig::new(ChainKind::MhSmoothTarget, 1)
                .seed(config.seed.wrapping_add(r as u64))
                .epsilon(config.epsilon)
                .burn_in(config.burn_in);
            let design = chains::generate(&chain, n)?.design;
            let values: Vec<f64> = design.rows().map(|x| eval_model(&spec, x)).collect();
            let known: Vec<f64> = design.rows().map(|x| chain.stationary_density(x)).collect();
            let sample = LabeledSample::new(design, values)?.with_known_density(known)?;
            let pair = estimate_ks_pair(&sample, config.kernel, &h, &opts)?;
            let mc = estimate_mc(&sample)?;
            let e = [pair.plain.estimate - 1.0, pair.corrected.estimate - 1.0, mc.estimate - 1.0];
            Ok((e, pair.plain.clamped > 0))
        });
        let clamped_replicates = errs.iter().filter(|e| matches!(e, Ok((_, true)))).count();
        let ok: Vec<[f64; 3]> = errs.iter().filter_map(|e| e.as_ref().ok().map(|v| v.0)).collect();
        if ok.is_empty() {
            return Err(errs.into_iter().find_map(|e| e.err()).expect("all replicates failed"));
        }
        let rmse = |k: usize| (ok.iter().map(|e| e[k] * e[k]).sum::<f64>() / ok.len() as f64).sqrt();
        points.push(RatePoint {
            n,
            bandwidth: h.scales()[0],
            rmse_ks: rmse(0),
            rmse_ksc: rmse(1),
            rmse_mc: rmse(2),
            density_floor: opts.density_floor,
            clamped_replicates,
            failures: config.replicates - ok.len(),
        });
    }
    let ln: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let slope = |f: fn(&RatePoint) -> f64| {
        let y: Vec<f64> = points.iter().map(|p| f(p).ln()).collect();
        ls_slope(&ln, &y)
    };
    let mut order: Vec<usize> = (0..config.sizes.len()).collect();
    order.sort_by_key(|&i| config.sizes[i]);
    let growth = config.growth_sequence();
    let growth_condition = order.windows(2).all(|w| {
        config.bandwidth(config.sizes[w[1]]) < config.bandwidth(config.sizes[w[0]]) && growth[w[1]] > growth[w[0]]
    });
    Ok(RateReport {
        slope_ks: slope(|p| p.rmse_ks),
        slope_ksc: slope(|p| p.rmse_ksc),
        slope_mc: slope(|p| p.rmse_mc),
        points,
        growth_condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn model_values() {
        let m1 = ModelSpec::new(ModelId::M1, 1);
        assert_abs_diff_eq!(eval_model(&m1, &[0.5]), 2.0, epsilon = 1e-15);
        for id in ModelId::ALL {
            let m = ModelSpec::new(id, 2);
            assert_abs_diff_eq!(eval_model(&m, &[0.0, 0.3]), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(eval_model(&m, &[1.0, 0.3]), 0.0, epsilon = 1e-15);
            assert_eq!(eval_model(&m, &[1.2, 0.3]), 0.0);
        }
    }

    #[test]
    fn models_integrate_to_one() {
        for id in ModelId::ALL {
            assert_abs_diff_eq!(trapezoid_factor_integral(id, 1_000_000), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn product_models_integrate_to_one_in_2d() {
        use crate::quadrature::integrate_box;
        for id in ModelId::ALL {
            let m = ModelSpec::new(id, 2);
            let v = integrate_box(|x| eval_model(&m, x), &[0.0, 0.0], &[1.0, 1.0], 20, 10);
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(quantile(&v, 0.25), 1.75, epsilon = 1e-15);
        assert_abs_diff_eq!(quantile(&v, 0.5), 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(quantile(&v, 0.75), 3.25, epsilon = 1e-15);
        assert_eq!(quantile(&[5.0], 0.3), 5.0);
    }

    fn fake_row(error: f64, replicate: usize) -> StudyRow {
        StudyRow {
            model: ModelId::M1,
            dim: 1,
            n: 10,
            design: ChainKind::IidUniform,
            method: Method::Mc,
            replicate,
            estimate: 1.0 + error,
            error,
            bandwidth: None,
            design_hash: 0,
            clamped: 0,
            failure: None,
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[fake_row(-0.1, 0), fake_row(0.1, 1)]).unwrap();
        assert_eq!(s.len(), 1);
        assert_abs_diff_eq!(s[0].bias, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0].sd, 0.141_421_356_237, epsilon = 1e-9);
        assert_abs_diff_eq!(s[0].rmse, 0.1, epsilon = 1e-15);

        let s = summarize(&[fake_row(0.3, 0), fake_row(0.3, 1), fake_row(0.3, 2)]).unwrap();
        assert_abs_diff_eq!(s[0].sd, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0].rmse, 0.3, epsilon = 1e-15);

        assert!(summarize(&[fake_row(0.0, 0)]).is_err());
    }

    #[test]
    fn failed_rows_are_counted() {
        let mut bad = fake_row(0.0, 2);
        bad.estimate = f64::NAN;
        bad.error = f64::NAN;
        let s = summarize(&[fake_row(-0.1, 0), fake_row(0.1, 1), bad]).unwrap();
        assert_eq!(s[0].count, 2);
        assert_eq!(s[0].failures, 1);
        assert_abs_diff_eq!(s[0].rmse, 0.1, epsilon = 1e-15);
    }

    fn small_config() -> StudyConfig {
        StudyConfig {
            models: vec![ModelId::M1, ModelId::M3],
            dims: vec![1],
            sizes: vec![200],
            designs: vec![ChainKind::IidUniform, ChainKind::MhUniformTarget],
            replicates: 2,
            seed: 11,
            ..StudyConfig::default()
        }
    }

    #[test]
    fn one_row_per_cell_and_replicate() {
        let cfg = StudyConfig { replicates: 1, ..small_config() };
        let rows = run_study(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 3);
        assert!(rows.iter().all(|r| r.failure.is_none()));
    }

    #[test]
    fn methods_share_design_and_bandwidth() {
        let cfg = small_config();
        let rows = run_study(&cfg).unwrap();
        let mut groups: BTreeMap<(usize, ChainKind, usize), Vec<&StudyRow>> = BTreeMap::new();
        for r in &rows {
            groups.entry((r.n, r.design, r.replicate)).or_default().push(r);
        }
        for ((n, design, rep), g) in groups {
            assert!(g.iter().all(|r| r.design_hash == g[0].design_hash));
            let redrawn = draw_design(&cfg, 1, n, design, rep).unwrap();
            assert_eq!(design_hash(&redrawn), g[0].design_hash);
            let ks: Vec<_> = g.iter().filter(|r| r.method == Method::Ks).collect();
            let ksc: Vec<_> = g.iter().filter(|r| r.method == Method::Ksc).collect();
            for (a, b) in ks.iter().zip(&ksc) {
                assert_eq!(a.bandwidth, b.bandwidth);
                assert!(a.bandwidth.is_some());
            }
        }
    }

    #[test]
    fn study_is_deterministic() {
        let cfg = small_config();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_results(&mut a, &["config".into()], &run_study(&cfg).unwrap()).unwrap();
        parallel::set_sequential(true);
        let rows = run_study(&cfg).unwrap();
        parallel::set_sequential(false);
        write_results(&mut b, &["config".into()], &rows).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("# config\nmodel,dim,n,design,method,replicate,estimate,error\n"));
    }

    #[test]
    fn large_cells_need_full_flag() {
        let cfg = StudyConfig {
            models: vec![ModelId::M1],
            dims: vec![3],
            sizes: vec![2000],
            designs: vec![ChainKind::IidUniform],
            methods: vec![Method::Mc],
            replicates: 1,
            ..StudyConfig::default()
        };
        assert!(run_study(&cfg).unwrap().is_empty());
        let full = StudyConfig { full: true, ..cfg };
        assert_eq!(run_study(&full).unwrap().len(), 1);
    }

    #[test]
    fn invalid_study_config() {
        assert!(run_study(&StudyConfig { replicates: 0, ..small_config() }).is_err());
        assert!(run_study(&StudyConfig { methods: vec![Method::KsBoundary], ..small_config() }).is_err());
    }

    #[test]
    fn iid_monte_carlo_is_unbiased() {
        let cfg = StudyConfig {
            models: vec![ModelId::M1],
            dims: vec![1],
            sizes: vec![1000],
            designs: vec![ChainKind::IidUniform],
            methods: vec![Method::Mc],
            replicates: 50,
            seed: 3,
            ..StudyConfig::default()
        };
        let s = summarize(&run_study(&cfg).unwrap()).unwrap();
        assert!((s[0].mean - 1.0).abs() < 0.05, "{}", s[0].mean);
    }

    #[test]
    fn slope_of_a_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        assert_abs_diff_eq!(ls_slope(&x, &y), -0.5, epsilon = 1e-14);
    }

    #[test]
    fn growth_condition_of_default_rule() {
        let cfg = RateConfig::default();
        let g = cfg.growth_sequence();
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rate_grid_requirements() {
        let short = RateConfig { sizes: vec![100, 200, 400, 800], ..RateConfig::default() };
        assert!(rate_experiment(&short).is_err());
        let narrow = RateConfig { sizes: vec![100, 120, 140, 160, 180], ..RateConfig::default() };
        assert!(rate_experiment(&narrow).is_err());
    }
}
