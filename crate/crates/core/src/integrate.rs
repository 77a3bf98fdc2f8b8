//! Integral estimators built on the design density.
//!
//! * `ks`:  `n^-1 sum phi(X_i) / pi_hat(X_i)`
//! * `ksc`: the same terms times `1 - v_hat(X_i) / pi_hat(X_i)^2`
//! * `mc`:  `n^-1 sum phi(X_i) / pi(X_i)` with the true design density
//! * `ks-boundary`: numerator restricted to `Q`, `pi_hat` built from every
//!   point of the enlarged sampling region
//!
//! Denominators below a floor (default `1e-12`) are clamped to it and
//! counted; this also catches the negative values an order-4 kernel can
//! produce. The plain and corrected estimators share one density pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bandwidth::{Bandwidth, Provenance};
use crate::density::{DensityField, Design};
use crate::kernels::KernelSpec;
use crate::parallel::ordered_sum;
use crate::{Error, Result};

/// Axis-aligned box `Q`, optionally with an enlargement margin defining
/// `Q~ = [lower - margin, upper + margin]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    margin: f64,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidArgument("domain bounds must be non-empty and of equal length".into()));
        }
        for (j, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidArgument(format!(
                    "domain axis {j}: need finite lower < upper, got [{a}, {b}]"
                )));
            }
        }
        Ok(Self { lower, upper, margin: 0.0 })
    }

    /// `[0, 1]^d`.
    pub fn unit(d: usize) -> Self {
        Self { lower: vec![0.0; d], upper: vec![1.0; d], margin: 0.0 }
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Self> {
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidArgument(format!("margin must be non-negative, got {margin}")));
        }
        self.margin = margin;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn side(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Lebesgue measure of `Q` (not of the enlargement).
    pub fn measure(&self) -> f64 {
        (0..self.dim()).map(|j| self.side(j)).product()
    }

    /// `Q~` as a domain of its own, with no margin.
    pub fn enlarged(&self) -> Self {
        Self {
            lower: self.lower.iter().map(|a| a - self.margin).collect(),
            upper: self.upper.iter().map(|b| b + self.margin).collect(),
            margin: 0.0,
        }
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Regular grid with `m` points per axis, endpoints included, first axis
    /// slowest.
    pub fn grid(&self, m: usize) -> Design {
        let d = self.dim();
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|j| (0..m).map(|k| self.lower[j] + self.side(j) * k as f64 / (m - 1) as f64).collect())
            .collect();
        let total = m.pow(d as u32);
        let mut pts = Vec::with_capacity(total * d);
        for flat in 0..total {
            let mut rem = flat;
            let mut row = vec![0.0; d];
            for j in (0..d).rev() {
                row[j] = axes[j][rem % m];
                rem /= m;
            }
            pts.extend(row);
        }
        Design::new(pts, d).expect("grid points are finite")
    }
}

impl FromStr for Domain {
    type Err = Error;

    /// `lo1:hi1,lo2:hi2,...`
    fn from_str(s: &str) -> Result<Self> {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for part in s.split(',') {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("expected lo:hi, got `{part}`")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("cannot parse `{v}` as a number")))
            };
            lower.push(parse(a)?);
            upper.push(parse(b)?);
        }
        Domain::new(lower, upper)
    }
}

/// Design points with the observed function values, and optionally the true
/// design density at each point (simulation only).
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub design: Design,
    pub values: Vec<f64>,
    pub known_density: Option<Vec<f64>>,
}

impl LabeledSample {
    pub fn new(design: Design, values: Vec<f64>) -> Result<Self> {
        if values.len() != design.n() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} design points",
                values.len(),
                design.n()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("function values must be finite".into()));
        }
        Ok(Self { design, values, known_density: None })
    }

    pub fn with_known_density(mut self, density: Vec<f64>) -> Result<Self> {
        if density.len() != self.design.n() {
            return Err(Error::InvalidArgument(format!(
                "{} density values for {} design points",
                density.len(),
                self.design.n()
            )));
        }
        self.known_density = Some(density);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ks")]
    Ks,
    #[serde(rename = "ksc")]
    Ksc,
    #[serde(rename = "mc")]
    Mc,
    #[serde(rename = "ks-boundary")]
    KsBoundary,
    #[serde(rename = "ksc-boundary")]
    KscBoundary,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ks => "ks",
            Method::Ksc => "ksc",
            Method::Mc => "mc",
            Method::KsBoundary => "ks-boundary",
            Method::KscBoundary => "ksc-boundary",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ks" => Ok(Method::Ks),
            "ksc" => Ok(Method::Ksc),
            "mc" => Ok(Method::Mc),
            "ks-boundary" => Ok(Method::KsBoundary),
            "ksc-boundary" => Ok(Method::KscBoundary),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub method: Method,
    pub bandwidth: Option<Vec<f64>>,
    pub bandwidth_provenance: Option<Provenance>,
    pub n: usize,
    pub d: usize,
    /// Smallest `pi_hat(X_i)` before clamping.
    pub min_density: Option<f64>,
    pub clamped: usize,
    /// Points where the corrected weight factor `1 - v/pi^2` is negative.
    pub negative_factors: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Denominator floor `eps_pi`.
    pub density_floor: f64,
    pub leave_one_out: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { density_floor: 1e-12, leave_one_out: false }
    }
}

/// Plain and corrected estimates from a single density pass.
#[derive(Debug, Clone)]
pub struct KsPair {
    pub plain: EstimateReport,
    pub corrected: EstimateReport,
    /// The two estimates for `phi = 1` from the same weights, i.e. the
    /// estimated measure of the numerator region.
    pub plain_mass: f64,
    pub corrected_mass: f64,
}

pub fn estimate_ks(sample: &LabeledSample, kernel: KernelSpec, h: &Bandwidth) -> Result<EstimateReport> {
    Ok(estimate_ks_pair(sample, kernel, h, &EstimatorOptions::default())?.plain)
}

pub fn estimate_ks_corrected(
    sample: &LabeledSample,
    kernel: KernelSpec,
    h: &Bandwidth,
) -> Result<EstimateReport> {
    Ok(estimate_ks_pair(sample, kernel, h, &EstimatorOptions::default())?.corrected)
}

pub fn estimate_ks_pair(
    sample: &LabeledSample,
    kernel: KernelSpec,
    h: &Bandwidth,
    opts: &EstimatorOptions,
) -> Result<KsPair> {
    weighted_pair(sample, kernel, h, opts, None, (Method::Ks, Method::Ksc))
}

/// Boundary-stabilized estimator: `pi~` from all points of the sample, the
/// numerator restricted to points inside `domain`, divisor `n` counting all
/// points.
pub fn estimate_ks_boundary(
    sample: &LabeledSample,
    kernel: KernelSpec,
    h: &Bandwidth,
    domain: &Domain,
) -> Result<EstimateReport> {
    Ok(estimate_ks_boundary_pair(sample, kernel, h, domain, &EstimatorOptions::default())?.plain)
}

pub fn estimate_ks_boundary_pair(
    sample: &LabeledSample,
    kernel: KernelSpec,
    h: &Bandwidth,
    domain: &Domain,
    opts: &EstimatorOptions,
) -> Result<KsPair> {
    if domain.dim() != sample.design.dim() {
        return Err(Error::InvalidArgument("domain and design dimensions differ".into()));
    }
    let mask: Vec<bool> = sample.design.rows().map(|r| domain.contains(r)).collect();
    estimate_ks_subset_pair(sample, kernel, h, &mask, opts)
}

/// Boundary-stabilized estimator with an explicit numerator mask, for
/// regions whose membership rule is not a closed box.
pub fn estimate_ks_subset_pair(
    sample: &LabeledSample,
    kernel: KernelSpec,
    h: &Bandwidth,
    mask: &[bool],
    opts: &EstimatorOptions,
) -> Result<KsPair> {
    if mask.len() != sample.n() {
        return Err(Error::InvalidArgument(format!("mask has {} entries for {} points", mask.len(), sample.n())));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyNumerator);
    }
    weighted_pair(sample, kernel, h, opts, Some(mask), (Method::KsBoundary, Method::KscBoundary))
}

fn weighted_pair(
    sample: &LabeledSample,
    kernel: KernelSpec,
    h: &Bandwidth,
    opts: &EstimatorOptions,
    mask: Option<&[bool]>,
    methods: (Method, Method),
) -> Result<KsPair> {
    let n = sample.n();
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: n });
    }
    let field = DensityField::new(&sample.design, kernel, h.clone())?.leave_one_out(opts.leave_one_out);
    let (density, variance) = field.kde_and_variance_at_points();

    let floor = opts.density_floor;
    let mut used = 0usize;
    let mut clamped = 0usize;
    let mut negative = 0usize;
    let mut min_density = f64::INFINITY;
    let mut plain_terms = Vec::with_capacity(n);
    let mut corrected_terms = Vec::with_capacity(n);
    let mut plain_mass = Vec::with_capacity(n);
    let mut corrected_mass = Vec::with_capacity(n);
    for i in 0..n {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        used += 1;
        min_density = min_density.min(density[i]);
        let p = if density[i] < floor {
            clamped += 1;
            floor
        } else {
            density[i]
        };
        let w = sample.values[i] / p;
        let factor = 1.0 - variance[i] / (p * p);
        if factor < 0.0 {
            negative += 1;
        }
        plain_terms.push(w);
        corrected_terms.push(w * factor);
        plain_mass.push(1.0 / p);
        corrected_mass.push(factor / p);
    }
    if clamped == used {
        return Err(Error::DegenerateDensity { n: used, floor });
    }

    let mut warnings = Vec::new();
    if clamped > 0 {
        log::warn!("{clamped} of {used} design-point densities clamped to {floor:e}");
        warnings.push(format!(
            "{clamped} of {used} design-point densities were below the floor {floor:e} and were clamped"
        ));
    }
    let nf = n as f64;
    let make = |method: Method, terms: &[f64], extra: Option<String>| {
        let mut warnings = warnings.clone();
        warnings.extend(extra);
        EstimateReport {
            estimate: ordered_sum(terms) / nf,
            method,
            bandwidth: Some(h.scales().to_vec()),
            bandwidth_provenance: Some(h.provenance()),
            n,
            d: sample.design.dim(),
            min_density: Some(min_density),
            clamped,
            negative_factors: if method == methods.1 { negative } else { 0 },
            warnings,
        }
    };
    let negative_note =
        (negative > 0).then(|| format!("{negative} corrected weight factors were negative"));
    Ok(KsPair {
        plain: make(methods.0, &plain_terms, None),
        corrected: make(methods.1, &corrected_terms, negative_note),
        plain_mass: ordered_sum(&plain_mass) / nf,
        corrected_mass: ordered_sum(&corrected_mass) / nf,
    })
}

/// `n^-1 sum phi(X_i) / pi(X_i)` with the known design density.
pub fn estimate_mc(sample: &LabeledSample) -> Result<EstimateReport> {
    let pi = sample
        .known_density
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("Monte Carlo estimate needs known density values".into()))?;
    if let Some(bad) = pi.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "known density values must be positive, got {bad}"
        )));
    }
    let terms: Vec<f64> = sample.values.iter().zip(pi).map(|(f, p)| f / p).collect();
    Ok(EstimateReport {
        estimate: ordered_sum(&terms) / sample.n() as f64,
        method: Method::Mc,
        bandwidth: None,
        bandwidth_provenance: None,
        n: sample.n(),
        d: sample.design.dim(),
        min_density: pi.iter().copied().reduce(f64::min),
        clamped: 0,
        negative_factors: 0,
        warnings: Vec::new(),
    })
}

/// Average of `phi` over `Q`: the integral estimate divided by `Leb(Q)`.
pub fn average_over(report: &EstimateReport, domain: &Domain) -> f64 {
    report.estimate / domain.measure()
}
