//! Bandwidths and the two data-driven selectors.
//!
//! Both selectors work on a canonically sorted copy of the design so that
//! their output does not depend on sample order, bit for bit.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::density::Design;
use crate::kernels::{KernelFamily, KernelSpec};
use crate::parallel::{map_range, ordered_sum};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    User,
    NormalScale,
    Plugin,
    /// Plug-in failed (no convergence or outside the guard rails); the
    /// scales are the normal-scale rule.
    PluginFallback,
}

/// Per-dimension smoothing scales, all strictly positive and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    scales: Vec<f64>,
    provenance: Provenance,
}

impl Bandwidth {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        Self::with_provenance(scales, Provenance::User)
    }

    pub fn with_provenance(scales: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidBandwidth("bandwidth needs at least one entry".into()));
        }
        if let Some(h) = scales.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(Error::InvalidBandwidth(format!(
                "bandwidth entries must be positive and finite, got {h}"
            )));
        }
        Ok(Self { scales, provenance })
    }

    /// The same scale along every axis.
    pub fn scalar(h: f64, d: usize) -> Result<Self> {
        Self::new(vec![h; d])
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `h_1 * ... * h_d`.
    pub fn volume(&self) -> f64 {
        self.scales.iter().product()
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.scales.iter().map(|h| format!("{h}")).collect();
        write!(f, "{}", parts.join(";"))
    }
}

/// How a bandwidth is obtained from a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// [`plugin_diagonal`].
    Auto,
    /// [`normal_scale`].
    Silverman,
    Fixed(Vec<f64>),
}

impl BandwidthRule {
    pub fn select(&self, design: &Design, kernel: KernelSpec) -> Result<Bandwidth> {
        match self {
            BandwidthRule::Auto => plugin_diagonal(design, kernel),
            BandwidthRule::Silverman => normal_scale(design),
            BandwidthRule::Fixed(h) => {
                let scales = match h.len() {
                    1 => vec![h[0]; design.dim()],
                    l if l == design.dim() => h.clone(),
                    l => {
                        return Err(Error::InvalidBandwidth(format!(
                            "{l} bandwidth entries for a {}-dimensional design",
                            design.dim()
                        )))
                    }
                };
                Bandwidth::new(scales)
            }
        }
    }
}

impl std::str::FromStr for BandwidthRule {
    type Err = Error;

    /// `auto`, `silverman`, `<h>` or `<h1,h2,...>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" | "plugin" => Ok(Self::Auto),
            "silverman" | "normal-scale" => Ok(Self::Silverman),
            other => {
                let parsed: std::result::Result<Vec<f64>, _> =
                    other.split(',').map(|p| p.trim().parse::<f64>()).collect();
                let h = parsed
                    .map_err(|_| Error::InvalidBandwidth(format!("cannot parse bandwidth `{other}`")))?;
                Bandwidth::new(h.clone())?;
                Ok(Self::Fixed(h))
            }
        }
    }
}

/// Sample standard deviation (divisor `n - 1`) of an already sorted column.
fn sorted_sd(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = ordered_sum(sorted) / n;
    let ss: f64 = sorted.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

fn column_sds(design: &Design) -> Result<Vec<f64>> {
    (0..design.dim())
        .map(|j| {
            let mut col = design.column(j);
            col.sort_by(f64::total_cmp);
            let sd = sorted_sd(&col);
            if sd > 0.0 && sd.is_finite() {
                Ok(sd)
            } else {
                Err(Error::DegenerateDesign { dim: j })
            }
        })
        .collect()
}

/// `h_j = sd_j * (4 / ((d + 2) n))^(1 / (d + 4))`.
pub fn normal_scale(design: &Design) -> Result<Bandwidth> {
    let n = design.n();
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: n });
    }
    let d = design.dim() as f64;
    let factor = (4.0 / ((d + 2.0) * n as f64)).powf(1.0 / (d + 4.0));
    let scales = column_sds(design)?.into_iter().map(|s| s * factor).collect();
    Bandwidth::with_provenance(scales, Provenance::NormalScale)
}

/// Two-stage diagonal plug-in.
///
/// Each axis is scaled to unit variance. Stage 0 takes the sixth-order
/// density functionals from a standard normal reference and turns them into
/// pilot bandwidths that cancel the leading bias of the fourth-order
/// functional estimates. Stage 1 estimates the curvature matrix
/// `Psi_jk = \int f_jj f_kk` with those pilots and minimizes
///
/// ```text
/// AMISE(h) = R(K) / (n prod h_j) + mu_2(K)^2 / 4 * sum_jk h_j^2 h_k^2 Psi_jk
/// ```
///
/// in closed form for d = 1, by Nelder-Mead on `log h` otherwise. Results
/// outside `[normal_scale / 10, normal_scale * 10]` or a failed minimization
/// fall back to the normal-scale rule, flagged in the provenance.
///
/// The fourth-order kernel has `mu_2 = 0`; it is given the bandwidth that
/// its second-order Gaussian base would get.
pub fn plugin_diagonal(design: &Design, kernel: KernelSpec) -> Result<Bandwidth> {
    let n = design.n();
    if n < 10 {
        return Err(Error::InsufficientSample { needed: 10, got: n });
    }
    let d = design.dim();
    if d > 3 {
        return Err(Error::InvalidArgument(format!(
            "plug-in selection supports d <= 3, got {d}"
        )));
    }
    kernel.check_dim(d)?;
    let reference = normal_scale(design)?;
    let sds = column_sds(design)?;
    let z = standardized_sorted(design, &sds)?;

    let psi = curvature_matrix(&z);
    let amise_kernel = if kernel.family == KernelFamily::GaussianOrder4 {
        KernelSpec::gaussian().with_form(kernel.form)
    } else {
        kernel
    };
    let rk = amise_kernel.roughness(d);
    let mu2 = amise_kernel.second_moment(d);

    let fallback = || {
        Bandwidth::with_provenance(reference.scales().to_vec(), Provenance::PluginFallback)
    };
    let Some(h_std) = minimize_amise(&psi, rk, mu2, n) else {
        log::warn!("plug-in bandwidth did not converge, falling back to normal scale");
        return fallback();
    };
    let scales: Vec<f64> = h_std.iter().zip(&sds).map(|(h, s)| h * s).collect();
    let inside = scales
        .iter()
        .zip(reference.scales())
        .all(|(h, r)| h.is_finite() && *h >= r / 10.0 && *h <= r * 10.0);
    if !inside {
        log::warn!("plug-in bandwidth {scales:?} outside guard rails, falling back to normal scale");
        return fallback();
    }
    Bandwidth::with_provenance(scales, Provenance::Plugin)
}

/// Rows sorted lexicographically, centered and scaled per axis.
fn standardized_sorted(design: &Design, sds: &[f64]) -> Result<Design> {
    let d = design.dim();
    let mut rows: Vec<&[f64]> = design.rows().collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let means: Vec<f64> = (0..d)
        .map(|j| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            ordered_sum(&col) / col.len() as f64
        })
        .collect();
    let pts = rows
        .iter()
        .flat_map(|r| (0..d).map(|j| (r[j] - means[j]) / sds[j]).collect::<Vec<_>>())
        .collect();
    Design::new(pts, d)
}

/// `psi_k` of N(0, 1) for even `k`: `(-1)^(k/2) k! / (2^(k+1) (k/2)! sqrt(pi))`.
fn normal_psi_1d(k: u32) -> f64 {
    let half = k / 2;
    let sign = if half.is_multiple_of(2) { 1.0 } else { -1.0 };
    let kfact: f64 = (1..=k).map(f64::from).product();
    let hfact: f64 = (1..=half).map(f64::from).product();
    sign * kfact / (2f64.powi(k as i32 + 1) * hfact * PI.sqrt())
}

/// `phi^(k)(0)` for even `k`: `(-1)^(k/2) (k-1)!! / sqrt(2 pi)`.
fn normal_derivative_at_zero(k: u32) -> f64 {
    let half = k / 2;
    let sign = if half.is_multiple_of(2) { 1.0 } else { -1.0 };
    let double_fact: f64 = (1..k).step_by(2).map(f64::from).product();
    sign * double_fact / (2.0 * PI).sqrt()
}

/// Hermite factor of `phi^(k)(u) / phi(u)` for even `k <= 4`.
#[inline]
fn hermite_even(k: u32, u: f64) -> f64 {
    match k {
        0 => 1.0,
        2 => u * u - 1.0,
        4 => {
            let u2 = u * u;
            u2 * u2 - 6.0 * u2 + 3.0
        }
        _ => unreachable!("only orders 0, 2 and 4 are used"),
    }
}

/// One fourth-order functional `psi_r`, `r = 2 e_j + 2 e_k`.
struct Functional {
    order: Vec<u32>,
    pilot: f64,
}

/// Estimated `Psi_jk = psi_{2 e_j + 2 e_k}` on standardized data.
fn curvature_matrix(z: &Design) -> Vec<Vec<f64>> {
    let n = z.n();
    let d = z.dim();
    let mut functionals = Vec::new();
    let mut slots = Vec::new();
    for j in 0..d {
        for k in j..d {
            let mut r = vec![0u32; d];
            r[j] += 2;
            r[k] += 2;
            // stage 0: normal-reference sixth-order functionals
            let psi6: f64 = (0..d)
                .map(|l| {
                    let mut r6 = r.clone();
                    r6[l] += 2;
                    r6.iter().map(|&m| normal_psi_1d(m)).product::<f64>()
                })
                .sum();
            let deriv0: f64 = r.iter().map(|&m| normal_derivative_at_zero(m)).product();
            let power = 1.0 / (d as f64 + 6.0);
            let pilot = (-2.0 * deriv0 / (n as f64 * psi6)).powf(power);
            functionals.push(Functional { order: r, pilot });
            slots.push((j, k));
        }
    }

    let norm = (2.0 * PI).sqrt().powi(-(d as i32));
    let derivative = |f: &Functional, delta: &[f64]| -> f64 {
        let g = f.pilot;
        let mut r2 = 0.0;
        let mut poly = 1.0;
        let mut scale = 1.0;
        for m in 0..d {
            let u = delta[m] / g;
            r2 += u * u;
            poly *= hermite_even(f.order[m], u);
            scale *= g.powi(-1 - f.order[m] as i32);
        }
        scale * poly * norm * (-0.5 * r2).exp()
    };

    // sum over i < j, doubled, plus the n diagonal terms
    let rows: Vec<Vec<f64>> = map_range(n, |i| {
        let xi = z.row(i);
        let mut acc = vec![0.0; functionals.len()];
        let mut delta = [0.0f64; 3];
        for j in (i + 1)..n {
            let xj = z.row(j);
            for m in 0..d {
                delta[m] = xi[m] - xj[m];
            }
            for (a, f) in acc.iter_mut().zip(&functionals) {
                *a += derivative(f, &delta[..d]);
            }
        }
        acc
    });
    let zero = vec![0.0; d];
    let mut psi = vec![vec![0.0; d]; d];
    for (idx, f) in functionals.iter().enumerate() {
        let off: Vec<f64> = rows.iter().map(|r| r[idx]).collect();
        let total = 2.0 * ordered_sum(&off) + n as f64 * derivative(f, &zero);
        let value = total / (n as f64 * n as f64);
        let (j, k) = slots[idx];
        psi[j][k] = value;
        psi[k][j] = value;
    }
    psi
}

fn minimize_amise(psi: &[Vec<f64>], rk: f64, mu2: f64, n: usize) -> Option<Vec<f64>> {
    let d = psi.len();
    let nf = n as f64;
    if d == 1 {
        let p = psi[0][0];
        if !(p > 0.0) {
            return None;
        }
        return Some(vec![(rk / (mu2 * mu2 * p * nf)).powf(0.2)]);
    }
    let amise = |t: &[f64]| -> f64 {
        let h2: Vec<f64> = t.iter().map(|v| (2.0 * v).exp()).collect();
        let var = rk / (nf * t.iter().sum::<f64>().exp());
        let mut bias = 0.0;
        for j in 0..d {
            for k in 0..d {
                bias += h2[j] * h2[k] * psi[j][k];
            }
        }
        var + 0.25 * mu2 * mu2 * bias
    };
    let start = (4.0 / ((d as f64 + 2.0) * nf)).powf(1.0 / (d as f64 + 4.0)).ln();
    let t = nelder_mead(amise, vec![start; d], 0.25, 20_000, 1e-11)?;
    Some(t.into_iter().map(f64::exp).collect())
}

/// Minimal Nelder-Mead; `None` when the iteration cap is hit or the
/// simplex runs off to non-finite values.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: Vec<f64>,
    step: f64,
    max_iter: usize,
    tol: f64,
) -> Option<Vec<f64>> {
    let d = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.clone()];
    for j in 0..d {
        let mut v = x0.clone();
        v[j] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if !values[0].is_finite() || simplex[0].iter().any(|v| !v.is_finite() || v.abs() > 50.0) {
            return None;
        }
        let spread = values[d] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= tol * values[0].abs().max(1e-300) && diameter < 1e-8 {
            return Some(simplex[0].clone());
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            (0..d).map(|j| centroid[j] + coef * (simplex[d][j] - centroid[j])).collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
        } else {
            let contracted = if fr < values[d] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < values[d].min(fr) {
                simplex[d] = contracted;
                values[d] = fc;
            } else {
                for i in 1..=d {
                    simplex[i] = (0..d)
                        .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                        .collect();
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_design(n: usize, d: usize, seed: u64) -> Design {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Design::new(pts, d).unwrap()
    }

    #[test]
    fn bandwidth_validation() {
        assert!(Bandwidth::new(vec![]).is_err());
        assert!(Bandwidth::new(vec![0.1, 0.0]).is_err());
        assert!(Bandwidth::new(vec![f64::NAN]).is_err());
        assert_eq!(Bandwidth::scalar(0.5, 3).unwrap().volume(), 0.125);
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("auto".parse::<BandwidthRule>().unwrap(), BandwidthRule::Auto);
        assert_eq!("silverman".parse::<BandwidthRule>().unwrap(), BandwidthRule::Silverman);
        assert_eq!("0.1,0.2".parse::<BandwidthRule>().unwrap(), BandwidthRule::Fixed(vec![0.1, 0.2]));
        assert!("-1".parse::<BandwidthRule>().is_err());
        assert!("abc".parse::<BandwidthRule>().is_err());
    }

    #[test]
    fn normal_scale_formula() {
        // 100 points with sample sd exactly 1
        let raw: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let sd = sorted_sd(&raw);
        let design = Design::new(raw.iter().map(|x| x / sd).collect(), 1).unwrap();
        let h = normal_scale(&design).unwrap();
        let expected = (4.0f64 / 300.0).powf(0.2);
        assert_relative_eq!(h.scales()[0], expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 0.4217, epsilon = 1e-4);

        let doubled = design.map_affine(&[2.0], &[0.0]).unwrap();
        assert_relative_eq!(normal_scale(&doubled).unwrap().scales()[0], 2.0 * expected, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_column_is_named() {
        let design = Design::from_rows(&[[1.0, 2.0], [1.5, 2.0], [3.0, 2.0]]).unwrap();
        match normal_scale(&design) {
            Err(Error::DegenerateDesign { dim }) => assert_eq!(dim, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn plugin_requires_ten_points() {
        let design = normal_design(5, 1, 1);
        assert!(matches!(
            plugin_diagonal(&design, KernelSpec::gaussian()),
            Err(Error::InsufficientSample { needed: 10, .. })
        ));
    }

    #[test]
    fn normal_reference_constants() {
        // psi_0 = 1 / (2 sqrt(pi)), psi_2 = -1 / (4 sqrt(pi)), psi_4 = 3 / (8 sqrt(pi))
        assert_relative_eq!(normal_psi_1d(0), 1.0 / (2.0 * PI.sqrt()));
        assert_relative_eq!(normal_psi_1d(2), -1.0 / (4.0 * PI.sqrt()));
        assert_relative_eq!(normal_psi_1d(4), 3.0 / (8.0 * PI.sqrt()));
        assert_relative_eq!(normal_derivative_at_zero(4), 3.0 / (2.0 * PI).sqrt());
        assert_relative_eq!(normal_derivative_at_zero(2), -1.0 / (2.0 * PI).sqrt());
    }

    #[test]
    fn curvature_estimate_close_to_normal_value() {
        let design = normal_design(4000, 1, 5);
        let sds = column_sds(&design).unwrap();
        let z = standardized_sorted(&design, &sds).unwrap();
        let psi = curvature_matrix(&z);
        assert_relative_eq!(psi[0][0], normal_psi_1d(4), max_relative = 0.2);
    }

    #[test]
    fn plugin_scale_equivariant() {
        let design = normal_design(400, 2, 9);
        let h = plugin_diagonal(&design, KernelSpec::gaussian()).unwrap();
        let scaled = design.map_affine(&[3.5, 3.5], &[0.0, 0.0]).unwrap();
        let hs = plugin_diagonal(&scaled, KernelSpec::gaussian()).unwrap();
        for (a, b) in h.scales().iter().zip(hs.scales()) {
            assert_relative_eq!(3.5 * a, *b, max_relative = 1e-6);
        }
    }

    #[test]
    fn plugin_within_guard_rails() {
        for d in 1..=3 {
            let design = normal_design(300, d, 40 + d as u64);
            let ns = normal_scale(&design).unwrap();
            for kernel in [KernelSpec::gaussian(), KernelSpec::epanechnikov(), KernelSpec::gaussian_order4()] {
                let h = plugin_diagonal(&design, kernel).unwrap();
                assert!(matches!(h.provenance(), Provenance::Plugin | Provenance::PluginFallback));
                for (a, r) in h.scales().iter().zip(ns.scales()) {
                    assert!(*a >= r / 10.0 && *a <= r * 10.0);
                }
            }
        }
    }

    #[test]
    fn epanechnikov_gets_wider_bandwidth() {
        // canonical bandwidth ratio of Epanechnikov to Gaussian is about 2.2
        let design = normal_design(1000, 1, 77);
        let g = plugin_diagonal(&design, KernelSpec::gaussian()).unwrap().scales()[0];
        let e = plugin_diagonal(&design, KernelSpec::epanechnikov()).unwrap().scales()[0];
        assert_relative_eq!(e / g, (0.6f64 / (1.0 / (2.0 * PI.sqrt())) / 0.04).powf(0.2), max_relative = 1e-9);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let x = nelder_mead(|v| (v[0] - 1.0).powi(2) + 3.0 * (v[1] + 2.0).powi(2) + 1.0, vec![0.0, 0.0], 0.5, 5000, 1e-14)
            .unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(x[1], -2.0, epsilon = 1e-6);
    }
}
