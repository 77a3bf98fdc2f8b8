//! Smoothing kernels in radial and product form.
//!
//! A product kernel is `K(x) = k(x_1) * ... * k(x_d)` for a univariate
//! profile `k`. A radial kernel is `K(x) = c_d * k(|x|)` with the constant
//! `c_d` chosen so that `K` integrates to one; the constants are tabulated
//! for `d <= 3` only.
//!
//! The fourth-order Gaussian kernel uses the polynomial-multiplication
//! construction `k(u) = (3 - u^2) phi(u) / 2`; its radial version is
//! `(d + 2 - |x|^2) phi_d(x) / 2`. Both kill every moment of degree 1 to 3
//! and take negative values for `|u| > sqrt(3)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bandwidth::Bandwidth;
use crate::quadrature::CompositeRule;
use crate::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Gaussian,
    Epanechnikov,
    UniformBox,
    GaussianOrder4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelForm {
    #[default]
    Product,
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub form: KernelForm,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::gaussian()
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, form: KernelForm) -> Self {
        Self { family, form }
    }

    pub fn gaussian() -> Self {
        Self::new(KernelFamily::Gaussian, KernelForm::Product)
    }

    pub fn epanechnikov() -> Self {
        Self::new(KernelFamily::Epanechnikov, KernelForm::Product)
    }

    pub fn uniform_box() -> Self {
        Self::new(KernelFamily::UniformBox, KernelForm::Product)
    }

    pub fn gaussian_order4() -> Self {
        Self::new(KernelFamily::GaussianOrder4, KernelForm::Product)
    }

    pub fn with_form(self, form: KernelForm) -> Self {
        Self { form, ..self }
    }

    /// Moment order `p`: moments of degree `1..p` vanish.
    pub fn order(&self) -> u32 {
        match self.family {
            KernelFamily::GaussianOrder4 => 4,
            _ => 2,
        }
    }

    /// Radius outside of which the kernel is exactly zero.
    pub fn support_radius(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian | KernelFamily::GaussianOrder4 => f64::INFINITY,
            KernelFamily::Epanechnikov | KernelFamily::UniformBox => 1.0,
        }
    }

    /// Per-coordinate cutoff used by the pruned summation paths. Exact for
    /// compact kernels; for Gaussian families every dropped term is below
    /// `1.3e-14` (order 2, cutoff 8) or `1e-16` (order 4, cutoff 9) times
    /// the kernel peak.
    pub fn truncation_radius(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 8.0,
            KernelFamily::GaussianOrder4 => 9.0,
            KernelFamily::Epanechnikov | KernelFamily::UniformBox => 1.0,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.family != KernelFamily::GaussianOrder4
    }

    /// Rejects dimensions the kernel cannot be normalized in.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if self.form == KernelForm::Radial && d > 3 {
            return Err(Error::InvalidArgument(format!(
                "radial kernels are normalized for d <= 3 only, got d = {d}"
            )));
        }
        Ok(())
    }

    /// `K(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("kernel argument must be finite".into()));
        }
        Ok(self.eval_unchecked(x))
    }

    /// `(h_1 * ... * h_d)^-1 K(x_1 / h_1, ..., x_d / h_d)`.
    pub fn eval_scaled(&self, h: &Bandwidth, x: &[f64]) -> Result<f64> {
        if h.dim() != x.len() {
            return Err(Error::InvalidBandwidth(format!(
                "bandwidth has {} entries for a {}-dimensional point",
                h.dim(),
                x.len()
            )));
        }
        self.check_dim(x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("kernel argument must be finite".into()));
        }
        let u: Vec<f64> = x.iter().zip(h.scales()).map(|(x, h)| x / h).collect();
        Ok(self.eval_unchecked(&u) / h.volume())
    }

    /// Evaluation without argument checks; `x` must be finite and of a
    /// dimension accepted by [`KernelSpec::check_dim`].
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self.form {
            KernelForm::Product => x.iter().map(|&u| self.profile(u)).product(),
            KernelForm::Radial => {
                let r2: f64 = x.iter().map(|u| u * u).sum();
                self.radial(r2, x.len())
            }
        }
    }

    /// Univariate profile `k(u)`.
    #[inline]
    fn profile(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
            KernelFamily::GaussianOrder4 => {
                0.5 * (3.0 - u * u) * INV_SQRT_2PI * (-0.5 * u * u).exp()
            }
            KernelFamily::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelFamily::UniformBox => {
                if u.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    fn radial(&self, r2: f64, d: usize) -> f64 {
        let df = d as f64;
        match self.family {
            KernelFamily::Gaussian => gauss_norm(d) * (-0.5 * r2).exp(),
            KernelFamily::GaussianOrder4 => {
                0.5 * (df + 2.0 - r2) * gauss_norm(d) * (-0.5 * r2).exp()
            }
            KernelFamily::Epanechnikov => {
                if r2 <= 1.0 {
                    (df + 2.0) / (2.0 * unit_ball_volume(d)) * (1.0 - r2)
                } else {
                    0.0
                }
            }
            KernelFamily::UniformBox => {
                if r2 <= 1.0 {
                    1.0 / unit_ball_volume(d)
                } else {
                    0.0
                }
            }
        }
    }

    /// `R(K) = \int K^2`, closed form.
    pub fn roughness(&self, d: usize) -> f64 {
        let df = d as f64;
        match (self.family, self.form) {
            (KernelFamily::Gaussian, _) => (2.0 * PI.sqrt()).powi(-(d as i32)),
            // (27/32) / sqrt(pi) per coordinate for the product form
            (KernelFamily::GaussianOrder4, KernelForm::Product) => {
                (27.0 / (32.0 * PI.sqrt())).powi(d as i32)
            }
            (KernelFamily::GaussianOrder4, KernelForm::Radial) => {
                // E over N(0, I/2) of ((d+2-|x|^2)/2)^2, times (4 pi)^(-d/2)
                let m1 = df / 2.0;
                let m2 = df * (df + 2.0) / 4.0;
                let e = ((df + 2.0).powi(2) - 2.0 * (df + 2.0) * m1 + m2) / 4.0;
                e * (4.0 * PI).powf(-df / 2.0)
            }
            (KernelFamily::Epanechnikov, KernelForm::Product) => 0.6_f64.powi(d as i32),
            (KernelFamily::Epanechnikov, KernelForm::Radial) => {
                2.0 * (df + 2.0) / (unit_ball_volume(d) * (df + 4.0))
            }
            (KernelFamily::UniformBox, KernelForm::Product) => 0.5_f64.powi(d as i32),
            (KernelFamily::UniformBox, KernelForm::Radial) => 1.0 / unit_ball_volume(d),
        }
    }

    /// `mu_2(K) = \int x_1^2 K(x) dx`; zero for the fourth-order kernel.
    pub fn second_moment(&self, d: usize) -> f64 {
        match (self.family, self.form) {
            (KernelFamily::Gaussian, _) => 1.0,
            (KernelFamily::GaussianOrder4, _) => 0.0,
            (KernelFamily::Epanechnikov, KernelForm::Product) => 0.2,
            (KernelFamily::Epanechnikov, KernelForm::Radial) => 1.0 / (d as f64 + 4.0),
            (KernelFamily::UniformBox, KernelForm::Product) => 1.0 / 3.0,
            (KernelFamily::UniformBox, KernelForm::Radial) => 1.0 / (d as f64 + 2.0),
        }
    }

    /// Numerically integrates `K` and every monomial moment of degree
    /// `1..order` in dimension `d` (1 to 3).
    pub fn verify_order(&self, d: usize) -> Result<MomentReport> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidArgument(format!(
                "moment verification supports d in 1..=3, got {d}"
            )));
        }
        let max_degree = self.order() - 1;
        let mut exponents = Vec::new();
        enumerate_exponents(d, max_degree, &mut vec![0; d], 0, &mut exponents);
        exponents.sort_by_key(|e| (e.iter().sum::<u32>(), e.clone()));

        let values = match self.form {
            KernelForm::Product => self.box_moments(d, &exponents),
            KernelForm::Radial => self.spherical_moments(d, &exponents),
        };
        let mut mass = 0.0;
        let mut moments = Vec::new();
        for (e, v) in exponents.into_iter().zip(values) {
            if e.iter().all(|&l| l == 0) {
                mass = v;
            } else {
                moments.push(MomentEntry { exponents: e, value: v });
            }
        }
        let max_deviation = moments
            .iter()
            .map(|m| m.value.abs())
            .fold((mass - 1.0).abs(), f64::max);
        Ok(MomentReport {
            kernel: *self,
            dim: d,
            order: self.order(),
            mass,
            moments,
            max_deviation,
        })
    }

    fn integration_radius(&self) -> f64 {
        if self.support_radius().is_finite() {
            self.support_radius()
        } else {
            12.0
        }
    }

    fn box_moments(&self, d: usize, exponents: &[Vec<u32>]) -> Vec<f64> {
        let r = self.integration_radius();
        let rule = if self.support_radius().is_finite() {
            // piecewise polynomial on [-1, 1]: one panel is exact
            CompositeRule::new(-r, r, 1, 12)
        } else {
            CompositeRule::new(-r, r, 24, 10)
        };
        let len = rule.nodes.len();
        let mut acc = vec![0.0; exponents.len()];
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        'outer: loop {
            let mut w = 1.0;
            for j in 0..d {
                x[j] = rule.nodes[idx[j]];
                w *= rule.weights[idx[j]];
            }
            let k = self.eval_unchecked(&x) * w;
            for (a, e) in acc.iter_mut().zip(exponents) {
                *a += k * monomial(&x, e);
            }
            for j in 0..d {
                idx[j] += 1;
                if idx[j] < len {
                    continue 'outer;
                }
                idx[j] = 0;
            }
            break;
        }
        acc
    }

    fn spherical_moments(&self, d: usize, exponents: &[Vec<u32>]) -> Vec<f64> {
        let r = self.integration_radius();
        let radial = if self.support_radius().is_finite() {
            CompositeRule::new(0.0, r, 1, 12)
        } else {
            CompositeRule::new(0.0, r, 24, 10)
        };
        // Directions u on the unit sphere with surface weights.
        let mut dirs: Vec<(Vec<f64>, f64)> = Vec::new();
        match d {
            1 => {
                dirs.push((vec![1.0], 1.0));
                dirs.push((vec![-1.0], 1.0));
            }
            2 => {
                let m = 64;
                for i in 0..m {
                    let t = 2.0 * PI * i as f64 / m as f64;
                    dirs.push((vec![t.cos(), t.sin()], 2.0 * PI / m as f64));
                }
            }
            _ => {
                let polar = CompositeRule::new(-1.0, 1.0, 1, 16);
                let m = 32;
                for (&c, &wc) in polar.nodes.iter().zip(&polar.weights) {
                    let s = (1.0 - c * c).sqrt();
                    for i in 0..m {
                        let t = 2.0 * PI * i as f64 / m as f64;
                        dirs.push((vec![s * t.cos(), s * t.sin(), c], wc * 2.0 * PI / m as f64));
                    }
                }
            }
        }
        let mut acc = vec![0.0; exponents.len()];
        let mut x = vec![0.0; d];
        for (&rho, &wr) in radial.nodes.iter().zip(&radial.weights) {
            let jac = rho.powi(d as i32 - 1) * wr;
            for (u, wu) in &dirs {
                for j in 0..d {
                    x[j] = rho * u[j];
                }
                let k = self.eval_unchecked(&x) * jac * wu;
                for (a, e) in acc.iter_mut().zip(exponents) {
                    *a += k * monomial(&x, e);
                }
            }
        }
        acc
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let family = match self.family {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::UniformBox => "box",
            KernelFamily::GaussianOrder4 => "gauss4",
        };
        let form = match self.form {
            KernelForm::Product => "product",
            KernelForm::Radial => "radial",
        };
        write!(f, "{family}/{form}")
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "epanechnikov" => Ok(Self::Epanechnikov),
            "box" | "uniform-box" => Ok(Self::UniformBox),
            "gauss4" | "gaussian-order4" => Ok(Self::GaussianOrder4),
            other => Err(Error::InvalidArgument(format!("unknown kernel `{other}`"))),
        }
    }
}

impl FromStr for KernelForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(Self::Product),
            "radial" => Ok(Self::Radial),
            other => Err(Error::InvalidArgument(format!("unknown kernel form `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentEntry {
    pub exponents: Vec<u32>,
    pub value: f64,
}

/// Output of [`KernelSpec::verify_order`].
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub kernel: KernelSpec,
    pub dim: usize,
    pub order: u32,
    pub mass: f64,
    pub moments: Vec<MomentEntry>,
    /// Largest of `|mass - 1|` and `|moment|` over all checked monomials.
    pub max_deviation: f64,
}

impl MomentReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_deviation <= tol
    }
}

fn gauss_norm(d: usize) -> f64 {
    INV_SQRT_2PI.powi(d as i32)
}

fn unit_ball_volume(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => unreachable!("radial kernels are limited to d <= 3"),
    }
}

fn monomial(x: &[f64], e: &[u32]) -> f64 {
    x.iter().zip(e).map(|(x, &l)| x.powi(l as i32)).product()
}

fn enumerate_exponents(d: usize, max: u32, cur: &mut Vec<u32>, j: usize, out: &mut Vec<Vec<u32>>) {
    if j == d {
        out.push(cur.clone());
        return;
    }
    let used: u32 = cur[..j].iter().sum();
    for l in 0..=(max - used) {
        cur[j] = l;
        enumerate_exponents(d, max, cur, j + 1, out);
    }
    cur[j] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const ALL: [KernelFamily; 4] = [
        KernelFamily::Gaussian,
        KernelFamily::Epanechnikov,
        KernelFamily::UniformBox,
        KernelFamily::GaussianOrder4,
    ];

    fn all_specs() -> Vec<KernelSpec> {
        ALL.iter()
            .flat_map(|&f| [KernelForm::Product, KernelForm::Radial].map(|form| KernelSpec::new(f, form)))
            .collect()
    }

    #[test]
    fn values_at_origin() {
        assert_abs_diff_eq!(KernelSpec::gaussian().eval(&[0.0]).unwrap(), 0.398942, epsilon = 1e-6);
        assert_eq!(KernelSpec::epanechnikov().eval(&[0.0]).unwrap(), 0.75);
        assert_eq!(KernelSpec::epanechnikov().eval(&[1.5]).unwrap(), 0.0);
        // (3 - 0) / 2 * phi(0)
        let expected = 1.5 / (2.0 * PI).sqrt();
        assert_abs_diff_eq!(KernelSpec::gaussian_order4().eval(&[0.0]).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_argument_is_rejected() {
        let err = KernelSpec::gaussian().eval(&[f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(KernelSpec::gaussian().eval(&[]).is_err());
    }

    #[test]
    fn radial_rejects_high_dimension() {
        let k = KernelSpec::epanechnikov().with_form(KernelForm::Radial);
        assert!(k.eval(&[0.0; 4]).is_err());
        assert!(KernelSpec::epanechnikov().eval(&[0.0; 4]).is_ok());
    }

    #[test]
    fn scaled_evaluation() {
        let h1 = Bandwidth::scalar(1.0, 1).unwrap();
        assert_eq!(KernelSpec::uniform_box().eval_scaled(&h1, &[0.5]).unwrap(), 0.5);
        let h2 = Bandwidth::scalar(2.0, 1).unwrap();
        assert_abs_diff_eq!(
            KernelSpec::gaussian().eval_scaled(&h2, &[0.0]).unwrap(),
            0.398_942_280_401_432_7 / 2.0,
            epsilon = 1e-15
        );
        // product of two 1-d evaluations: phi(0) * phi(0) / 0.5
        let h = Bandwidth::new(vec![1.0, 0.5]).unwrap();
        let oracle = (1.0 / (2.0 * PI).sqrt()) * (1.0 / (2.0 * PI).sqrt()) / 0.5;
        assert_abs_diff_eq!(KernelSpec::gaussian().eval_scaled(&h, &[0.0, 0.0]).unwrap(), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(oracle, 1.0 / (2.0 * PI) / 0.5, epsilon = 1e-15);
    }

    #[test]
    fn scaled_rejects_dimension_mismatch() {
        let h = Bandwidth::scalar(1.0, 2).unwrap();
        assert!(matches!(
            KernelSpec::gaussian().eval_scaled(&h, &[0.0]),
            Err(Error::InvalidBandwidth(_))
        ));
    }

    #[test]
    fn moments_vanish_for_every_kernel() {
        for spec in all_specs() {
            for d in 1..=3 {
                let report = spec.verify_order(d).unwrap();
                assert!(
                    report.passes(1e-6),
                    "{spec} d={d}: deviation {}",
                    report.max_deviation
                );
            }
        }
    }

    #[test]
    fn order4_second_moment_vanishes() {
        let report = KernelSpec::gaussian_order4().verify_order(1).unwrap();
        let m2 = report.moments.iter().find(|m| m.exponents == vec![2]).unwrap();
        assert!(m2.value.abs() < 1e-6);
        assert_eq!(report.order, 4);
    }

    #[test]
    fn order4_kernel_goes_negative() {
        let k = KernelSpec::gaussian_order4();
        let min = (0..=800)
            .map(|i| -4.0 + i as f64 * 0.01)
            .map(|u| k.eval(&[u]).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(min < 0.0);
    }

    #[test]
    fn closed_form_constants_match_quadrature() {
        for spec in all_specs() {
            for d in 1..=3 {
                let r = spec.integration_radius();
                let lo = vec![-r; d];
                let hi = vec![r; d];
                let panels = if spec.support_radius().is_finite() { 40 } else { 24 };
                let rough = crate::quadrature::integrate_box(
                    |x| spec.eval_unchecked(x).powi(2),
                    &lo,
                    &hi,
                    panels,
                    6,
                );
                let mu2 = crate::quadrature::integrate_box(
                    |x| x[0] * x[0] * spec.eval_unchecked(x),
                    &lo,
                    &hi,
                    panels,
                    6,
                );
                // radial compact kernels are discontinuous on the sphere; the
                // box rule only converges at first order there
                let tol = if spec.form == KernelForm::Radial && spec.support_radius().is_finite() {
                    2e-2
                } else {
                    1e-8
                };
                assert!(
                    (rough - spec.roughness(d)).abs() <= tol * spec.roughness(d),
                    "{spec} d={d}: R(K) {rough} vs {}",
                    spec.roughness(d)
                );
                assert!(
                    (mu2 - spec.second_moment(d)).abs() <= tol.max(1e-10),
                    "{spec} d={d}: mu2 {mu2} vs {}",
                    spec.second_moment(d)
                );
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric(x in prop::collection::vec(-5.0f64..5.0, 1..=3)) {
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            for spec in all_specs() {
                prop_assert_eq!(spec.eval(&x).unwrap(), spec.eval(&neg).unwrap());
            }
        }

        #[test]
        fn scalar_scaling_identity(
            x in prop::collection::vec(-3.0f64..3.0, 1..=3),
            h in 0.05f64..4.0,
        ) {
            let d = x.len();
            let bw = Bandwidth::scalar(h, d).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v / h).collect();
            for spec in all_specs() {
                let lhs = spec.eval_scaled(&bw, &x).unwrap();
                let rhs = h.powi(-(d as i32)) * spec.eval(&xs).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
            }
        }

        #[test]
        fn compact_support(x in prop::collection::vec(-3.0f64..3.0, 1..=3)) {
            for spec in all_specs().into_iter().filter(|s| s.support_radius().is_finite()) {
                let outside = match spec.form {
                    KernelForm::Product => x.iter().any(|v| v.abs() > 1.0),
                    KernelForm::Radial => x.iter().map(|v| v * v).sum::<f64>() > 1.0,
                };
                if outside {
                    prop_assert_eq!(spec.eval(&x).unwrap(), 0.0);
                }
            }
        }
    }
}
