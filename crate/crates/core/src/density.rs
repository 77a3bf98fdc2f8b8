//! Kernel density estimation on a design.
//!
//! `pi_hat(x) = n^-1 * sum_i K_h(x - X_i)` with the self term kept when `x`
//! is itself a design point. Order-4 kernels can make `pi_hat` negative;
//! nothing here clamps it (the integrators do, and count it).

use std::sync::OnceLock;

use serde::Serialize;

use crate::bandwidth::Bandwidth;
use crate::integrate::Domain;
use crate::kernels::{KernelForm, KernelSpec};
use crate::neighbors::CellIndex;
use crate::parallel::{map_range, ordered_sum};
use crate::quadrature::CompositeRule;
use crate::{Error, Result};

/// `n` points in `d` dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    points: Vec<f64>,
    dim: usize,
}

impl Design {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("design dimension must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidState("design has no points".into()));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not split into rows of {dim}",
                points.len()
            )));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite coordinate in row {}",
                pos / dim
            )));
        }
        Ok(Self { points, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(Error::InvalidArgument("rows have differing lengths".into()));
        }
        Self::new(rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect(), dim)
    }

    pub fn n(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let pts = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::new(pts, self.dim)
    }

    /// Affine image `x -> scale * x + shift`, coordinate-wise.
    pub fn map_affine(&self, scale: &[f64], shift: &[f64]) -> Result<Self> {
        let pts = self
            .rows()
            .flat_map(|r| (0..self.dim).map(move |j| scale[j] * r[j] + shift[j]))
            .collect();
        Self::new(pts, self.dim)
    }
}

/// Which summation path evaluates `pi_hat` at many points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalPath {
    /// Bucketed when it prunes, full pair sum otherwise.
    #[default]
    Auto,
    /// Plain O(n^2) sum over every design point.
    Reference,
    /// Grid-bucketed sum; exact for compact kernels, Gaussian tails cut at
    /// [`KernelSpec::truncation_radius`].
    Binned,
}

/// `pi_hat` for one (design, kernel, bandwidth) triple.
///
/// The spatial bucket index used by the pruned path is built lazily on
/// first use and cached.
#[derive(Debug)]
pub struct DensityField<'a> {
    design: &'a Design,
    kernel: KernelSpec,
    bandwidth: Bandwidth,
    leave_one_out: bool,
    path: EvalPath,
    index: OnceLock<Option<CellIndex>>,
}

impl<'a> DensityField<'a> {
    pub fn new(design: &'a Design, kernel: KernelSpec, bandwidth: Bandwidth) -> Result<Self> {
        if bandwidth.dim() != design.dim() {
            return Err(Error::InvalidBandwidth(format!(
                "bandwidth has {} entries, design has dimension {}",
                bandwidth.dim(),
                design.dim()
            )));
        }
        kernel.check_dim(design.dim())?;
        Ok(Self {
            design,
            kernel,
            bandwidth,
            leave_one_out: false,
            path: EvalPath::Auto,
            index: OnceLock::new(),
        })
    }

    /// Drop the `i = j` term when evaluating at design points.
    pub fn leave_one_out(mut self, on: bool) -> Self {
        self.leave_one_out = on;
        self
    }

    pub fn with_path(mut self, path: EvalPath) -> Self {
        self.path = path;
        self
    }

    pub fn design(&self) -> &Design {
        self.design
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn bandwidth(&self) -> &Bandwidth {
        &self.bandwidth
    }

    fn index(&self) -> Option<&CellIndex> {
        if self.path == EvalPath::Reference {
            return None;
        }
        self.index
            .get_or_init(|| {
                let r = self.kernel.truncation_radius();
                let width: Vec<f64> = self.bandwidth.scales().iter().map(|h| r * h).collect();
                CellIndex::build(self.design, &width)
            })
            .as_ref()
    }

    /// Calls `f(j, K_h(x - X_j))` for every term the chosen path keeps.
    fn for_each_term<F: FnMut(usize, f64)>(&self, x: &[f64], mut f: F) {
        let d = self.design.dim();
        let inv_vol = 1.0 / self.bandwidth.volume();
        let h = self.bandwidth.scales();
        let mut u = [0.0f64; 8];
        let mut buf;
        let u: &mut [f64] = if d <= 8 {
            &mut u[..d]
        } else {
            buf = vec![0.0; d];
            &mut buf
        };
        let term = |j: usize, u: &mut [f64]| {
            let row = self.design.row(j);
            for k in 0..d {
                u[k] = (x[k] - row[k]) / h[k];
            }
            self.kernel.eval_unchecked(u) * inv_vol
        };
        match self.index() {
            Some(index) => {
                let cut = self.kernel.truncation_radius();
                index.for_each_candidate(x, |j| {
                    let row = self.design.row(j);
                    if (0..d).all(|k| ((x[k] - row[k]) / h[k]).abs() <= cut) {
                        f(j, term(j, u));
                    }
                });
            }
            None => {
                for j in 0..self.design.n() {
                    f(j, term(j, u));
                }
            }
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.design.dim() {
            return Err(Error::InvalidArgument(format!(
                "query has dimension {}, design has {}",
                x.len(),
                self.design.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("query point must be finite".into()));
        }
        Ok(())
    }

    /// `pi_hat(x)`.
    pub fn kde_at(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.kde_unchecked(x))
    }

    fn kde_unchecked(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        self.for_each_term(x, |_, t| s += t);
        s / self.design.n() as f64
    }

    /// `v_hat(x) = (n (n-1))^-1 * sum_i (K_h(x - X_i) - pi_hat(x))^2`.
    pub fn variance_at(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let n = self.design.n();
        if n < 2 {
            return Err(Error::InsufficientSample { needed: 2, got: n });
        }
        let mut terms = Vec::new();
        self.for_each_term(x, |_, t| terms.push(t));
        let (_, v) = mean_and_variance(&terms, n);
        Ok(v)
    }

    /// `(pi_hat(X_1), ..., pi_hat(X_n))`.
    pub fn kde_at_points(&self) -> Vec<f64> {
        self.at_points(false).0
    }

    /// `pi_hat` and `v_hat` at every design point from one pass over the
    /// kernel terms. `v_hat` is zero when `n < 2`.
    pub fn kde_and_variance_at_points(&self) -> (Vec<f64>, Vec<f64>) {
        self.at_points(true)
    }

    fn at_points(&self, with_variance: bool) -> (Vec<f64>, Vec<f64>) {
        let n = self.design.n();
        let loo = self.leave_one_out && n > 1;
        let pairs = map_range(n, |i| {
            let x = self.design.row(i);
            let mut terms = Vec::new();
            self.for_each_term(x, |j, t| {
                if !(loo && j == i) {
                    terms.push(t)
                }
            });
            let count = if loo { n - 1 } else { n };
            if with_variance && count >= 2 {
                mean_and_variance(&terms, count)
            } else {
                (ordered_sum(&terms) / count as f64, 0.0)
            }
        });
        pairs.into_iter().unzip()
    }

    /// Minimum of `pi_hat` over a regular grid on `domain` with
    /// `grid_per_dim` points per axis, endpoints included.
    pub fn min_density_on(&self, domain: &Domain, grid_per_dim: usize) -> Result<f64> {
        if grid_per_dim < 2 {
            return Err(Error::InvalidArgument("grid needs at least 2 points per axis".into()));
        }
        if domain.dim() != self.design.dim() {
            return Err(Error::InvalidArgument("domain and design dimensions differ".into()));
        }
        let grid = domain.grid(grid_per_dim);
        let values = map_range(grid.n(), |i| self.kde_unchecked(grid.row(i)));
        Ok(values.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// `pi_hat` on a regular grid, row-major with the first axis slowest.
    pub fn kde_on_grid(&self, domain: &Domain, grid_per_dim: usize) -> Result<(Design, Vec<f64>)> {
        if grid_per_dim < 2 {
            return Err(Error::InvalidArgument("grid needs at least 2 points per axis".into()));
        }
        let grid = domain.grid(grid_per_dim);
        let values = map_range(grid.n(), |i| self.kde_unchecked(grid.row(i)));
        Ok((grid, values))
    }
}

/// Mean over `count` terms of which only `terms` are nonzero, and
/// `sum (t - mean)^2 / (count (count - 1))`.
fn mean_and_variance(terms: &[f64], count: usize) -> (f64, f64) {
    let mean = ordered_sum(terms) / count as f64;
    let mut ss: f64 = terms.iter().map(|t| (t - mean) * (t - mean)).sum();
    ss += (count - terms.len()) as f64 * mean * mean;
    let c = count as f64;
    (mean, ss / (c * (c - 1.0)))
}

/// Minimum over a grid on `domain` of `(1_Q * K_h)(x)`, the kernel mass
/// that falls inside the domain around `x`.
///
/// Product kernels factor into one-dimensional integrals; radial kernels use
/// a tensor rule over the intersection of the domain with the support box.
pub fn check_boundary_condition(
    kernel: KernelSpec,
    domain: &Domain,
    h: f64,
    grid_per_dim: usize,
) -> Result<BoundaryReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidBandwidth(format!("bandwidth must be positive, got {h}")));
    }
    if grid_per_dim < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points per axis".into()));
    }
    let d = domain.dim();
    kernel.check_dim(d)?;
    let grid = domain.grid(grid_per_dim);
    let masses = map_range(grid.n(), |i| kernel_mass_inside(kernel, domain, h, grid.row(i)));
    let (argmin, min) = masses
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    Ok(BoundaryReport {
        min_mass: min,
        argmin: grid.row(argmin).to_vec(),
        bandwidth: h,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryReport {
    /// Empirical constant `c` of the lower bound on `1_Q * K_h`.
    pub min_mass: f64,
    pub argmin: Vec<f64>,
    pub bandwidth: f64,
}

/// `\int_Q K_h(x - y) dy`.
pub fn kernel_mass_inside(kernel: KernelSpec, domain: &Domain, h: f64, x: &[f64]) -> f64 {
    let reach = if kernel.support_radius().is_finite() {
        kernel.support_radius()
    } else {
        12.0
    };
    let d = domain.dim();
    let lo: Vec<f64> = (0..d).map(|j| domain.lower()[j].max(x[j] - reach * h)).collect();
    let hi: Vec<f64> = (0..d).map(|j| domain.upper()[j].min(x[j] + reach * h)).collect();
    if lo.iter().zip(&hi).any(|(a, b)| b <= a) {
        return 0.0;
    }
    match kernel.form {
        KernelForm::Product => (0..d)
            .map(|j| {
                let rule = CompositeRule::new(lo[j], hi[j], 16, 8);
                rule.integrate(|y| kernel.eval_unchecked(&[(x[j] - y) / h]) / h)
            })
            .product(),
        KernelForm::Radial => {
            let panels = match d {
                1 => 64,
                2 => 48,
                _ => 16,
            };
            crate::quadrature::integrate_box(
                |y| {
                    let u: Vec<f64> = (0..d).map(|j| (x[j] - y[j]) / h).collect();
                    kernel.eval_unchecked(&u) / h.powi(d as i32)
                },
                &lo,
                &hi,
                panels,
                4,
            )
        }
    }
}
