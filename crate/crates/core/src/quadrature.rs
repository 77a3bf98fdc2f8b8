//! Gauss-Legendre rules and composite quadrature helpers.

use std::f64::consts::PI;

/// Nodes and weights of the `m`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        // Chebyshev-like starting guess, then Newton on P_m.
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(m, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule: `panels` equal panels on `[a, b]`, `m` nodes each.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    pub fn new(a: f64, b: f64, panels: usize, m: usize) -> Self {
        let (gx, gw) = gauss_legendre(m);
        let width = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * m);
        let mut weights = Vec::with_capacity(panels * m);
        for p in 0..panels {
            let left = a + p as f64 * width;
            let mid = left + 0.5 * width;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(mid + 0.5 * width * x);
                weights.push(0.5 * width * w);
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// One-dimensional integral of `f` on `[a, b]` by composite Gauss-Legendre.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    CompositeRule::new(a, b, panels, 8).integrate(f)
}

/// Tensor-product integral over the box `[lower, upper]`, using the same
/// composite rule along every axis.
pub fn integrate_box<F: Fn(&[f64]) -> f64>(
    f: F,
    lower: &[f64],
    upper: &[f64],
    panels: usize,
    m: usize,
) -> f64 {
    let d = lower.len();
    let rules: Vec<CompositeRule> = (0..d)
        .map(|j| CompositeRule::new(lower[j], upper[j], panels, m))
        .collect();
    if rules.iter().zip(lower.iter().zip(upper)).any(|(_, (a, b))| b <= a) {
        return 0.0;
    }
    let len = rules[0].nodes.len();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for j in 0..d {
            x[j] = rules[j].nodes[idx[j]];
            w *= rules[j].weights[idx[j]];
        }
        total += w * f(&x);
        let mut j = 0;
        loop {
            idx[j] += 1;
            if idx[j] < len {
                break;
            }
            idx[j] = 0;
            j += 1;
            if j == d {
                return total;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5);
        // degree 9 is the highest exact degree for 5 nodes
        let val: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert_abs_diff_eq!(val, 2.0 / 9.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn composite_gaussian_mass() {
        let f = |u: f64| (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
        assert_abs_diff_eq!(integrate_1d(f, -12.0, 12.0, 24), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn box_integral_of_product() {
        let v = integrate_box(|x| x[0] * x[1], &[0.0, 0.0], &[1.0, 2.0], 2, 4);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-13);
    }
}
