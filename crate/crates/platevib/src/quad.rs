//! Gauss-Legendre quadrature rules.
//!
//! Nodes and weights are computed on demand by Newton iteration on the
//! Legendre polynomial (standard three-term recurrence), which keeps the rule
//! order free rather than tied to a hardcoded table.  An `m`-point rule is
//! exact for polynomials of degree `2m - 1`.

/// One-dimensional Gauss-Legendre rule on a configurable interval.
#[derive(Debug, Clone)]
pub struct GaussRule {
    /// Nodes on [-1, 1], ascending.
    pub nodes: Vec<f64>,
    /// Weights on [-1, 1], summing to 2.
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Builds the `m`-point rule. Panics if `m == 0`.
    pub fn new(m: usize) -> Self {
        assert!(m > 0, "quadrature rule needs at least one point");
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        // Roots come in +/- pairs; iterate on the lower half and mirror.
        for i in 0..m.div_ceil(2) {
            // Chebyshev-like initial guess for the i-th root (descending in x).
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(m, x);
                let step = p / d;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            // Derivative refresh at the converged node feeds the weight.
            let (_, dp) = legendre_with_derivative(m, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[m - 1 - i] = x;
            weights[m - 1 - i] = w;
            nodes[i] = -x;
            weights[i] = w;
        }
        // Odd rules: the middle node is exactly 0 by symmetry.
        if m % 2 == 1 {
            nodes[m / 2] = 0.0;
        }
        GaussRule { nodes, weights }
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when the rule is empty (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to the interval `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mid = 0.5 * (a + b);
        let hal = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + hal * x, hal * w))
    }
}

/// Evaluates the Legendre polynomial `P_m` and its derivative at `x`.
fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0; // P_0
    let mut p1 = x; // P_1
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // P_m' via the standard identity (1 - x^2) P_m' = m (P_{m-1} - x P_m).
    let dp = m as f64 * (p0 - x * p1) / (1.0 - x * x);
    (p1, dp)
}
