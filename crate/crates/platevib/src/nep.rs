//! The frequency-dependent operator of the coupled plate-oscillator system.
//!
//! Eliminating the oscillator amplitudes from the coupled equations leaves a
//! plate-sized problem whose operator depends rationally on the spectral
//! parameter `eta`:
//!
//! ```text
//! F(eta) = A - eta B + sum_j (eta sigma_j / (eta - sigma_j)) M_j e_j e_j^T
//! ```
//!
//! with plate stiffness `A`, plate mass `B`, oscillator masses `M_j`, poles
//! `sigma_j = K_j / M_j`, and `e_j` the unit coordinate vector of the
//! deflection DOF at the j-th attachment node.  `F` is complex symmetric and
//! holomorphic away from the poles; each rank-one term only touches one
//! diagonal entry of the assembled pattern.
//!
//! [`OperatorFunction`] evaluates `F` and its derivative, and factorizes
//! `F(eta)` through the multifrontal solver.  Solves run iterative
//! refinement aiming for [`TARGET_RESIDUAL`]; [`Factorized::solve`] rejects
//! anything worse than [`ACCEPT_RESIDUAL`] (a shift numerically *on* an
//! eigenvalue stagnates with a residual many orders larger, and quadrature
//! callers must hear about that), while [`Factorized::solve_best_effort`]
//! hands back whatever iterate was best — the mode inverse iteration wants,
//! since its shifts are near-singular on purpose.

use crate::assembly::{AssembledSystem, DofMap};
use crate::mesh::RectMesh;
use crate::solver::{Factor, SolverError, Symbolic};
use crate::sparse;
use num_complex::Complex64;
use thiserror::Error;

/// Relative residual the refinement aims for.
pub const TARGET_RESIDUAL: f64 = 1e-10;

/// Worst relative residual [`Factorized::solve`] accepts.  Shifts within a
/// few percent of an eigenvalue legitimately stagnate one to two orders
/// above [`TARGET_RESIDUAL`]; truly singular shifts miss this bound by many
/// orders of magnitude.
pub const ACCEPT_RESIDUAL: f64 = 1e-8;

/// Default relative pole exclusion radius for factorization.
pub const DEFAULT_POLE_GUARD: f64 = 1e-8;

/// Refinement iterations before a solve is declared stagnated.
const MAX_REFINE: usize = 4;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error)]
pub enum NepError {
    #[error("shift {eta} lies within the exclusion radius of the pole at {sigma}")]
    PoleTooClose { eta: Complex64, sigma: f64 },
    #[error("factorization failed: {0}")]
    Factorization(#[from] SolverError),
    #[error("solve stagnated at relative residual {achieved:.3e} (target {target:.3e})")]
    SolveStagnated { achieved: f64, target: f64 },
}

/// The operator `F` together with its reusable elimination structure.
pub struct OperatorFunction {
    sys: AssembledSystem,
    symbolic: Symbolic,
    /// CSC position of the diagonal entry touched by each rank-one term.
    diag_idx: Vec<usize>,
    /// Relative no-go radius around each pole for factorization.
    pub pole_guard: f64,
    /// Largest entry magnitudes of A and B, for residual scaling.
    a_max: f64,
    b_max: f64,
}

impl OperatorFunction {
    pub fn new(mesh: &RectMesh, dof_map: &DofMap, sys: AssembledSystem) -> OperatorFunction {
        let symbolic = Symbolic::new(mesh, dof_map, &sys.pattern);
        let diag_idx = sys
            .point_terms
            .iter()
            .map(|t| {
                sys.pattern
                    .entry(t.dof, t.dof as usize)
                    .expect("attachment DOF has a structural diagonal entry")
            })
            .collect();
        let a_max = sys.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let b_max = sys.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        OperatorFunction {
            sys,
            symbolic,
            diag_idx,
            pole_guard: DEFAULT_POLE_GUARD,
            a_max,
            b_max,
        }
    }

    pub fn n(&self) -> usize {
        self.sys.pattern.n()
    }

    pub fn system(&self) -> &AssembledSystem {
        &self.sys
    }

    /// The poles `sigma_j = K_j / M_j`, in oscillator order.
    pub fn poles(&self) -> Vec<f64> {
        self.sys.point_terms.iter().map(|t| t.sigma).collect()
    }

    /// Bytes one factorization occupies; callers use this to budget caches.
    pub fn factor_bytes(&self) -> usize {
        self.symbolic.factor_bytes()
    }

    /// A cheap upper proxy for the entrywise magnitude of `F(eta)`: the
    /// denominator for operator-relative residuals.
    pub fn norm_proxy(&self, eta: Complex64) -> f64 {
        let mut s = self.a_max + eta.norm() * self.b_max;
        for t in &self.sys.point_terms {
            let d = eta - t.sigma;
            if d != ZERO {
                s += (eta * t.sigma / d * t.mass).norm();
            }
        }
        s
    }

    fn check_exact_pole(&self, eta: Complex64) -> Result<(), NepError> {
        for t in &self.sys.point_terms {
            if eta - t.sigma == ZERO {
                return Err(NepError::PoleTooClose {
                    eta,
                    sigma: t.sigma,
                });
            }
        }
        Ok(())
    }

    /// `y = F(eta) x`; defined everywhere except exactly on a pole.
    pub fn apply(
        &self,
        eta: Complex64,
        x: &[Complex64],
        y: &mut [Complex64],
    ) -> Result<(), NepError> {
        self.check_exact_pole(eta)?;
        let n = self.n();
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        let mut bx = vec![ZERO; n];
        sparse::matvec_real_complex(&self.sys.pattern, &self.sys.a, x, y);
        sparse::matvec_real_complex(&self.sys.pattern, &self.sys.b, x, &mut bx);
        for i in 0..n {
            y[i] -= eta * bx[i];
        }
        for t in &self.sys.point_terms {
            let j = t.dof as usize;
            let c = eta * t.sigma / (eta - t.sigma) * t.mass;
            y[j] += c * x[j];
        }
        Ok(())
    }

    /// `y = F'(eta) x = -B x - sum_j sigma_j^2/(eta-sigma_j)^2 M_j x_j e_j`.
    pub fn apply_derivative(
        &self,
        eta: Complex64,
        x: &[Complex64],
        y: &mut [Complex64],
    ) -> Result<(), NepError> {
        self.check_exact_pole(eta)?;
        let n = self.n();
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        sparse::matvec_real_complex(&self.sys.pattern, &self.sys.b, x, y);
        for yi in y.iter_mut() {
            *yi = -*yi;
        }
        for t in &self.sys.point_terms {
            let j = t.dof as usize;
            let d = eta - t.sigma;
            y[j] -= t.sigma * t.sigma / (d * d) * t.mass * x[j];
        }
        Ok(())
    }

    /// Pattern values of `F(eta)`.
    fn values(&self, eta: Complex64) -> Vec<Complex64> {
        let mut v: Vec<Complex64> = self
            .sys
            .a
            .iter()
            .zip(&self.sys.b)
            .map(|(&a, &b)| Complex64::new(a, 0.0) - eta * b)
            .collect();
        for (t, &k) in self.sys.point_terms.iter().zip(&self.diag_idx) {
            v[k] += eta * t.sigma / (eta - t.sigma) * t.mass;
        }
        v
    }

    /// Factorizes `F(eta)`.  Shifts within `pole_guard * sigma_j` of a pole
    /// are rejected up front: the operator is ill-scaled there and the
    /// quadrature layer is expected to re-place its nodes instead.
    pub fn factorize(&self, eta: Complex64) -> Result<Factorized<'_>, NepError> {
        for t in &self.sys.point_terms {
            if (eta - t.sigma).norm() <= self.pole_guard * t.sigma {
                return Err(NepError::PoleTooClose {
                    eta,
                    sigma: t.sigma,
                });
            }
        }
        let values = self.values(eta);
        let factor = self.symbolic.factor(&values)?;
        Ok(Factorized {
            op: self,
            eta,
            values,
            factor,
        })
    }
}

/// A factorization of `F(eta)` for one fixed shift.
pub struct Factorized<'a> {
    op: &'a OperatorFunction,
    eta: Complex64,
    values: Vec<Complex64>,
    factor: Factor<'a>,
}

impl Factorized<'_> {
    pub fn eta(&self) -> Complex64 {
        self.eta
    }

    /// min |pivot| / max |pivot| of the factorization; a reciprocal
    /// condition proxy.
    pub fn pivot_ratio(&self) -> f64 {
        self.factor.pivot_ratio()
    }

    /// Solves `F(eta) x = y` and insists on a relative residual within
    /// [`ACCEPT_RESIDUAL`]; a worse outcome means the shift is numerically
    /// singular and the caller should move it.
    pub fn solve(&self, y: &[Complex64]) -> Result<Vec<Complex64>, NepError> {
        let (x, res) = self.solve_best_effort(y);
        if res <= ACCEPT_RESIDUAL {
            Ok(x)
        } else {
            Err(NepError::SolveStagnated {
                achieved: res,
                target: ACCEPT_RESIDUAL,
            })
        }
    }

    /// Solves `F(eta) x = y` with iterative refinement and returns the best
    /// iterate together with its relative residual, however large.  Inverse
    /// iteration relies on this: its shifts sit close to an eigenvalue, the
    /// backward residual of the solve is dominated by the eigenvector
    /// component, and that component is exactly what the caller is after.
    pub fn solve_best_effort(&self, y: &[Complex64]) -> (Vec<Complex64>, f64) {
        let n = self.op.n();
        assert_eq!(y.len(), n);
        let ynorm = norm(y);
        if ynorm == 0.0 {
            return (vec![ZERO; n], 0.0);
        }
        let mut x = y.to_vec();
        self.factor.solve_in_place(&mut x);
        let mut fx = vec![ZERO; n];
        let mut best = x.clone();
        let mut best_res = f64::INFINITY;
        for _ in 0..=MAX_REFINE {
            sparse::matvec_complex(&self.op.sys.pattern, &self.values, &x, &mut fx);
            let mut r = vec![ZERO; n];
            for i in 0..n {
                r[i] = y[i] - fx[i];
            }
            let res = norm(&r) / ynorm;
            if res < best_res {
                best_res = res;
                best.copy_from_slice(&x);
            }
            if res <= TARGET_RESIDUAL {
                return (best, best_res);
            }
            self.factor.solve_in_place(&mut r);
            for i in 0..n {
                x[i] += r[i];
            }
        }
        // The last correction went unmeasured inside the loop.
        sparse::matvec_complex(&self.op.sys.pattern, &self.values, &x, &mut fx);
        let res = (0..n)
            .map(|i| (y[i] - fx[i]).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / ynorm;
        if res < best_res {
            best_res = res;
            best = x;
        }
        (best, best_res)
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
