//! Dense reference eigensolver used to cross-check the contour method.
//!
//! The rational eigenvalue problem is equivalent to a linear generalized
//! eigenproblem once the oscillator amplitudes `zeta_j` rejoin the unknowns.
//! With `E` holding the attachment unit vectors and `Sigma = diag(sigma_j)`:
//!
//! ```text
//! L = | A                0     |        R = | B   E_M |
//!     | -Sigma E^T       Sigma |            | 0   I   |
//! ```
//!
//! where the j-th column of `E_M` is `M_j e_j`.  The second block row gives
//! `zeta_j = sigma_j (e_j^T u) / (sigma_j - lambda)`, and substituting that
//! into the first row recovers exactly the rational operator equation, so
//! `L z = lambda R z` has the same finite eigenvalues.  `R` is invertible
//! (block triangular with positive definite `B`), hence the dense spectrum
//! of `R^-1 L` is the reference.
//!
//! This path never touches the contour machinery or the sparse solver: it
//! goes through an independent dense eigensolver, which is what makes it a
//! meaningful arbiter.  The price is dense storage, so it is capped to small
//! problems.

use crate::assembly::AssembledSystem;
use faer::linalg::solvers::Solve;
use faer::Mat;
use thiserror::Error;

/// Largest admissible pencil size `n_free + p`.
pub const DENSE_CAP: usize = 3000;

/// Eigenvalues whose magnitude exceeds this are discretization artifacts of
/// the pencil's top end and are discarded before the band filter.
const MAGNITUDE_CUTOFF: f64 = 1e12;

/// Imaginary parts beyond this (relative to the magnitude) are not roundoff
/// noise any more; the spectrum is provably real, so that is a failure.
const REALITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("pencil of size {size} exceeds the dense reference cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("dense eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("genuinely complex eigenvalue {re} + {im}i in a provably real spectrum")]
    ComplexSpectrum { re: f64, im: f64 },
}

/// Builds the dense pencil `(L, R)` of size `n_free + p`.
pub fn build_pencil(sys: &AssembledSystem) -> (Mat<f64>, Mat<f64>) {
    let n = sys.n_free();
    let p = sys.point_terms.len();
    let m = n + p;
    let mut l = Mat::<f64>::zeros(m, m);
    let mut r = Mat::<f64>::zeros(m, m);
    for j in 0..n {
        for (k, i) in sys.pattern.column(j) {
            l[(i as usize, j)] = sys.a[k];
            r[(i as usize, j)] = sys.b[k];
        }
    }
    for (jj, t) in sys.point_terms.iter().enumerate() {
        let e = t.dof as usize;
        l[(n + jj, e)] = -t.sigma;
        l[(n + jj, n + jj)] = t.sigma;
        r[(e, n + jj)] = t.mass;
        r[(n + jj, n + jj)] = 1.0;
    }
    (l, r)
}

/// All reference eigenvalues inside `[lo, hi]`, ascending.
pub fn reference_eigenvalues(
    sys: &AssembledSystem,
    lo: f64,
    hi: f64,
) -> Result<Vec<f64>, OracleError> {
    let size = sys.n_free() + sys.point_terms.len();
    if size > DENSE_CAP {
        return Err(OracleError::TooLarge {
            size,
            cap: DENSE_CAP,
        });
    }
    let (l, r) = build_pencil(sys);
    // X = R^-1 L through a dense LU; the eigenvalues of X are the finite
    // eigenvalues of the pencil.
    let mut x = l;
    r.partial_piv_lu().solve_in_place(x.as_mut());
    let spectrum = x
        .eigenvalues()
        .map_err(|e| OracleError::Eigensolver(format!("{e:?}")))?;
    let mut out = Vec::new();
    for z in spectrum {
        if !z.re.is_finite() || !z.im.is_finite() || z.norm() >= MAGNITUDE_CUTOFF {
            continue;
        }
        if z.re < lo || z.re > hi {
            continue;
        }
        if z.im.abs() > REALITY_TOL * z.re.abs().max(1.0) {
            return Err(OracleError::ComplexSpectrum { re: z.re, im: z.im });
        }
        out.push(z.re);
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, build_dof_map, linear_pencil_eigenvalues, Oscillator, PlateProblem};
    use crate::mesh::{build_mesh, unit_square};
    use faer::Mat;
    use num_complex::Complex64;

    const ATTACH: (f64, f64) = (9.0 / 26.0, 19.0 / 26.0);

    fn problem(with_oscillator: bool) -> PlateProblem {
        PlateProblem {
            rigidity: 1.0,
            poisson: 0.3,
            rho_d: 1.0,
            oscillators: if with_oscillator {
                vec![Oscillator {
                    mass: 0.01,
                    stiffness: 100.0,
                    x: ATTACH.0,
                    y: ATTACH.1,
                }]
            } else {
                vec![]
            },
        }
    }

    fn system(h: f64, with_oscillator: bool) -> AssembledSystem {
        let mesh = build_mesh(&unit_square(), h, &[ATTACH]).unwrap();
        let dm = build_dof_map(&mesh);
        assemble(&mesh, &problem(with_oscillator), &dm).unwrap()
    }

    #[test]
    fn reduces_to_the_plain_plate_without_oscillators() {
        let sys = system(0.25, false);
        let plain = linear_pencil_eigenvalues(&sys).unwrap();
        let got = reference_eigenvalues(&sys, 0.0, plain[4] * 1.001).unwrap();
        assert!(got.len() >= 5);
        for k in 0..5 {
            let rel = (got[k] - plain[k]).abs() / plain[k];
            assert!(rel <= 1e-8, "eigenvalue {k}: {} vs {}", got[k], plain[k]);
        }
    }

    #[test]
    fn pencil_blocks_have_the_documented_shape() {
        let sys = system(0.25, true);
        let n = sys.n_free();
        let (l, r) = build_pencil(&sys);
        assert_eq!(l.nrows(), n + 1);
        let e = sys.point_terms[0].dof as usize;
        let sigma = sys.point_terms[0].sigma;
        assert_eq!(l[(n, e)], -sigma);
        assert_eq!(l[(n, n)], sigma);
        assert_eq!(r[(e, n)], sys.point_terms[0].mass);
        assert_eq!(r[(n, n)], 1.0);
        // The plate block of L is the stiffness matrix, and the oscillator
        // row/column carries nothing else.
        for j in 0..n {
            if j != e {
                assert_eq!(l[(n, j)], 0.0);
                assert_eq!(r[(j, n)], 0.0);
            }
            assert_eq!(l[(j, n)], 0.0);
            assert_eq!(r[(n, j)], 0.0);
        }
    }

    /// Eliminating the amplitude block from `L - lambda R` must reproduce
    /// the rational operator: the Schur complement is
    /// `A - lambda B + lambda sigma/(lambda - sigma) M e e^T`.
    #[test]
    fn schur_complement_recovers_the_rational_operator() {
        let sys = system(1.0 / 3.0, true);
        let n = sys.n_free();
        let (l, r) = build_pencil(&sys);
        let t = &sys.point_terms[0];
        let e = t.dof as usize;
        let a = crate::sparse::to_dense_real(&sys.pattern, &sys.a);
        let b = crate::sparse::to_dense_real(&sys.pattern, &sys.b);

        for lambda in [
            Complex64::new(900.0, 0.0),
            Complex64::new(4300.0, 55.0),
            Complex64::new(16000.0, -400.0),
        ] {
            // S = (L - lambda R)_uu - (L - lambda R)_uz (..)_zz^-1 (..)_zu.
            let zz = t.sigma - lambda;
            let mut worst = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let uu = Complex64::new(l[(i, j)], 0.0) - lambda * r[(i, j)];
                    let uz = -lambda * if i == e { t.mass } else { 0.0 };
                    let zu = if j == e { -t.sigma } else { 0.0 };
                    let s = uu - uz * zu / zz;
                    let mut f = Complex64::new(a[(i, j)], 0.0) - lambda * b[(i, j)];
                    if i == e && j == e {
                        f += lambda * t.sigma / (lambda - t.sigma) * t.mass;
                    }
                    worst = worst.max((s - f).norm());
                }
            }
            assert!(worst <= 1e-10 * t.sigma, "Schur mismatch {worst} at {lambda}");
        }
    }

    /// Scalar secular equation: lambda is a coupled eigenvalue iff
    /// `1 + lambda sigma M/(lambda - sigma) * e^T (A - lambda B)^-1 e = 0`.
    /// Root-finding that equation by bisection is a fully independent route
    /// to the same numbers.
    #[test]
    fn pencil_eigenvalues_solve_the_scalar_secular_equation() {
        let sys = system(0.2, true);
        let n = sys.n_free();
        let t = &sys.point_terms[0];
        let e = t.dof as usize;
        let a = crate::sparse::to_dense_real(&sys.pattern, &sys.a);
        let b = crate::sparse::to_dense_real(&sys.pattern, &sys.b);

        let g = |lambda: f64| -> f64 {
            let m = Mat::from_fn(n, n, |i, j| a[(i, j)] - lambda * b[(i, j)]);
            let mut rhs = Mat::<f64>::zeros(n, 1);
            rhs[(e, 0)] = 1.0;
            m.partial_piv_lu().solve_in_place(rhs.as_mut());
            1.0 + lambda * t.sigma * t.mass / (lambda - t.sigma) * rhs[(e, 0)]
        };

        // Bracket one root per interval cut out by the plain plate
        // eigenvalues (the poles of the resolvent term); the coupled values
        // interlace them below the oscillator pole.
        let sys_plain = {
            let mesh = build_mesh(&unit_square(), 0.2, &[ATTACH]).unwrap();
            let dm = build_dof_map(&mesh);
            assemble(&mesh, &problem(false), &dm).unwrap()
        };
        let mu = linear_pencil_eigenvalues(&sys_plain).unwrap();
        let cuts = [100.0, mu[0], mu[1], mu[2]];
        let mut roots = Vec::new();
        for w in cuts.windows(2) {
            let (mut lo, mut hi) = (w[0] * (1.0 + 1e-9), w[1] * (1.0 - 1e-9));
            let (glo, ghi) = (g(lo), g(hi));
            assert!(
                glo.signum() != ghi.signum(),
                "no bracket in ({lo}, {hi}): g = {glo}, {ghi}"
            );
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if g(mid).signum() == glo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }

        let got = reference_eigenvalues(&sys, 150.0, mu[2] * (1.0 - 1e-9)).unwrap();
        assert_eq!(got.len(), roots.len(), "band population: {got:?} vs {roots:?}");
        for (y, r) in got.iter().zip(&roots) {
            let rel = (y - r).abs() / r;
            assert!(rel <= 1e-9, "secular root {r} vs pencil {y} (rel {rel:.2e})");
        }
    }

    #[test]
    fn oscillator_adds_exactly_one_eigenvalue_near_its_pole() {
        // K/M = 10000: the coupled system gains one mode close to the
        // oscillator's own frequency, in a window where the plain plate has
        // none.  Both counts are asserted so a drifting plate spectrum
        // cannot silently devalue the check.
        let with = system(0.2, true);
        let without = system(0.2, false);
        let band = (8000.0, 11500.0);
        let got_with = reference_eigenvalues(&with, band.0, band.1).unwrap();
        let got_without = reference_eigenvalues(&without, band.0, band.1).unwrap();
        assert_eq!(
            got_without.len(),
            0,
            "plain plate should be silent in {band:?}: {got_without:?}"
        );
        assert_eq!(
            got_with.len(),
            1,
            "coupled system should add one mode in {band:?}: {got_with:?}"
        );
        let lam = got_with[0];
        assert!((lam - 10000.0).abs() < 1500.0, "mode {lam} far from the pole");
    }

    #[test]
    fn rejects_oversized_problems() {
        let mesh = build_mesh(&unit_square(), 1.0 / 40.0, &[ATTACH]).unwrap();
        let dm = build_dof_map(&mesh);
        let sys = assemble(&mesh, &problem(true), &dm).unwrap();
        match reference_eigenvalues(&sys, 0.0, 1e4) {
            Err(OracleError::TooLarge { size, cap }) => {
                assert!(size > cap);
            }
            other => panic!("expected the size guard to fire, got {other:?}"),
        }
    }
}
