//! Bogner-Fox-Schmit (BFS) bicubic Hermite rectangle.
//!
//! Each of the four cell corners carries the degrees of freedom
//! `(u, u_x, u_y, u_xy)`, stored in physical units.  The 16 shape functions
//! are tensor products of the four 1D Hermite cubics; consequently the
//! element is C1-conforming across cell edges and reproduces all bicubic
//! polynomials exactly.
//!
//! The plate-bending stiffness uses the Poisson-ratio form
//!
//! ```text
//! a(u,v) = Int R [ (u_xx + u_yy)(v_xx + v_yy)
//!                  + (1 - nu)(2 u_xy v_xy - u_xx v_yy - u_yy v_xx) ] dx dy
//! ```
//!
//! integrated with a tensor Gauss rule that is exact for every product of
//! bicubic second derivatives.

use crate::quad::GaussRule;
use thiserror::Error;

/// Degrees of freedom per element: 4 corners x (u, u_x, u_y, u_xy).
pub const NDOF: usize = 16;

/// Local corner order: (x0,y0), (x1,y0), (x0,y1), (x1,y1).
pub const CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

/// Dense 16x16 element matrix.
pub type LocalMat = [[f64; NDOF]; NDOF];

#[derive(Debug, Error)]
pub enum ElementError {
    #[error("invalid element parameter: {0}")]
    BadParameter(String),
    #[error("point ({0}, {1}) lies outside the cell")]
    PointOutsideCell(f64, f64),
}

/// The four 1D Hermite cubics on [0,1] (order: value at 0, slope at 0,
/// value at 1, slope at 1) or their `deriv`-th derivatives.
pub fn hermite_1d(xi: f64, deriv: usize) -> [f64; 4] {
    match deriv {
        0 => [
            2.0 * xi * xi * xi - 3.0 * xi * xi + 1.0,
            xi * xi * xi - 2.0 * xi * xi + xi,
            -2.0 * xi * xi * xi + 3.0 * xi * xi,
            xi * xi * xi - xi * xi,
        ],
        1 => [
            6.0 * xi * xi - 6.0 * xi,
            3.0 * xi * xi - 4.0 * xi + 1.0,
            -6.0 * xi * xi + 6.0 * xi,
            3.0 * xi * xi - 2.0 * xi,
        ],
        2 => [
            12.0 * xi - 6.0,
            6.0 * xi - 4.0,
            -12.0 * xi + 6.0,
            6.0 * xi - 2.0,
        ],
        _ => panic!("Hermite cubics support derivative orders 0..=2"),
    }
}

/// Evaluates all 16 shape functions' mixed derivative `d^(rx+ry)/dx^rx dy^ry`
/// at the physical point `p` of the cell `(x0, y0, hx, hy)`.
///
/// Local DOF `c * 4 + k` belongs to corner `c` (see [`CORNERS`]) and kind
/// `k`: 0 = value, 1 = d/dx, 2 = d/dy, 3 = d2/dxdy, all in physical units.
pub fn shape_derivatives(
    cell: (f64, f64, f64, f64),
    p: (f64, f64),
    rx: usize,
    ry: usize,
) -> [f64; NDOF] {
    let (x0, y0, hx, hy) = cell;
    let xi = (p.0 - x0) / hx;
    let eta = (p.1 - y0) / hy;
    let hxv = hermite_1d(xi, rx);
    let hyv = hermite_1d(eta, ry);
    let mut out = [0.0; NDOF];
    for (c, &(a, b)) in CORNERS.iter().enumerate() {
        for k in 0..4 {
            let (sx, sy) = (k & 1, k >> 1);
            // hx^sx hy^sy converts the stored physical-derivative DOF to the
            // reference scale; hx^-rx hy^-ry is the chain rule for the
            // requested derivative.
            let scale = hx.powi(sx as i32 - rx as i32) * hy.powi(sy as i32 - ry as i32);
            out[c * 4 + k] = scale * hxv[2 * a + sx] * hyv[2 * b + sy];
        }
    }
    out
}

/// Shape-function values at `p`; errors if `p` is outside the closed cell.
pub fn eval_vector(
    cell: (f64, f64, f64, f64),
    p: (f64, f64),
) -> Result<[f64; NDOF], ElementError> {
    let (x0, y0, hx, hy) = cell;
    let tol = 1e-12 * (hx + hy);
    if p.0 < x0 - tol || p.0 > x0 + hx + tol || p.1 < y0 - tol || p.1 > y0 + hy + tol {
        return Err(ElementError::PointOutsideCell(p.0, p.1));
    }
    Ok(shape_derivatives(cell, p, 0, 0))
}

/// Local DOF vector interpolating an analytic function given by
/// `(u, u_x, u_y, u_xy)` at a point.
pub fn interpolant(
    cell: (f64, f64, f64, f64),
    f: impl Fn(f64, f64) -> (f64, f64, f64, f64),
) -> [f64; NDOF] {
    let (x0, y0, hx, hy) = cell;
    let mut dofs = [0.0; NDOF];
    for (c, &(a, b)) in CORNERS.iter().enumerate() {
        let (x, y) = (x0 + a as f64 * hx, y0 + b as f64 * hy);
        let (u, ux, uy, uxy) = f(x, y);
        dofs[c * 4] = u;
        dofs[c * 4 + 1] = ux;
        dofs[c * 4 + 2] = uy;
        dofs[c * 4 + 3] = uxy;
    }
    dofs
}

/// Default tensor Gauss order: exact for all products of bicubic second
/// derivatives (degree <= 6 per direction, 4 points cover degree 7).
pub const DEFAULT_QUAD: usize = 4;

/// Plate-bending stiffness matrix on one cell.
pub fn local_stiffness(
    rigidity: f64,
    nu: f64,
    hx: f64,
    hy: f64,
) -> Result<LocalMat, ElementError> {
    local_stiffness_with_order(rigidity, nu, hx, hy, DEFAULT_QUAD)
}

/// Stiffness with an explicit quadrature order (for exactness checks).
pub fn local_stiffness_with_order(
    rigidity: f64,
    nu: f64,
    hx: f64,
    hy: f64,
    order: usize,
) -> Result<LocalMat, ElementError> {
    if !(rigidity > 0.0) {
        return Err(ElementError::BadParameter(format!(
            "rigidity must be positive, got {rigidity}"
        )));
    }
    if !(nu > 0.0 && nu < 0.5) {
        return Err(ElementError::BadParameter(format!(
            "Poisson ratio must lie in (0, 1/2), got {nu}"
        )));
    }
    if !(hx > 0.0 && hy > 0.0) {
        return Err(ElementError::BadParameter(format!(
            "cell extents must be positive, got ({hx}, {hy})"
        )));
    }
    let rule = GaussRule::new(order);
    let cell = (0.0, 0.0, hx, hy);
    let mut k = [[0.0; NDOF]; NDOF];
    for (gx, wx) in rule.mapped(0.0, hx) {
        for (gy, wy) in rule.mapped(0.0, hy) {
            let w = wx * wy;
            let dxx = shape_derivatives(cell, (gx, gy), 2, 0);
            let dyy = shape_derivatives(cell, (gx, gy), 0, 2);
            let dxy = shape_derivatives(cell, (gx, gy), 1, 1);
            for i in 0..NDOF {
                for j in i..NDOF {
                    let lap = (dxx[i] + dyy[i]) * (dxx[j] + dyy[j]);
                    let dev = 2.0 * dxy[i] * dxy[j] - dxx[i] * dyy[j] - dyy[i] * dxx[j];
                    let v = w * rigidity * (lap + (1.0 - nu) * dev);
                    k[i][j] += v;
                    if i != j {
                        k[j][i] += v;
                    }
                }
            }
        }
    }
    Ok(k)
}

/// Consistent mass matrix on one cell.
pub fn local_mass(rho_d: f64, hx: f64, hy: f64) -> Result<LocalMat, ElementError> {
    local_mass_with_order(rho_d, hx, hy, DEFAULT_QUAD)
}

/// Mass with an explicit quadrature order (for exactness checks).
pub fn local_mass_with_order(
    rho_d: f64,
    hx: f64,
    hy: f64,
    order: usize,
) -> Result<LocalMat, ElementError> {
    if !(rho_d > 0.0) {
        return Err(ElementError::BadParameter(format!(
            "areal density must be positive, got {rho_d}"
        )));
    }
    if !(hx > 0.0 && hy > 0.0) {
        return Err(ElementError::BadParameter(format!(
            "cell extents must be positive, got ({hx}, {hy})"
        )));
    }
    let rule = GaussRule::new(order);
    let cell = (0.0, 0.0, hx, hy);
    let mut m = [[0.0; NDOF]; NDOF];
    for (gx, wx) in rule.mapped(0.0, hx) {
        for (gy, wy) in rule.mapped(0.0, hy) {
            let w = wx * wy * rho_d;
            let n = shape_derivatives(cell, (gx, gy), 0, 0);
            for i in 0..NDOF {
                for j in i..NDOF {
                    let v = w * n[i] * n[j];
                    m[i][j] += v;
                    if i != j {
                        m[j][i] += v;
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Number of near-zero eigenvalues of a symmetric 16x16 matrix, with the
/// cutoff `tol_rel * max |eigenvalue|`.
pub fn nullspace_dimension(m: &LocalMat, tol_rel: f64) -> usize {
    let a = faer::Mat::from_fn(NDOF, NDOF, |i, j| 0.5 * (m[i][j] + m[j][i]));
    let evs: Vec<f64> = a
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .expect("16x16 symmetric eigensolve cannot fail");
    let scale = evs.iter().fold(0.0f64, |s, &e| s.max(e.abs()));
    evs.iter().filter(|&&e| e.abs() <= tol_rel * scale).count()
}

/// Quadratic form `v^T M v` for a 16x16 local matrix.
pub fn quadratic_form(m: &LocalMat, v: &[f64; NDOF]) -> f64 {
    let mut s = 0.0;
    for i in 0..NDOF {
        for j in 0..NDOF {
            s += v[i] * m[i][j] * v[j];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn max_abs(m: &LocalMat) -> f64 {
        m.iter().flatten().fold(0.0f64, |s, &v| s.max(v.abs()))
    }

    #[test]
    fn hermite_interpolation_values() {
        assert_eq!(hermite_1d(0.0, 0), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(hermite_1d(1.0, 0), [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(hermite_1d(0.0, 1), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(hermite_1d(1.0, 1), [0.0, 0.0, 0.0, 1.0]);
        // Midpoint values from the closed forms 2t^3-3t^2+1, t^3-2t^2+t,
        // -2t^3+3t^2, t^3-t^2 at t = 1/2.
        let mid = hermite_1d(0.5, 0);
        assert_relative_eq!(mid[0], 0.5);
        assert_relative_eq!(mid[1], 0.125);
        assert_relative_eq!(mid[2], 0.5);
        assert_relative_eq!(mid[3], -0.125);
    }

    #[test]
    fn hermite_partitions() {
        for &xi in &[0.0, 0.13, 0.5, 0.77, 1.0] {
            let h = hermite_1d(xi, 0);
            // Value interpolants partition unity; the full set reproduces t.
            assert_relative_eq!(h[0] + h[2], 1.0, epsilon = 1e-14);
            assert_relative_eq!(h[1] + h[2] + h[3], xi, epsilon = 1e-14);
        }
    }

    #[test]
    fn stiffness_is_symmetric_and_scales_with_rigidity() {
        let k = local_stiffness(2.7, 0.3, 0.4, 0.7).unwrap();
        let k1 = local_stiffness(1.0, 0.3, 0.4, 0.7).unwrap();
        let scale = max_abs(&k);
        for i in 0..NDOF {
            for j in 0..NDOF {
                assert!((k[i][j] - k[j][i]).abs() <= 1e-14 * scale);
                assert_relative_eq!(k[i][j], 2.7 * k1[i][j], max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn affine_functions_carry_no_bending_energy() {
        let cell = (0.0, 0.0, 0.8, 0.5);
        let k = local_stiffness(1.0, 0.3, 0.8, 0.5).unwrap();
        let scale = max_abs(&k);
        for f in [
            |_x: f64, _y: f64| (1.0, 0.0, 0.0, 0.0),
            |x: f64, _y: f64| (x, 1.0, 0.0, 0.0),
            |_x: f64, y: f64| (y, 0.0, 1.0, 0.0),
        ] {
            let v = interpolant(cell, f);
            let mut kv = [0.0; NDOF];
            for i in 0..NDOF {
                for j in 0..NDOF {
                    kv[i] += k[i][j] * v[j];
                }
            }
            let r = kv.iter().fold(0.0f64, |s, &t| s.max(t.abs()));
            assert!(r <= 1e-12 * scale, "residual {r}");
        }
    }

    #[test]
    fn quadratic_x_squared_energy_is_four_on_unit_cell() {
        // For u = x^2: (u_xx + u_yy)^2 = 4 and the deviatoric part vanishes,
        // so a(u,u) = 4 * area.
        let k = local_stiffness(1.0, 0.3, 1.0, 1.0).unwrap();
        let v = interpolant((0.0, 0.0, 1.0, 1.0), |x, _| (x * x, 2.0 * x, 0.0, 0.0));
        assert_relative_eq!(quadratic_form(&k, &v), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn twist_carries_torsion_energy() {
        // u = x y has u_xx = u_yy = 0 but u_xy = 1, so the bending form gives
        // a(u,u) = 2 R (1 - nu) hx hy: the twist is *not* energy-free.
        let (hx, hy, nu) = (0.8, 0.5, 0.3);
        let k = local_stiffness(1.0, nu, hx, hy).unwrap();
        let v = interpolant((0.0, 0.0, hx, hy), |x, y| (x * y, y, x, 1.0));
        assert_relative_eq!(
            quadratic_form(&k, &v),
            2.0 * (1.0 - nu) * hx * hy,
            max_relative = 1e-12
        );
    }

    #[test]
    fn stiffness_nullspace_is_affine_functions_only() {
        // Zero bending energy forces u_xx = u_yy = u_xy = 0, i.e. u affine:
        // the local nullspace is span{1, x, y}, dimension 3.
        let k = local_stiffness(1.0, 0.3, 1.0, 1.0).unwrap();
        assert_eq!(nullspace_dimension(&k, 1e-9), 3);
        let k2 = local_stiffness(3.0, 0.45, 0.3, 0.9).unwrap();
        assert_eq!(nullspace_dimension(&k2, 1e-9), 3);
    }

    #[test]
    fn mass_matrix_basics() {
        let m = local_mass(1.0, 1.0, 1.0).unwrap();
        // v = interpolant of 1 integrates to the cell area.
        let v = interpolant((0.0, 0.0, 1.0, 1.0), |_, _| (1.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(quadratic_form(&m, &v), 1.0, epsilon = 1e-13);
        // Linearity in the density.
        let m2 = local_mass(2.0, 1.0, 1.0).unwrap();
        for i in 0..NDOF {
            for j in 0..NDOF {
                assert_relative_eq!(m2[i][j], 2.0 * m[i][j], max_relative = 1e-14);
            }
        }
        // (value,value) diagonal on the unit cell: (Int H0^2)^2 = (13/35)^2.
        assert_relative_eq!(m[0][0], (13.0 / 35.0) * (13.0 / 35.0), max_relative = 1e-13);
    }

    #[test]
    fn mass_reproduces_exact_integral_of_a_bicubic() {
        // u = x^3 y^2 is bicubic, so interpolation is exact and
        // v^T M v = Int u^2 = (1/7)(1/5).
        let m = local_mass(1.0, 1.0, 1.0).unwrap();
        let v = interpolant((0.0, 0.0, 1.0, 1.0), |x, y| {
            (
                x.powi(3) * y * y,
                3.0 * x * x * y * y,
                2.0 * x.powi(3) * y,
                6.0 * x * x * y,
            )
        });
        assert_relative_eq!(quadratic_form(&m, &v), 1.0 / 35.0, max_relative = 1e-12);
    }

    #[test]
    fn eval_vector_at_corner_is_unit_coordinate() {
        let cell = (2.0, 3.0, 0.5, 0.25);
        let e = eval_vector(cell, (2.0, 3.0)).unwrap();
        let mut want = [0.0; NDOF];
        want[0] = 1.0;
        for i in 0..NDOF {
            assert_relative_eq!(e[i], want[i], epsilon = 1e-14);
        }
        // Third corner (x0, y1) is local index 2.
        let e = eval_vector(cell, (2.0, 3.25)).unwrap();
        assert_relative_eq!(e[2 * 4], 1.0, epsilon = 1e-14);
        assert!(eval_vector(cell, (2.6, 3.0)).is_err());
    }

    #[test]
    fn eval_vector_center_values() {
        let e = eval_vector((0.0, 0.0, 1.0, 1.0), (0.5, 0.5)).unwrap();
        for c in 0..4 {
            assert_relative_eq!(e[c * 4], 0.25, epsilon = 1e-14);
        }
        // Interpolating u = 1 contracts the value DOFs against 1 each.
        let sum: f64 = (0..4).map(|c| e[c * 4]).sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn quadrature_order_doubling_changes_nothing() {
        let k4 = local_stiffness_with_order(1.0, 0.3, 0.7, 0.4, 4).unwrap();
        let k8 = local_stiffness_with_order(1.0, 0.3, 0.7, 0.4, 8).unwrap();
        let m4 = local_mass_with_order(1.3, 0.7, 0.4, 4).unwrap();
        let m8 = local_mass_with_order(1.3, 0.7, 0.4, 8).unwrap();
        let (ks, ms) = (max_abs(&k4), max_abs(&m4));
        for i in 0..NDOF {
            for j in 0..NDOF {
                assert!((k4[i][j] - k8[i][j]).abs() <= 1e-13 * ks);
                assert!((m4[i][j] - m8[i][j]).abs() <= 1e-13 * ms);
            }
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(local_stiffness(0.0, 0.3, 1.0, 1.0).is_err());
        assert!(local_stiffness(1.0, 0.6, 1.0, 1.0).is_err());
        assert!(local_stiffness(1.0, 0.3, -1.0, 1.0).is_err());
        assert!(local_mass(-1.0, 1.0, 1.0).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Evaluates q(x,y) = sum a_ij x^i y^j and its derivatives.
        fn poly(a: &[[f64; 4]; 4], x: f64, y: f64) -> (f64, f64, f64, f64) {
            let (mut u, mut ux, mut uy, mut uxy) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..4 {
                for j in 0..4 {
                    let c = a[i][j];
                    u += c * x.powi(i as i32) * y.powi(j as i32);
                    if i > 0 {
                        ux += c * i as f64 * x.powi(i as i32 - 1) * y.powi(j as i32);
                    }
                    if j > 0 {
                        uy += c * j as f64 * x.powi(i as i32) * y.powi(j as i32 - 1);
                    }
                    if i > 0 && j > 0 {
                        uxy += c * (i * j) as f64 * x.powi(i as i32 - 1) * y.powi(j as i32 - 1);
                    }
                }
            }
            (u, ux, uy, uxy)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            /// Patch test: the interpolant of any bicubic equals it.
            #[test]
            fn bicubic_patch_test(
                coef in proptest::array::uniform16(-2.0f64..2.0),
                x0 in -1.0f64..1.0,
                y0 in -1.0f64..1.0,
                hx in 0.2f64..1.5,
                hy in 0.2f64..1.5,
                samples in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 25),
            ) {
                let mut a = [[0.0; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        a[i][j] = coef[i * 4 + j];
                    }
                }
                let cell = (x0, y0, hx, hy);
                let dofs = interpolant(cell, |x, y| poly(&a, x, y));
                let scale = 1.0 + a.iter().flatten().map(|c| c.abs()).sum::<f64>();
                for (sx, sy) in samples {
                    let p = (x0 + sx * hx, y0 + sy * hy);
                    let n = eval_vector(cell, p).unwrap();
                    let uh: f64 = (0..NDOF).map(|k| n[k] * dofs[k]).sum();
                    let (u, _, _, _) = poly(&a, p.0, p.1);
                    prop_assert!((uh - u).abs() <= 1e-11 * scale, "err {}", (uh - u).abs());
                }
            }

            /// Cubic Hermite identity: end data of any cubic reproduces it.
            #[test]
            fn hermite_reproduces_cubics(
                a in -2.0f64..2.0, b in -2.0f64..2.0,
                c in -2.0f64..2.0, d in -2.0f64..2.0,
                xi in 0.0f64..1.0,
            ) {
                let p = |t: f64| a * t * t * t + b * t * t + c * t + d;
                let dp = |t: f64| 3.0 * a * t * t + 2.0 * b * t + c;
                let h = hermite_1d(xi, 0);
                let v = p(0.0) * h[0] + dp(0.0) * h[1] + p(1.0) * h[2] + dp(1.0) * h[3];
                prop_assert!((v - p(xi)).abs() <= 1e-13 * (1.0 + p(xi).abs()));
            }

            /// C1 conformity: two cells sharing an edge agree in value and
            /// normal derivative along it for arbitrary shared DOF data.
            #[test]
            fn c1_across_shared_edge(
                dofs in proptest::collection::vec(-1.0f64..1.0, 24),
                ts in proptest::collection::vec(0.0f64..1.0, 10),
            ) {
                // Cells [0,hx]x[0,hy] and [hx,2hx]x[0,hy] share the edge
                // x = hx. Six nodes, four DOFs each; nodes 1 and 4 shared.
                let (hx, hy) = (0.6, 0.9);
                let left = (0.0, 0.0, hx, hy);
                let right = (hx, 0.0, hx, hy);
                // Node order: (0,0),(hx,0),(2hx,0),(0,hy),(hx,hy),(2hx,hy).
                let ld: Vec<usize> = vec![0, 1, 3, 4]; // left cell corners
                let rd: Vec<usize> = vec![1, 2, 4, 5]; // right cell corners
                let local = |nodes: &[usize]| -> [f64; NDOF] {
                    let mut v = [0.0; NDOF];
                    for (c, &n) in nodes.iter().enumerate() {
                        for k in 0..4 {
                            v[c * 4 + k] = dofs[n * 4 + k];
                        }
                    }
                    v
                };
                let lv = local(&ld);
                let rv = local(&rd);
                for t in ts {
                    let p = (hx, t * hy);
                    for (rx, ry, tol) in [(0usize, 0usize, 1e-11), (1, 0, 1e-11)] {
                        let nl = shape_derivatives(left, p, rx, ry);
                        let nr = shape_derivatives(right, p, rx, ry);
                        let ul: f64 = (0..NDOF).map(|k| nl[k] * lv[k]).sum();
                        let ur: f64 = (0..NDOF).map(|k| nr[k] * rv[k]).sum();
                        prop_assert!((ul - ur).abs() <= tol, "jump {} at order ({rx},{ry})", ul - ur);
                    }
                }
            }
        }
    }
}
