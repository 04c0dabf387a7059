//! Global assembly: sparse stiffness `A`, mass `B`, and the oscillator
//! coupling data, with clamped boundary conditions eliminated symmetrically.
//!
//! On axis-aligned edges the clamped condition `u = du/dn = 0` forces the
//! tangential and mixed derivatives to vanish as well, so all four DOF kinds
//! at boundary nodes are removed from the system (pure deletion, no penalty).
//! Since every oscillator attachment point is a mesh node, its evaluation
//! vector `e_j` is a unit coordinate vector on that node's value DOF and the
//! rank-one coupling `M_j e_j e_j^T` never needs explicit storage.

use crate::element::{self, NDOF};
use crate::mesh::{CellId, MeshError, NodeId, RectMesh};
use crate::sparse::{self, Pattern};
use thiserror::Error;

/// Physical description: plate constants plus point oscillators.
#[derive(Clone, Debug)]
pub struct PlateProblem {
    /// Flexural rigidity R.
    pub rigidity: f64,
    /// Poisson ratio, in (0, 1/2).
    pub poisson: f64,
    /// Areal mass density rho * d.
    pub rho_d: f64,
    pub oscillators: Vec<Oscillator>,
}

/// One mass-spring oscillator attached at an interior plate point.
#[derive(Clone, Copy, Debug)]
pub struct Oscillator {
    pub mass: f64,
    pub stiffness: f64,
    pub x: f64,
    pub y: f64,
}

impl Oscillator {
    /// Pole of the rational coupling term: sigma = K / M.
    pub fn sigma(&self) -> f64 {
        self.stiffness / self.mass
    }
}

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("invalid problem data: {0}")]
    BadProblem(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("oscillator {index} at ({x}, {y}) sits on a constrained boundary node; its coupling would vanish identically")]
    OscillatorOnBoundary { index: usize, x: f64, y: f64 },
    #[error("problem too large for the dense path: {n} unknowns exceeds the {guard} guard")]
    TooLargeForDense { n: usize, guard: usize },
}

impl PlateProblem {
    pub fn validate(&self) -> Result<(), AssemblyError> {
        if !(self.rigidity > 0.0) {
            return Err(AssemblyError::BadProblem("rigidity must be positive".into()));
        }
        if !(self.poisson > 0.0 && self.poisson < 0.5) {
            return Err(AssemblyError::BadProblem(
                "Poisson ratio must lie in (0, 1/2)".into(),
            ));
        }
        if !(self.rho_d > 0.0) {
            return Err(AssemblyError::BadProblem("areal density must be positive".into()));
        }
        for (i, o) in self.oscillators.iter().enumerate() {
            if !(o.mass > 0.0 && o.stiffness > 0.0) {
                return Err(AssemblyError::BadProblem(format!(
                    "oscillator {i} needs positive mass and stiffness"
                )));
            }
        }
        for i in 0..self.oscillators.len() {
            for j in i + 1..self.oscillators.len() {
                let (a, b) = (&self.oscillators[i], &self.oscillators[j]);
                if a.x == b.x && a.y == b.y {
                    return Err(AssemblyError::BadProblem(format!(
                        "oscillators {i} and {j} share the attachment point ({}, {})",
                        a.x, a.y
                    )));
                }
            }
        }
        Ok(())
    }

    /// Attachment points, in oscillator order.
    pub fn attachment_points(&self) -> Vec<(f64, f64)> {
        self.oscillators.iter().map(|o| (o.x, o.y)).collect()
    }
}

/// Free-DOF numbering: all four DOF kinds at interior nodes are free, all
/// four at boundary nodes constrained.
#[derive(Clone, Debug)]
pub struct DofMap {
    /// `node_id * 4 + kind` -> free index, or `u32::MAX` when constrained.
    index: Vec<u32>,
    n_free: usize,
}

pub const CONSTRAINED: u32 = u32::MAX;

impl DofMap {
    pub fn n_free(&self) -> usize {
        self.n_free
    }

    /// Free index of (node, kind 0..3), or None if constrained.
    pub fn free_index(&self, node: NodeId, kind: usize) -> Option<u32> {
        let v = self.index[node.0 as usize * 4 + kind];
        (v != CONSTRAINED).then_some(v)
    }

    /// Node id and DOF kind owning a free index.
    pub fn node_of_free(&self, free: u32) -> (NodeId, usize) {
        // Free indices are assigned in (node, kind) order, 4 per interior
        // node, so the owner is recoverable by position.
        let slot = self
            .index
            .iter()
            .position(|&v| v == free)
            .expect("free index in range");
        (NodeId((slot / 4) as u32), slot % 4)
    }
}

/// Numbers the free DOFs of a mesh in (node id, kind) order.
pub fn build_dof_map(mesh: &RectMesh) -> DofMap {
    let mut index = vec![CONSTRAINED; mesh.node_count() * 4];
    let mut next = 0u32;
    for id in 0..mesh.node_count() as u32 {
        if !mesh.is_boundary(NodeId(id)) {
            for k in 0..4 {
                index[id as usize * 4 + k] = next;
                next += 1;
            }
        }
    }
    DofMap { index, n_free: next as usize }
}

/// One oscillator reduced to assembled form: the free index of the value DOF
/// at its attachment node, plus its mass and pole.
#[derive(Clone, Copy, Debug)]
pub struct PointTerm {
    pub dof: u32,
    pub mass: f64,
    pub sigma: f64,
}

/// Assembled sparse operators on the free DOFs.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub pattern: Pattern,
    /// Stiffness values on the shared pattern.
    pub a: Vec<f64>,
    /// Mass values on the shared pattern.
    pub b: Vec<f64>,
    pub point_terms: Vec<PointTerm>,
}

impl AssembledSystem {
    pub fn n_free(&self) -> usize {
        self.pattern.n()
    }

    /// Dense unit vector e_j for a point term (oracle/test use).
    pub fn e_dense(&self, term: &PointTerm) -> Vec<f64> {
        let mut e = vec![0.0; self.n_free()];
        e[term.dof as usize] = 1.0;
        e
    }

    /// Coordinate text export of A or B for external verification.
    pub fn coo_text(&self, which: Matrix) -> String {
        match which {
            Matrix::Stiffness => sparse::to_coo_text(&self.pattern, &self.a),
            Matrix::Mass => sparse::to_coo_text(&self.pattern, &self.b),
        }
    }
}

#[derive(Copy, Clone, Debug)]
pub enum Matrix {
    Stiffness,
    Mass,
}

/// Assembles A, B and the oscillator point terms on the free DOFs.
pub fn assemble(
    mesh: &RectMesh,
    problem: &PlateProblem,
    dof_map: &DofMap,
) -> Result<AssembledSystem, AssemblyError> {
    problem.validate()?;
    let mut idx: Vec<(u32, u32)> = Vec::new();
    let mut va: Vec<f64> = Vec::new();
    let mut vb: Vec<f64> = Vec::new();
    for c in 0..mesh.cell_count() {
        let cell = CellId(c as u32);
        let (_, _, hx, hy) = mesh.cell_geometry(cell);
        let k_loc = element::local_stiffness(problem.rigidity, problem.poisson, hx, hy)
            .map_err(|e| AssemblyError::BadProblem(e.to_string()))?;
        let m_loc = element::local_mass(problem.rho_d, hx, hy)
            .map_err(|e| AssemblyError::BadProblem(e.to_string()))?;
        let corners = mesh.cell_corner_nodes(cell);
        // Map the 16 local DOFs to free indices (None = constrained).
        let mut gdof = [None; NDOF];
        for (cn, &node) in corners.iter().enumerate() {
            for k in 0..4 {
                gdof[cn * 4 + k] = dof_map.free_index(node, k);
            }
        }
        for i in 0..NDOF {
            let Some(gi) = gdof[i] else { continue };
            for j in 0..NDOF {
                let Some(gj) = gdof[j] else { continue };
                idx.push((gi, gj));
                va.push(k_loc[i][j]);
                vb.push(m_loc[i][j]);
            }
        }
    }
    let (pattern, streams) = sparse::compress_triplets(dof_map.n_free(), &idx, &[&va, &vb]);
    let mut it = streams.into_iter();
    let a = it.next().unwrap();
    let b = it.next().unwrap();

    let mut point_terms = Vec::new();
    let tol = 1e-9 * mesh.domain().diameter();
    for (j, osc) in problem.oscillators.iter().enumerate() {
        let node = mesh.locate_node((osc.x, osc.y), tol)?;
        let Some(dof) = dof_map.free_index(node, 0) else {
            return Err(AssemblyError::OscillatorOnBoundary { index: j, x: osc.x, y: osc.y });
        };
        point_terms.push(PointTerm { dof, mass: osc.mass, sigma: osc.sigma() });
    }
    Ok(AssembledSystem { pattern, a, b, point_terms })
}

/// Size guard for dense eigensolves (oracle and smoke checks).
pub const DENSE_GUARD: usize = 3000;

/// Smallest eigenvalue of the linear pencil `A u = lambda B u` (no
/// oscillators involved), computed densely.  For the clamped unit square with
/// R = rho_d = 1 this approaches the known constant ~1294.934.
pub fn rayleigh_linear_smoke(system: &AssembledSystem) -> Result<f64, AssemblyError> {
    let evs = linear_pencil_eigenvalues(system)?;
    Ok(evs[0])
}

/// All eigenvalues of `A u = lambda B u`, ascending, via the dense symmetric
/// reduction `L^-1 A L^-T` with `B = L L^T`.
pub fn linear_pencil_eigenvalues(system: &AssembledSystem) -> Result<Vec<f64>, AssemblyError> {
    let n = system.n_free();
    if n > DENSE_GUARD {
        return Err(AssemblyError::TooLargeForDense { n, guard: DENSE_GUARD });
    }
    let a = sparse::to_dense_real(&system.pattern, &system.a);
    let b = sparse::to_dense_real(&system.pattern, &system.b);
    // B is positive definite (consistent mass), so Cholesky must succeed.
    let chol = b
        .llt(faer::Side::Lower)
        .map_err(|_| AssemblyError::BadProblem("mass matrix is not positive definite".into()))?;
    let l = chol.L();
    // C = L^-1 A L^-T stays symmetric with the same eigenvalues as (A, B).
    let mut c = a.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(
        l.as_ref(),
        c.as_mut(),
        faer::Par::Seq,
    );
    let mut ct = c.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(
        l.as_ref(),
        ct.as_mut(),
        faer::Par::Seq,
    );
    let mut evs: Vec<f64> = ct
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| AssemblyError::BadProblem(format!("dense eigensolve failed: {e:?}")))?;
    evs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(evs)
}

/// Evaluates a finite-element function (value and derivatives) given by free
/// DOFs at an arbitrary plate point; constrained DOFs are zero.
pub fn fe_eval(
    mesh: &RectMesh,
    dof_map: &DofMap,
    free: &[f64],
    x: f64,
    y: f64,
) -> (f64, f64, f64, f64) {
    // Pick the grid interval left of the point (right-closed at the top) so
    // points on grid lines evaluate from a well-defined side; continuity of
    // the C1 space makes the side irrelevant.
    let pick = |lines: &[f64], v: f64| -> usize {
        match lines.binary_search_by(|p| p.partial_cmp(&v).unwrap()) {
            Ok(i) => i.saturating_sub(1).min(lines.len() - 2),
            Err(i) => (i - 1).min(lines.len() - 2),
        }
    };
    let i = pick(&mesh.x_coords, x);
    let j = pick(&mesh.y_coords, y);
    assert!(
        mesh.cell_active_at(i as isize, j as isize),
        "evaluation point ({x}, {y}) is outside the plate"
    );
    let cell_geom = (
        mesh.x_coords[i],
        mesh.y_coords[j],
        mesh.x_coords[i + 1] - mesh.x_coords[i],
        mesh.y_coords[j + 1] - mesh.y_coords[j],
    );
    let corners = [
        (i as u32, j as u32),
        (i as u32 + 1, j as u32),
        (i as u32, j as u32 + 1),
        (i as u32 + 1, j as u32 + 1),
    ];
    let mut local = [0.0; NDOF];
    for (cn, &(gi, gj)) in corners.iter().enumerate() {
        if let Some(node) = mesh.node_at_grid(gi, gj) {
            for k in 0..4 {
                if let Some(f) = dof_map.free_index(node, k) {
                    local[cn * 4 + k] = free[f as usize];
                }
            }
        }
    }
    let mut out = [0.0; 4];
    for (slot, (rx, ry)) in [(0, 0), (1, 0), (0, 1), (1, 1)].iter().enumerate() {
        let sh = element::shape_derivatives(cell_geom, (x, y), *rx, *ry);
        out[slot] = (0..NDOF).map(|k| sh[k] * local[k]).sum();
    }
    (out[0], out[1], out[2], out[3])
}

/// Transfers a free-DOF vector from a mesh to its refinement by evaluating
/// the coarse function's DOF data at every fine interior node.
pub fn prolong(
    coarse_mesh: &RectMesh,
    coarse_map: &DofMap,
    coarse_free: &[f64],
    fine_mesh: &RectMesh,
    fine_map: &DofMap,
) -> Vec<f64> {
    let mut out = vec![0.0; fine_map.n_free()];
    for id in 0..fine_mesh.node_count() as u32 {
        let node = NodeId(id);
        if fine_mesh.is_boundary(node) {
            continue;
        }
        let (x, y) = fine_mesh.node_coord(node);
        let (u, ux, uy, uxy) = fe_eval(coarse_mesh, coarse_map, coarse_free, x, y);
        for (k, v) in [u, ux, uy, uxy].into_iter().enumerate() {
            if let Some(f) = fine_map.free_index(node, k) {
                out[f as usize] = v;
            }
        }
    }
    out
}
