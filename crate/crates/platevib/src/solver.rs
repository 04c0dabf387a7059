//! Sparse direct solver for the shifted plate operators: a multifrontal
//! LDL^T factorization for complex *symmetric* (unconjugated) matrices on the
//! tensor-mesh sparsity pattern.
//!
//! Off-the-shelf sparse LU treats the matrix as unsymmetric and runs out of
//! memory on the finest meshes, and Hermitian Cholesky codes conjugate where
//! these matrices must not be.  The structure here is classical nested
//! dissection driven by the mesh geometry: grid lines are width-1 separators
//! of the node adjacency (nodes couple iff they share an active cell; four
//! DOFs per node), each separator owns a dense frontal matrix, children pass
//! their Schur complements up the tree, and the dense update kernel is
//! delegated to `faer`'s matrix multiply.
//!
//! No pivoting is performed.  At the shifts used by the contour quadrature
//! the imaginary part of the operator is sign-definite (`Im F(eta) =
//! -Im(eta) * (B + nonnegative rank-one terms)` with `B` positive definite),
//! a property inherited by every Schur complement, so pivots stay bounded
//! away from zero.  For real shifts near an eigenvalue the factorization can
//! degrade instead of failing cleanly; callers detect that through
//! [`Factor::pivot_ratio`] and the solve-residual check layered above.

use crate::assembly::DofMap;
use crate::mesh::{NodeId, RectMesh};
use crate::sparse::Pattern;
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use num_complex::Complex64;
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("factorization broke down: non-finite or zero pivot (shift coincides with an eigenvalue or overflowed)")]
    NonFinite,
}

/// Leaf threshold for the dissection recursion, in nodes.
const LEAF_NODES: usize = 24;

/// Column-block width for the blocked elimination.
const BLOCK: usize = 64;

/// Column-panel width for the dense symmetric trailing update.
const PANEL: usize = 128;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

struct FrontSym {
    /// Global free-DOF ids: eliminated DOFs (in elimination order) followed
    /// by kept interface DOFs.
    gdofs: Vec<u32>,
    /// Number of eliminated DOFs.
    ne: usize,
    children: Vec<u32>,
    /// Per child: parent-local index of each child kept DOF.
    child_maps: Vec<Vec<u32>>,
    /// Original-matrix scatter: (local row, local elim column, CSC index),
    /// lower part only.
    entries: Vec<(u32, u32, u32)>,
}

/// Elimination tree and scatter maps for one mesh; reusable for every shift.
pub struct Symbolic {
    n: usize,
    fronts: Vec<FrontSym>,
}

/// Grid-index rectangle `[ix0, ix1] x [iy0, iy1]`, inclusive.
type Region = (u32, u32, u32, u32);

struct TreeBuilder<'a> {
    mesh: &'a RectMesh,
    dof_map: &'a DofMap,
    fronts: Vec<FrontSym>,
    /// Kept (interface) nodes per front, needed while wiring parents.
    front_keep: Vec<Vec<(u32, u32)>>,
}

impl<'a> TreeBuilder<'a> {
    /// The node at grid point (ix, iy) if it exists and is interior.
    fn free_node(&self, ix: u32, iy: u32) -> Option<NodeId> {
        let node = self.mesh.node_at_grid(ix, iy)?;
        (!self.mesh.is_boundary(node)).then_some(node)
    }

    /// Whether nodes p and q are coupled, i.e. share an active cell.
    fn coupled(&self, p: (u32, u32), q: (u32, u32)) -> bool {
        let (px, py) = (p.0 as isize, p.1 as isize);
        let (qx, qy) = (q.0 as isize, q.1 as isize);
        if (px - qx).abs() > 1 || (py - qy).abs() > 1 {
            return false;
        }
        for cx in (px.max(qx) - 1)..=px.min(qx) {
            for cy in (py.max(qy) - 1)..=py.min(qy) {
                if self.mesh.cell_active_at(cx, cy) {
                    return true;
                }
            }
        }
        false
    }

    /// Does interior node p couple to any interior node outside the region?
    fn touches_outside(&self, p: (u32, u32), r: Region) -> bool {
        let (ix0, ix1, iy0, iy1) = r;
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let qx = p.0 as isize + dx;
                let qy = p.1 as isize + dy;
                if qx < 0
                    || qy < 0
                    || qx as usize >= self.mesh.x_coords.len()
                    || qy as usize >= self.mesh.y_coords.len()
                {
                    continue;
                }
                let (qx, qy) = (qx as u32, qy as u32);
                if qx >= ix0 && qx <= ix1 && qy >= iy0 && qy <= iy1 {
                    continue;
                }
                if self.free_node(qx, qy).is_some() && self.coupled(p, (qx, qy)) {
                    return true;
                }
            }
        }
        false
    }

    fn interior_nodes_in(&self, r: Region) -> Vec<(u32, u32)> {
        let (ix0, ix1, iy0, iy1) = r;
        let mut out = Vec::new();
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                if self.free_node(ix, iy).is_some() {
                    out.push((ix, iy));
                }
            }
        }
        out
    }

    fn push_front(
        &mut self,
        nodes: Vec<(u32, u32)>,
        keep: Vec<(u32, u32)>,
        children: Vec<u32>,
    ) -> u32 {
        let keep_set: HashSet<(u32, u32)> = keep.iter().copied().collect();
        let mut elim: Vec<(u32, u32)> = nodes
            .iter()
            .copied()
            .filter(|p| !keep_set.contains(p))
            .collect();
        elim.sort_unstable_by_key(|&(ix, iy)| (iy, ix));
        let mut kept = keep;
        kept.sort_unstable_by_key(|&(ix, iy)| (iy, ix));

        let mut gdofs = Vec::with_capacity(4 * (elim.len() + kept.len()));
        for list in [&elim, &kept] {
            for &(ix, iy) in list {
                let node = self.free_node(ix, iy).expect("front node is interior");
                for kind in 0..4 {
                    gdofs.push(self.dof_map.free_index(node, kind).expect("interior DOF"));
                }
            }
        }
        let local: HashMap<u32, u32> = gdofs
            .iter()
            .enumerate()
            .map(|(i, &d)| (d, i as u32))
            .collect();
        let mut child_maps = Vec::with_capacity(children.len());
        for &c in &children {
            let child = &self.fronts[c as usize];
            let map: Vec<u32> = child.gdofs[child.ne..]
                .iter()
                .map(|d| *local.get(d).expect("child interface DOF is in the parent front"))
                .collect();
            child_maps.push(map);
        }
        let ne = 4 * elim.len();
        self.fronts.push(FrontSym {
            gdofs,
            ne,
            children,
            child_maps,
            entries: Vec::new(),
        });
        self.front_keep.push(kept);
        (self.fronts.len() - 1) as u32
    }

    /// Recursive nested dissection; returns the region's root front, if the
    /// region contains any interior node.
    fn dissect(&mut self, r: Region) -> Option<u32> {
        let (ix0, ix1, iy0, iy1) = r;
        let nodes = self.interior_nodes_in(r);
        if nodes.is_empty() {
            return None;
        }
        let keep: Vec<(u32, u32)> = nodes
            .iter()
            .copied()
            .filter(|&p| self.touches_outside(p, r))
            .collect();
        let wx = ix1 - ix0 + 1;
        let wy = iy1 - iy0 + 1;
        if nodes.len() <= LEAF_NODES || (wx <= 2 && wy <= 2) {
            return Some(self.push_front(nodes, keep, Vec::new()));
        }
        // Split the longer axis on its middle grid line; a non-leaf region
        // always has width >= 3 on the split axis, so both halves are
        // well-formed.
        let (c1, c2, sep_nodes) = if wx >= wy {
            let s = (ix0 + ix1) / 2;
            let c1 = self.dissect((ix0, s - 1, iy0, iy1));
            let c2 = self.dissect((s + 1, ix1, iy0, iy1));
            let sep: Vec<(u32, u32)> = (iy0..=iy1)
                .filter(|&iy| self.free_node(s, iy).is_some())
                .map(|iy| (s, iy))
                .collect();
            (c1, c2, sep)
        } else {
            let s = (iy0 + iy1) / 2;
            let c1 = self.dissect((ix0, ix1, iy0, s - 1));
            let c2 = self.dissect((ix0, ix1, s + 1, iy1));
            let sep: Vec<(u32, u32)> = (ix0..=ix1)
                .filter(|&ix| self.free_node(ix, s).is_some())
                .map(|ix| (ix, s))
                .collect();
            (c1, c2, sep)
        };
        let mut front_nodes: Vec<(u32, u32)> = sep_nodes;
        let mut children = Vec::new();
        for c in [c1, c2].into_iter().flatten() {
            front_nodes.extend(self.front_keep[c as usize].iter().copied());
            children.push(c);
        }
        if front_nodes.is_empty() {
            // Bare separator with no interior node and interface-free
            // children: nothing to merge at this level.
            return children.into_iter().next();
        }
        Some(self.push_front(front_nodes, keep, children))
    }
}

impl Symbolic {
    /// Builds the elimination structure for a mesh and wires in the scatter
    /// map from the assembled sparsity pattern.
    pub fn new(mesh: &RectMesh, dof_map: &DofMap, pattern: &Pattern) -> Symbolic {
        assert_eq!(pattern.n(), dof_map.n_free());
        let mut b = TreeBuilder {
            mesh,
            dof_map,
            fronts: Vec::new(),
            front_keep: Vec::new(),
        };
        if dof_map.n_free() > 0 {
            let full = (
                0u32,
                (mesh.x_coords.len() - 1) as u32,
                0u32,
                (mesh.y_coords.len() - 1) as u32,
            );
            let top = b.dissect(full).expect("mesh has interior nodes");
            let t = &b.fronts[top as usize];
            assert_eq!(t.gdofs.len(), t.ne, "top front keeps no interface");
        }
        let mut fronts = b.fronts;

        // Global elimination positions: fronts are already in postorder, so
        // walking them in sequence yields the elimination order.
        let n = dof_map.n_free();
        let mut epos = vec![u32::MAX; n];
        let mut next = 0u32;
        for f in &fronts {
            for &d in &f.gdofs[..f.ne] {
                epos[d as usize] = next;
                next += 1;
            }
        }
        assert_eq!(next as usize, n, "every free DOF eliminated exactly once");

        // Scatter map: each structural entry lands in the front eliminating
        // its earlier endpoint, stored as (later endpoint, earlier column).
        for f in fronts.iter_mut() {
            let local: HashMap<u32, u32> = f
                .gdofs
                .iter()
                .enumerate()
                .map(|(i, &d)| (d, i as u32))
                .collect();
            for lj in 0..f.ne {
                let d = f.gdofs[lj];
                for (k, r) in pattern.column(d as usize) {
                    if epos[r as usize] >= epos[d as usize] {
                        let fi = *local
                            .get(&r)
                            .expect("not-yet-eliminated neighbour belongs to this front");
                        f.entries.push((fi, lj as u32, k as u32));
                    }
                }
            }
        }
        Symbolic { n, fronts }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Bytes held by a completed factorization (L slabs plus diagonals),
    /// useful for sizing caches.
    pub fn factor_bytes(&self) -> usize {
        self.fronts
            .iter()
            .map(|f| (f.gdofs.len() * f.ne + f.ne) * std::mem::size_of::<Complex64>())
            .sum()
    }

    /// Numeric factorization of the matrix whose pattern values are `values`.
    pub fn factor(&self, values: &[Complex64]) -> Result<Factor<'_>, SolverError> {
        let mut slabs: Vec<Mat<Complex64>> = Vec::with_capacity(self.fronts.len());
        let mut diags: Vec<Vec<Complex64>> = Vec::with_capacity(self.fronts.len());
        let mut schur: Vec<Option<Mat<Complex64>>> = vec![None; self.fronts.len()];
        let mut pivot_min = f64::INFINITY;
        let mut pivot_max = 0.0f64;

        for (fi, f) in self.fronts.iter().enumerate() {
            let nf = f.gdofs.len();
            let ne = f.ne;
            let mut front: Mat<Complex64> = Mat::zeros(nf, nf);
            for &(i, j, k) in &f.entries {
                front[(i as usize, j as usize)] += values[k as usize];
            }
            // Extend-add the children's Schur complements (lower parts); the
            // parent-local order may invert a pair, in which case the entry
            // reflects back into the lower triangle by symmetry.
            for (ci, &c) in f.children.iter().enumerate() {
                let s = schur[c as usize]
                    .take()
                    .expect("child Schur complement available");
                let map = &f.child_maps[ci];
                for cj in 0..map.len() {
                    let pj = map[cj] as usize;
                    for ci2 in cj..map.len() {
                        let pi = map[ci2] as usize;
                        let (lo, hi) = if pi >= pj { (pj, pi) } else { (pi, pj) };
                        front[(hi, lo)] += s[(ci2, cj)];
                    }
                }
            }
            let (lo, hi) = eliminate(&mut front, ne);
            pivot_min = pivot_min.min(lo);
            pivot_max = pivot_max.max(hi);

            // Persist L and D, hand the Schur block to the parent, drop the
            // rest of the front.
            let mut slab = Mat::zeros(nf, ne);
            let mut d = vec![ZERO; ne];
            for j in 0..ne {
                d[j] = front[(j, j)];
                for i in j + 1..nf {
                    slab[(i, j)] = front[(i, j)];
                }
            }
            if d
                .iter()
                .any(|v| !v.re.is_finite() || !v.im.is_finite() || *v == ZERO)
            {
                return Err(SolverError::NonFinite);
            }
            let nk = nf - ne;
            if nk > 0 {
                let mut s = Mat::zeros(nk, nk);
                for j in 0..nk {
                    for i in j..nk {
                        s[(i, j)] = front[(ne + i, ne + j)];
                    }
                }
                schur[fi] = Some(s);
            }
            slabs.push(slab);
            diags.push(d);
        }
        Ok(Factor {
            sym: self,
            slabs,
            diags,
            pivot_min,
            pivot_max,
        })
    }
}

/// In-place partial LDL^T (unconjugated) of the leading `ne` columns of a
/// dense front.  Only the lower triangle is referenced or kept valid.
/// Returns (min, max) pivot magnitudes.
fn eliminate(front: &mut Mat<Complex64>, ne: usize) -> (f64, f64) {
    let nf = front.nrows();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    if ne == 0 {
        return (lo, hi);
    }
    // Scratch: the raw (undivided) current column, and the W = L*D / L pair
    // feeding the blocked trailing update.
    let mut wcol = vec![ZERO; nf];
    let mut w = Mat::<Complex64>::zeros(nf, BLOCK);
    let mut lmat = Mat::<Complex64>::zeros(nf, BLOCK);
    let mut b0 = 0;
    while b0 < ne {
        let kb = BLOCK.min(ne - b0);
        // Factor the panel of columns b0..b0+kb right-looking over the full
        // height, restricting updates to columns inside the block; columns
        // beyond it are updated by one dense multiply afterwards.
        for j in b0..b0 + kb {
            let dj = front[(j, j)];
            let a = dj.norm();
            lo = lo.min(a);
            hi = hi.max(a);
            let inv = Complex64::new(1.0, 0.0) / dj;
            for i in j + 1..nf {
                let raw = front[(i, j)];
                wcol[i] = raw;
                front[(i, j)] = raw * inv;
            }
            for t in j + 1..b0 + kb {
                let wt = wcol[t];
                if wt != ZERO {
                    for i in t..nf {
                        let lij = front[(i, j)];
                        front[(i, t)] -= lij * wt;
                    }
                }
            }
        }
        let t0 = b0 + kb;
        if t0 < nf {
            // W[:, j] = L[:, j] * d_j below the block; the front diagonal
            // still holds the pivots, so d_j is available in place.
            for j in 0..kb {
                let dj = front[(b0 + j, b0 + j)];
                for i in t0..nf {
                    let l = front[(i, b0 + j)];
                    lmat[(i, j)] = l;
                    w[(i, j)] = l * dj;
                }
            }
            // Trailing update S -= W L^T by column panels; the strictly
            // upper parts of the written rectangles are never read again.
            let mut c0 = t0;
            while c0 < nf {
                let c1 = (c0 + PANEL).min(nf);
                let dst = front.submatrix_mut(c0, c0, nf - c0, c1 - c0);
                let lhs = w.submatrix(c0, 0, nf - c0, kb);
                let rhs = lmat.submatrix(c0, 0, c1 - c0, kb);
                matmul(
                    dst,
                    Accum::Add,
                    lhs,
                    rhs.transpose(),
                    Complex64::new(-1.0, 0.0),
                    Par::Seq,
                );
                c0 = c1;
            }
        }
        b0 += kb;
    }
    (lo, hi)
}

/// A completed factorization; borrows its symbolic structure.
pub struct Factor<'a> {
    sym: &'a Symbolic,
    slabs: Vec<Mat<Complex64>>,
    diags: Vec<Vec<Complex64>>,
    pivot_min: f64,
    pivot_max: f64,
}

impl Factor<'_> {
    /// min |pivot| / max |pivot|: a cheap lower bound on the reciprocal
    /// condition number.  Near-zero flags a (near-)singular shift.
    pub fn pivot_ratio(&self) -> f64 {
        if self.pivot_max == 0.0 {
            return 0.0;
        }
        self.pivot_min / self.pivot_max
    }

    /// Solves `F x = b` in place, overwriting `b` with `x`.
    pub fn solve_in_place(&self, x: &mut [Complex64]) {
        assert_eq!(x.len(), self.sym.n);
        // Forward sweep L w = b in postorder; the unit diagonal is implicit.
        for (f, slab) in self.sym.fronts.iter().zip(&self.slabs) {
            let nf = f.gdofs.len();
            for t in 0..f.ne {
                let wt = x[f.gdofs[t] as usize];
                if wt == ZERO {
                    continue;
                }
                for i in t + 1..nf {
                    x[f.gdofs[i] as usize] -= slab[(i, t)] * wt;
                }
            }
        }
        for (f, d) in self.sym.fronts.iter().zip(&self.diags) {
            for t in 0..f.ne {
                x[f.gdofs[t] as usize] /= d[t];
            }
        }
        // Backward sweep L^T x = w in reverse postorder.
        for (f, slab) in self.sym.fronts.iter().zip(&self.slabs).rev() {
            let nf = f.gdofs.len();
            for t in (0..f.ne).rev() {
                let mut acc = ZERO;
                for i in t + 1..nf {
                    acc += slab[(i, t)] * x[f.gdofs[i] as usize];
                }
                x[f.gdofs[t] as usize] -= acc;
            }
        }
    }
}
