//! Tensor-product rectangular meshes over axis-aligned polygonal plates.
//!
//! The plate is described as a union of axis-aligned rectangles overlapping at
//! most along edges.  A mesh is a pair of sorted grid-line arrays plus the set
//! of grid cells lying inside the plate.  Grid lines are laid out uniformly at
//! the target spacing and then any coordinate that must be a node (oscillator
//! attachment points, rectangle edges that fall off the uniform raster) is
//! inserted as an extra line, so attachment points are always mesh nodes and
//! uniform refinement (interval bisection) preserves that property.

use thiserror::Error;

/// Node handle: dense, zero-based, stable for identical construction inputs.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

/// Cell handle: index into the active-cell list.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId(pub u32);

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    fn contains_closed(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }
}

/// Plate geometry: a connected union of axis-aligned rectangles that overlap
/// at most along edges.
#[derive(Clone, Debug)]
pub struct PlateDomain {
    rects: Vec<Rect>,
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("point ({0}, {1}) lies outside the plate")]
    PointOutsideDomain(f64, f64),
    #[error("point ({0}, {1}) lies on the plate boundary where the deflection vanishes")]
    PointOnBoundary(f64, f64),
    #[error("no mesh node within {tol} of ({x}, {y})")]
    NoNodeNear { x: f64, y: f64, tol: f64 },
    #[error("more than one mesh node within {tol} of ({x}, {y})")]
    AmbiguousNode { x: f64, y: f64, tol: f64 },
}

impl PlateDomain {
    /// Validates rectangle list: well-formed, interior-disjoint, connected.
    pub fn new(rects: Vec<Rect>) -> Result<Self, MeshError> {
        if rects.is_empty() {
            return Err(MeshError::InvalidDomain("no rectangles given".into()));
        }
        for (i, r) in rects.iter().enumerate() {
            if !(r.x0 < r.x1 && r.y0 < r.y1) || !r.x0.is_finite() || !r.x1.is_finite()
                || !r.y0.is_finite() || !r.y1.is_finite()
            {
                return Err(MeshError::InvalidDomain(format!(
                    "rectangle {i} is degenerate or not finite"
                )));
            }
        }
        // Interiors must be pairwise disjoint (edge contact is fine).
        let tol = 1e-12 * Self::diameter_of(&rects);
        for i in 0..rects.len() {
            for j in i + 1..rects.len() {
                let (a, b) = (&rects[i], &rects[j]);
                let dx = a.x1.min(b.x1) - a.x0.max(b.x0);
                let dy = a.y1.min(b.y1) - a.y0.max(b.y0);
                if dx > tol && dy > tol {
                    return Err(MeshError::InvalidDomain(format!(
                        "rectangles {i} and {j} overlap in the interior"
                    )));
                }
            }
        }
        // The union must be connected: rectangles sharing a boundary segment
        // of positive length count as adjacent.
        let n = rects.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if seen[j] {
                    continue;
                }
                let (a, b) = (&rects[i], &rects[j]);
                let dx = a.x1.min(b.x1) - a.x0.max(b.x0);
                let dy = a.y1.min(b.y1) - a.y0.max(b.y0);
                let touch = (dx.abs() <= tol && dy > tol) || (dy.abs() <= tol && dx > tol);
                if touch {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(MeshError::InvalidDomain("rectangle union is disconnected".into()));
        }
        Ok(PlateDomain { rects })
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    fn diameter_of(rects: &[Rect]) -> f64 {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for r in rects {
            lo.0 = lo.0.min(r.x0);
            lo.1 = lo.1.min(r.y0);
            hi.0 = hi.0.max(r.x1);
            hi.1 = hi.1.max(r.y1);
        }
        ((hi.0 - lo.0).powi(2) + (hi.1 - lo.1).powi(2)).sqrt()
    }

    /// Diagonal of the bounding box; the length scale for tolerances.
    pub fn diameter(&self) -> f64 {
        Self::diameter_of(&self.rects)
    }

    /// Total plate area (rectangles only overlap on edges, so areas add).
    pub fn area(&self) -> f64 {
        self.rects.iter().map(|r| (r.x1 - r.x0) * (r.y1 - r.y0)).sum()
    }

    /// Membership in the closed union.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.rects.iter().any(|r| r.contains_closed(x, y))
    }

    /// Membership in the open interior, decided geometrically by probing the
    /// four diagonal directions at a scale well below any feature size.
    pub fn strictly_inside(&self, x: f64, y: f64) -> bool {
        if !self.contains(x, y) {
            return false;
        }
        let eps = 1e-9 * self.diameter();
        [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
            .iter()
            .all(|&(sx, sy)| self.contains(x + sx * eps, y + sy * eps))
    }
}

/// Tensor-product mesh: sorted grid lines plus the active cells inside the
/// plate.  Nodes are grid points incident to at least one active cell.
#[derive(Clone, Debug)]
pub struct RectMesh {
    domain: PlateDomain,
    /// Sorted x grid lines.
    pub x_coords: Vec<f64>,
    /// Sorted y grid lines.
    pub y_coords: Vec<f64>,
    /// Active cells as (i, j) grid-interval indices, sorted by (j, i).
    pub cells: Vec<(u32, u32)>,
    /// Per grid-cell activity, indexed `i + j * (nx - 1)`.
    active: Vec<bool>,
    /// Grid point -> node id (None for grid points outside the plate).
    node_of_grid: Vec<Option<NodeId>>,
    /// Node id -> grid point (ix, iy).
    grid_of_node: Vec<(u32, u32)>,
    /// Node id -> lies on the plate boundary.
    boundary: Vec<bool>,
    /// Largest edge length over active cells.
    pub h_max: f64,
    /// Coordinates that must persist as grid lines under refinement.
    required_x: Vec<f64>,
    required_y: Vec<f64>,
}

/// Builds a mesh with near-uniform spacing `h_target`; every `required_point`
/// (oscillator attachment) becomes a mesh node by inserting its coordinates
/// as grid lines when they miss the uniform raster.
pub fn build_mesh(
    domain: &PlateDomain,
    h_target: f64,
    required_points: &[(f64, f64)],
) -> Result<RectMesh, MeshError> {
    if !(h_target > 0.0) || !h_target.is_finite() {
        return Err(MeshError::BadParameter(format!(
            "mesh spacing must be positive, got {h_target}"
        )));
    }
    for &(x, y) in required_points {
        if !domain.contains(x, y) {
            return Err(MeshError::PointOutsideDomain(x, y));
        }
        if !domain.strictly_inside(x, y) {
            return Err(MeshError::PointOnBoundary(x, y));
        }
    }
    let snap = 1e-12 * domain.diameter();
    let axis = |lo: f64, hi: f64, must: &[f64]| -> Vec<f64> {
        // Uniform raster with n = ceil(span / h) equal steps ...
        let n = ((hi - lo) / h_target).ceil().max(1.0) as usize;
        let step = (hi - lo) / n as f64;
        let mut lines: Vec<f64> = (0..=n).map(|k| lo + k as f64 * step).collect();
        lines[n] = hi;
        // ... plus every coordinate that has to be a grid line exactly.
        for &m in must {
            if !lines.iter().any(|&v| (v - m).abs() <= snap) {
                lines.push(m);
            }
        }
        lines.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lines
    };
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for r in domain.rects() {
        lo.0 = lo.0.min(r.x0);
        lo.1 = lo.1.min(r.y0);
        hi.0 = hi.0.max(r.x1);
        hi.1 = hi.1.max(r.y1);
    }
    // Rectangle edges must be grid lines so that no cell straddles the plate
    // boundary; required points must be grid lines so they are nodes.
    let mut must_x: Vec<f64> = domain.rects().iter().flat_map(|r| [r.x0, r.x1]).collect();
    let mut must_y: Vec<f64> = domain.rects().iter().flat_map(|r| [r.y0, r.y1]).collect();
    must_x.extend(required_points.iter().map(|p| p.0));
    must_y.extend(required_points.iter().map(|p| p.1));
    let x_coords = axis(lo.0, hi.0, &must_x);
    let y_coords = axis(lo.1, hi.1, &must_y);
    let required_x: Vec<f64> = required_points.iter().map(|p| p.0).collect();
    let required_y: Vec<f64> = required_points.iter().map(|p| p.1).collect();
    Ok(RectMesh::from_lines(
        domain.clone(),
        x_coords,
        y_coords,
        required_x,
        required_y,
    ))
}

/// Splits every cell into four by bisecting each grid interval; old grid
/// lines persist bitwise, so old nodes keep their exact coordinates.
pub fn refine(mesh: &RectMesh) -> RectMesh {
    let bisect = |lines: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * lines.len() - 1);
        for w in lines.windows(2) {
            out.push(w[0]);
            out.push(0.5 * (w[0] + w[1]));
        }
        out.push(*lines.last().unwrap());
        out
    };
    RectMesh::from_lines(
        mesh.domain.clone(),
        bisect(&mesh.x_coords),
        bisect(&mesh.y_coords),
        mesh.required_x.clone(),
        mesh.required_y.clone(),
    )
}

impl RectMesh {
    fn from_lines(
        domain: PlateDomain,
        x_coords: Vec<f64>,
        y_coords: Vec<f64>,
        required_x: Vec<f64>,
        required_y: Vec<f64>,
    ) -> RectMesh {
        let nx = x_coords.len();
        let ny = y_coords.len();
        let ncx = nx - 1;
        let ncy = ny - 1;
        // A cell is active iff its center lies in the plate; since rectangle
        // edges are grid lines, cells never straddle the boundary and the
        // center test is exact.
        let mut active = vec![false; ncx * ncy];
        let mut cells = Vec::new();
        let mut h_max = 0.0f64;
        for j in 0..ncy {
            for i in 0..ncx {
                let cx = 0.5 * (x_coords[i] + x_coords[i + 1]);
                let cy = 0.5 * (y_coords[j] + y_coords[j + 1]);
                if domain.contains(cx, cy) {
                    active[i + j * ncx] = true;
                    cells.push((i as u32, j as u32));
                    h_max = h_max
                        .max(x_coords[i + 1] - x_coords[i])
                        .max(y_coords[j + 1] - y_coords[j]);
                }
            }
        }
        // Nodes: grid points incident to an active cell, numbered in (j, i)
        // lexicographic order for stability.
        let is_active =
            |i: isize, j: isize| -> bool {
                i >= 0 && j >= 0 && (i as usize) < ncx && (j as usize) < ncy
                    && active[i as usize + j as usize * ncx]
            };
        let mut node_of_grid = vec![None; nx * ny];
        let mut grid_of_node = Vec::new();
        let mut boundary = Vec::new();
        for j in 0..ny as isize {
            for i in 0..nx as isize {
                let incident = is_active(i - 1, j - 1)
                    || is_active(i, j - 1)
                    || is_active(i - 1, j)
                    || is_active(i, j);
                if !incident {
                    continue;
                }
                let id = NodeId(grid_of_node.len() as u32);
                node_of_grid[i as usize + j as usize * nx] = Some(id);
                grid_of_node.push((i as u32, j as u32));
                // Geometric boundary test: the node is interior iff all four
                // diagonal probes at the incident cell-center scale stay in
                // the plate.  Probes use the adjacent interval widths, so for
                // grid-aligned rectangle unions this is exact.
                let quadrant_in = |di: isize, dj: isize| -> bool {
                    let (iu, ju) = (i + di, j + dj);
                    if iu < 0 || ju < 0 || iu as usize >= ncx || ju as usize >= ncy {
                        return false;
                    }
                    let qx = 0.5 * (x_coords[iu as usize] + x_coords[iu as usize + 1]);
                    let qy = 0.5 * (y_coords[ju as usize] + y_coords[ju as usize + 1]);
                    domain.contains(qx, qy)
                };
                let interior =
                    quadrant_in(-1, -1) && quadrant_in(0, -1) && quadrant_in(-1, 0) && quadrant_in(0, 0);
                boundary.push(!interior);
            }
        }
        RectMesh {
            domain,
            x_coords,
            y_coords,
            cells,
            active,
            node_of_grid,
            grid_of_node,
            boundary,
            h_max,
            required_x,
            required_y,
        }
    }

    pub fn domain(&self) -> &PlateDomain {
        &self.domain
    }

    /// Whether grid cell (i, j) exists and lies inside the plate; accepts
    /// out-of-range indices for stencil queries.
    pub fn cell_active_at(&self, i: isize, j: isize) -> bool {
        let ncx = self.x_coords.len() - 1;
        let ncy = self.y_coords.len() - 1;
        i >= 0 && j >= 0 && (i as usize) < ncx && (j as usize) < ncy
            && self.active[i as usize + j as usize * ncx]
    }

    pub fn node_count(&self) -> usize {
        self.grid_of_node.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Grid coordinates (ix, iy) of a node.
    pub fn node_grid(&self, n: NodeId) -> (u32, u32) {
        self.grid_of_node[n.0 as usize]
    }

    /// Physical coordinates of a node.
    pub fn node_coord(&self, n: NodeId) -> (f64, f64) {
        let (i, j) = self.grid_of_node[n.0 as usize];
        (self.x_coords[i as usize], self.y_coords[j as usize])
    }

    /// Node at grid point (ix, iy), if that grid point belongs to the plate.
    pub fn node_at_grid(&self, ix: u32, iy: u32) -> Option<NodeId> {
        self.node_of_grid[ix as usize + iy as usize * self.x_coords.len()]
    }

    pub fn is_boundary(&self, n: NodeId) -> bool {
        self.boundary[n.0 as usize]
    }

    /// Node ids on the plate boundary, ascending.
    pub fn boundary_nodes(&self) -> Vec<NodeId> {
        (0..self.node_count() as u32)
            .map(NodeId)
            .filter(|&n| self.is_boundary(n))
            .collect()
    }

    /// Cell extent: (x0, y0, hx, hy).
    pub fn cell_geometry(&self, c: CellId) -> (f64, f64, f64, f64) {
        let (i, j) = self.cells[c.0 as usize];
        let (i, j) = (i as usize, j as usize);
        (
            self.x_coords[i],
            self.y_coords[j],
            self.x_coords[i + 1] - self.x_coords[i],
            self.y_coords[j + 1] - self.y_coords[j],
        )
    }

    /// Corner nodes of a cell in the order (x0,y0), (x1,y0), (x0,y1), (x1,y1),
    /// matching the local element corner numbering.
    pub fn cell_corner_nodes(&self, c: CellId) -> [NodeId; 4] {
        let (i, j) = self.cells[c.0 as usize];
        let get = |di: u32, dj: u32| self.node_at_grid(i + di, j + dj).expect("corner node exists");
        [get(0, 0), get(1, 0), get(0, 1), get(1, 1)]
    }

    /// The active cell containing a strictly interior point, if any.
    pub fn cell_containing(&self, x: f64, y: f64) -> Option<CellId> {
        let find = |lines: &[f64], v: f64| -> Option<usize> {
            if v < lines[0] || v > *lines.last().unwrap() {
                return None;
            }
            // Interval index with v in [lines[i], lines[i+1]]; right-closed at the end.
            let i = match lines.binary_search_by(|p| p.partial_cmp(&v).unwrap()) {
                Ok(i) => i.min(lines.len() - 2),
                Err(i) => i - 1,
            };
            Some(i)
        };
        let i = find(&self.x_coords, x)?;
        let j = find(&self.y_coords, y)?;
        let ncx = self.x_coords.len() - 1;
        if self.active[i + j * ncx] {
            // Map grid (i, j) to the cell list index; the list is sorted by
            // (j, i), so search with that key order.
            let idx = self
                .cells
                .binary_search_by_key(&(j as u32, i as u32), |&(ci, cj)| (cj, ci))
                .ok()?;
            Some(CellId(idx as u32))
        } else {
            None
        }
    }

    /// Unique node within `tol` of `p`.
    pub fn locate_node(&self, p: (f64, f64), tol: f64) -> Result<NodeId, MeshError> {
        if tol < 0.0 {
            return Err(MeshError::BadParameter("negative tolerance".into()));
        }
        let mut hits = Vec::new();
        let near = |lines: &[f64], v: f64| -> Vec<usize> {
            lines
                .iter()
                .enumerate()
                .filter(|(_, &c)| (c - v).abs() <= tol)
                .map(|(i, _)| i)
                .collect()
        };
        for i in near(&self.x_coords, p.0) {
            for j in near(&self.y_coords, p.1) {
                let dx = self.x_coords[i] - p.0;
                let dy = self.y_coords[j] - p.1;
                if dx * dx + dy * dy <= tol * tol {
                    if let Some(n) = self.node_at_grid(i as u32, j as u32) {
                        hits.push(n);
                    }
                }
            }
        }
        match hits.len() {
            0 => Err(MeshError::NoNodeNear { x: p.0, y: p.1, tol }),
            1 => Ok(hits[0]),
            _ => Err(MeshError::AmbiguousNode { x: p.0, y: p.1, tol }),
        }
    }

    /// Sum of active cell areas; equals the plate area by construction.
    pub fn active_area(&self) -> f64 {
        (0..self.cells.len())
            .map(|c| {
                let (_, _, hx, hy) = self.cell_geometry(CellId(c as u32));
                hx * hy
            })
            .sum()
    }

    /// Plain-text dump: grid lines, active cells, boundary nodes.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "x_coords: {:?}", self.x_coords).unwrap();
        writeln!(s, "y_coords: {:?}", self.y_coords).unwrap();
        writeln!(s, "cells ({}): {:?}", self.cells.len(), self.cells).unwrap();
        let b: Vec<u32> = self.boundary_nodes().iter().map(|n| n.0).collect();
        writeln!(s, "boundary_nodes ({}): {:?}", b.len(), b).unwrap();
        s
    }
}

/// The standard unit-square plate `[0,1]^2`.
pub fn unit_square() -> PlateDomain {
    PlateDomain::new(vec![Rect::new(0.0, 1.0, 0.0, 1.0)]).unwrap()
}

/// The L-shaped plate `[-1,1]^2` minus the quadrant `(0,1] x [-1,0)`.
pub fn l_shape() -> PlateDomain {
    PlateDomain::new(vec![
        Rect::new(-1.0, 0.0, -1.0, 1.0),
        Rect::new(0.0, 1.0, 0.0, 1.0),
    ])
    .unwrap()
}
