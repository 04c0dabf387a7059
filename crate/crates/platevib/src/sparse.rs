//! Minimal symmetric sparse storage shared by the assembled operators.
//!
//! Matrices are kept in compressed sparse column (CSC) form with the *full*
//! symmetric pattern (both triangles), because the same pattern is reused for
//! the stiffness, the mass, and every complex evaluation of the operator
//! function: only the value arrays differ.  Triplet assembly sums duplicate
//! entries and produces a deterministic, sorted layout so repeated builds are
//! bit-identical.

use num_complex::Complex64;

/// Shared sparsity structure of an `n x n` matrix in CSC layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
}

impl Pattern {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[u32] {
        &self.row_idx
    }

    /// Rows of column `j` with their storage indices.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |k| (k, self.row_idx[k]))
    }

    /// Storage index of entry (i, j), if structurally present.
    pub fn entry(&self, i: u32, j: usize) -> Option<usize> {
        let lo = self.col_ptr[j];
        let hi = self.col_ptr[j + 1];
        self.row_idx[lo..hi].binary_search(&i).ok().map(|k| lo + k)
    }

    /// Largest number of structural nonzeros in any column.
    pub fn max_column_nnz(&self) -> usize {
        self.col_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }
}

/// Compresses triplets `(row, col)` carrying several parallel value streams
/// into one shared pattern; duplicate entries are summed per stream.
pub fn compress_triplets(
    n: usize,
    indices: &[(u32, u32)],
    streams: &[&[f64]],
) -> (Pattern, Vec<Vec<f64>>) {
    for s in streams {
        assert_eq!(s.len(), indices.len(), "value stream length mismatch");
    }
    let mut order: Vec<u32> = (0..indices.len() as u32).collect();
    order.sort_unstable_by_key(|&k| {
        let (r, c) = indices[k as usize];
        (c, r)
    });
    let mut col_ptr = vec![0usize; n + 1];
    let mut row_idx = Vec::new();
    let mut out: Vec<Vec<f64>> = streams.iter().map(|_| Vec::new()).collect();
    let mut last: Option<(u32, u32)> = None;
    for &k in &order {
        let (r, c) = indices[k as usize];
        assert!((r as usize) < n && (c as usize) < n, "triplet out of range");
        if last == Some((r, c)) {
            for (s, vals) in streams.iter().zip(out.iter_mut()) {
                *vals.last_mut().unwrap() += s[k as usize];
            }
        } else {
            row_idx.push(r);
            col_ptr[c as usize + 1] += 1;
            for (s, vals) in streams.iter().zip(out.iter_mut()) {
                vals.push(s[k as usize]);
            }
            last = Some((r, c));
        }
    }
    for j in 0..n {
        col_ptr[j + 1] += col_ptr[j];
    }
    (Pattern { n, col_ptr, row_idx }, out)
}

/// y = M x for real values on the full symmetric pattern.
pub fn matvec_real(p: &Pattern, vals: &[f64], x: &[f64], y: &mut [f64]) {
    y.fill(0.0);
    for j in 0..p.n {
        let xj = x[j];
        for (k, i) in p.column(j) {
            y[i as usize] += vals[k] * xj;
        }
    }
}

/// y = M x for real values applied to a complex vector.
pub fn matvec_real_complex(p: &Pattern, vals: &[f64], x: &[Complex64], y: &mut [Complex64]) {
    y.fill(Complex64::new(0.0, 0.0));
    for j in 0..p.n {
        let xj = x[j];
        for (k, i) in p.column(j) {
            y[i as usize] += vals[k] * xj;
        }
    }
}

/// y = M x for complex values on the full symmetric pattern.
pub fn matvec_complex(p: &Pattern, vals: &[Complex64], x: &[Complex64], y: &mut [Complex64]) {
    y.fill(Complex64::new(0.0, 0.0));
    for j in 0..p.n {
        let xj = x[j];
        for (k, i) in p.column(j) {
            y[i as usize] += vals[k] * xj;
        }
    }
}

/// Largest absolute difference between the matrix and its transpose.
pub fn symmetry_defect(p: &Pattern, vals: &[f64]) -> f64 {
    let mut defect = 0.0f64;
    for j in 0..p.n {
        for (k, i) in p.column(j) {
            match p.entry(j as u32, i as usize) {
                Some(kt) => defect = defect.max((vals[k] - vals[kt]).abs()),
                None => defect = defect.max(vals[k].abs()),
            }
        }
    }
    defect
}

/// Coordinate text export: one `row col value` line per structural entry,
/// zero-based indices, full pattern.
pub fn to_coo_text(p: &Pattern, vals: &[f64]) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    for j in 0..p.n {
        for (k, i) in p.column(j) {
            writeln!(s, "{} {} {:.17e}", i, j, vals[k]).unwrap();
        }
    }
    s
}

/// Dense copy (for oracle-sized problems and tests).
pub fn to_dense_real(p: &Pattern, vals: &[f64]) -> faer::Mat<f64> {
    let mut m = faer::Mat::zeros(p.n, p.n);
    for j in 0..p.n {
        for (k, i) in p.column(j) {
            m[(i as usize, j)] = vals[k];
        }
    }
    m
}

/// Dense complex copy (for cross-checking factorizations in tests).
pub fn to_dense_complex(p: &Pattern, vals: &[Complex64]) -> faer::Mat<Complex64> {
    let mut m = faer::Mat::zeros(p.n, p.n);
    for j in 0..p.n {
        for (k, i) in p.column(j) {
            m[(i as usize, j)] = vals[k];
        }
    }
    m
}
