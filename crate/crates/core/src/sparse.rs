//! Sparse symmetric matrices and their Cholesky factorization.
//!
//! Matrices are stored as the lower triangle in compressed-column form. The
//! factorization is split into a symbolic phase (fill-reducing ordering and
//! the pattern of `L`) and a numeric phase that can be repeated for any
//! matrix sharing the analysed pattern, which is what the inner Newton loop
//! of the Laplace engine needs.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::perm::PermRef;
use faer::sparse::linalg::cholesky::{self, SymmetricOrdering};
use faer::linalg::cholesky::llt::factor::LltError;
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Accum, Conj, Mat, Par, Side};

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Symmetric sparse matrix; only entries with `row >= col` are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricCsc {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymmetricCsc {
    /// Builds a matrix from `(row, col, value)` triplets. Entries from either
    /// triangle are folded onto the lower one and duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n];
        for &(i, j, _) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) out of range for dimension {n}");
            counts[i.min(j)] += 1;
        }
        let mut col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            col_ptr[j + 1] = col_ptr[j] + counts[j];
        }
        let mut next = col_ptr[..n].to_vec();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(i, j, v) in triplets {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            entries[next[c]] = (r, v);
            next[c] += 1;
        }

        let mut out_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for j in 0..n {
            let col = &mut entries[col_ptr[j]..col_ptr[j + 1]];
            col.sort_by_key(|e| e.0);
            for &(r, v) in col.iter() {
                if row_idx.len() > out_ptr[j] && *row_idx.last().unwrap() == r {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            out_ptr[j + 1] = row_idx.len();
        }
        Self {
            n,
            col_ptr: out_ptr,
            row_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Position of entry `(i, j)` in the value array, if it is structurally present.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let lo = self.col_ptr[c];
        let hi = self.col_ptr[c + 1];
        self.row_idx[lo..hi].binary_search(&r).ok().map(|p| lo + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Triplets of the stored lower triangle.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                out.push((self.row_idx[p], j, self.values[p]));
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = self.values[p];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// `xᵀ A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n);
        let mut acc = 0.0;
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = self.values[p] * x[i] * x[j];
                acc += if i == j { v } else { 2.0 * v };
            }
        }
        acc
    }

    /// Dense row-major copy, mostly for tests and tiny systems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
            d[j][i] = v;
        }
        d
    }
}

/// Fill-reducing ordering for nodes of an `nx × ny` lattice whose matrix
/// couples nodes at most `reach` steps apart along either axis.
///
/// Recursive geometric nested dissection: the longer side is cut by a
/// separator `reach` lines wide, both halves are ordered first and the
/// separator last. Node `(ix, iy)` has index `iy * nx + ix`.
pub fn grid_nested_dissection(nx: usize, ny: usize, reach: usize) -> Vec<usize> {
    fn recurse(
        nx: usize,
        (x0, x1): (usize, usize),
        (y0, y1): (usize, usize),
        sep: usize,
        out: &mut Vec<usize>,
    ) {
        let w = x1 - x0;
        let h = y1 - y0;
        if w == 0 || h == 0 {
            return;
        }
        let push_block = |out: &mut Vec<usize>, xs: (usize, usize), ys: (usize, usize)| {
            for iy in ys.0..ys.1 {
                for ix in xs.0..xs.1 {
                    out.push(iy * nx + ix);
                }
            }
        };
        if w * h <= 16 || w.max(h) <= 2 * sep {
            push_block(out, (x0, x1), (y0, y1));
            return;
        }
        if w >= h {
            let m = x0 + (w - sep) / 2;
            recurse(nx, (x0, m), (y0, y1), sep, out);
            recurse(nx, (m + sep, x1), (y0, y1), sep, out);
            push_block(out, (m, m + sep), (y0, y1));
        } else {
            let m = y0 + (h - sep) / 2;
            recurse(nx, (x0, x1), (y0, m), sep, out);
            recurse(nx, (x0, x1), (m + sep, y1), sep, out);
            push_block(out, (x0, x1), (m, m + sep));
        }
    }
    let mut out = Vec::with_capacity(nx * ny);
    recurse(nx, (0, nx), (0, ny), reach.max(1), &mut out);
    debug_assert_eq!(out.len(), nx * ny);
    out
}

/// Fill-reducing ordering used by the symbolic analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ordering {
    /// Approximate minimum degree, computed by the backend.
    Amd,
    /// Explicit ordering, `perm[new] = old`.
    Custom(Vec<usize>),
}

/// Pattern analysis of `P A Pᵀ = L Lᵀ` for a fixed sparsity pattern.
///
/// Backed by faer's supernodal Cholesky; this wrapper owns the pattern check,
/// log-determinant and the half-solve used for sampling.
#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    inner: cholesky::SymbolicCholesky<usize>,
    src_col_ptr: Vec<usize>,
    src_row_idx: Vec<usize>,
}

impl SymbolicCholesky {
    pub fn analyze(a: &SymmetricCsc, ordering: Ordering) -> Arc<Self> {
        let n = a.dim();
        let structure = SymbolicSparseColMatRef::new_checked(n, n, &a.col_ptr, None, &a.row_idx);
        let params = cholesky::CholeskySymbolicParams {
            supernodal_flop_ratio_threshold: SupernodalThreshold(-1.0),
            ..Default::default()
        };
        let inner = match ordering {
            Ordering::Amd => {
                cholesky::factorize_symbolic_cholesky(structure, Side::Lower, SymmetricOrdering::Amd, params)
            }
            Ordering::Custom(perm) => {
                assert_eq!(perm.len(), n, "ordering length must match matrix dimension");
                let mut inv = vec![NONE; n];
                for (new, &old) in perm.iter().enumerate() {
                    assert!(old < n && inv[old] == NONE, "ordering is not a permutation");
                    inv[old] = new;
                }
                let p = PermRef::new_checked(&perm, &inv, n);
                cholesky::factorize_symbolic_cholesky(structure, Side::Lower, SymmetricOrdering::Custom(p), params)
            }
        }
        .expect("symbolic Cholesky analysis ran out of memory");
        Arc::new(Self {
            n,
            inner,
            src_col_ptr: a.col_ptr.clone(),
            src_row_idx: a.row_idx.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored values of `L` (supernodal blocks included).
    pub fn factor_nnz(&self) -> usize {
        self.inner.len_val()
    }

    fn supernodal(&self) -> &cholesky::supernodal::SymbolicSupernodalCholesky<usize> {
        match self.inner.raw() {
            cholesky::SymbolicCholeskyRaw::Supernodal(s) => s,
            cholesky::SymbolicCholeskyRaw::Simplicial(_) => unreachable!("supernodal factorization is forced"),
        }
    }

    /// `perm[new] = old`, identity when the backend chose no reordering.
    fn perm_fwd(&self) -> Vec<usize> {
        match self.inner.perm() {
            Some(p) => p.arrays().0.to_vec(),
            None => (0..self.n).collect(),
        }
    }

    /// Numeric factorization of `a`, which must share the analysed pattern.
    /// `name` identifies the matrix in the error raised when a pivot is not positive.
    pub fn factor(self: &Arc<Self>, a: &SymmetricCsc, name: &str) -> Result<CholeskyFactor> {
        assert!(
            a.col_ptr == self.src_col_ptr && a.row_idx == self.src_row_idx,
            "matrix pattern differs from the analysed pattern"
        );
        let n = self.n;
        let structure = SymbolicSparseColMatRef::new_checked(n, n, &a.col_ptr, None, &a.row_idx);
        let mat = SparseColMatRef::new(structure, &a.values);
        let mut values = vec![0.0; self.inner.len_val()];
        let req = self.inner.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default());
        let mut mem = MemBuffer::new(req);
        let stack = MemStack::new(&mut mem);
        let res = self.inner.factorize_numeric_llt(
            &mut values,
            mat,
            Side::Lower,
            Default::default(),
            Par::Seq,
            stack,
            Default::default(),
        );
        if let Err(e) = res {
            let LltError::NonPositivePivot { index } = e;
            let pivot = self.perm_fwd().get(index).copied().unwrap_or(index);
            return Err(Error::NotPositiveDefinite {
                name: name.to_string(),
                pivot,
                value: f64::NAN,
            });
        }
        let factor = CholeskyFactor {
            symbolic: Arc::clone(self),
            values,
        };
        let ld = factor.log_det();
        if !ld.is_finite() {
            return Err(Error::NotPositiveDefinite {
                name: name.to_string(),
                pivot: 0,
                value: ld,
            });
        }
        Ok(factor)
    }
}

/// Numeric Cholesky factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    /// Analyse-and-factor in one step.
    pub fn new(a: &SymmetricCsc, ordering: Ordering, name: &str) -> Result<Self> {
        SymbolicCholesky::analyze(a, ordering).factor(a, name)
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    fn supernodes(&self) -> cholesky::supernodal::SupernodalLltRef<'_, usize, f64> {
        cholesky::supernodal::SupernodalLltRef::new(self.symbolic.supernodal(), &self.values)
    }

    /// `log |A|`
    pub fn log_det(&self) -> f64 {
        let l = self.supernodes();
        let mut acc = 0.0;
        for s in 0..self.symbolic.supernodal().n_supernodes() {
            let block = l.supernode(s).val();
            for j in 0..block.ncols() {
                acc += block[(j, j)].ln();
            }
        }
        2.0 * acc
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        let llt = cholesky::LltRef::new(&self.symbolic.inner, &self.values);
        let req = self.symbolic.inner.solve_in_place_scratch::<f64>(1, Par::Seq);
        let mut mem = MemBuffer::new(req);
        llt.solve_in_place_with_conj(Conj::No, rhs.as_mut(), Par::Seq, MemStack::new(&mut mem));
        (0..n).map(|i| rhs[(i, 0)]).collect()
    }

    /// Maps standard-normal `z` to a draw with covariance `A⁻¹`: `x = Pᵀ L⁻ᵀ z`.
    pub fn sample_transform(&self, z: &[f64]) -> Vec<f64> {
        self.sample_transform_many(z, 1)
    }

    /// Column-major batch version of [`sample_transform`](Self::sample_transform):
    /// `z` holds `k` vectors of length `n` back to back.
    pub fn sample_transform_many(&self, z: &[f64], k: usize) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(z.len(), n * k);
        let mut y = Mat::<f64>::from_fn(n, k, |i, j| z[j * n + i]);
        let l = self.supernodes();
        let sym = self.symbolic.supernodal();
        for s in (0..sym.n_supernodes()).rev() {
            let node = l.supernode(s);
            let block = node.val();
            let size = block.ncols();
            let start = node.start();
            let pattern = node.pattern();
            let (top, bot) = block.split_at_row(size);
            if !pattern.is_empty() {
                let gathered = Mat::<f64>::from_fn(pattern.len(), k, |r, j| y[(pattern[r], j)]);
                matmul(
                    y.as_mut().subrows_mut(start, size),
                    Accum::Add,
                    bot.transpose(),
                    gathered.as_ref(),
                    -1.0,
                    Par::Seq,
                );
            }
            solve_upper_triangular_in_place(top.transpose(), y.as_mut().subrows_mut(start, size), Par::Seq);
        }
        let perm = self.symbolic.perm_fwd();
        let mut out = vec![0.0; n * k];
        for j in 0..k {
            for (new, &old) in perm.iter().enumerate() {
                out[j * n + old] = y[(new, j)];
            }
        }
        out
    }
}

impl CholeskyFactor {
    /// Entries of `A⁻¹` on the pattern of `L + Lᵀ`, by the supernodal Takahashi recursion.
    pub fn selected_inverse(&self) -> SelectedInverse {
        let l = self.supernodes();
        let sym = self.symbolic.supernodal();
        let n_s = sym.n_supernodes();
        let mut snode_of = vec![0; self.dim()];
        let mut rows: Vec<Vec<usize>> = Vec::with_capacity(n_s);
        for s in 0..n_s {
            let node = l.supernode(s);
            let size = node.val().ncols();
            let start = node.start();
            snode_of[start..start + size].iter_mut().for_each(|v| *v = s);
            rows.push((start..start + size).chain(node.pattern().iter().copied()).collect());
        }
        let mut blocks: Vec<Mat<f64>> = vec![Mat::new(); n_s];
        for s in (0..n_s).rev() {
            let node = l.supernode(s);
            let block = node.val();
            let m = block.ncols();
            let pattern = node.pattern();
            let p = pattern.len();
            let (top, bot) = block.split_at_row(m);
            // Σ over the pattern rows, gathered from later supernodes by merging sorted row lists
            let mut spp = Mat::<f64>::zeros(p, p);
            for b in 0..p {
                let t = snode_of[pattern[b]];
                let (t_rows, t_block) = (&rows[t], &blocks[t]);
                let col = pattern[b] - t_rows[0];
                let mut pos = 0;
                for a in b..p {
                    while t_rows[pos] < pattern[a] {
                        pos += 1;
                    }
                    let v = t_block[(pos, col)];
                    spp[(a, b)] = v;
                    spp[(b, a)] = v;
                }
            }
            // z = T⁻ᵀ Bᵀ Σ_PP = −Σ_{s,P}
            let mut z = Mat::<f64>::zeros(m, p);
            if p > 0 {
                matmul(z.as_mut(), Accum::Replace, bot.transpose(), spp.as_ref(), 1.0, Par::Seq);
                solve_upper_triangular_in_place(top.transpose(), z.as_mut(), Par::Seq);
            }
            // Σ_ss = T⁻ᵀ (T⁻¹ − Bᵀ Σ_{P,s})
            let mut r = Mat::<f64>::identity(m, m);
            solve_lower_triangular_in_place(top, r.as_mut(), Par::Seq);
            if p > 0 {
                matmul(r.as_mut(), Accum::Add, bot.transpose(), z.transpose(), 1.0, Par::Seq);
            }
            solve_upper_triangular_in_place(top.transpose(), r.as_mut(), Par::Seq);
            let mut out = Mat::<f64>::zeros(m + p, m);
            for j in 0..m {
                for i in 0..m {
                    out[(i, j)] = 0.5 * (r[(i, j)] + r[(j, i)]);
                }
                for a in 0..p {
                    out[(m + a, j)] = -z[(j, a)];
                }
            }
            blocks[s] = out;
        }
        let perm = self.symbolic.perm_fwd();
        let mut perm_inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            perm_inv[old] = new;
        }
        SelectedInverse {
            perm_inv,
            snode_of,
            rows,
            blocks,
        }
    }
}

/// `A⁻¹` restricted to the pattern of the Cholesky factor.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    perm_inv: Vec<usize>,
    snode_of: Vec<usize>,
    rows: Vec<Vec<usize>>,
    blocks: Vec<Mat<f64>>,
}

impl SelectedInverse {
    /// `(A⁻¹)_{ij}` in original indices; `None` outside the factor pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = (self.perm_inv[i], self.perm_inv[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        let s = self.snode_of[c];
        let rows = &self.rows[s];
        let col = c - rows[0];
        let pos = rows.binary_search(&r).ok()?;
        Some(self.blocks[s][(pos, col)])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.perm_inv.len()).map(|i| self.get(i, i).unwrap()).collect()
    }
}
