//! Batched small dense linear algebra.
//!
//! A [`DenseBatch`] stores `batch` equally sized matrices back to back, each in
//! column-major order. Every element- and face-level kernel of the solver is
//! expressed with the three operations here: explicit inversion, batched
//! matrix-matrix products and strided matrix-vector products.
//!
//! Inner products always accumulate over the inner dimension in ascending
//! order, so a given input produces the same bits on any thread count.

use thiserror::Error;

use crate::parallel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenseError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("block {index} is singular (pivot {pivot:.3e} below threshold)")]
    SingularBlock { index: usize, pivot: f64 },
}

/// Pivots smaller than this fraction of the block's max-norm are treated as zero.
pub const PIVOT_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseBatch {
    rows: usize,
    cols: usize,
    batch: usize,
    data: Vec<f64>,
}

impl DenseBatch {
    pub fn zeros(rows: usize, cols: usize, batch: usize) -> Self {
        Self { rows, cols, batch, data: vec![0.0; rows * cols * batch] }
    }

    pub fn identity(n: usize, batch: usize) -> Self {
        let mut out = Self::zeros(n, n, batch);
        for b in 0..batch {
            for i in 0..n {
                out.set(b, i, i, 1.0);
            }
        }
        out
    }

    pub fn from_vec(rows: usize, cols: usize, batch: usize, data: Vec<f64>) -> Result<Self, DenseError> {
        if data.len() != rows * cols * batch {
            return Err(DenseError::DimensionMismatch(format!("{} values for {batch} blocks of {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, batch, data })
    }

    /// Builds a single-block batch from a row-major nested array (handy in tests).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut out = Self::zeros(r, c, 1);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                out.set(0, i, j, v);
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Number of entries per block.
    pub fn stride(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, b: usize) -> &[f64] {
        let s = self.stride();
        &self.data[b * s..(b + 1) * s]
    }

    pub fn block_mut(&mut self, b: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.data[b * s..(b + 1) * s]
    }

    #[inline]
    pub fn get(&self, b: usize, r: usize, c: usize) -> f64 {
        self.data[b * self.stride() + c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, b: usize, r: usize, c: usize, v: f64) {
        let s = self.stride();
        self.data[b * s + c * self.rows + r] = v;
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `c = op(a) * b` for one block; `a` is `ar x ac` column-major, `op(a)` is
/// `m x k`, `b` is `k x n`, `c` is `m x n`.
pub(crate) fn matmul_block(a: &[f64], ar: usize, ac: usize, transpose_a: bool, b: &[f64], n: usize, c: &mut [f64]) {
    if transpose_a {
        let (m, k) = (ac, ar);
        for j in 0..n {
            let bj = &b[j * k..(j + 1) * k];
            for i in 0..m {
                let ai = &a[i * ar..(i + 1) * ar];
                let mut s = 0.0;
                for p in 0..k {
                    s += ai[p] * bj[p];
                }
                c[j * m + i] = s;
            }
        }
    } else {
        let (m, k) = (ar, ac);
        for j in 0..n {
            let cj = &mut c[j * m..(j + 1) * m];
            cj.iter_mut().for_each(|x| *x = 0.0);
            for p in 0..k {
                let bpj = b[j * k + p];
                let ap = &a[p * m..(p + 1) * m];
                for i in 0..m {
                    cj[i] += ap[i] * bpj;
                }
            }
        }
    }
}

/// `y = a x` (or `y += a x`) for one column-major `rows x cols` block.
#[inline]
pub(crate) fn matvec_block(a: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64], accumulate: bool) {
    if !accumulate {
        y[..rows].iter_mut().for_each(|v| *v = 0.0);
    }
    for p in 0..cols {
        let xp = x[p];
        let ap = &a[p * rows..(p + 1) * rows];
        for i in 0..rows {
            y[i] += ap[i] * xp;
        }
    }
}

/// Inverts one `n x n` column-major block in place using LU with partial
/// pivoting. `work` must hold at least `n * n` values. On failure returns the
/// offending pivot magnitude.
pub(crate) fn invert_block(a: &mut [f64], n: usize, work: &mut [f64]) -> Result<(), f64> {
    let scale = max_abs(&a[..n * n]);
    let tiny = PIVOT_THRESHOLD * scale;
    let lu = &mut work[..n * n];
    lu.copy_from_slice(&a[..n * n]);
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut piv = col;
        let mut best = lu[col * n + col].abs();
        for r in col + 1..n {
            let v = lu[col * n + r].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if !(best > tiny) || scale == 0.0 {
            return Err(best);
        }
        if piv != col {
            for c in 0..n {
                lu.swap(c * n + col, c * n + piv);
            }
            perm.swap(col, piv);
        }
        let d = lu[col * n + col];
        for r in col + 1..n {
            lu[col * n + r] /= d;
        }
        for c in col + 1..n {
            let f = lu[c * n + col];
            if f != 0.0 {
                for r in col + 1..n {
                    lu[c * n + r] -= lu[col * n + r] * f;
                }
            }
        }
    }
    // Solve L U X = P I column by column.
    for j in 0..n {
        let x = &mut a[j * n..(j + 1) * n];
        for (r, xr) in x.iter_mut().enumerate() {
            *xr = if perm[r] == j { 1.0 } else { 0.0 };
        }
        for c in 0..n {
            let xc = x[c];
            if xc != 0.0 {
                for r in c + 1..n {
                    x[r] -= lu[c * n + r] * xc;
                }
            }
        }
        for c in (0..n).rev() {
            x[c] /= lu[c * n + c];
            let xc = x[c];
            for r in 0..c {
                x[r] -= lu[c * n + r] * xc;
            }
        }
    }
    Ok(())
}

/// Explicit inverse of every block.
pub fn lu_invert_batch(a: &DenseBatch) -> Result<DenseBatch, DenseError> {
    if a.rows != a.cols || a.rows == 0 {
        return Err(DenseError::DimensionMismatch(format!("inversion needs square blocks, got {}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    let mut out = a.clone();
    let failures: Vec<Option<f64>> = {
        let mut flags = vec![None; a.batch];
        let results = parallel::map_indices(a.batch, |b| {
            let mut blk = a.block(b).to_vec();
            let mut work = vec![0.0; n * n];
            invert_block(&mut blk, n, &mut work).map(|_| blk)
        });
        for (b, r) in results.into_iter().enumerate() {
            match r {
                Ok(blk) => out.block_mut(b).copy_from_slice(&blk),
                Err(p) => flags[b] = Some(p),
            }
        }
        flags
    };
    if let Some((index, pivot)) = failures.iter().enumerate().find_map(|(i, f)| f.map(|p| (i, p))) {
        return Err(DenseError::SingularBlock { index, pivot });
    }
    Ok(out)
}

/// Per-block `op(a) * b`. Either operand may have batch 1 and is then
/// broadcast against every block of the other.
pub fn gemm_batch(a: &DenseBatch, b: &DenseBatch, transpose_a: bool) -> Result<DenseBatch, DenseError> {
    let (m, k) = if transpose_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    if k != b.rows {
        return Err(DenseError::DimensionMismatch(format!("inner dimensions {k} and {} differ", b.rows)));
    }
    let batch = match (a.batch, b.batch) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        (x, y) => return Err(DenseError::DimensionMismatch(format!("batch counts {x} and {y} differ"))),
    };
    let n = b.cols;
    let mut out = DenseBatch::zeros(m, n, batch);
    let (sa, sb) = (a.stride(), b.stride());
    let (ba, bb) = (a.batch, b.batch);
    parallel::for_each_block(&mut out.data, m * n, |idx, c| {
        let ai = if ba == 1 { 0 } else { idx };
        let bi = if bb == 1 { 0 } else { idx };
        matmul_block(&a.data[ai * sa..(ai + 1) * sa], a.rows, a.cols, transpose_a, &b.data[bi * sb..(bi + 1) * sb], n, c);
    });
    Ok(out)
}

/// `y_b = A_b x_b` (or `y_b += A_b x_b`) where `x` and `y` hold `batch`
/// consecutive slices of length `cols` and `rows`.
pub fn gemv_strided_batch(a: &DenseBatch, x: &[f64], y: &mut [f64], accumulate: bool) -> Result<(), DenseError> {
    if x.len() != a.cols * a.batch || y.len() != a.rows * a.batch {
        return Err(DenseError::DimensionMismatch(format!(
            "gemv on {} blocks of {}x{} with |x|={} |y|={}",
            a.batch,
            a.rows,
            a.cols,
            x.len(),
            y.len()
        )));
    }
    let (rows, cols, s) = (a.rows, a.cols, a.stride());
    parallel::for_each_block(y, rows, |b, yb| {
        matvec_block(&a.data[b * s..(b + 1) * s], rows, cols, &x[b * cols..(b + 1) * cols], yb, accumulate);
    });
    Ok(())
}
