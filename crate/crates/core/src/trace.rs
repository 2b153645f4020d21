//! The condensed trace operator in face-block form.
//!
//! Row `f` of `K` couples face `f` to at most `nb = 2 n_lfe − 1` faces: itself
//! (slot 0), the other faces of its first element in local order (slots
//! `1..n_lfe`) and those of its second element (slots `n_lfe..nb`). Each row is
//! stored as one column-major `bs x (bs nb)` matrix, `bs = m p_f`, so the
//! product is a single strided batch of matrix-vector products over the
//! gathered neighbor values.

use std::io::{Read, Write};

use crate::dense::{gemv_strided_batch, matvec_block, DenseBatch};
use crate::error::{HdgError, Result};
use crate::local::ElementOperators;
use crate::mesh::{Mesh2D, NONE};
use crate::parallel;

/// Face-major trace values, `m p_f` per face.
pub type TraceVector = Vec<f64>;

pub const DENSE_LIMIT: usize = 20_000;
const MAGIC: &[u8; 4] = b"HDGK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FaceBlockMatrix {
    m: usize,
    pf: usize,
    n_lfe: usize,
    nf: usize,
    neighbor: Vec<usize>,
    blocks: DenseBatch,
}

impl FaceBlockMatrix {
    /// A zero matrix with the given neighbor table (`nf x nb`, row-major).
    pub fn zeros(m: usize, pf: usize, n_lfe: usize, neighbor: Vec<usize>) -> Result<Self> {
        let nb = 2 * n_lfe - 1;
        if !neighbor.len().is_multiple_of(nb) {
            return Err(HdgError::InconsistentDimensions(format!(
                "neighbor table of length {} is not a multiple of {nb}",
                neighbor.len()
            )));
        }
        let nf = neighbor.len() / nb;
        if let Some(bad) = neighbor.iter().find(|&&g| g != NONE && g >= nf) {
            return Err(HdgError::InconsistentDimensions(format!("neighbor id {bad} out of range")));
        }
        let bs = m * pf;
        Ok(Self { m, pf, n_lfe, nf, neighbor, blocks: DenseBatch::zeros(bs, bs * nb, nf) })
    }

    /// Neighbor table of `mesh` in slot order.
    pub fn mesh_neighbors(mesh: &Mesh2D) -> Vec<usize> {
        let n_lfe = mesh.n_local_faces();
        let nb = 2 * n_lfe - 1;
        let mut table = vec![NONE; mesh.n_faces() * nb];
        for f in 0..mesh.n_faces() {
            let row = &mut table[f * nb..(f + 1) * nb];
            row[0] = f;
            for side in 0..2 {
                let e = mesh.face_to_elements()[f][side];
                if e == NONE {
                    continue;
                }
                let l = mesh.face_local_index()[f][side];
                let others = (0..n_lfe).filter(|&k| k != l);
                for (k, lk) in others.enumerate() {
                    row[1 + side * (n_lfe - 1) + k] = mesh.element_to_face()[e][lk];
                }
            }
        }
        table
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn pf(&self) -> usize {
        self.pf
    }

    pub fn n_lfe(&self) -> usize {
        self.n_lfe
    }

    pub fn nf(&self) -> usize {
        self.nf
    }

    pub fn nb(&self) -> usize {
        2 * self.n_lfe - 1
    }

    /// Block size `m p_f`.
    pub fn bs(&self) -> usize {
        self.m * self.pf
    }

    pub fn n_dof(&self) -> usize {
        self.bs() * self.nf
    }

    pub fn neighbor(&self, f: usize, slot: usize) -> usize {
        self.neighbor[f * self.nb() + slot]
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbor
    }

    pub fn blocks(&self) -> &DenseBatch {
        &self.blocks
    }

    /// Column-major `bs x bs` block of face `f`, slot `slot`.
    pub fn block(&self, f: usize, slot: usize) -> &[f64] {
        let b2 = self.bs() * self.bs();
        &self.blocks.block(f)[slot * b2..(slot + 1) * b2]
    }

    pub fn block_mut(&mut self, f: usize, slot: usize) -> &mut [f64] {
        let b2 = self.bs() * self.bs();
        &mut self.blocks.block_mut(f)[slot * b2..(slot + 1) * b2]
    }

    /// Self blocks of all faces as a batch.
    pub fn diagonal_blocks(&self) -> DenseBatch {
        let bs = self.bs();
        let mut data = Vec::with_capacity(bs * bs * self.nf);
        for f in 0..self.nf {
            data.extend_from_slice(self.block(f, 0));
        }
        DenseBatch::from_vec(bs, bs, self.nf, data).expect("diagonal block sizes")
    }
}

/// Merges the condensed element matrices and residuals into face rows.
pub fn assemble_global(ops: &ElementOperators, mesh: &Mesh2D) -> Result<(FaceBlockMatrix, TraceVector)> {
    let n_lfe = mesh.n_local_faces();
    let nt = ops.nt;
    if !nt.is_multiple_of(n_lfe) || ops.kbar.batch() != mesh.n_elements() || ops.kbar.rows() != nt {
        return Err(HdgError::InconsistentDimensions(format!(
            "{} element matrices of size {} for {} elements",
            ops.kbar.batch(),
            ops.kbar.rows(),
            mesh.n_elements()
        )));
    }
    let pf = nt / n_lfe;
    let mut k = FaceBlockMatrix::zeros(1, pf, n_lfe, FaceBlockMatrix::mesh_neighbors(mesh))?;
    let nb = k.nb();
    let b2 = pf * pf;
    let mut r = vec![0.0; pf * mesh.n_faces()];
    let kbar = &ops.kbar;
    parallel::for_each_block(k.blocks.data_mut(), b2 * nb, |f, row| {
        for side in 0..2 {
            let e = mesh.face_to_elements()[f][side];
            if e == NONE {
                continue;
            }
            let l = mesh.face_local_index()[f][side];
            let ke = kbar.block(e);
            let slot_of = |lc: usize| -> usize {
                if lc == l {
                    0
                } else {
                    1 + side * (n_lfe - 1) + if lc < l { lc } else { lc - 1 }
                }
            };
            for lc in 0..n_lfe {
                let slot = slot_of(lc);
                let blk = &mut row[slot * b2..(slot + 1) * b2];
                for c in 0..pf {
                    for rr in 0..pf {
                        blk[rr + pf * c] += ke[(l * pf + rr) + nt * (lc * pf + c)];
                    }
                }
            }
        }
    });
    for f in 0..mesh.n_faces() {
        for side in 0..2 {
            let e = mesh.face_to_elements()[f][side];
            if e == NONE {
                continue;
            }
            let l = mesh.face_local_index()[f][side];
            for m in 0..pf {
                r[f * pf + m] += ops.rbar[e * nt + l * pf + m];
            }
        }
    }
    Ok((k, r))
}

/// Per face, the concatenated values of its neighbor slots (zeros for `NONE`).
pub fn gather_extended(x: &[f64], k: &FaceBlockMatrix) -> Vec<f64> {
    let (bs, nb) = (k.bs(), k.nb());
    let mut ext = vec![0.0; bs * nb * k.nf];
    parallel::for_each_block(&mut ext, bs * nb, |f, row| {
        for s in 0..nb {
            let g = k.neighbor(f, s);
            if g != NONE {
                row[s * bs..(s + 1) * bs].copy_from_slice(&x[g * bs..(g + 1) * bs]);
            }
        }
    });
    ext
}

/// Transpose of [`gather_extended`]: adds every slot back onto its face.
pub fn scatter_extended_add(ext: &[f64], k: &FaceBlockMatrix) -> Vec<f64> {
    let (bs, nb) = (k.bs(), k.nb());
    let mut y = vec![0.0; k.n_dof()];
    for f in 0..k.nf {
        for s in 0..nb {
            let g = k.neighbor(f, s);
            if g != NONE {
                for i in 0..bs {
                    y[g * bs + i] += ext[(f * nb + s) * bs + i];
                }
            }
        }
    }
    y
}

fn check_len(k: &FaceBlockMatrix, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != k.n_dof() || y.len() != k.n_dof() {
        return Err(HdgError::InconsistentDimensions(format!(
            "matvec with {} unknowns on vectors of length {} and {}",
            k.n_dof(),
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// `y = K x` through the explicit extended gather and one strided gemv.
pub fn block_matvec_gathered(k: &FaceBlockMatrix, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len(k, x, y)?;
    let ext = gather_extended(x, k);
    gemv_strided_batch(&k.blocks, &ext, y, false)?;
    Ok(())
}

/// `y = K x`. Reads neighbor values in place, in the same slot-then-column
/// order as [`block_matvec_gathered`], so both give identical results.
pub fn block_matvec(k: &FaceBlockMatrix, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len(k, x, y)?;
    let (bs, nb) = (k.bs(), k.nb());
    let b2 = bs * bs;
    parallel::for_each_block(y, bs, |f, yf| {
        yf.iter_mut().for_each(|v| *v = 0.0);
        let row = k.blocks.block(f);
        for s in 0..nb {
            let g = k.neighbor(f, s);
            if g != NONE {
                matvec_block(&row[s * b2..(s + 1) * b2], bs, bs, &x[g * bs..(g + 1) * bs], yf, true);
            }
        }
    });
    Ok(())
}

/// Dense `n_dof x n_dof` expansion (single column-major block).
pub fn to_dense(k: &FaceBlockMatrix) -> Result<DenseBatch> {
    let n = k.n_dof();
    if n > DENSE_LIMIT {
        return Err(HdgError::TooLargeForDense { n_dof: n, limit: DENSE_LIMIT });
    }
    let bs = k.bs();
    let mut a = DenseBatch::zeros(n, n, 1);
    for f in 0..k.nf {
        for s in 0..k.nb() {
            let g = k.neighbor(f, s);
            if g == NONE {
                continue;
            }
            let blk = k.block(f, s);
            for c in 0..bs {
                for r in 0..bs {
                    let v = a.get(0, f * bs + r, g * bs + c);
                    a.set(0, f * bs + r, g * bs + c, v + blk[r + bs * c]);
                }
            }
        }
    }
    Ok(a)
}

/// Writes `K` and `r` in the little-endian `HDGK` format.
pub fn write_dump<W: Write>(mut w: W, k: &FaceBlockMatrix, r: &[f64]) -> Result<()> {
    if r.len() != k.n_dof() {
        return Err(HdgError::InconsistentDimensions(format!("residual of length {} for {} unknowns", r.len(), k.n_dof())));
    }
    w.write_all(MAGIC)?;
    for v in [FORMAT_VERSION, k.m as u32, k.pf as u32, k.n_lfe as u32, k.nf as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for &g in &k.neighbor {
        let v: i64 = if g == NONE { -1 } else { g as i64 };
        w.write_all(&v.to_le_bytes())?;
    }
    for v in k.blocks.data().iter().chain(r) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

/// Reads a matrix and residual written by [`write_dump`].
pub fn read_dump<R: Read>(mut rd: R) -> Result<(FaceBlockMatrix, TraceVector)> {
    let mut magic = [0u8; 4];
    rd.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(HdgError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut rd)?;
    if version != FORMAT_VERSION {
        return Err(HdgError::Format(format!("unsupported version {version}")));
    }
    let m = read_u32(&mut rd)? as usize;
    let pf = read_u32(&mut rd)? as usize;
    let n_lfe = read_u32(&mut rd)? as usize;
    let nf = read_u32(&mut rd)? as usize;
    if m == 0 || pf == 0 || n_lfe == 0 {
        return Err(HdgError::Format("zero dimension in header".into()));
    }
    let nb = 2 * n_lfe - 1;
    let mut neighbor = Vec::with_capacity(nf * nb);
    let mut buf = [0u8; 8];
    for _ in 0..nf * nb {
        rd.read_exact(&mut buf)?;
        let v = i64::from_le_bytes(buf);
        neighbor.push(match v {
            -1 => NONE,
            v if v >= 0 && (v as usize) < nf => v as usize,
            v => return Err(HdgError::Format(format!("neighbor id {v} out of range"))),
        });
    }
    let mut k = FaceBlockMatrix::zeros(m, pf, n_lfe, neighbor)?;
    let n_block = k.blocks.data().len();
    let data = read_f64s(&mut rd, n_block)?;
    k.blocks.data_mut().copy_from_slice(&data);
    let r = read_f64s(&mut rd, k.n_dof())?;
    let mut rest = Vec::new();
    rd.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(HdgError::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok((k, r))
}
