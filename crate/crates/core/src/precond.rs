//! Block-Jacobi, one-element additive Schwarz and harmonic-Ritz polynomial
//! preconditioners.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{gemv_strided_batch, lu_invert_batch, DenseBatch, DenseError};
use crate::error::{HdgError, Result};
use crate::krylov::{orthogonalize, IdentityPrecond, LinearOperator, Orthogonalization, Preconditioner};
use crate::local::ElementOperators;
use crate::mesh::{Mesh2D, NONE};
use crate::parallel;
use crate::trace::FaceBlockMatrix;

fn singular_as_block(err: DenseError) -> HdgError {
    match err {
        DenseError::SingularBlock { index, .. } => HdgError::SingularBlock { index },
        other => other.into(),
    }
}

/// Inverses of the self blocks of every face.
#[derive(Debug, Clone)]
pub struct BlockJacobi {
    inv: DenseBatch,
}

impl BlockJacobi {
    pub fn new(k: &FaceBlockMatrix) -> Result<Self> {
        let inv = lu_invert_batch(&k.diagonal_blocks()).map_err(singular_as_block)?;
        Ok(Self { inv })
    }

    pub fn inverses(&self) -> &DenseBatch {
        &self.inv
    }
}

impl Preconditioner for BlockJacobi {
    fn apply(&self, y: &[f64], z: &mut [f64]) {
        gemv_strided_batch(&self.inv, y, z, false).expect("block-Jacobi dimensions");
    }
}

/// One subdomain per element: its faces, with the condensed element matrix
/// enriched on interior faces by the neighbor's diagonal block.
#[derive(Debug, Clone)]
pub struct AdditiveSchwarz {
    inv: DenseBatch,
    pf: usize,
    element_to_face: Vec<[usize; 4]>,
    face_to_elements: Vec<[usize; 2]>,
    face_local_index: Vec<[usize; 2]>,
}

/// `P̄ᵉ`: `K̄ᵉ` with each interior face's diagonal block replaced by the sum
/// of both adjacent elements' diagonal blocks for that face.
pub fn asm_local_matrices(ops: &ElementOperators, mesh: &Mesh2D) -> DenseBatch {
    let nt = ops.nt;
    let pf = nt / mesh.n_local_faces();
    let mut p = ops.kbar.clone();
    for e in 0..mesh.n_elements() {
        for (l, &f) in mesh.element_to_face()[e].iter().enumerate() {
            let [e1, e2] = mesh.face_to_elements()[f];
            if e2 == NONE {
                continue;
            }
            let (other, side) = if e1 == e { (e2, 1) } else { (e1, 0) };
            let lo = mesh.face_local_index()[f][side];
            let src = ops.kbar.block(other);
            let dst = p.block_mut(e);
            for c in 0..pf {
                for r in 0..pf {
                    dst[(l * pf + r) + nt * (l * pf + c)] += src[(lo * pf + r) + nt * (lo * pf + c)];
                }
            }
        }
    }
    p
}

impl AdditiveSchwarz {
    pub fn new(ops: &ElementOperators, mesh: &Mesh2D) -> Result<Self> {
        let inv = lu_invert_batch(&asm_local_matrices(ops, mesh)).map_err(singular_as_block)?;
        Ok(Self {
            inv,
            pf: ops.nt / mesh.n_local_faces(),
            element_to_face: mesh.element_to_face().to_vec(),
            face_to_elements: mesh.face_to_elements().to_vec(),
            face_local_index: mesh.face_local_index().to_vec(),
        })
    }

    pub fn inverses(&self) -> &DenseBatch {
        &self.inv
    }
}

impl Preconditioner for AdditiveSchwarz {
    fn apply(&self, y: &[f64], z: &mut [f64]) {
        let pf = self.pf;
        let nt = self.inv.rows();
        let ne = self.element_to_face.len();
        let mut ye = vec![0.0; nt * ne];
        for (e, faces) in self.element_to_face.iter().enumerate() {
            for (l, &f) in faces.iter().enumerate() {
                ye[e * nt + l * pf..e * nt + (l + 1) * pf].copy_from_slice(&y[f * pf..(f + 1) * pf]);
            }
        }
        let mut ze = vec![0.0; nt * ne];
        gemv_strided_batch(&self.inv, &ye, &mut ze, false).expect("additive Schwarz dimensions");
        // Lower element id first on every face.
        parallel::for_each_block(z, pf, |f, zf| {
            zf.iter_mut().for_each(|v| *v = 0.0);
            for side in 0..2 {
                let e = self.face_to_elements[f][side];
                if e == NONE {
                    continue;
                }
                let l = self.face_local_index[f][side];
                for (zi, v) in zf.iter_mut().zip(&ze[e * nt + l * pf..e * nt + (l + 1) * pf]) {
                    *zi += v;
                }
            }
        });
    }
}

/// The base preconditioner a polynomial is built around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    #[default]
    None,
    Bj,
    Asm,
}

impl BaseKind {
    pub fn label(self) -> &'static str {
        match self {
            BaseKind::None => "none",
            BaseKind::Bj => "bj",
            BaseKind::Asm => "asm",
        }
    }
}

impl std::str::FromStr for BaseKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "identity" => Ok(BaseKind::None),
            "bj" => Ok(BaseKind::Bj),
            "asm" => Ok(BaseKind::Asm),
            other => Err(format!("unknown preconditioner '{other}' (expected none, bj or asm)")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BasePrecond {
    Identity,
    BlockJacobi(BlockJacobi),
    AdditiveSchwarz(AdditiveSchwarz),
}

impl BasePrecond {
    pub fn build(kind: BaseKind, k: &FaceBlockMatrix, ops: &ElementOperators, mesh: &Mesh2D) -> Result<Self> {
        Ok(match kind {
            BaseKind::None => BasePrecond::Identity,
            BaseKind::Bj => BasePrecond::BlockJacobi(BlockJacobi::new(k)?),
            BaseKind::Asm => BasePrecond::AdditiveSchwarz(AdditiveSchwarz::new(ops, mesh)?),
        })
    }
}

impl Preconditioner for BasePrecond {
    fn apply(&self, y: &[f64], z: &mut [f64]) {
        match self {
            BasePrecond::Identity => IdentityPrecond.apply(y, z),
            BasePrecond::BlockJacobi(p) => p.apply(y, z),
            BasePrecond::AdditiveSchwarz(p) => p.apply(y, z),
        }
    }
}

/// `v ↦ P⁻¹ A v`.
pub struct PreconditionedOperator<'a, A: LinearOperator + ?Sized, P: Preconditioner + ?Sized> {
    pub op: &'a A,
    pub prec: &'a P,
}

impl<A: LinearOperator + ?Sized, P: Preconditioner + ?Sized> LinearOperator for PreconditionedOperator<'_, A, P> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut t = vec![0.0; x.len()];
        self.op.apply(x, &mut t);
        self.prec.apply(&t, y);
    }
}

const BREAKDOWN_TOL: f64 = 1e-14;
const IMAG_TOL: f64 = 1e-12;
const ZERO_RITZ_TOL: f64 = 1e-12;

/// Harmonic Ritz values of one Arnoldi cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct RitzValues {
    /// Leja-ordered, closed under conjugation, conjugates adjacent.
    pub values: Vec<Complex64>,
    /// Arnoldi step at which the Krylov space became invariant, if before `P`.
    pub breakdown: Option<usize>,
    /// Values discarded as numerically zero.
    pub dropped: usize,
}

/// Runs `p` Arnoldi steps (MGS) on `op` from a seeded random start and
/// returns the eigenvalues of `H_pp + h²_{p+1,p} H_ppᵀ⁻¹ e_p e_pᵀ`.
pub fn compute_harmonic_ritz<A: LinearOperator + ?Sized>(op: &A, p: usize, seed: u64) -> Result<RitzValues> {
    let n = op.dim();
    if p == 0 || p > n {
        return Err(HdgError::InvalidConfig(format!("polynomial degree {p} must be in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let nrm = v0.iter().map(|x| x * x).sum::<f64>().sqrt();
    v0.iter_mut().for_each(|x| *x /= nrm);
    let mut basis = vec![v0];
    let mut h = DMatrix::<f64>::zeros(p + 1, p);
    let mut scale = 0.0f64;
    let mut steps = p;
    let mut breakdown = None;
    for j in 0..p {
        let mut w = vec![0.0; n];
        op.apply(&basis[j], &mut w);
        let (col, hnext) = orthogonalize(&basis, &mut w, Orthogonalization::Mgs);
        if !hnext.is_finite() || col.iter().any(|v| !v.is_finite()) {
            return Err(HdgError::NaNDetected { iteration: j, what: "harmonic Ritz Arnoldi".into() });
        }
        for (i, c) in col.iter().enumerate() {
            h[(i, j)] = *c;
            scale = scale.max(c.abs());
        }
        h[(j + 1, j)] = hnext;
        if hnext <= BREAKDOWN_TOL * scale.max(hnext) {
            steps = j + 1;
            if steps < p {
                breakdown = Some(steps);
            }
            h[(j + 1, j)] = 0.0;
            break;
        }
        scale = scale.max(hnext);
        basis.push(w);
    }
    let mut hm = h.view((0, 0), (steps, steps)).into_owned();
    let beta = h[(steps, steps - 1)];
    if beta != 0.0 {
        let mut e = nalgebra::DVector::<f64>::zeros(steps);
        e[steps - 1] = 1.0;
        let f = hm.transpose().lu().solve(&e).ok_or_else(|| HdgError::NaNDetected {
            iteration: steps,
            what: "singular Hessenberg in harmonic Ritz extraction".into(),
        })?;
        for i in 0..steps {
            hm[(i, steps - 1)] += beta * beta * f[i];
        }
    }
    let eig = hm.complex_eigenvalues();
    let mut raw: Vec<Complex64> = eig.iter().map(|z| Complex64::new(z.re, z.im)).collect();
    if raw.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(HdgError::NaNDetected { iteration: steps, what: "non-finite harmonic Ritz value".into() });
    }
    for z in &mut raw {
        if z.im.abs() <= IMAG_TOL * z.norm() {
            z.im = 0.0;
        }
    }
    // Rebuild exact conjugate pairs from the upper-half-plane members.
    let mut closed: Vec<Complex64> = Vec::with_capacity(raw.len());
    for z in &raw {
        if z.im == 0.0 {
            closed.push(*z);
        } else if z.im > 0.0 {
            closed.push(*z);
            closed.push(z.conj());
        }
    }
    let max_abs = closed.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let before = closed.len();
    closed.retain(|z| z.norm() >= ZERO_RITZ_TOL * max_abs && z.norm() > 0.0);
    let dropped = before - closed.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} near-zero harmonic Ritz values");
    }
    Ok(RitzValues { values: leja_order(&closed), breakdown, dropped })
}

fn better(a: (f64, Complex64), b: (f64, Complex64)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1.re != b.1.re {
        return a.1.re > b.1.re;
    }
    a.1.im > b.1.im
}

/// Greedy Leja order. The first value has the largest modulus; each next one
/// maximizes the product of distances to those already chosen. A complex
/// value is followed directly by its conjugate.
pub fn leja_order(theta: &[Complex64]) -> Vec<Complex64> {
    let mut cand: Vec<Complex64> = theta.iter().copied().filter(|z| z.im >= 0.0).collect();
    let mut out = Vec::with_capacity(theta.len());
    let mut first = true;
    while !cand.is_empty() {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, z) in cand.iter().enumerate() {
            let score = if first { z.norm() } else { out.iter().map(|c: &Complex64| (z - c).norm().ln()).sum() };
            if i == 0 || better((score, *z), (best_score, cand[best])) {
                best = i;
                best_score = score;
            }
        }
        first = false;
        let z = cand.remove(best);
        out.push(z);
        if z.im > 0.0 {
            out.push(z.conj());
        }
    }
    out
}

/// `z = s(P⁻¹A) P⁻¹ y` where `1 − λ s(λ) = Π (1 − λ/θ_j)`.
pub struct PolynomialPrecond<'a, A: LinearOperator + ?Sized, P: Preconditioner + ?Sized> {
    op: &'a A,
    base: &'a P,
    ritz: Vec<Complex64>,
    scratch: Mutex<[Vec<f64>; 4]>,
    applications: AtomicUsize,
}

impl<'a, A: LinearOperator + ?Sized, P: Preconditioner + ?Sized> PolynomialPrecond<'a, A, P> {
    pub fn new(op: &'a A, base: &'a P, ritz: Vec<Complex64>) -> Result<Self> {
        if ritz.is_empty() {
            return Err(HdgError::InvalidConfig("polynomial preconditioner needs at least one Ritz value".into()));
        }
        let n = op.dim();
        Ok(Self {
            op,
            base,
            ritz,
            scratch: Mutex::new([vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]]),
            applications: AtomicUsize::new(0),
        })
    }

    pub fn ritz(&self) -> &[Complex64] {
        &self.ritz
    }

    /// Preconditioned-operator applications made so far.
    pub fn operator_applications(&self) -> usize {
        self.applications.load(Ordering::Relaxed)
    }

    fn base_op(&self, x: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        self.op.apply(x, tmp);
        self.base.apply(tmp, out);
        self.applications.fetch_add(1, Ordering::Relaxed);
    }

    fn run(&self, y: &[f64], w: &mut [f64], buf: &mut [Vec<f64>; 4]) {
        let [q, kq, kkq, tmp] = buf;
        self.base.apply(y, q);
        w.iter_mut().for_each(|v| *v = 0.0);
        let mut j = 0;
        while j < self.ritz.len() {
            let th = self.ritz[j];
            if th.im == 0.0 {
                let inv = 1.0 / th.re;
                self.base_op(q, tmp, kq);
                for i in 0..q.len() {
                    w[i] += q[i] * inv;
                    q[i] -= kq[i] * inv;
                }
                j += 1;
            } else {
                let (a, m2) = (th.re, th.norm_sqr());
                self.base_op(q, tmp, kq);
                self.base_op(kq, tmp, kkq);
                for i in 0..q.len() {
                    w[i] += (2.0 * a * q[i] - kq[i]) / m2;
                    q[i] -= (2.0 * a * kq[i] - kkq[i]) / m2;
                }
                j += 2;
            }
        }
    }
}

impl<A: LinearOperator + ?Sized, P: Preconditioner + ?Sized> Preconditioner for PolynomialPrecond<'_, A, P> {
    fn apply(&self, y: &[f64], z: &mut [f64]) {
        match self.scratch.try_lock() {
            Ok(mut guard) => self.run(y, z, &mut guard),
            Err(_) => {
                let n = y.len();
                let mut buf = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
                self.run(y, z, &mut buf);
            }
        }
    }
}
