//! Restarted left-preconditioned GMRES.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dense::DenseBatch;
use crate::error::{HdgError, Result};
use crate::trace::{block_matvec, FaceBlockMatrix};

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

pub trait Preconditioner: Sync {
    fn apply(&self, y: &[f64], z: &mut [f64]);
}

impl LinearOperator for FaceBlockMatrix {
    fn dim(&self) -> usize {
        self.n_dof()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        block_matvec(self, x, y).expect("matvec dimensions");
    }
}

/// A single square block used as an operator.
impl LinearOperator for DenseBatch {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        crate::dense::matvec_block(self.block(0), self.rows(), self.cols(), x, y, false);
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPrecond;

impl Preconditioner for IdentityPrecond {
    fn apply(&self, y: &[f64], z: &mut [f64]) {
        z.copy_from_slice(y);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orthogonalization {
    /// Classical Gram-Schmidt with one re-orthogonalization pass.
    #[default]
    Cgs,
    /// Modified Gram-Schmidt, repeated when the norm drops below `1/√2` of
    /// its input.
    Mgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmresConfig {
    pub restart: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub orth: Orthogonalization,
    /// Record `‖VᵀV − I‖_max` at the end of every cycle.
    #[serde(default)]
    pub track_orthogonality: bool,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { restart: 50, tol: 1e-6, max_iters: 1000, orth: Orthogonalization::Cgs, track_orthogonality: false }
    }
}

impl GmresConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restart == 0 {
            return Err(HdgError::InvalidConfig("restart must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(HdgError::InvalidConfig(format!("GMRES tolerance {} outside (0, 1)", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GmresStats {
    /// Arnoldi steps over all cycles.
    pub iters: usize,
    pub restarts: usize,
    /// `‖P⁻¹(b − A x)‖ / ‖P⁻¹(b − A x₀)‖`, recomputed explicitly at exit.
    pub final_rel_residual: f64,
    pub converged: bool,
    pub t_mv: f64,
    pub t_prec: f64,
    pub t_orth: f64,
    /// Least-squares residual estimate after each Arnoldi step.
    pub residual_history: Vec<f64>,
    /// Per cycle: the Givens estimate at the cycle end and the explicit
    /// preconditioned residual computed from the updated iterate.
    pub restart_checks: Vec<(f64, f64)>,
    /// Per cycle `‖VᵀV − I‖_max` when tracking is enabled.
    pub orthogonality_loss: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonalizes `w` against the orthonormal `basis` in place and returns the
/// projection coefficients and the remaining norm. `w` is normalized unless
/// that norm is zero.
pub fn orthogonalize(basis: &[Vec<f64>], w: &mut [f64], mode: Orthogonalization) -> (Vec<f64>, f64) {
    let mut h = vec![0.0; basis.len()];
    match mode {
        Orthogonalization::Mgs => {
            let before = norm(w);
            mgs_pass(basis, w, &mut h);
            // Repeat once when cancellation removed most of `w`.
            if norm(w) < before * std::f64::consts::FRAC_1_SQRT_2 {
                mgs_pass(basis, w, &mut h);
            }
        }
        Orthogonalization::Cgs => {
            for _pass in 0..2 {
                let c: Vec<f64> = basis.iter().map(|v| dot(v, w)).collect();
                for (v, cj) in basis.iter().zip(&c) {
                    w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= cj * vi);
                }
                h.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            }
        }
    }
    let nrm = norm(w);
    if nrm > 0.0 {
        w.iter_mut().for_each(|x| *x /= nrm);
    }
    (h, nrm)
}

fn mgs_pass(basis: &[Vec<f64>], w: &mut [f64], h: &mut [f64]) {
    for (v, hj) in basis.iter().zip(h.iter_mut()) {
        let c = dot(v, w);
        w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
        *hj += c;
    }
}

fn orthogonality_loss(basis: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(a, b) - target).abs());
        }
    }
    worst
}

struct Timed<'a, A: LinearOperator + ?Sized, P: Preconditioner + ?Sized> {
    op: &'a A,
    prec: &'a P,
    stats: GmresStats,
    tmp: Vec<f64>,
}

impl<A: LinearOperator + ?Sized, P: Preconditioner + ?Sized> Timed<'_, A, P> {
    fn prec_op(&mut self, x: &[f64], out: &mut [f64]) {
        let t = Instant::now();
        self.op.apply(x, &mut self.tmp);
        self.stats.t_mv += t.elapsed().as_secs_f64();
        let t = Instant::now();
        self.prec.apply(&self.tmp, out);
        self.stats.t_prec += t.elapsed().as_secs_f64();
    }

    /// `out = P⁻¹ (b − A x)`.
    fn prec_residual(&mut self, b: &[f64], x: &[f64], out: &mut [f64]) {
        let t = Instant::now();
        self.op.apply(x, &mut self.tmp);
        self.stats.t_mv += t.elapsed().as_secs_f64();
        self.tmp.iter_mut().zip(b).for_each(|(v, bi)| *v = bi - *v);
        let t = Instant::now();
        self.prec.apply(&self.tmp, out);
        self.stats.t_prec += t.elapsed().as_secs_f64();
    }
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

/// Solves `P⁻¹ A x = P⁻¹ b` with GMRES(`cfg.restart`) from `x0`.
///
/// Convergence is declared when the preconditioned residual falls below
/// `cfg.tol` times its initial value. Non-convergence within `max_iters` is
/// reported in the stats, not as an error.
pub fn gmres<A, P>(op: &A, prec: &P, b: &[f64], x0: &[f64], cfg: &GmresConfig) -> Result<(Vec<f64>, GmresStats)>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    cfg.validate()?;
    let n = op.dim();
    if b.len() != n || x0.len() != n {
        return Err(HdgError::InconsistentDimensions(format!(
            "GMRES on {n} unknowns with |b| = {} and |x0| = {}",
            b.len(),
            x0.len()
        )));
    }
    let mut run = Timed { op, prec, stats: GmresStats::default(), tmp: vec![0.0; n] };
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    run.prec_residual(b, &x, &mut r);
    let beta0 = norm(&r);
    if !beta0.is_finite() {
        return Err(HdgError::NaNDetected { iteration: 0, what: "initial residual".into() });
    }
    if beta0 == 0.0 {
        run.stats.converged = true;
        return Ok((x, run.stats));
    }
    let target = cfg.tol * beta0;
    let m = cfg.restart;
    let mut beta = beta0;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut hess = vec![0.0; (m + 1) * m]; // column-major (m+1) x m
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    loop {
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k = 0;
        let mut est = beta;
        while k < m && run.stats.iters < cfg.max_iters {
            let mut w = vec![0.0; n];
            run.prec_op(&basis[k], &mut w);
            let t = Instant::now();
            let (h, hnext) = orthogonalize(&basis, &mut w, cfg.orth);
            run.stats.t_orth += t.elapsed().as_secs_f64();
            if !hnext.is_finite() || h.iter().any(|v| !v.is_finite()) {
                return Err(HdgError::NaNDetected { iteration: run.stats.iters, what: "Arnoldi coefficients".into() });
            }
            run.stats.iters += 1;
            let col = &mut hess[k * (m + 1)..(k + 1) * (m + 1)];
            col[..=k].copy_from_slice(&h);
            col[k + 1] = hnext;
            for i in 0..k {
                let (a, bb) = (col[i], col[i + 1]);
                col[i] = cs[i] * a + sn[i] * bb;
                col[i + 1] = -sn[i] * a + cs[i] * bb;
            }
            let (c, s) = givens(col[k], col[k + 1]);
            cs[k] = c;
            sn[k] = s;
            col[k] = c * col[k] + s * col[k + 1];
            col[k + 1] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;
            est = g[k + 1].abs();
            run.stats.residual_history.push(est);
            k += 1;
            let breakdown = hnext <= 1e-14 * h.iter().fold(hnext, |a, v| a.max(v.abs()));
            if breakdown || est <= target {
                break;
            }
            basis.push(w);
        }
        // Back substitution on the triangularized Hessenberg matrix.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hess[j * (m + 1) + i] * y[j];
            }
            y[i] = s / hess[i * (m + 1) + i];
        }
        let t = Instant::now();
        for (j, yj) in y.iter().enumerate() {
            x.iter_mut().zip(&basis[j]).for_each(|(xi, vi)| *xi += yj * vi);
        }
        run.stats.t_orth += t.elapsed().as_secs_f64();
        if cfg.track_orthogonality {
            run.stats.orthogonality_loss.push(orthogonality_loss(&basis[..k.min(basis.len())]));
        }
        run.prec_residual(b, &x, &mut r);
        beta = norm(&r);
        if !beta.is_finite() {
            return Err(HdgError::NaNDetected { iteration: run.stats.iters, what: "restart residual".into() });
        }
        run.stats.restart_checks.push((est, beta));
        if beta <= target {
            run.stats.converged = true;
            break;
        }
        if run.stats.iters >= cfg.max_iters || k == 0 {
            break;
        }
        run.stats.restarts += 1;
    }
    run.stats.final_rel_residual = beta / beta0;
    Ok((x, run.stats))
}
