//! Damped Newton on the condensed trace system, steady or backward Euler.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{HdgError, Result};
use crate::krylov::{gmres, GmresConfig, GmresStats, Preconditioner};
use crate::local::{assemble_element_operators, recover_local, residuals, Discretization, StateFields, TimeTerm};
use crate::models::PdeModel;
use crate::precond::{compute_harmonic_ritz, BaseKind, BasePrecond, PolynomialPrecond, PreconditionedOperator};
use crate::trace::assemble_global;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_newton: usize,
    pub min_alpha: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_newton: 50, min_alpha: 1.0 / 1024.0 }
    }
}

/// Linear solver settings for each Newton correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub precond: BaseKind,
    /// Polynomial degree; 0 disables the polynomial layer.
    pub poly_degree: usize,
    pub ritz_seed: u64,
    pub gmres: GmresConfig,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { precond: BaseKind::Asm, poly_degree: 0, ritz_seed: 1, gmres: GmresConfig::default() }
    }
}

impl SolverOptions {
    /// `bj`, `asm`, `bj-pp(10)`, ...
    pub fn label(&self) -> String {
        match self.poly_degree {
            0 => self.precond.label().to_string(),
            p => format!("{}-pp({p})", self.precond.label()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveReport {
    pub n_newton: usize,
    pub n_gmres_total: usize,
    /// Inner operator applications of the polynomial preconditioner.
    pub n_poly_applications: usize,
    pub gmres_per_newton: Vec<usize>,
    pub gmres_converged: Vec<bool>,
    /// Nonlinear residual norm before the first and after every accepted step.
    pub residual_history: Vec<f64>,
    pub alphas: Vec<f64>,
    pub ritz_breakdowns: usize,
    pub t_ass: f64,
    pub t_mv: f64,
    pub t_prec: f64,
    pub t_orth: f64,
    pub t_total: f64,
    pub converged: bool,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }

    fn add_gmres(&mut self, st: &GmresStats) {
        self.n_gmres_total += st.iters;
        self.gmres_per_newton.push(st.iters);
        self.gmres_converged.push(st.converged);
        self.t_mv += st.t_mv;
        self.t_prec += st.t_prec;
        self.t_orth += st.t_orth;
    }
}

fn combined_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().chain(b).map(|v| v * v).sum::<f64>().sqrt()
}

/// `R_u` per element and the face-assembled `R_û` at `state`.
pub fn assemble_residual(
    disc: &Discretization,
    model: &dyn PdeModel,
    state: &StateFields,
    time: Option<TimeTerm<'_>>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (ru, rt) = residuals(disc, model, state, time)?;
    Ok((rt, ru))
}

/// `√(‖R_u‖² + ‖R_û‖²)`.
pub fn residual_norm(
    disc: &Discretization,
    model: &dyn PdeModel,
    state: &StateFields,
    time: Option<TimeTerm<'_>>,
) -> Result<f64> {
    let (rt, ru) = assemble_residual(disc, model, state, time)?;
    Ok(combined_norm(&rt, &ru))
}

/// Solves one linearized trace system and returns `δû`.
fn linear_solve(
    disc: &Discretization,
    k: &crate::trace::FaceBlockMatrix,
    r: &[f64],
    ops: &crate::local::ElementOperators,
    opts: &SolverOptions,
    report: &mut SolveReport,
) -> Result<Vec<f64>> {
    let t = Instant::now();
    let base = BasePrecond::build(opts.precond, k, ops, &disc.mesh)?;
    let x0 = vec![0.0; r.len()];
    if opts.poly_degree == 0 {
        report.t_prec += t.elapsed().as_secs_f64();
        let (x, st) = gmres(k, &base, r, &x0, &opts.gmres)?;
        report.add_gmres(&st);
        return Ok(x);
    }
    let pre_op = PreconditionedOperator { op: k, prec: &base };
    let degree = opts.poly_degree.min(r.len());
    let ritz = compute_harmonic_ritz(&pre_op, degree, opts.ritz_seed)?;
    if ritz.breakdown.is_some() {
        report.ritz_breakdowns += 1;
    }
    let poly = PolynomialPrecond::new(k, &base, ritz.values)?;
    report.t_prec += t.elapsed().as_secs_f64();
    let (x, st) = gmres(k, &poly as &dyn Preconditioner, r, &x0, &opts.gmres)?;
    report.add_gmres(&st);
    report.n_poly_applications += poly.operator_applications();
    Ok(x)
}

/// Damped Newton from `initial`. Each iteration condenses, solves the trace
/// system with preconditioned GMRES, recovers `δu` and halves the step until
/// the nonlinear residual norm decreases.
pub fn newton_solve(
    disc: &Discretization,
    model: &dyn PdeModel,
    initial: &StateFields,
    cfg: &NewtonConfig,
    opts: &SolverOptions,
    time: Option<TimeTerm<'_>>,
) -> Result<(StateFields, SolveReport)> {
    if !(cfg.tol > 0.0) || !(cfg.min_alpha > 0.0) {
        return Err(HdgError::InvalidConfig("Newton tolerance and minimum step must be positive".into()));
    }
    opts.gmres.validate()?;
    let t_start = Instant::now();
    let mut report = SolveReport::default();
    let mut state = initial.clone();
    state.refresh_q(disc);
    let t = Instant::now();
    let mut norm = residual_norm(disc, model, &state, time)?;
    report.t_ass += t.elapsed().as_secs_f64();
    report.residual_history.push(norm);
    while norm > cfg.tol && report.n_newton < cfg.max_newton {
        let t = Instant::now();
        let ops = assemble_element_operators(disc, model, &state, time)?;
        let (k, r) = assemble_global(&ops, &disc.mesh)?;
        report.t_ass += t.elapsed().as_secs_f64();
        let duhat = linear_solve(disc, &k, &r, &ops, opts, &mut report)?;
        let t = Instant::now();
        let du = recover_local(disc, &ops, &duhat)?;
        let mut alpha = 1.0;
        let accepted = loop {
            let mut trial = state.clone();
            trial.u.iter_mut().zip(&du).for_each(|(u, d)| *u += alpha * d);
            trial.uhat.iter_mut().zip(&duhat).for_each(|(u, d)| *u += alpha * d);
            let trial_norm = if trial.is_finite() { residual_norm(disc, model, &trial, time)? } else { f64::INFINITY };
            if trial_norm < norm {
                trial.refresh_q(disc);
                break Some((trial, trial_norm));
            }
            alpha *= 0.5;
            if alpha < cfg.min_alpha {
                break None;
            }
        };
        report.t_ass += t.elapsed().as_secs_f64();
        let Some((next, next_norm)) = accepted else {
            report.t_total = t_start.elapsed().as_secs_f64();
            log::warn!("line search failed at Newton iteration {}", report.n_newton + 1);
            return Err(HdgError::LineSearchFailed { min_alpha: cfg.min_alpha, residual: norm });
        };
        log::debug!(
            "newton {:>3}: |R| = {next_norm:.3e}, alpha = {alpha}, gmres = {}",
            report.n_newton + 1,
            report.gmres_per_newton.last().unwrap_or(&0)
        );
        state = next;
        norm = next_norm;
        report.n_newton += 1;
        report.alphas.push(alpha);
        report.residual_history.push(norm);
    }
    report.converged = norm <= cfg.tol;
    report.t_total = t_start.elapsed().as_secs_f64();
    Ok((state, report))
}

#[derive(Debug, Clone)]
pub struct TimeMarch {
    /// Initial state followed by the state after every step.
    pub states: Vec<StateFields>,
    pub reports: Vec<SolveReport>,
}

/// `n_steps` backward Euler steps of size `dt`, each solved by
/// [`newton_solve`] from the previous step's solution.
pub fn time_march(
    disc: &Discretization,
    model: &dyn PdeModel,
    initial: &StateFields,
    dt: f64,
    n_steps: usize,
    cfg: &NewtonConfig,
    opts: &SolverOptions,
) -> Result<TimeMarch> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(HdgError::InvalidConfig(format!("time step {dt} must be positive")));
    }
    let mut current = initial.clone();
    current.refresh_q(disc);
    let mut out = TimeMarch { states: vec![current.clone()], reports: Vec::with_capacity(n_steps) };
    for step in 0..n_steps {
        let u_prev = current.u.clone();
        let time = TimeTerm { dt, u_prev: &u_prev };
        let (next, report) = newton_solve(disc, model, &current, cfg, opts, Some(time))
            .map_err(|e| HdgError::TimeStep { step, source: Box::new(e) })?;
        current = next;
        out.states.push(current.clone());
        out.reports.push(report);
    }
    Ok(out)
}

/// Sums counts and timers of per-step reports.
pub fn aggregate_reports(reports: &[SolveReport]) -> SolveReport {
    let mut agg = SolveReport { converged: !reports.is_empty() && reports.iter().all(|r| r.converged), ..Default::default() };
    for r in reports {
        agg.n_newton += r.n_newton;
        agg.n_gmres_total += r.n_gmres_total;
        agg.n_poly_applications += r.n_poly_applications;
        agg.gmres_per_newton.extend(&r.gmres_per_newton);
        agg.gmres_converged.extend(&r.gmres_converged);
        agg.alphas.extend(&r.alphas);
        agg.ritz_breakdowns += r.ritz_breakdowns;
        agg.t_ass += r.t_ass;
        agg.t_mv += r.t_mv;
        agg.t_prec += r.t_prec;
        agg.t_orth += r.t_orth;
        agg.t_total += r.t_total;
        if let Some(last) = r.residual_history.last() {
            agg.residual_history.push(*last);
        }
    }
    agg
}
