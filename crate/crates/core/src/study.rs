//! Case descriptions, parameter sweeps and convergence-rate studies, with CSV
//! and JSON output.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::MAX_DEGREE;
use crate::error::{HdgError, Result};
use crate::krylov::Orthogonalization;
use crate::local::{Discretization, StateFields};
use crate::mesh::{build_structured_quad, Rect};
use crate::models::{burgers_model, convdiff_sine, poisson_sine, PdeModel};
use crate::newton::{aggregate_reports, newton_solve, time_march, NewtonConfig, SolveReport, SolverOptions};
use crate::precond::BaseKind;

/// Bumped whenever a CSV column is added, removed or reinterpreted.
pub const SCHEMA_VERSION: u32 = 1;

/// Errors below this are reported as exact in rate tables.
pub const EXACT_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseName {
    Poisson2d,
    Convdiff2d,
    Burgers2d,
}

impl CaseName {
    pub fn label(self) -> &'static str {
        match self {
            CaseName::Poisson2d => "poisson2d",
            CaseName::Convdiff2d => "convdiff2d",
            CaseName::Burgers2d => "burgers2d",
        }
    }
}

impl FromStr for CaseName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "poisson2d" => Ok(CaseName::Poisson2d),
            "convdiff2d" => Ok(CaseName::Convdiff2d),
            "burgers2d" => Ok(CaseName::Burgers2d),
            other => Err(format!("unknown case '{other}' (expected poisson2d, convdiff2d or burgers2d)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TimeMode {
    #[default]
    Steady,
    /// Backward Euler from the initial guess.
    Transient { dt: f64, steps: usize },
}

/// Everything needed to run one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case: CaseName,
    pub k: usize,
    /// Elements per direction, `1/h`.
    pub n: usize,
    #[serde(default)]
    pub quad_points: Option<usize>,
    pub solver: SolverOptions,
    pub newton: NewtonConfig,
    pub time: TimeMode,
    pub nu: f64,
    pub kappa: f64,
    pub velocity: [f64; 2],
    /// Overrides the model's stabilization.
    #[serde(default)]
    pub tau: Option<f64>,
    pub repeat: usize,
    pub warmup: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl Default for CaseSpec {
    fn default() -> Self {
        Self {
            case: CaseName::Burgers2d,
            k: 1,
            n: 16,
            quad_points: None,
            solver: SolverOptions::default(),
            newton: NewtonConfig::default(),
            time: TimeMode::Steady,
            nu: 1.0 / 200.0,
            kappa: 0.1,
            velocity: [1.0, 0.5],
            tau: None,
            repeat: 1,
            warmup: false,
            output: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| HdgError::InvalidConfig(format!("cannot parse '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(HdgError::InvalidConfig(format!("cannot parse '{value}' for {key}"))),
    }
}

impl CaseSpec {
    pub fn seed(&self) -> u64 {
        self.solver.ritz_seed
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HdgError::InvalidConfig(m));
        if !(1..=MAX_DEGREE).contains(&self.k) {
            return bad(format!("degree k = {} outside 1..={MAX_DEGREE}", self.k));
        }
        if self.n == 0 {
            return bad("mesh resolution n must be at least 1".into());
        }
        if let Some(q) = self.quad_points {
            if q < self.k + 1 {
                return bad(format!("{q} quadrature points underintegrate degree {}", self.k));
            }
        }
        if self.repeat == 0 {
            return bad("repeat must be at least 1".into());
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) || !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad("nu and kappa must be positive".into());
        }
        if !self.velocity.iter().all(|v| v.is_finite()) {
            return bad("velocity must be finite".into());
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("tau = {t} must be positive and finite"));
            }
        }
        if let TimeMode::Transient { dt, steps } = self.time {
            if !(dt > 0.0 && dt.is_finite()) || steps == 0 {
                return bad("transient runs need dt > 0 and steps >= 1".into());
            }
        }
        if !(self.newton.tol > 0.0) || !(self.newton.min_alpha > 0.0 && self.newton.min_alpha <= 1.0) {
            return bad("Newton tolerance must be positive and min_alpha in (0, 1]".into());
        }
        self.solver.gmres.validate()
    }

    /// Applies one `key = value` setting. Keys accept `-` or `_`.
    pub fn apply_setting(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "case" => self.case = v.parse().map_err(HdgError::InvalidConfig)?,
            "k" => self.k = parse(&key, v)?,
            "n" => self.n = parse(&key, v)?,
            "quad_points" => self.quad_points = Some(parse(&key, v)?),
            "precond" => {
                let (kind, degree) = parse_variant(v)?;
                self.solver.precond = kind;
                if let Some(p) = degree {
                    self.solver.poly_degree = p;
                }
            }
            "poly_degree" => self.solver.poly_degree = parse(&key, v)?,
            "ritz_seed" | "seed" => self.solver.ritz_seed = parse(&key, v)?,
            "restart" => self.solver.gmres.restart = parse(&key, v)?,
            "gmres_tol" => self.solver.gmres.tol = parse(&key, v)?,
            "max_gmres" => self.solver.gmres.max_iters = parse(&key, v)?,
            "orth" => {
                self.solver.gmres.orth = match v.to_ascii_lowercase().as_str() {
                    "cgs" => Orthogonalization::Cgs,
                    "mgs" => Orthogonalization::Mgs,
                    _ => return Err(HdgError::InvalidConfig(format!("unknown orthogonalization '{v}'"))),
                }
            }
            "newton_tol" => self.newton.tol = parse(&key, v)?,
            "max_newton" => self.newton.max_newton = parse(&key, v)?,
            "min_alpha" => self.newton.min_alpha = parse(&key, v)?,
            "steady" => {
                if parse_bool(&key, v)? {
                    self.time = TimeMode::Steady;
                }
            }
            "dt" => {
                let dt = parse(&key, v)?;
                let steps = match self.time {
                    TimeMode::Transient { steps, .. } => steps,
                    TimeMode::Steady => 1,
                };
                self.time = TimeMode::Transient { dt, steps };
            }
            "steps" => {
                let steps = parse(&key, v)?;
                match &mut self.time {
                    TimeMode::Transient { steps: s, .. } => *s = steps,
                    TimeMode::Steady => {
                        return Err(HdgError::InvalidConfig("steps requires dt to be set first".into()));
                    }
                }
            }
            "tau" => self.tau = Some(parse(&key, v)?),
            "nu" => self.nu = parse(&key, v)?,
            "kappa" => self.kappa = parse(&key, v)?,
            "velocity" => {
                let parts: Vec<&str> = v.split(',').collect();
                if parts.len() != 2 {
                    return Err(HdgError::InvalidConfig(format!("velocity '{v}' needs two components")));
                }
                self.velocity = [parse(&key, parts[0])?, parse(&key, parts[1])?];
            }
            "repeat" => self.repeat = parse(&key, v)?,
            "warmup" => self.warmup = parse_bool(&key, v)?,
            "out" | "output" => self.output = Some(PathBuf::from(v)),
            _ => return Err(HdgError::InvalidConfig(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }
}

/// Parses a `key = value` file. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(HdgError::InvalidConfig(format!("line {}: expected key = value", i + 1)));
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(HdgError::InvalidConfig(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses `bj`, `asm-pp(10)`, `asm-pp10` into a base kind and an optional
/// polynomial degree.
pub fn parse_variant(s: &str) -> Result<(BaseKind, Option<usize>)> {
    let s = s.trim().to_ascii_lowercase();
    let Some((base, poly)) = s.split_once("-pp") else {
        return Ok((s.parse().map_err(HdgError::InvalidConfig)?, None));
    };
    let kind: BaseKind = base.parse().map_err(HdgError::InvalidConfig)?;
    let digits = poly.trim_start_matches('(').trim_end_matches(')');
    let p = digits.parse().map_err(|_| HdgError::InvalidConfig(format!("bad polynomial degree in '{s}'")))?;
    Ok((kind, Some(p)))
}

pub fn build_model(spec: &CaseSpec) -> Box<dyn PdeModel> {
    match spec.case {
        CaseName::Poisson2d => {
            let m = poisson_sine();
            Box::new(match spec.tau {
                Some(t) => m.with_tau(t),
                None => m,
            })
        }
        CaseName::Convdiff2d => {
            let m = convdiff_sine(spec.velocity, spec.kappa);
            Box::new(match spec.tau {
                Some(t) => m.with_tau(t),
                None => m,
            })
        }
        CaseName::Burgers2d => {
            let m = burgers_model(spec.nu);
            Box::new(match spec.tau {
                Some(t) => m.with_tau(t),
                None => m,
            })
        }
    }
}

/// Burgers starts from the boundary data `1 − 2x` everywhere, the linear
/// cases from zero.
pub fn initial_state(spec: &CaseSpec, disc: &Discretization) -> StateFields {
    match spec.case {
        CaseName::Burgers2d => StateFields::interpolate(disc, |x| 1.0 - 2.0 * x[0]),
        _ => StateFields::zeros(disc),
    }
}

pub fn build_discretization(spec: &CaseSpec) -> Result<Discretization> {
    Discretization::new(build_structured_quad(spec.n, Rect::UNIT)?, spec.k, spec.quad_points)
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub disc: Discretization,
    pub state: StateFields,
    /// Totals over all time steps for transient runs.
    pub report: SolveReport,
    pub step_reports: Vec<SolveReport>,
    pub l2_error: Option<f64>,
}

/// Runs `spec` once.
pub fn run_case(spec: &CaseSpec) -> Result<CaseResult> {
    spec.validate()?;
    let disc = build_discretization(spec)?;
    let model = build_model(spec);
    let init = initial_state(spec, &disc);
    let (state, report, step_reports) = match spec.time {
        TimeMode::Steady => {
            let (s, r) = newton_solve(&disc, model.as_ref(), &init, &spec.newton, &spec.solver, None)?;
            (s, r.clone(), vec![r])
        }
        TimeMode::Transient { dt, steps } => {
            let mut march = time_march(&disc, model.as_ref(), &init, dt, steps, &spec.newton, &spec.solver)?;
            let last = march.states.pop().unwrap_or(init);
            (last, aggregate_reports(&march.reports), march.reports)
        }
    };
    let l2_error = match (spec.time, model.exact_solution([0.5, 0.5])) {
        (TimeMode::Steady, Some(_)) => Some(disc.l2_error(&state.u, |x| model.exact_solution(x).unwrap_or(0.0), 2)?),
        _ => None,
    };
    Ok(CaseResult { disc, state, report, step_reports, l2_error })
}

/// Column names of [`SweepRow`], in output order.
pub const SWEEP_COLUMNS: [&str; 27] = [
    "schema_version",
    "case",
    "k",
    "n",
    "precond",
    "poly_degree",
    "mode",
    "dt",
    "steps",
    "n_newton",
    "n_gmres",
    "n_poly_applications",
    "converged",
    "residual_final",
    "l2_error",
    "t_ass",
    "t_mv",
    "t_prec",
    "t_orth",
    "t_total",
    "t_total_min",
    "t_total_median",
    "repeat",
    "seed",
    "tau",
    "timers_reliable",
    "error",
];

/// One CSV line per case. Failed cases keep their parameters, report
/// `converged = false` and carry the message in `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub case: String,
    pub k: usize,
    pub n: usize,
    pub precond: String,
    pub poly_degree: usize,
    pub mode: String,
    pub dt: Option<f64>,
    pub steps: usize,
    pub n_newton: usize,
    pub n_gmres: usize,
    pub n_poly_applications: usize,
    pub converged: bool,
    pub residual_final: f64,
    pub l2_error: Option<f64>,
    pub t_ass: f64,
    pub t_mv: f64,
    pub t_prec: f64,
    pub t_orth: f64,
    pub t_total: f64,
    pub t_total_min: f64,
    pub t_total_median: f64,
    pub repeat: usize,
    pub seed: u64,
    pub tau: Option<f64>,
    pub timers_reliable: bool,
    pub error: String,
}

impl SweepRow {
    /// A row carrying only the parameters of `spec`.
    pub fn skeleton(spec: &CaseSpec, timers_reliable: bool) -> Self {
        let (mode, dt, steps) = match spec.time {
            TimeMode::Steady => ("steady", None, 0),
            TimeMode::Transient { dt, steps } => ("transient", Some(dt), steps),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            case: spec.case.label().into(),
            k: spec.k,
            n: spec.n,
            precond: spec.solver.label(),
            poly_degree: spec.solver.poly_degree,
            mode: mode.into(),
            dt,
            steps,
            n_newton: 0,
            n_gmres: 0,
            n_poly_applications: 0,
            converged: false,
            residual_final: f64::NAN,
            l2_error: None,
            t_ass: 0.0,
            t_mv: 0.0,
            t_prec: 0.0,
            t_orth: 0.0,
            t_total: 0.0,
            t_total_min: 0.0,
            t_total_median: 0.0,
            repeat: spec.repeat,
            seed: spec.seed(),
            tau: spec.tau,
            timers_reliable,
            error: String::new(),
        }
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Runs `spec` with its warm-up and repeats and summarizes the result.
/// Failures become rows with `converged = false` and the message in `error`.
pub fn run_row(spec: &CaseSpec, timers_reliable: bool) -> SweepRow {
    try_run_row(spec, timers_reliable).unwrap_or_else(|e| {
        let mut row = SweepRow::skeleton(spec, timers_reliable);
        row.error = e.to_string();
        row
    })
}

/// Like [`run_row`] but returns the first error instead of recording it.
pub fn try_run_row(spec: &CaseSpec, timers_reliable: bool) -> Result<SweepRow> {
    let mut row = SweepRow::skeleton(spec, timers_reliable);
    spec.validate()?;
    if spec.warmup {
        if let Err(e) = run_case(spec) {
            log::warn!("warm-up run of {} failed: {e}", spec.case.label());
        }
    }
    let runs = (0..spec.repeat).map(|_| run_case(spec)).collect::<Result<Vec<_>>>()?;
    let first = &runs[0];
    if runs.iter().any(|r| r.report.n_gmres_total != first.report.n_gmres_total) {
        log::warn!("iteration counts differ between repeats of {}", spec.case.label());
    }
    let mut totals: Vec<f64> = runs.iter().map(|r| r.report.t_total).collect();
    totals.sort_by(f64::total_cmp);
    let med = median(&totals);
    let rep = &runs
        .iter()
        .min_by(|a, b| (a.report.t_total - med).abs().total_cmp(&(b.report.t_total - med).abs()))
        .unwrap_or(first)
        .report;
    row.n_newton = first.report.n_newton;
    row.n_gmres = first.report.n_gmres_total;
    row.n_poly_applications = first.report.n_poly_applications;
    row.converged = first.report.converged;
    row.residual_final = first.report.final_residual();
    row.l2_error = first.l2_error;
    row.t_ass = rep.t_ass;
    row.t_mv = rep.t_mv;
    row.t_prec = rep.t_prec;
    row.t_orth = rep.t_orth;
    row.t_total = rep.t_total;
    row.t_total_min = totals[0];
    row.t_total_median = med;
    if !row.converged {
        row.error = "not converged".into();
    }
    Ok(row)
}

/// Runs every spec, sequentially unless `parallel_cases` is set, in which
/// case the timers are marked unreliable.
pub fn run_sweep(specs: &[CaseSpec], parallel_cases: bool) -> Vec<SweepRow> {
    if parallel_cases {
        specs.par_iter().map(|s| run_row(s, false)).collect()
    } else {
        specs.iter().map(|s| run_row(s, true)).collect()
    }
}

/// The Burgers table grid: every `(k, n)` with BJ, ASM, BJ-PP(10) and
/// ASM-PP(10), all other settings from `base`.
pub fn burgers_table_specs(ks: &[usize], ns: &[usize], base: &CaseSpec) -> Vec<CaseSpec> {
    let variants = [(BaseKind::Bj, 0), (BaseKind::Asm, 0), (BaseKind::Bj, 10), (BaseKind::Asm, 10)];
    let mut out = Vec::with_capacity(ks.len() * ns.len() * variants.len());
    for &k in ks {
        for &n in ns {
            for (kind, p) in variants {
                let mut s = base.clone();
                s.case = CaseName::Burgers2d;
                s.k = k;
                s.n = n;
                s.solver.precond = kind;
                s.solver.poly_degree = p;
                out.push(s);
            }
        }
    }
    out
}

fn csv_writer<W: Write>(w: W, columns: &[&str]) -> Result<csv::Writer<W>> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(columns).map_err(csv_err)?;
    Ok(wtr)
}

fn csv_err(e: csv::Error) -> HdgError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HdgError::Io(io),
        other => HdgError::Format(format!("{other:?}")),
    }
}

/// Header line followed by one record per row; an empty slice yields the
/// header alone.
pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut wtr = csv_writer(w, &SWEEP_COLUMNS)?;
    for r in rows {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub rows: Vec<SweepRow>,
}

pub fn write_sweep_json<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let report = SweepReport { schema_version: SCHEMA_VERSION, rows: rows.to_vec() };
    serde_json::to_writer_pretty(w, &report).map_err(|e| HdgError::Format(e.to_string()))
}

pub const RATE_COLUMNS: [&str; 7] = ["schema_version", "case", "k", "n", "l2_error", "order", "exact"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub schema_version: u32,
    pub case: String,
    pub k: usize,
    pub n: usize,
    pub l2_error: f64,
    /// `log(e_coarse / e_fine) / log(n_fine / n_coarse)` against the previous
    /// row of the same `k`; empty for the coarsest mesh and for exact rows.
    pub order: Option<f64>,
    pub exact: bool,
}

/// L2 errors of steady solves for every `(k, n)` and the observed orders
/// between consecutive resolutions.
pub fn convergence_study(
    model: &dyn PdeModel,
    ks: &[usize],
    ns: &[usize],
    newton: &NewtonConfig,
    solver: &SolverOptions,
) -> Result<Vec<RateRow>> {
    if model.exact_solution([0.5, 0.5]).is_none() {
        return Err(HdgError::InvalidConfig(format!("model '{}' has no exact solution", model.name())));
    }
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut rows = Vec::with_capacity(ks.len() * ns.len());
    for &k in ks {
        let mut prev: Option<(usize, f64)> = None;
        for &n in &ns {
            let disc = Discretization::new(build_structured_quad(n, Rect::UNIT)?, k, None)?;
            let (state, report) = newton_solve(&disc, model, &StateFields::zeros(&disc), newton, solver, None)?;
            if !report.converged {
                log::warn!("{} k={k} n={n} did not converge", model.name());
            }
            let err = disc.l2_error(&state.u, |x| model.exact_solution(x).unwrap_or(0.0), 2)?;
            let exact = err <= EXACT_THRESHOLD;
            let order = match prev {
                Some((pn, pe)) if !exact && pe > EXACT_THRESHOLD => Some((pe / err).ln() / (n as f64 / pn as f64).ln()),
                _ => None,
            };
            rows.push(RateRow {
                schema_version: SCHEMA_VERSION,
                case: model.name().to_string(),
                k,
                n,
                l2_error: err,
                order,
                exact,
            });
            prev = Some((n, err));
        }
    }
    Ok(rows)
}

pub fn write_rates_csv<W: Write>(w: W, rows: &[RateRow]) -> Result<()> {
    let mut wtr = csv_writer(w, &RATE_COLUMNS)?;
    for r in rows {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}
