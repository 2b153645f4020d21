//! `hdg`: solve, sweep, rate-study and matrix-dump front end.

mod args;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use hdg_core::local::assemble_element_operators;
use hdg_core::study::{
    build_discretization, build_model, convergence_study, initial_state, parse_config, parse_variant, run_sweep, try_run_row,
    write_rates_csv, write_sweep_csv, write_sweep_json, RateRow,
};
use hdg_core::{assemble_global, set_num_threads, write_dump, CaseName, CaseSpec, HdgError, SweepRow};

use args::{CaseArgs, Cli, Command, DumpArgs, RatesArgs, SolveArgs, SweepArgs};

const EXIT_USAGE: u8 = 1;
const EXIT_NONCONVERGED: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(e: &HdgError) -> u8 {
    if e.is_nonconvergence() {
        EXIT_NONCONVERGED
    } else if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Defaults, then the config file, then explicit flags.
fn build_spec(args: &CaseArgs) -> hdg_core::Result<CaseSpec> {
    let mut spec = CaseSpec::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HdgError::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
        for (k, v) in parse_config(&text)? {
            spec.apply_setting(&k, &v)?;
        }
    }
    for (k, v) in args.settings() {
        spec.apply_setting(k, &v)?;
    }
    spec.validate()?;
    Ok(spec)
}

fn open_output(path: Option<&Path>) -> hdg_core::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_summary(row: &SweepRow) {
    let mut out = io::stdout().lock();
    let dt = row.dt.map_or_else(|| "-".to_string(), |d| format!("{d} x {}", row.steps));
    let l2 = row.l2_error.map_or_else(|| "-".to_string(), |e| format!("{e:.6e}"));
    let lines = [
        ("case", row.case.clone()),
        ("k / n", format!("{} / {}", row.k, row.n)),
        ("precond", row.precond.clone()),
        ("mode", format!("{} ({dt})", row.mode)),
        ("converged", row.converged.to_string()),
        ("residual", format!("{:.6e}", row.residual_final)),
        ("n_newton", row.n_newton.to_string()),
        ("n_gmres", row.n_gmres.to_string()),
        ("n_poly_applications", row.n_poly_applications.to_string()),
        ("l2_error", l2),
        ("t_ass", format!("{:.6} s", row.t_ass)),
        ("t_mv", format!("{:.6} s", row.t_mv)),
        ("t_prec", format!("{:.6} s", row.t_prec)),
        ("t_orth", format!("{:.6} s", row.t_orth)),
        ("t_total", format!("{:.6} s", row.t_total)),
    ];
    for (k, v) in lines {
        let _ = writeln!(out, "{k:<20} {v}");
    }
}

fn dump_initial_system(spec: &CaseSpec, path: &Path) -> hdg_core::Result<()> {
    let disc = build_discretization(spec)?;
    let model = build_model(spec);
    let state = initial_state(spec, &disc);
    let u_prev = state.u.clone();
    let time = match spec.time {
        hdg_core::TimeMode::Transient { dt, .. } => Some(hdg_core::TimeTerm { dt, u_prev: &u_prev }),
        hdg_core::TimeMode::Steady => None,
    };
    let ops = assemble_element_operators(&disc, model.as_ref(), &state, time)?;
    let (k, r) = assemble_global(&ops, &disc.mesh)?;
    write_dump(BufWriter::new(File::create(path)?), &k, &r)?;
    log::info!("wrote {} trace unknowns to {}", k.n_dof(), path.display());
    Ok(())
}

fn solve(args: &SolveArgs) -> hdg_core::Result<u8> {
    let spec = build_spec(&args.case)?;
    if let Some(path) = &args.dump_matrix {
        dump_initial_system(&spec, path)?;
    }
    let row = try_run_row(&spec, true)?;
    if args.json {
        let mut out = io::stdout().lock();
        serde_json::to_writer_pretty(&mut out, &row).map_err(|e| HdgError::Format(e.to_string()))?;
        writeln!(out)?;
    } else {
        print_summary(&row);
    }
    if let Some(path) = &spec.output {
        let file = BufWriter::new(File::create(path)?);
        if args.json {
            write_sweep_json(file, std::slice::from_ref(&row))?;
        } else {
            write_sweep_csv(file, std::slice::from_ref(&row))?;
        }
    }
    Ok(if row.converged { 0 } else { EXIT_NONCONVERGED })
}

fn sweep(args: &SweepArgs) -> hdg_core::Result<u8> {
    let base = build_spec(&args.case)?;
    let cases = if args.cases.is_empty() { vec![base.case] } else { args.cases.clone() };
    let ks = if args.ks.is_empty() { vec![base.k] } else { args.ks.clone() };
    let ns = if args.ns.is_empty() { vec![base.n] } else { args.ns.clone() };
    let variants = args.variants.iter().map(|v| parse_variant(v)).collect::<hdg_core::Result<Vec<_>>>()?;
    let mut specs = Vec::with_capacity(cases.len() * ks.len() * ns.len() * variants.len());
    for &case in &cases {
        for &k in &ks {
            for &n in &ns {
                for &(kind, p) in &variants {
                    let mut s = base.clone();
                    s.case = case;
                    s.k = k;
                    s.n = n;
                    s.solver.precond = kind;
                    s.solver.poly_degree = p.unwrap_or(0);
                    s.validate()?;
                    specs.push(s);
                }
            }
        }
    }
    log::info!("running {} cases", specs.len());
    let rows = run_sweep(&specs, args.parallel_cases);
    for r in rows.iter().filter(|r| !r.converged) {
        log::warn!("{} k={} n={} {}: {}", r.case, r.k, r.n, r.precond, r.error);
    }
    let out = open_output(base.output.as_deref())?;
    if args.json {
        write_sweep_json(out, &rows)?;
    } else {
        write_sweep_csv(out, &rows)?;
    }
    Ok(0)
}

fn rates(args: &RatesArgs) -> hdg_core::Result<u8> {
    let spec = build_spec(&args.case)?;
    if spec.case == CaseName::Burgers2d {
        return Err(HdgError::InvalidConfig("rates needs a case with an exact solution (poisson2d or convdiff2d)".into()));
    }
    let ks = if args.ks.is_empty() { vec![spec.k] } else { args.ks.clone() };
    let ns = if args.ns.is_empty() { vec![spec.n, 2 * spec.n] } else { args.ns.clone() };
    let model = build_model(&spec);
    let rows: Vec<RateRow> = convergence_study(model.as_ref(), &ks, &ns, &spec.newton, &spec.solver)?;
    let mut out = open_output(spec.output.as_deref())?;
    if args.json {
        serde_json::to_writer_pretty(&mut out, &rows).map_err(|e| HdgError::Format(e.to_string()))?;
        writeln!(out)?;
    } else {
        write_rates_csv(out, &rows)?;
    }
    Ok(0)
}

fn dump(args: &DumpArgs) -> hdg_core::Result<u8> {
    let spec = build_spec(&args.case)?;
    let Some(path) = &spec.output else {
        return Err(HdgError::InvalidConfig("dump needs --out".into()));
    };
    dump_initial_system(&spec, path)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().target(env_logger::Target::Stderr).init();
    set_num_threads(cli.threads);
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Rates(a) => rates(a),
        Command::Dump(a) => dump(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
