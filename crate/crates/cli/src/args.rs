use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hdg_core::CaseName;

#[derive(Debug, Parser)]
#[command(name = "hdg", version, about = "HDG solvers for 2D scalar conservation laws")]
pub struct Cli {
    /// Worker threads for element and face loops; 0 uses every core.
    #[arg(long, global = true, env = "HDG_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Log more (repeat for debug and trace output on stderr).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one case and print a summary.
    Solve(SolveArgs),
    /// Run a grid of cases and write one row per case.
    Sweep(SweepArgs),
    /// Measure L2 errors and observed orders on refined meshes.
    Rates(RatesArgs),
    /// Write the first Newton system in binary form.
    Dump(DumpArgs),
}

/// Case settings. Anything given here overrides the config file.
#[derive(Debug, Args, Default)]
pub struct CaseArgs {
    /// `key = value` settings file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// poisson2d, convdiff2d or burgers2d.
    #[arg(long)]
    pub case: Option<CaseName>,
    /// Polynomial degree.
    #[arg(long)]
    pub k: Option<usize>,
    /// Elements per direction.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub quad_points: Option<usize>,
    /// none, bj, asm, or with a polynomial layer such as asm-pp(10).
    #[arg(long)]
    pub precond: Option<String>,
    #[arg(long)]
    pub poly_degree: Option<usize>,
    /// Seed of the Ritz start vector.
    #[arg(long, alias = "seed")]
    pub ritz_seed: Option<u64>,
    #[arg(long)]
    pub restart: Option<usize>,
    #[arg(long)]
    pub gmres_tol: Option<f64>,
    #[arg(long)]
    pub max_gmres: Option<usize>,
    /// cgs or mgs.
    #[arg(long)]
    pub orth: Option<String>,
    #[arg(long)]
    pub newton_tol: Option<f64>,
    #[arg(long)]
    pub max_newton: Option<usize>,
    /// Smallest line-search step before giving up.
    #[arg(long)]
    pub min_alpha: Option<f64>,
    /// Solve the steady problem even if the config sets a time step.
    #[arg(long, conflicts_with = "dt")]
    pub steady: bool,
    /// Backward Euler time step.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, requires = "dt")]
    pub steps: Option<usize>,
    /// Stabilization override.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Burgers viscosity.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Convection-diffusion diffusivity.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Convection velocity as `bx,by`.
    #[arg(long, allow_hyphen_values = true)]
    pub velocity: Option<String>,
    /// Timed runs per case.
    #[arg(long)]
    pub repeat: Option<usize>,
    /// Run once untimed before the timed runs.
    #[arg(long)]
    pub warmup: bool,
    /// Output file; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

impl CaseArgs {
    /// Explicit flags as settings, in an order where `dt` precedes `steps`.
    pub fn settings(&self) -> Vec<(&'static str, String)> {
        fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
            if let Some(v) = v {
                out.push((key, v.to_string()));
            }
        }
        let mut s = Vec::new();
        push(&mut s, "case", &self.case.map(|c| c.label()));
        push(&mut s, "k", &self.k);
        push(&mut s, "n", &self.n);
        push(&mut s, "quad_points", &self.quad_points);
        push(&mut s, "precond", &self.precond);
        push(&mut s, "poly_degree", &self.poly_degree);
        push(&mut s, "ritz_seed", &self.ritz_seed);
        push(&mut s, "restart", &self.restart);
        push(&mut s, "gmres_tol", &self.gmres_tol);
        push(&mut s, "max_gmres", &self.max_gmres);
        push(&mut s, "orth", &self.orth);
        push(&mut s, "newton_tol", &self.newton_tol);
        push(&mut s, "max_newton", &self.max_newton);
        push(&mut s, "min_alpha", &self.min_alpha);
        if self.steady {
            s.push(("steady", "true".into()));
        }
        push(&mut s, "dt", &self.dt);
        push(&mut s, "steps", &self.steps);
        push(&mut s, "tau", &self.tau);
        push(&mut s, "nu", &self.nu);
        push(&mut s, "kappa", &self.kappa);
        push(&mut s, "velocity", &self.velocity);
        push(&mut s, "repeat", &self.repeat);
        if self.warmup {
            s.push(("warmup", "true".into()));
        }
        push(&mut s, "out", &self.out.as_ref().map(|p| p.display().to_string()));
        s
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Print the summary as JSON and write `--out` as JSON instead of CSV.
    #[arg(long)]
    pub json: bool,
    /// Also write the first Newton system to FILE.
    #[arg(long, value_name = "FILE")]
    pub dump_matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Comma-separated cases; defaults to the single `--case`.
    #[arg(long, value_delimiter = ',')]
    pub cases: Vec<CaseName>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ns: Vec<usize>,
    /// Comma-separated preconditioner variants.
    #[arg(long, value_delimiter = ',', default_value = "bj,asm,bj-pp(10),asm-pp(10)")]
    pub variants: Vec<String>,
    /// Run cases concurrently. Timers are then flagged unreliable.
    #[arg(long)]
    pub parallel_cases: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    /// Mesh sizes; defaults to `n` and `2n`.
    #[arg(long, value_delimiter = ',')]
    pub ns: Vec<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub case: CaseArgs,
}
