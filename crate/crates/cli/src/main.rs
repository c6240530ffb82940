//! `p2eig`: command-line driver for the (p,2)-Laplacian eigenvalue
//! laboratory. Subcommands cover the linear baseline, first-eigenpair
//! solves, branch tracing, multiplicity hunts, and the verification battery.
//!
//! Exit codes: 0 success, 2 bad configuration, 3 trivial verdict from a
//! solve, 4 solver failure, 5 failed verification.

// `!(a < b)` also rejects NaN arguments, unlike `a >= b`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use p2eig_core::bifurcation::trace_branch;
use p2eig_core::functionals::EnergySetting;
use p2eig_core::grid::{Grid, GridSpec};
use p2eig_core::multiplicity::find_k_solutions;
use p2eig_core::solver::{linear_eigs, solve_first, SolveOutcome, SolverConfig};
use p2eig_core::verify::run_verification;
use p2eig_core::Error;

use output::Series;

#[derive(Parser)]
#[command(
    name = "p2eig",
    version,
    about = "Numerical laboratory for the (p,2)-Laplacian Dirichlet eigenvalue problem"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues and eigenfunctions of the linear Dirichlet Laplacian.
    Linear {
        #[command(flatten)]
        grid: GridArgs,
        /// How many of the lowest eigenpairs to compute.
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// First eigenpair of the nonlinear problem at a fixed lambda.
    Solve {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Trace the first-eigenpair branch over a lambda window.
    Branch {
        #[command(flatten)]
        grid: GridArgs,
        /// Exponent p of the p-Laplacian part; any value in (1, inf) except 2.
        #[arg(long)]
        p: f64,
        /// Smallest lambda station.
        #[arg(long)]
        lambda_min: f64,
        /// Largest lambda station.
        #[arg(long)]
        lambda_max: f64,
        /// Number of evenly spaced stations.
        #[arg(long, default_value_t = 8)]
        stations: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Hunt for k distinct solution pairs at one lambda.
    Multiplicity {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        problem: ProblemArgs,
        /// Requested number of distinct pairs.
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the full invariant battery and print the report.
    Verify {
        /// Seed for every randomised check in the battery.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GridArgs {
    /// Spatial dimension: 1 (interval) or 2 (rectangle).
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Cells per axis, e.g. `--cells 256` or `--cells 64,48`.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    cells: Vec<usize>,
    /// Domain endpoints: `a,b` in 1D, `a,b,c,d` in 2D. Defaults to unit size.
    #[arg(long, value_delimiter = ',')]
    bounds: Option<Vec<f64>>,
    /// JSON grid description; overrides --dim/--cells/--bounds.
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Args)]
struct ProblemArgs {
    /// Exponent p of the p-Laplacian part; any value in (1, inf) except 2.
    #[arg(long)]
    p: f64,
    /// Spectral parameter.
    #[arg(long)]
    lambda: f64,
    /// Regularisation floor for the p-term weight (0 = exact).
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
}

#[derive(Args)]
struct SolverArgs {
    /// Gradient norm at which a solve counts as converged.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Seed for randomised starts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Args)]
struct OutArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

/// Per-eigenpair record in the `linear` JSON artifact.
#[derive(Serialize)]
struct LinearPair {
    k: usize,
    lambda: f64,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct LinearRecord {
    schema: u32,
    grid: GridSpec,
    pairs: Vec<LinearPair>,
}

#[derive(Serialize)]
struct TrivialRecord {
    schema: u32,
    verdict: &'static str,
    p: f64,
    lambda: f64,
    first_eigenvalue: f64,
    final_l2: f64,
}

#[derive(Serialize)]
struct BranchRecord {
    schema: u32,
    p: f64,
    grid: GridSpec,
    points: Vec<p2eig_core::BranchPoint>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_solver_failure() {
                ExitCode::from(4)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Linear { grid, k, out } => cmd_linear(&grid, k, &out),
        Command::Solve {
            grid,
            problem,
            solver,
            out,
        } => cmd_solve(&grid, &problem, &solver, &out),
        Command::Branch {
            grid,
            p,
            lambda_min,
            lambda_max,
            stations,
            solver,
            out,
        } => cmd_branch(&grid, p, lambda_min, lambda_max, stations, &solver, &out),
        Command::Multiplicity {
            grid,
            problem,
            k,
            solver,
            out,
        } => cmd_multiplicity(&grid, &problem, k, &solver, &out),
        Command::Verify { seed, out } => cmd_verify(seed, out.as_deref()),
    }
}

fn make_grid(args: &GridArgs) -> Result<Grid, Error> {
    if let Some(path) = &args.grid {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let spec: GridSpec = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("bad grid file {}: {e}", path.display())))?;
        return Grid::from_spec(&spec);
    }
    let bounds: Vec<f64> = match &args.bounds {
        Some(b) => b.clone(),
        None => {
            if args.dim == 1 {
                vec![0.0, 1.0]
            } else {
                vec![0.0, 1.0, 0.0, 1.0]
            }
        }
    };
    let cells: Vec<usize> = if args.dim == 2 && args.cells.len() == 1 {
        vec![args.cells[0], args.cells[0]]
    } else {
        args.cells.clone()
    };
    Grid::new(args.dim, &bounds, &cells)
}

fn make_config(args: &SolverArgs) -> Result<SolverConfig, Error> {
    let mut config = SolverConfig {
        gradient_tol: args.tol,
        seed: args.seed,
        ..SolverConfig::default()
    };
    if let Ok(raw) = std::env::var("P2EIG_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("P2EIG_THREADS={raw} is not a count")))?;
        config.threads = n.max(1);
    }
    config.validate()?;
    Ok(config)
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, content)
            .map_err(|e| Error::InvalidConfig(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_linear(grid_args: &GridArgs, k: usize, out: &OutArgs) -> Result<u8, Error> {
    if k == 0 {
        return Err(Error::InvalidEigenCount {
            k,
            reason: "at least one eigenpair must be requested".into(),
        });
    }
    let grid = make_grid(grid_args)?;
    let pairs = linear_eigs(&grid, k)?;
    for (i, (lambda, _)) in pairs.iter().enumerate() {
        eprintln!("lambda_{} = {}", i + 1, output::fmt(*lambda));
    }
    let content = match out.format {
        Format::Json => {
            let record = LinearRecord {
                schema: 1,
                grid: grid.spec(),
                pairs: pairs
                    .iter()
                    .enumerate()
                    .map(|(i, (lambda, u))| LinearPair {
                        k: i + 1,
                        lambda: *lambda,
                        values: u.values().to_vec(),
                    })
                    .collect(),
            };
            to_pretty_json(&record)?
        }
        Format::Csv => {
            let rows: Vec<(f64, Vec<f64>)> = pairs
                .iter()
                .map(|(l, u)| (*l, u.values().to_vec()))
                .collect();
            output::linear_csv(&rows)
        }
        Format::Svg => {
            let series: Vec<Series> = pairs
                .iter()
                .enumerate()
                .map(|(i, (lambda, u))| Series {
                    label: format!("lambda_{} = {:.4}", i + 1, lambda),
                    points: profile_points(&grid, u.values()),
                })
                .collect();
            output::polyline_svg("Dirichlet Laplacian eigenfunctions", "x", "u", &series, false)
        }
    };
    emit(&out.out, &content)?;
    Ok(0)
}

fn cmd_solve(
    grid_args: &GridArgs,
    problem: &ProblemArgs,
    solver: &SolverArgs,
    out: &OutArgs,
) -> Result<u8, Error> {
    let grid = make_grid(grid_args)?;
    let setting = EnergySetting::new(problem.p, problem.lambda, problem.epsilon)?;
    let config = make_config(solver)?;
    match solve_first(&grid, &setting, &config)? {
        SolveOutcome::Nontrivial(pair) => {
            eprintln!(
                "nontrivial pair: lambda = {}, residual = {:.3e}, energy = {:.6e}",
                output::fmt(pair.lambda),
                pair.residual,
                pair.energy
            );
            let content = match out.format {
                Format::Json => pair.to_json(problem.p),
                Format::Csv => output::field_csv(&grid, pair.u.values()),
                Format::Svg => {
                    let series = [Series {
                        label: format!("p={}, lambda={}", problem.p, problem.lambda),
                        points: profile_points(&grid, pair.u.values()),
                    }];
                    output::polyline_svg("first eigenfunction profile", "x", "u", &series, false)
                }
            };
            emit(&out.out, &content)?;
            Ok(0)
        }
        SolveOutcome::Trivial(report) => {
            eprintln!(
                "trivial verdict: lambda = {} <= first eigenvalue {}",
                output::fmt(report.lambda),
                output::fmt(report.first_eigenvalue)
            );
            let record = TrivialRecord {
                schema: 1,
                verdict: "trivial",
                p: problem.p,
                lambda: report.lambda,
                first_eigenvalue: report.first_eigenvalue,
                final_l2: report.final_l2,
            };
            emit(&out.out, &to_pretty_json(&record)?)?;
            Ok(3)
        }
    }
}

fn cmd_branch(
    grid_args: &GridArgs,
    p: f64,
    lambda_min: f64,
    lambda_max: f64,
    stations: usize,
    solver: &SolverArgs,
    out: &OutArgs,
) -> Result<u8, Error> {
    if stations < 2 || !(lambda_min < lambda_max) {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 stations and lambda_min < lambda_max, got {stations} on \
             [{lambda_min}, {lambda_max}]"
        )));
    }
    let grid = make_grid(grid_args)?;
    let config = make_config(solver)?;
    let step = (lambda_max - lambda_min) / (stations - 1) as f64;
    let lambdas: Vec<f64> = (0..stations).map(|i| lambda_min + step * i as f64).collect();
    let branch = trace_branch(&grid, p, &lambdas, &config)?;
    for pt in &branch.points {
        eprintln!(
            "lambda = {:<22} |u|_2 = {:<22} residual = {:.3e}",
            format!("{:.12}", pt.lambda),
            format!("{:.12}", pt.l2_norm),
            pt.residual
        );
    }
    let content = match out.format {
        Format::Json => to_pretty_json(&BranchRecord {
            schema: 1,
            p,
            grid: grid.spec(),
            points: branch.points.clone(),
        })?,
        Format::Csv => output::branch_csv(&branch.points),
        Format::Svg => {
            let series = [Series {
                label: format!("p={p}"),
                points: branch.points.iter().map(|pt| (pt.lambda, pt.l2_norm)).collect(),
            }];
            let spread = branch
                .points
                .iter()
                .map(|pt| pt.l2_norm)
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let log_y = spread.0 > 0.0 && spread.1 / spread.0 > 100.0;
            output::polyline_svg("first-eigenpair branch", "lambda", "|u|_2", &series, log_y)
        }
    };
    emit(&out.out, &content)?;
    Ok(0)
}

fn cmd_multiplicity(
    grid_args: &GridArgs,
    problem: &ProblemArgs,
    k: usize,
    solver: &SolverArgs,
    out: &OutArgs,
) -> Result<u8, Error> {
    let grid = make_grid(grid_args)?;
    let setting = EnergySetting::new(problem.p, problem.lambda, problem.epsilon)?;
    let config = make_config(solver)?;
    let catalog = find_k_solutions(&grid, &setting, k, &config)?;
    eprintln!(
        "found {} of {} requested pairs at p = {}, lambda = {}",
        catalog.entries.len(),
        k,
        problem.p,
        problem.lambda
    );
    for note in &catalog.diagnostics {
        eprintln!("note: {note}");
    }
    let content = match out.format {
        Format::Json => catalog.to_json(),
        Format::Csv => output::catalog_csv(&catalog),
        Format::Svg => {
            let series: Vec<Series> = catalog
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| Series {
                    label: format!("{} nodal domains", e.nodal_domains),
                    points: profile_points(&grid, catalog.entries[i].u.values()),
                })
                .collect();
            output::polyline_svg("solution catalog profiles", "x", "u", &series, false)
        }
    };
    emit(&out.out, &content)?;
    Ok(0)
}

fn cmd_verify(seed: u64, out: Option<&std::path::Path>) -> Result<u8, Error> {
    let report = run_verification(seed)?;
    let rendered = report.render();
    print!("{rendered}");
    if let Some(path) = out {
        fs::write(path, &rendered)
            .map_err(|e| Error::InvalidConfig(format!("cannot write {}: {e}", path.display())))?;
    }
    if report.passed() {
        Ok(0)
    } else {
        Ok(5)
    }
}

/// 1D: the profile itself. 2D: the horizontal midline slice.
fn profile_points(grid: &Grid, values: &[f64]) -> Vec<(f64, f64)> {
    if grid.dim() == 1 {
        values
            .iter()
            .enumerate()
            .map(|(slot, v)| (grid.interior_coords(slot)[0], *v))
            .collect()
    } else {
        let [nx, ny] = grid.cells();
        let iy = ny / 2;
        (1..nx)
            .filter_map(|ix| {
                grid.slot_of_indices(ix, iy)
                    .map(|slot| (grid.interior_coords(slot)[0], values[slot]))
            })
            .collect()
    }
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::InvalidConfig(format!("serialisation failed: {e}")))
}
