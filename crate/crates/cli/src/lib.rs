//! Command-line front end: validate, solve, simulate, compare, fitpwl, bench.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hydrocascade::approx::{fit_pwl_1d_optimal, FitSpec};
use hydrocascade::compare::{compare_tiers, format_table, parse_tiers, run_config, Tier};
use hydrocascade::formulation::{build_model, ObjectiveSpec};
use hydrocascade::io::{self, IoError, Loaded};
use hydrocascade::simulate::{fidelity_gap, simulate};
use hydrocascade::solve::{default_backend, diagnose_infeasibility, extract_schedule, Diagnosis, SolveOptions, SolveStatus};
use hydrocascade::synthetic::{generate, SyntheticOptions};

/// Environment variable holding the default solver time limit in seconds.
pub const TIME_LIMIT_ENV: &str = "HYDRO_TIME_LIMIT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hydrocascade", version, about = "Short-term scheduling of hydropower cascades")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Wall-clock limit per solve in seconds (default from HYDRO_TIME_LIMIT, else 600).
    #[arg(long)]
    time_limit: Option<f64>,
    /// Relative MIP gap.
    #[arg(long, default_value_t = 1e-6)]
    mip_gap: f64,
    /// Solver threads.
    #[arg(long)]
    threads: Option<u32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a cascade file.
    Validate { file: PathBuf },
    /// Build, solve and extract a schedule.
    Solve {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Named tier replacing the file's fidelity section.
        #[arg(long)]
        tier: Option<Tier>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Replay a schedule through the nonlinear simulator.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve and simulate several tiers on one instance.
    Compare {
        file: PathBuf,
        #[arg(long, default_value = "lp_fixed,lp_mccormick,milp_pwl")]
        tiers: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Fewest-piece continuous PWL fit within a uniform error bound.
    Fitpwl {
        /// Two-column `x,y` CSV.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        max_pieces: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-tier objective and solve time on synthetic cascades.
    Bench {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Sizes as `RESERVOIRSxUNITS`, comma separated.
        #[arg(long, default_value = "1x1,2x1,3x1")]
        sizes: String,
        #[arg(long, default_value_t = 6)]
        periods: usize,
        #[arg(long, default_value = "lp_fixed,milp_pwl1d,milp_pwl,milp_poz")]
        tiers: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

enum Failure {
    Input(String),
    NoSolution(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Input(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Runs one command. Results go to stdout and files, diagnostics to stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Validate { file } => validate(&file),
        Command::Solve { file, out, tier, solver } => solve_cmd(&file, &out, tier, &solver),
        Command::Simulate { file, schedule, out } => simulate_cmd(&file, &schedule, &out),
        Command::Compare { file, tiers, out, solver } => compare_cmd(&file, &tiers, &out, &solver),
        Command::Fitpwl { samples, epsilon, max_pieces, out } => fitpwl(&samples, epsilon, max_pieces, &out),
        Command::Bench { seed, sizes, periods, tiers, out, solver } => bench(seed, &sizes, periods, &tiers, &out, &solver),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INPUT
        }
        Err(Failure::NoSolution(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INFEASIBLE
        }
    }
}

fn solve_options(args: &SolverArgs) -> Result<SolveOptions, Failure> {
    let time_limit = match args.time_limit {
        Some(t) => t,
        None => match std::env::var(TIME_LIMIT_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Failure::Input(format!("{TIME_LIMIT_ENV}=`{v}` is not a number of seconds")))?,
            Err(_) => SolveOptions::default().time_limit,
        },
    };
    let opts = SolveOptions { time_limit, mip_gap: args.mip_gap, threads: args.threads };
    opts.validate().map_err(Failure::Input)?;
    Ok(opts)
}

fn load(file: &Path) -> Result<Loaded, Failure> {
    Ok(io::parse_cascade_file(file)?)
}

fn validate(file: &Path) -> CmdResult {
    let l = load(file)?;
    println!(
        "ok: {} reservoirs, {} units, {} arcs, {} periods",
        l.system.reservoirs.len(),
        l.system.units.len(),
        l.system.arcs.len(),
        l.system.n_periods()
    );
    Ok(())
}

fn solve_cmd(file: &Path, out: &Path, tier: Option<Tier>, solver: &SolverArgs) -> CmdResult {
    let opts = solve_options(solver)?;
    let l = load(file)?;
    let (name, config) = match tier {
        Some(t) => (t.name().to_string(), l.config_for(t)),
        None => ("file".to_string(), l.config.clone()),
    };
    let built = build_model(&l.system, &l.inflows, &config).map_err(|e| Failure::Input(e.to_string()))?;
    let backend = default_backend();
    let sol = backend.solve(&built.model, &opts);
    let schedule = if sol.status.has_solution() {
        Some(extract_schedule(&sol, &built.model, &l.system).map_err(|e| Failure::NoSolution(e.to_string()))?)
    } else {
        None
    };
    let summary = io::solve_summary(&name, &sol, schedule.as_ref(), built.model.n_vars(), built.model.n_binaries());
    io::write_file(&out.join("summary.txt"), &summary)?;
    match schedule {
        Some(s) => {
            io::write_schedule_csv(&out.join("schedule.csv"), &s)?;
            if sol.status == SolveStatus::FeasibleLimit {
                eprintln!("warning: limit reached before proving optimality ({})", sol.message);
            }
            print!("{summary}");
            Ok(())
        }
        None => {
            let mut msg = format!("solve ended with status {}: {}", sol.status, sol.message);
            if sol.status == SolveStatus::Infeasible {
                match diagnose_infeasibility(&built.model, backend.as_ref(), &opts) {
                    Diagnosis::ElevationBounds(bounds) => {
                        msg.push_str("\nrelaxing these elevation bounds restores feasibility:");
                        for b in bounds {
                            let _ = write!(msg, "\n  {} {} by {:.6}", b.variable, b.side, b.violation);
                        }
                    }
                    Diagnosis::Elsewhere => msg.push_str("\ninfeasible even with elastic elevation bounds"),
                    Diagnosis::Inconclusive(why) => {
                        let _ = write!(msg, "\ndiagnosis inconclusive: {why}");
                    }
                }
            }
            Err(Failure::NoSolution(msg))
        }
    }
}

fn simulate_cmd(file: &Path, schedule: &Path, out: &Path) -> CmdResult {
    let l = load(file)?;
    let sched = io::read_schedule_csv(schedule, l.system.time_grid.dt)?;
    let report = simulate(&l.system, &sched, &l.inflows).map_err(|e| Failure::Input(e.to_string()))?;
    let gap = fidelity_gap(&sched, &report);
    let mut summary = io::simulation_summary(&report);
    let _ = writeln!(summary, "max_head_error_m: {:?}", gap.max_head_error);
    io::write_file(&out.join("summary.txt"), &summary)?;
    io::write_file(&out.join("report.csv"), &io::report_to_csv(&report))?;
    io::write_file(&out.join("violations.csv"), &io::violations_to_csv(&report))?;
    if !report.violations.is_empty() {
        eprintln!("warning: {} constraint violations, see violations.csv", report.violations.len());
    }
    print!("{summary}");
    Ok(())
}

fn compare_cmd(file: &Path, tiers: &str, out: &Path, solver: &SolverArgs) -> CmdResult {
    let opts = solve_options(solver)?;
    let tiers = parse_tiers(tiers).map_err(|e| Failure::Input(e.to_string()))?;
    let l = load(file)?;
    let backend = default_backend();
    let runs: Vec<_> = tiers
        .iter()
        .map(|t| run_config(t.name(), &l.system, &l.inflows, &l.config_for(*t), backend.as_ref(), &opts))
        .collect();
    let table = format_table(&runs);
    io::write_file(&out.join("gaps.csv"), &io::gaps_to_csv(&runs))?;
    io::write_file(&out.join("summary.txt"), &table)?;
    for r in &runs {
        if let Some(s) = &r.schedule {
            io::write_schedule_csv(&out.join(format!("schedule_{}.csv", r.tier)), s)?;
        }
    }
    print!("{table}");
    for r in runs.iter().filter(|r| !r.status.has_solution()) {
        eprintln!("{}: {}", r.tier, r.message);
    }
    let failed: Vec<_> = runs.iter().filter(|r| !r.status.has_solution()).map(|r| r.tier.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::NoSolution(format!("no solution for tiers: {}", failed.join(", "))))
    }
}

fn fitpwl(samples: &Path, epsilon: f64, max_pieces: Option<usize>, out: &Path) -> CmdResult {
    let points = io::read_curve_csv(samples)?;
    let curve = fit_pwl_1d_optimal(&points, &FitSpec { epsilon, max_pieces }).map_err(|e| Failure::Input(e.to_string()))?;
    let mut text = String::from("x,y\n");
    for (x, y) in curve.breakpoints() {
        let _ = writeln!(text, "{x:?},{y:?}");
    }
    io::write_file(out, &text)?;
    let err = points.iter().map(|(x, y)| (curve.evaluate(*x) - y).abs()).fold(0.0, f64::max);
    println!("pieces: {}\nmax_abs_error: {err:?}", curve.n_pieces());
    Ok(())
}

fn parse_sizes(sizes: &str) -> Result<Vec<(usize, usize)>, Failure> {
    sizes
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (r, u) = s.trim().split_once('x').ok_or_else(|| Failure::Input(format!("size `{s}` is not RESERVOIRSxUNITS")))?;
            let parse = |v: &str| v.parse::<usize>().ok().filter(|n| *n > 0);
            match (parse(r), parse(u)) {
                (Some(r), Some(u)) => Ok((r, u)),
                _ => Err(Failure::Input(format!("size `{s}` needs two positive integers"))),
            }
        })
        .collect()
}

fn bench(seed: u64, sizes: &str, periods: usize, tiers: &str, out: &Path, solver: &SolverArgs) -> CmdResult {
    let opts = solve_options(solver)?;
    let tiers = parse_tiers(tiers).map_err(|e| Failure::Input(e.to_string()))?;
    let sizes = parse_sizes(sizes)?;
    if periods == 0 {
        return Err(Failure::Input("periods must be positive".into()));
    }
    let backend = default_backend();
    let mut csv = String::from("reservoirs,units_per_reservoir,periods,seed,tier,status,objective,bound,n_vars,n_binaries,solve_time,gap_percent,message\n");
    let mut table = String::new();
    for (n_res, n_units) in sizes {
        let (system, inflows) = generate(&SyntheticOptions::new(n_res, n_units, seed).periods(periods));
        let runs = compare_tiers(&system, &inflows, &tiers, &ObjectiveSpec::energy(), backend.as_ref(), &opts);
        let _ = writeln!(table, "# {n_res} reservoirs x {n_units} units, {periods} periods, seed {seed}");
        table.push_str(&format_table(&runs));
        for r in &runs {
            let _ = writeln!(
                csv,
                "{n_res},{n_units},{periods},{seed},{},{},{:?},{:?},{},{},{:?},{:?},\"{}\"",
                r.tier,
                r.status,
                r.objective,
                r.bound,
                r.n_vars,
                r.n_binaries,
                r.solve_time,
                r.gap_percent,
                r.message.replace('"', "\"\"")
            );
            if !r.status.has_solution() {
                eprintln!("{n_res}x{n_units} {}: {}", r.tier, r.message);
            }
        }
    }
    io::write_file(&out.join("bench.csv"), &csv)?;
    io::write_file(&out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}
