//! Command-line driver: scenario parsing, subcommand dispatch, trace and
//! summary output, exit codes reflecting convergence checks.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::scenario::{canned, Mode, ResolvedScenario, RunOutcome, Scenario};
use crate::trace::{write_discrete_csv, write_trace, RunSummary, TraceFormat};

#[derive(Debug, Parser)]
#[command(
    name = "fxt-dispatch",
    about = "Distributed fixed-time economic dispatch simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory for traces and summaries (default: FXT_OUT_DIR or .)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the integrator step.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Override the convergence tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Trace file format.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Fan out this many seeded independent trials.
    #[arg(long, global = true, default_value_t = 1)]
    trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for TraceFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TraceFormat::Csv,
            FormatArg::Json => TraceFormat::Json,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the continuous protocol for a scenario file.
    Simulate { scenario: PathBuf },
    /// Run the capacity-constrained dispatch loop for a scenario file.
    Constrained { scenario: PathBuf },
    /// Run the discrete-time scheme for a scenario file.
    Discrete {
        scenario: PathBuf,
        /// Step parameter of the mismatch recursion.
        #[arg(long)]
        h: Option<f64>,
        /// Iteration cap.
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Print the reference dispatch for a case file at a given demand.
    Oracle {
        case: PathBuf,
        #[arg(long)]
        demand: f64,
    },
    /// Print the settling-time and gain bounds for a scenario file.
    Bounds { scenario: PathBuf },
    /// Re-run a canned case study: iv-a, iv-b, or iv-c.
    Reproduce { study: String },
}

/// Parses argv and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's rendered help/diagnostic, but fold every usage
            // problem into exit code 1
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { 0 } else { 1 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::NotConverged { .. } | Error::MaxIterations { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("FXT_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn execute(cli: Cli) -> crate::Result<i32> {
    let out = out_dir(&cli);
    std::fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.display().to_string(),
        source,
    })?;
    match &cli.command {
        Command::Simulate { scenario } => {
            let s = load_scenario(scenario, &cli, Some(Mode::Unconstrained))?;
            run_trials(&cli, &out, s, scenario.parent())
        }
        Command::Constrained { scenario } => {
            let s = load_scenario(scenario, &cli, Some(Mode::Constrained))?;
            run_trials(&cli, &out, s, scenario.parent())
        }
        Command::Discrete {
            scenario,
            h,
            max_iters,
        } => {
            let mut s = load_scenario(scenario, &cli, Some(Mode::Discrete))?;
            if let Some(h) = h {
                s.h = *h;
            }
            if max_iters.is_some() {
                s.max_iters = *max_iters;
            }
            run_trials(&cli, &out, s, scenario.parent())
        }
        Command::Oracle { case, demand } => {
            let case = crate::scenario::CaseRef::Name(case.display().to_string())
                .resolve(None)?;
            let solution = crate::oracle::constrained_optimum(&case.generators, *demand)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&solution).expect("solution serializes")
            );
            Ok(0)
        }
        Command::Bounds { scenario } => {
            let s = load_scenario(scenario, &cli, None)?;
            let resolved = s.resolve(scenario.parent())?;
            let bounds = resolved.bounds()?;
            println!(
                "{}",
                serde_json::to_string_pretty(&bounds).expect("bounds serialize")
            );
            Ok(0)
        }
        Command::Reproduce { study } => {
            let mut s = canned(study).ok_or_else(|| {
                Error::Validation(format!(
                    "unknown study '{study}' (expected iv-a, iv-b, or iv-c)"
                ))
            })?;
            apply_overrides(&mut s, &cli);
            run_trials(&cli, &out, s, None)
        }
    }
}

fn load_scenario(path: &Path, cli: &Cli, force_mode: Option<Mode>) -> crate::Result<Scenario> {
    let mut s = Scenario::from_file(path)?;
    if let Some(mode) = force_mode {
        s.mode = mode;
    }
    apply_overrides(&mut s, cli);
    Ok(s)
}

fn apply_overrides(s: &mut Scenario, cli: &Cli) {
    if let Some(seed) = cli.seed {
        s.seed = seed;
        s.noise.seed = 0; // re-derive from the run seed
    }
    if let Some(dt) = cli.dt {
        s.dt = Some(dt);
    }
    if let Some(tol) = cli.tol {
        s.tol = tol;
    }
}

fn run_trials(
    cli: &Cli,
    out: &Path,
    scenario: Scenario,
    base_dir: Option<&Path>,
) -> crate::Result<i32> {
    let trials = cli.trials.max(1);
    let mut summaries: Vec<RunSummary> = Vec::new();
    let mut all_pass = true;

    if trials == 1 {
        let resolved = scenario.resolve(base_dir)?;
        let outcomes = resolved.run()?;
        for (idx, outcome) in outcomes.iter().enumerate() {
            write_outcome(cli, out, &resolved, outcome, idx)?;
            all_pass &= outcome.summary.pass;
            summaries.push(outcome.summary.clone());
        }
    } else {
        // independent seeded trials, merged deterministically by seed order
        let base_seed = scenario.seed;
        let workers = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(trials);
        let jobs: Vec<(usize, Scenario)> = (0..trials)
            .map(|i| {
                let mut s = scenario.clone();
                s.seed = base_seed.wrapping_add(i as u64);
                s.noise.seed = 0;
                s.name = format!("{}-t{}", s.name, i);
                (i, s)
            })
            .collect();
        let mut results: Vec<Option<crate::Result<Vec<RunOutcome>>>> =
            (0..trials).map(|_| None).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results_mutex = std::sync::Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    let res = jobs[i]
                        .1
                        .resolve(base_dir)
                        .and_then(|resolved| resolved.run());
                    results_mutex.lock().unwrap()[i] = Some(res);
                });
            }
        });
        for (i, slot) in results.into_iter().enumerate() {
            let outcomes = slot.expect("every trial ran")?;
            let resolved = jobs[i].1.resolve(base_dir)?;
            for (idx, outcome) in outcomes.iter().enumerate() {
                write_outcome(cli, out, &resolved, outcome, idx)?;
                all_pass &= outcome.summary.pass;
                summaries.push(outcome.summary.clone());
            }
        }
    }

    println!(
        "{}",
        serde_json::to_string_pretty(&summaries).expect("summaries serialize")
    );
    Ok(if all_pass { 0 } else { 2 })
}

fn write_outcome(
    cli: &Cli,
    out: &Path,
    resolved: &ResolvedScenario,
    outcome: &RunOutcome,
    init_idx: usize,
) -> crate::Result<()> {
    let name = if resolved.scenario.name.is_empty() {
        "scenario".to_string()
    } else {
        resolved.scenario.name.clone()
    };
    let stem = format!("{name}-seed{}-init{init_idx}", resolved.scenario.seed);
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source: std::io::Error| Error::Io {
            path: path.clone(),
            source,
        }
    };

    if let Some(trace) = &outcome.trace {
        let ext = match cli.format {
            FormatArg::Csv => "csv",
            FormatArg::Json => "json",
        };
        let path = out.join(format!("{stem}.trace.{ext}"));
        write_trace(trace, cli.format.into(), &path)?;
    }
    if let Some(algo) = &outcome.algorithm {
        if !algo.discrete_rows.is_empty() {
            let path = out.join(format!("{stem}.iterations.csv"));
            let file = std::fs::File::create(&path).map_err(io_err(&path))?;
            let mut buf = std::io::BufWriter::new(file);
            write_discrete_csv(&algo.discrete_rows, &mut buf).map_err(io_err(&path))?;
        }
        if !algo.rounds.is_empty() {
            let path = out.join(format!("{stem}.rounds.json"));
            let text =
                serde_json::to_string_pretty(&algo.rounds).expect("rounds serialize");
            std::fs::write(&path, text).map_err(io_err(&path))?;
        }
    }
    let path = out.join(format!("{stem}.summary.json"));
    let text = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}
