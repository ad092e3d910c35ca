use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use bwadapt::config::load_config;
use bwadapt::model::PolicyMatrix;
use bwadapt::policy::SchemeKind;
use bwadapt::sweep::{sweep, write_csv, SweepSpec};
use bwadapt::validate::{check_case, standard_cases};

const EXIT_CONFIG: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "bwadapt", version, about = "Priority-based bandwidth adaptation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep offered load across schemes and write one CSV row per (scheme, lambda, class).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated total new-call arrival rates (calls/s). Defaults to the config's lambda.
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        /// Comma-separated schemes. Defaults to all three.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<SchemeKind>>,
        /// Replications (seeds) per load point.
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the simulator against Erlang-B and Kaufman-Roberts in reduced modes.
    Validate {
        /// New-call arrivals simulated per case.
        #[arg(long, default_value_t = 1_000_000)]
        arrivals: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the degradation factors and floors of every class and priority.
    PolicyTable {
        #[arg(long)]
        config: PathBuf,
    },
}

fn simulate(
    config: PathBuf,
    lambda_grid: Option<Vec<f64>>,
    schemes: Option<Vec<SchemeKind>>,
    reps: usize,
    out: Option<PathBuf>,
) -> Result<(), (u8, String)> {
    let base = load_config(&config).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let grid = lambda_grid.unwrap_or_else(|| vec![base.lambda]);
    let schemes = schemes.unwrap_or_else(|| SchemeKind::ALL.to_vec());
    let spec = SweepSpec::new(base, grid, schemes, reps);
    info!("running {} points with {} workers", spec.lambda_grid.len() * spec.schemes.len() * reps, spec.workers);
    let points = sweep(&spec).map_err(|e| (EXIT_RUNTIME, e.to_string()))?;
    let io_err = |e: io::Error| (EXIT_RUNTIME, e.to_string());
    match out {
        Some(path) => write_csv(&points, BufWriter::new(File::create(path).map_err(io_err)?)),
        None => write_csv(&points, io::stdout().lock()),
    }
    .map_err(io_err)
}

fn validate(arrivals: u64, seed: u64) -> Result<(), (u8, String)> {
    let cases = standard_cases(arrivals, seed).map_err(|e| (EXIT_RUNTIME, e.to_string()))?;
    let mut failed = 0;
    for case in &cases {
        let report = check_case(case).map_err(|e| (EXIT_RUNTIME, e.to_string()))?;
        print!("{report}");
        if !report.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err((EXIT_VALIDATION, format!("{failed} validation case(s) failed")));
    }
    println!("all validation cases passed");
    Ok(())
}

fn policy_table(config: PathBuf) -> Result<(), (u8, String)> {
    let cfg = load_config(&config).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let matrix = PolicyMatrix::new(cfg.classes);
    let mut out = io::stdout().lock();
    print_policy_table(&matrix, &mut out).map_err(|e| (EXIT_RUNTIME, e.to_string()))
}

fn print_policy_table(matrix: &PolicyMatrix, out: &mut impl Write) -> io::Result<()> {
    let m = matrix.num_classes();
    write!(out, "{:<12} {:>10}", "class", "C_r kbps")?;
    for p in 0..=m {
        write!(out, " {:>14}", format!("gamma p={p}"))?;
    }
    writeln!(out)?;
    for c in matrix.classes() {
        write!(out, "{:<12} {:>10}", c.name, c.requested_kbps)?;
        for g in &c.gamma {
            write!(out, " {:>14.10}", g)?;
        }
        writeln!(out)?;
    }
    writeln!(out)?;
    write!(out, "{:<12} {:>10}", "class", "C_r kbps")?;
    for p in 0..=m {
        write!(out, " {:>14}", format!("floor p={p}"))?;
    }
    writeln!(out)?;
    for (c, floors) in matrix.classes().iter().zip(matrix.floors()) {
        write!(out, "{:<12} {:>10}", c.name, c.requested_kbps)?;
        for f in floors {
            write!(out, " {:>14.10}", f)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, lambda_grid, schemes, reps, out } => {
            simulate(config, lambda_grid, schemes, reps, out)
        }
        Command::Validate { arrivals, seed } => validate(arrivals, seed),
        Command::PolicyTable { config } => policy_table(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
