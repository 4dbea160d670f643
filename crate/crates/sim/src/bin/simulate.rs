use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dmasim::config::{self, parse_arch, RunConfig};
use dmasim::sweep::{parse_values, write_csv, write_traces};
use dmasim::{run_experiment, sweep, Scheme, SimError, SweepVariable};
use serde_json::Value;

/// Run a beamforming scheme on a scenario and write the results as CSV.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Args {
    /// Scenario file (TOML, or JSON with a `.json` extension). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Scheme(s), comma separated: wmmse-sic, wmmse-nsic, pdd, relaxed-ao, no-opt, icsi-wmmse, icsi-pdd.
    #[arg(long, value_delimiter = ',', required = true)]
    scheme: Vec<String>,

    /// Variable to sweep: N, L, S, K0 (dB), Pmax (dBm) or K.
    #[arg(long, requires = "values")]
    sweep: Option<String>,

    /// Sweep values, comma separated.
    #[arg(long, requires = "sweep", allow_hyphen_values = true)]
    values: Option<String>,

    /// Master seed (overrides the file).
    #[arg(long)]
    seed: Option<u64>,

    /// Monte-Carlo trials (overrides the file).
    #[arg(long)]
    trials: Option<usize>,

    /// Results CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Per-iteration convergence traces CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,

    /// Architecture for energy efficiency: DMA, HB or FD (overrides the file).
    #[arg(long)]
    arch: Option<String>,

    /// Worker threads; all cores when omitted.
    #[arg(long)]
    workers: Option<usize>,
}

fn resolve(args: &Args) -> Result<RunConfig, SimError> {
    let mut tree = match &args.config {
        Some(path) => config::read_tree(path)?,
        None => Value::Object(Default::default()),
    };
    config::apply_env(&mut tree, std::env::vars())?;
    let mut file = config::from_tree(tree)?;
    if args.seed.is_some() {
        file.seed = args.seed;
    }
    if args.trials.is_some() {
        file.trials = args.trials;
    }
    let mut rc = file.resolve()?;
    if let Some(a) = &args.arch {
        rc.arch = parse_arch(a)?;
    }
    Ok(rc)
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, SimError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| SimError::Io {
            path: path.display().to_string(),
            source: e,
        })
}

fn run(args: Args) -> Result<(), SimError> {
    let rc = resolve(&args)?;
    let schemes = args
        .scheme
        .iter()
        .map(|s| s.parse::<Scheme>())
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(n) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| SimError::Config {
                key: "workers".into(),
                reason: e.to_string(),
            })?;
    }
    let results = match (&args.sweep, &args.values) {
        (Some(var), Some(values)) => {
            let variable: SweepVariable = var.parse()?;
            sweep(&rc, &schemes, variable, &parse_values(values)?)
        }
        _ => schemes.iter().map(|&s| run_experiment(&rc, s)).collect(),
    };
    match &args.out {
        Some(path) => write_csv(create(path)?, &results)?,
        None => write_csv(io::stdout().lock(), &results)?,
    }
    if let Some(path) = &args.trace_out {
        write_traces(create(path)?, &results)?;
    }
    for r in &results {
        eprintln!(
            "{} {}{} fingerprint={} wall={:.3}s flags=[{}]",
            r.scheme,
            r.variable.as_deref().unwrap_or(""),
            r.value.map(|v| format!("={v}")).unwrap_or_default(),
            &r.fingerprint[..16],
            r.wall_clock.as_secs_f64(),
            r.flags.join(";"),
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "{}", e.machine_line());
            ExitCode::from(if e.kind() == "config" || e.kind() == "parse" {
                2
            } else {
                1
            })
        }
    }
}
