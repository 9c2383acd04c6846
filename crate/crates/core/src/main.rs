use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hetfl::config::NoiseKind;
use hetfl::data::{save_dataset, SyntheticSpec, DEFAULT_MEAN_SPREAD};
use hetfl::report::{emit_metrics, parse_list, run_grid, Method};
use hetfl::{parse_config, run_federation, Error};

#[derive(Parser)]
#[command(
    name = "hetfl",
    version,
    about = "Heterogeneous federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one federation and write its metrics.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the noise-rate x noise-kind x method grid.
    Grid {
        config: PathBuf,
        /// Comma-separated noise rates, e.g. 0.1,0.2,0.3
        #[arg(long)]
        mu: String,
        /// Comma-separated noise kinds (none, pair, symmetric)
        #[arg(long)]
        kind: String,
        /// Comma-separated methods (full, ce-local, sl-local, ce-collab)
        #[arg(long)]
        method: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Parse and validate a config, printing the resolved values.
    Validate { config: PathBuf },
    /// Write a synthetic dataset, params like `classes=13,dim=16,n=3000,seed=1`.
    GenData { params: String, out_path: PathBuf },
}

fn gen_params(s: &str) -> hetfl::Result<(SyntheticSpec, usize)> {
    let mut spec = SyntheticSpec::new(13, 16, 0);
    spec.mean_spread = DEFAULT_MEAN_SPREAD;
    let mut n = 3000;
    for kv in s.split(',').filter(|x| !x.trim().is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{kv}`")))?;
        let bad = |_| Error::Config(format!("`{k}`: cannot parse `{v}`"));
        match k.trim() {
            "classes" => spec.num_classes = v.trim().parse().map_err(bad)?,
            "dim" => spec.dim = v.trim().parse().map_err(bad)?,
            "n" => n = v.trim().parse().map_err(bad)?,
            "seed" => spec.seed = v.trim().parse().map_err(bad)?,
            "spread" => {
                spec.mean_spread = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("`spread`: cannot parse `{v}`")))?
            }
            other => return Err(Error::Config(format!("unknown gen-data key `{other}`"))),
        }
    }
    Ok((spec, n))
}

fn execute(cmd: Command) -> hetfl::Result<bool> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = parse_config(&config)?;
            let result = run_federation(&cfg)?;
            emit_metrics(std::slice::from_ref(&result), &out)?;
            println!(
                "average accuracy {:.4} after {} round(s); metrics in {}",
                result.final_row.average_accuracy,
                result.per_round.len(),
                out.display()
            );
            Ok(true)
        }
        Command::Grid {
            config,
            mu,
            kind,
            method,
            out,
        } => {
            let cfg = parse_config(&config)?;
            let mus: Vec<f64> = parse_list(&mu)?;
            let kinds: Vec<NoiseKind> = parse_list(&kind)?;
            let methods: Vec<Method> = parse_list(&method)?;
            let outcomes = run_grid(&cfg, &mus, &kinds, &methods)?;
            let mut ok = true;
            let mut results = Vec::new();
            for o in outcomes {
                match o.result {
                    Ok(r) => {
                        println!(
                            "cell {:>3}  {:<9} mu={:<5} {:<9} avg={:.4}",
                            o.cell.index,
                            r.config.noise_kind,
                            r.config.noise_rate,
                            Method::of(&r.config),
                            r.final_row.average_accuracy
                        );
                        results.push(r);
                    }
                    Err(e) => {
                        eprintln!("cell {} failed: {e}", o.cell.index);
                        ok = false;
                    }
                }
            }
            emit_metrics(&results, &out)?;
            Ok(ok)
        }
        Command::Validate { config } => {
            print!("{}", parse_config(&config)?.to_text());
            Ok(true)
        }
        Command::GenData { params, out_path } => {
            let (spec, n) = gen_params(&params)?;
            save_dataset(&spec.sample(n)?, &out_path)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
