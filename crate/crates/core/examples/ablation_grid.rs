// Noise rate x method grid, written as CSV files.

use std::error::Error;

use hetfl::config::NoiseKind;
use hetfl::report::{emit_metrics, run_grid, Method};
use hetfl::FederationConfig;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut base = FederationConfig::with_defaults(3, 2);
    base.rounds = 3;
    base.data_samples = 900;

    let cells = run_grid(
        &base,
        &[0.1, 0.3],
        &[NoiseKind::Symmetric],
        &[Method::FULL, Method::CE_LOCAL],
    )?;
    let mut results = Vec::new();
    for cell in cells {
        let r = cell.result?;
        println!(
            "mu = {}  {:<8}  average accuracy {:.4}",
            r.config.noise_rate,
            Method::of(&r.config),
            r.final_row.average_accuracy
        );
        results.push(r);
    }

    let out = std::env::temp_dir().join("hetfl-ablation-grid");
    emit_metrics(&results, &out)?;
    println!("{}", std::fs::read_to_string(out.join("summary.csv"))?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
