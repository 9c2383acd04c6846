// Writing a dataset file and running a federation on it.

use std::error::Error;

use hetfl::config::DatasetSource;
use hetfl::data::{load_dataset, save_dataset, SyntheticSpec};
use hetfl::{parse_config_str, run_federation};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = std::env::temp_dir().join("hetfl-dataset-io");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("clusters.txt");

    let spec = SyntheticSpec::new(6, 10, 4);
    save_dataset(&spec.sample(900)?, &path)?;
    let head: String = std::fs::read_to_string(&path)?
        .lines()
        .take(2)
        .collect::<Vec<_>>()
        .join("\n");
    println!("{head}\n...");

    let data = load_dataset(&path)?;
    println!(
        "loaded {} samples, {} features, {} classes",
        data.len(),
        data.dim(),
        data.num_classes()
    );

    let mut cfg = parse_config_str("num_clients = 3\nseed = 5\nrounds = 2\n")?;
    cfg.dataset = DatasetSource::File(path);
    let result = run_federation(&cfg)?;
    println!("average accuracy {:.4}", result.final_row.average_accuracy);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
