// Non-IID client splits: smaller gamma concentrates each class on fewer
// clients.

use std::error::Error;

use hetfl::data::{dirichlet_partition, generate_synthetic};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let data = generate_synthetic(6, 2, 1200, 3)?;
    for gamma in [0.1, 0.5, 1e6] {
        let plan = dirichlet_partition(&data, 4, gamma, 11)?;
        println!(
            "gamma = {gamma:<8} skew {:.3}",
            plan.skew(data.labels(), data.num_classes())
        );
        for (p, idx) in plan.assignments.iter().enumerate() {
            let mut hist = vec![0usize; data.num_classes()];
            for &i in idx {
                hist[data.labels()[i]] += 1;
            }
            println!("  client {p}: {:>4} samples, per class {hist:?}", idx.len());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
