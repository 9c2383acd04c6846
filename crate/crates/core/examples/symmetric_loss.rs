// How CE, RCE and the Symmetric loss react to a confident prediction that
// disagrees with its (possibly wrong) label.

use std::error::Error;

use hetfl::losses::{cross_entropy, reverse_cross_entropy, symmetric_loss, ClassDistribution};
use hetfl::Tensor;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let label = ClassDistribution::one_hot(&[0], 3)?;
    println!("p(label)   CE        RCE      SL(λ=0.1)  |dSL/dz|");
    for p in [0.9, 0.5, 0.1, 0.01, 1e-4] {
        let rest = (1.0 - p) / 2.0;
        let pred = ClassDistribution::from_probs(Tensor::from_rows(&[vec![p, rest, rest]])?)?;
        let ce = cross_entropy(&pred, &label)?.value;
        let rce = reverse_cross_entropy(&pred, &label)?.value;
        let sl = symmetric_loss(&pred, &label, 0.1)?;
        let norm = sl.grad.data().iter().map(|g| g * g).sum::<f64>().sqrt();
        println!("{p:<10} {ce:<9.4} {rce:<8.4} {:<10.4} {norm:.4}", sl.value);
    }
    // CE grows without bound as the label becomes implausible; RCE stays
    // below 4, which caps how hard a flipped label can pull the model.
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
