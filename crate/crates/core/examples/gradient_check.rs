// Checks the hand-written backward pass of every zoo network against
// central finite differences of the Symmetric loss.

use std::error::Error;

use hetfl::losses::{symmetric_loss, ClassDistribution};
use hetfl::models::register_builtin_zoo;
use hetfl::nn::{Layer, Model};
use hetfl::Tensor;

fn loss_at(model: &Model, x: &Tensor, y: &ClassDistribution) -> Result<f64, Box<dyn Error>> {
    let pred = ClassDistribution::from_logits(&model.infer(x)?, 1.0);
    Ok(symmetric_loss(&pred, y, 0.1)?.value)
}

/// Distance from zero of the ReLU input nearest to its kink. Central
/// differences straddling a kink measure nothing useful.
fn relu_margin(model: &Model, x: &Tensor) -> Result<f64, Box<dyn Error>> {
    let layers = model.layers();
    let mut margin = f64::INFINITY;
    for (k, layer) in layers.iter().enumerate() {
        if let Layer::Relu { .. } = layer {
            let prefix = Model::new("prefix", model.input_dim(), layers[..k].to_vec())?;
            let z = prefix.infer(x)?;
            margin = z.data().iter().fold(margin, |m, v| m.min(v.abs()));
        }
    }
    Ok(margin)
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let x = Tensor::from_rows(&[
        vec![0.3, -1.2, 0.8, 0.1, -0.4, 1.5],
        vec![-0.7, 0.2, 0.9, -1.1, 0.6, 0.05],
    ])?;
    let y = ClassDistribution::one_hot(&[2, 0], 4)?;
    let h = 1e-5;

    for spec in register_builtin_zoo(6, 4) {
        let mut seed = 17;
        while relu_margin(&spec.init_model(seed)?, &x)? < 10.0 * h {
            seed += 1;
        }
        let mut model = spec.init_model(seed)?;
        let logits = model.forward(&x)?;
        let loss = symmetric_loss(&ClassDistribution::from_logits(&logits, 1.0), &y, 0.1)?;
        model.backward(&loss.grad)?;
        let analytic: Vec<f64> = model
            .grads()
            .iter()
            .flat_map(|g| g.data().to_vec())
            .collect();

        let mut worst = 0.0f64;
        let mut k = 0;
        for p in 0..model.params().len() {
            for j in 0..model.params()[p].len() {
                let orig = model.params()[p].data()[j];
                model.params_mut()[p].data_mut()[j] = orig + h;
                let up = loss_at(&model, &x, &y)?;
                model.params_mut()[p].data_mut()[j] = orig - h;
                let down = loss_at(&model, &x, &y)?;
                model.params_mut()[p].data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic[k] - numeric).abs() / scale);
                k += 1;
            }
        }
        println!(
            "{:<12} seed {seed:<3} {:>6} params  ReLU margin {:.1e}  max relative error {worst:.2e}",
            spec.arch_id,
            model.num_parameters(),
            relu_margin(&model, &x)?
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
