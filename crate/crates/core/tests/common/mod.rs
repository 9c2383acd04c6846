//! Test-only oracles, written independently of the library's loss code.

#![allow(dead_code)]

use hetfl::nn::Model;
use hetfl::Tensor;

pub const FD_STEP: f64 = 1e-5;

pub fn softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean CE against one-hot labels, clamped at 1e-7.
pub fn ce_oracle(logits: &Tensor, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -softmax_row(logits.row(i))[y].max(1e-7).ln())
        .sum::<f64>()
        / labels.len() as f64
}

/// Mean RCE against one-hot labels with log 0 := -4.
pub fn rce_oracle(logits: &Tensor, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let p = softmax_row(logits.row(i));
            p.iter()
                .enumerate()
                .map(|(j, pj)| if j == y { 0.0 } else { 4.0 * pj })
                .sum::<f64>()
        })
        .sum::<f64>()
        / labels.len() as f64
}

pub fn sl_oracle(logits: &Tensor, labels: &[usize], lambda: f64) -> f64 {
    lambda * ce_oracle(logits, labels) + rce_oracle(logits, labels)
}

/// Σ_peers mean_rows KL(peer ‖ softmax(logits)).
pub fn peer_kl_oracle(logits: &Tensor, peers: &[Tensor]) -> f64 {
    peers
        .iter()
        .map(|peer| {
            (0..logits.rows())
                .map(|i| {
                    let q = softmax_row(logits.row(i));
                    peer.row(i)
                        .iter()
                        .zip(&q)
                        .filter(|(&p, _)| p > 0.0)
                        .map(|(&p, &qi)| p * (p / qi.max(1e-7)).ln())
                        .sum::<f64>()
                })
                .sum::<f64>()
                / logits.rows() as f64
        })
        .sum()
}

/// Central finite differences of `loss(model.infer(x))` for every parameter.
/// Returns one vector per objective, in `model.params()` order flattened.
pub fn fd_gradients(
    model: &mut Model,
    x: &Tensor,
    objectives: &[&dyn Fn(&Tensor) -> f64],
) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); objectives.len()];
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    for (pi, &n) in sizes.iter().enumerate() {
        for j in 0..n {
            let orig = model.params()[pi].data()[j];
            model.params_mut()[pi].data_mut()[j] = orig + FD_STEP;
            let up = model.infer(x).unwrap();
            model.params_mut()[pi].data_mut()[j] = orig - FD_STEP;
            let down = model.infer(x).unwrap();
            model.params_mut()[pi].data_mut()[j] = orig;
            for (k, f) in objectives.iter().enumerate() {
                out[k].push((f(&up) - f(&down)) / (2.0 * FD_STEP));
            }
        }
    }
    out
}

pub fn flat_grads(model: &Model) -> Vec<f64> {
    model
        .grads()
        .iter()
        .flat_map(|g| g.data().iter().copied())
        .collect()
}

/// Largest elementwise relative error, with magnitudes floored at `floor`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Smallest |input| to any ReLU over the batch. Central differences are
/// only meaningful when no perturbation can push one across zero.
pub fn relu_margin(model: &Model, x: &Tensor) -> f64 {
    use hetfl::nn::Layer;
    let layers = model.layers();
    let mut margin = f64::INFINITY;
    for (k, layer) in layers.iter().enumerate() {
        if let Layer::Relu { .. } = layer {
            let prefix = Model::new("probe", model.input_dim(), layers[..k].to_vec()).unwrap();
            let z = prefix.infer(x).unwrap();
            margin = z.data().iter().fold(margin, |m, v| m.min(v.abs()));
        }
    }
    margin
}

/// Minimum ReLU margin for a gradient-check draw, ten FD steps.
pub const KINK_MARGIN: f64 = 10.0 * FD_STEP;

/// One (model, batch, labels) draw for a gradient check. Candidates with a
/// ReLU input within `KINK_MARGIN` of zero are redrawn, since the loss is
/// not differentiable inside the stencil there. Returns the redraw count.
pub fn gradient_draw(
    spec: &hetfl::models::ArchitectureSpec,
    batch: usize,
    draw: u64,
) -> (Model, Tensor, Vec<usize>, usize) {
    use rand::{Rng, SeedableRng};
    for attempt in 0..100u64 {
        let seed = draw * 1000 + attempt;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let model = spec.init_model(seed).unwrap();
        let x = Tensor::new(
            vec![batch, spec.input_dim],
            (0..batch * spec.input_dim)
                .map(|_| rng.sample(rand_distr::StandardNormal))
                .collect(),
        )
        .unwrap();
        let labels = (0..batch)
            .map(|_| rng.gen_range(0..spec.num_classes))
            .collect();
        if relu_margin(&model, &x) >= KINK_MARGIN {
            return (model, x, labels, attempt as usize);
        }
    }
    panic!("no kink-free draw for {}", spec.arch_id);
}

/// Worst relative error of the analytic CE, RCE and SL(λ) gradients
/// against central differences, in that order.
pub fn loss_gradient_errors(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    lambda: f64,
) -> [f64; 3] {
    use hetfl::losses::{cross_entropy, reverse_cross_entropy, symmetric_loss, ClassDistribution};
    let classes = model.num_classes();
    let target = ClassDistribution::one_hot(labels, classes).unwrap();
    let mut analytic = Vec::new();
    for which in 0..3 {
        let logits = model.forward(x).unwrap();
        let pred = ClassDistribution::from_logits(&logits, 1.0);
        let loss = match which {
            0 => cross_entropy(&pred, &target),
            1 => reverse_cross_entropy(&pred, &target),
            _ => symmetric_loss(&pred, &target, lambda),
        }
        .unwrap();
        model.backward(&loss.grad).unwrap();
        analytic.push(flat_grads(model));
    }
    let ce = |z: &Tensor| ce_oracle(z, labels);
    let rce = |z: &Tensor| rce_oracle(z, labels);
    let sl = |z: &Tensor| sl_oracle(z, labels, lambda);
    let numeric = fd_gradients(model, x, &[&ce, &rce, &sl]);
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = max_rel_err(&analytic[k], &numeric[k], 1e-6);
    }
    out
}
