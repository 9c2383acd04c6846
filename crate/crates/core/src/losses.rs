//! Classification losses over class distributions.
//!
//! Every loss is reduced by the arithmetic mean over the batch and returns
//! its gradient with respect to the logits that produced the predicted
//! distribution, i.e. the softmax Jacobian is already folded in.
//!
//! Log arguments of predicted probabilities are clamped below at
//! [`PROB_FLOOR`]. Reverse cross entropy replaces `log 0` in the target by
//! [`RCE_LOG_ZERO`], which bounds it to `4·(1 − p_y)` for one-hot targets.

use crate::error::{Error, Result};
use crate::nn::softmax_with_temperature;
use crate::tensor::Tensor;

/// Lower clamp for probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-7;

/// Value substituted for `log 0` in reverse cross entropy.
pub const RCE_LOG_ZERO: f64 = -4.0;

/// Tolerance for a row to count as a probability distribution.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Rows of class probabilities, remembering the softmax temperature used to
/// produce them so gradients can be mapped back onto logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Tensor,
    temperature: f64,
}

impl ClassDistribution {
    pub fn from_logits(logits: &Tensor, temperature: f64) -> Self {
        ClassDistribution {
            probs: softmax_with_temperature(logits, temperature),
            temperature,
        }
    }

    /// Wraps explicit probabilities, checking every row lies on the simplex.
    pub fn from_probs(probs: Tensor) -> Result<Self> {
        let (_, c) = probs.dims2()?;
        if c < 2 {
            return Err(Error::dim("class distributions need at least 2 classes"));
        }
        for i in 0..probs.rows() {
            let row = probs.row(i);
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Validation(format!(
                    "row {i} has a negative or NaN entry"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Validation(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(ClassDistribution {
            probs,
            temperature: 1.0,
        })
    }

    pub(crate) fn from_probs_unchecked(probs: Tensor) -> Self {
        ClassDistribution {
            probs,
            temperature: 1.0,
        }
    }

    pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::dim("no labels"));
        }
        let mut t = Tensor::zeros(vec![labels.len(), num_classes]);
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::Validation(format!(
                    "label {y} out of range for {num_classes} classes"
                )));
            }
            t.row_mut(i)[y] = 1.0;
        }
        Ok(ClassDistribution {
            probs: t,
            temperature: 1.0,
        })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn into_probs(self) -> Tensor {
        self.probs
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.row_len()
    }
}

/// A scalar loss and its gradient with respect to the prediction's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Tensor,
}

fn check_shapes(a: &ClassDistribution, b: &ClassDistribution) -> Result<()> {
    if a.probs.shape() != b.probs.shape() {
        return Err(Error::dim(format!(
            "distribution shapes differ: {:?} vs {:?}",
            a.probs.shape(),
            b.probs.shape()
        )));
    }
    Ok(())
}

/// `−Σ g·log max(p, floor)` for one row.
fn ce_row(p: &[f64], g: &[f64]) -> f64 {
    -p.iter()
        .zip(g)
        .filter(|(_, &gi)| gi != 0.0)
        .map(|(&pi, &gi)| gi * pi.max(PROB_FLOOR).ln())
        .sum::<f64>()
}

/// Softmax-composed gradient of one row of [`ce_row`], scaled by `k`.
///
/// With `dL/dp_i = −g_i/p_i` on unclamped entries and zero elsewhere, the
/// chain through softmax is `p_i·(1 − Σ_clamped g) − g_i·[unclamped]`, using
/// `Σ g = 1`.
fn ce_grad_row(p: &[f64], g: &[f64], k: f64, out: &mut [f64]) {
    let clamped_mass: f64 = p
        .iter()
        .zip(g)
        .filter(|(&pi, _)| pi < PROB_FLOOR)
        .map(|(_, &gi)| gi)
        .sum();
    let kept = 1.0 - clamped_mass;
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(g) {
        let direct = if pi < PROB_FLOOR { 0.0 } else { gi };
        *o += k * (pi * kept - direct);
    }
}

/// `−log g` with `log 0` replaced by [`RCE_LOG_ZERO`].
fn neg_log_target(g: f64) -> f64 {
    if g > RCE_LOG_ZERO.exp() {
        -g.ln()
    } else {
        -RCE_LOG_ZERO
    }
}

pub fn cross_entropy(pred: &ClassDistribution, target: &ClassDistribution) -> Result<LossValue> {
    check_shapes(pred, target)?;
    let b = pred.rows();
    let k = 1.0 / (b as f64 * pred.temperature);
    let mut grad = Tensor::zeros(pred.probs.shape().to_vec());
    let mut total = 0.0;
    for i in 0..b {
        let (p, g) = (pred.probs.row(i), target.probs.row(i));
        total += ce_row(p, g);
        ce_grad_row(p, g, k, grad.row_mut(i));
    }
    Ok(LossValue {
        value: total / b as f64,
        grad,
    })
}

pub fn reverse_cross_entropy(
    pred: &ClassDistribution,
    target: &ClassDistribution,
) -> Result<LossValue> {
    check_shapes(pred, target)?;
    let b = pred.rows();
    let k = 1.0 / (b as f64 * pred.temperature);
    let mut grad = Tensor::zeros(pred.probs.shape().to_vec());
    let mut total = 0.0;
    for i in 0..b {
        let (p, g) = (pred.probs.row(i), target.probs.row(i));
        let a: Vec<f64> = g.iter().map(|&gi| neg_log_target(gi)).collect();
        let row_value: f64 = p.iter().zip(&a).map(|(pi, ai)| pi * ai).sum();
        total += row_value;
        for ((o, &pi), &ai) in grad.row_mut(i).iter_mut().zip(p).zip(&a) {
            *o = k * pi * (ai - row_value);
        }
    }
    Ok(LossValue {
        value: total / b as f64,
        grad,
    })
}

/// `λ·CE + RCE`.
pub fn symmetric_loss(
    pred: &ClassDistribution,
    target: &ClassDistribution,
    lambda: f64,
) -> Result<LossValue> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let ce = cross_entropy(pred, target)?;
    let rce = reverse_cross_entropy(pred, target)?;
    let mut grad = rce.grad;
    for (g, c) in grad.data_mut().iter_mut().zip(ce.grad.data()) {
        *g += lambda * c;
    }
    Ok(LossValue {
        value: lambda * ce.value + rce.value,
        grad,
    })
}

/// Mean over rows of `Σ d1·log(d1 / max(d2, floor))`.
pub fn kl_divergence(d1: &ClassDistribution, d2: &ClassDistribution) -> Result<f64> {
    check_shapes(d1, d2)?;
    let b = d1.rows();
    let total: f64 = (0..b)
        .map(|i| kl_row(d1.probs.row(i), d2.probs.row(i)))
        .sum();
    Ok(total / b as f64)
}

fn kl_row(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum()
}

/// `Σ_peers KL(peer ‖ own)`; the gradient flows into `own` only.
pub fn peer_learning_loss(
    own: &ClassDistribution,
    peers: &[&ClassDistribution],
) -> Result<LossValue> {
    if peers.is_empty() {
        return Err(Error::Config(
            "peer learning needs at least one peer".into(),
        ));
    }
    for peer in peers {
        check_shapes(own, peer)?;
    }
    let b = own.rows();
    let k = 1.0 / (b as f64 * own.temperature);
    let mut grad = Tensor::zeros(own.probs.shape().to_vec());
    let mut value = 0.0;
    for peer in peers {
        value += kl_divergence(peer, own)?;
        for i in 0..b {
            ce_grad_row(own.probs.row(i), peer.probs.row(i), k, grad.row_mut(i));
        }
    }
    Ok(LossValue { value, grad })
}
