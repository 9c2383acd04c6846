//! Small from-scratch network core: layers with hand-written backward
//! passes, numerically stable softmax and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Relu,
    Conv2dSmall,
    Flatten,
}

/// Fully connected layer, `y = x·W + b` with `W` of shape `(fan_in, fan_out)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    grad_weight: Tensor,
    grad_bias: Tensor,
    input: Option<Tensor>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Tensor::zeros(vec![fan_in, fan_out]),
            bias: Tensor::zeros(vec![fan_out]),
            grad_weight: Tensor::zeros(vec![fan_in, fan_out]),
            grad_bias: Tensor::zeros(vec![fan_out]),
            input: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = Tensor::matmul(x, &self.weight)?;
        let b = self.bias.data();
        for i in 0..out.rows() {
            for (o, bv) in out.row_mut(i).iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
        self.grad_weight = Tensor::matmul_tn(input, grad_out)?;
        let gb = self.grad_bias.data_mut();
        gb.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..grad_out.rows() {
            for (g, v) in gb.iter_mut().zip(grad_out.row(i)) {
                *g += v;
            }
        }
        Tensor::matmul_nt(grad_out, &self.weight)
    }
}

/// Single-stride, unpadded 2-d convolution over `(channels, height, width)`
/// feature maps. Accepts flattened `[b × c·h·w]` input as well.
#[derive(Debug, Clone)]
pub struct Conv2dSmall {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Shape `(out_channels, in_channels, kernel, kernel)`.
    pub weight: Tensor,
    pub bias: Tensor,
    grad_weight: Tensor,
    grad_bias: Tensor,
    input: Option<Tensor>,
}

impl Conv2dSmall {
    pub fn zeros(
        in_channels: usize,
        height: usize,
        width: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        let wshape = vec![out_channels, in_channels, kernel, kernel];
        Conv2dSmall {
            in_channels,
            height,
            width,
            out_channels,
            kernel,
            weight: Tensor::zeros(wshape.clone()),
            bias: Tensor::zeros(vec![out_channels]),
            grad_weight: Tensor::zeros(wshape),
            grad_bias: Tensor::zeros(vec![out_channels]),
            input: None,
        }
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.height + 1 - self.kernel, self.width + 1 - self.kernel)
    }

    pub fn output_len(&self) -> usize {
        let (oh, ow) = self.out_hw();
        self.out_channels * oh * ow
    }

    fn check_input(&self, x: &Tensor) -> std::result::Result<(), String> {
        let want = self.in_channels * self.height * self.width;
        if x.shape().len() < 2 || x.row_len() != want {
            return Err(format!(
                "conv2d expects {want} features per sample ({}x{}x{}), got shape {:?}",
                self.in_channels,
                self.height,
                self.width,
                x.shape()
            ));
        }
        Ok(())
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (oh, ow) = self.out_hw();
        let (c, h, w, k) = (self.in_channels, self.height, self.width, self.kernel);
        let b = x.rows();
        let wd = self.weight.data();
        let mut out = Tensor::zeros(vec![b, self.out_channels, oh, ow]);
        for n in 0..b {
            let xin = x.row(n);
            let o = out.row_mut(n);
            for oc in 0..self.out_channels {
                let bias = self.bias.data()[oc];
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = bias;
                        for ic in 0..c {
                            for i in 0..k {
                                let wrow = &wd[((oc * c + ic) * k + i) * k..][..k];
                                let irow = &xin[(ic * h + y + i) * w + xx..][..k];
                                acc += wrow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                        o[(oc * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
        let (oh, ow) = self.out_hw();
        let (c, h, w, k) = (self.in_channels, self.height, self.width, self.kernel);
        let b = input.rows();
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.out_channels];
        let mut gin = Tensor::zeros(input.shape().to_vec());
        let wd = self.weight.data();
        for n in 0..b {
            let xin = input.row(n);
            let g = grad_out.row(n);
            let gi = gin.row_mut(n);
            for oc in 0..self.out_channels {
                for y in 0..oh {
                    for xx in 0..ow {
                        let go = g[(oc * oh + y) * ow + xx];
                        if go == 0.0 {
                            continue;
                        }
                        gb[oc] += go;
                        for ic in 0..c {
                            for i in 0..k {
                                for j in 0..k {
                                    let widx = ((oc * c + ic) * k + i) * k + j;
                                    let iidx = (ic * h + y + i) * w + xx + j;
                                    gw[widx] += go * xin[iidx];
                                    gi[iidx] += go * wd[widx];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.grad_weight = Tensor::new(self.weight.shape().to_vec(), gw)?;
        self.grad_bias = Tensor::new(vec![self.out_channels], gb)?;
        Ok(gin)
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Relu { mask: Option<Vec<bool>> },
    Conv2dSmall(Conv2dSmall),
    Flatten { input_shape: Option<Vec<usize>> },
}

impl Layer {
    pub fn dense(fan_in: usize, fan_out: usize) -> Self {
        Layer::Dense(Dense::zeros(fan_in, fan_out))
    }

    pub fn relu() -> Self {
        Layer::Relu { mask: None }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { input_shape: None }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu { .. } => LayerKind::Relu,
            Layer::Conv2dSmall(_) => LayerKind::Conv2dSmall,
            Layer::Flatten { .. } => LayerKind::Flatten,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2dSmall(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2dSmall(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.grad_weight, &d.grad_bias],
            Layer::Conv2dSmall(c) => vec![&c.grad_weight, &c.grad_bias],
            _ => Vec::new(),
        }
    }

    fn params_and_grads_mut(&mut self) -> Vec<(&mut Tensor, &Tensor)> {
        match self {
            Layer::Dense(d) => vec![(&mut d.weight, &d.grad_weight), (&mut d.bias, &d.grad_bias)],
            Layer::Conv2dSmall(c) => {
                vec![(&mut c.weight, &c.grad_weight), (&mut c.bias, &c.grad_bias)]
            }
            _ => Vec::new(),
        }
    }

    /// Output of this layer without touching any cached state.
    fn infer(&self, x: &Tensor) -> std::result::Result<Tensor, String> {
        match self {
            Layer::Dense(d) => {
                if x.shape().len() != 2 || x.shape()[1] != d.fan_in() {
                    return Err(format!(
                        "dense expects [b x {}] input, got {:?}",
                        d.fan_in(),
                        x.shape()
                    ));
                }
                d.apply(x).map_err(|e| e.to_string())
            }
            Layer::Relu { .. } => {
                let mut out = x.clone();
                out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                Ok(out)
            }
            Layer::Conv2dSmall(c) => {
                c.check_input(x)?;
                c.apply(x).map_err(|e| e.to_string())
            }
            Layer::Flatten { .. } => {
                let (b, w) = (x.rows(), x.row_len());
                x.clone().reshape(vec![b, w]).map_err(|e| e.to_string())
            }
        }
    }

    fn forward(&mut self, x: Tensor) -> std::result::Result<Tensor, String> {
        let out = self.infer(&x)?;
        match self {
            Layer::Dense(d) => d.input = Some(x),
            Layer::Conv2dSmall(c) => c.input = Some(x),
            Layer::Relu { mask } => *mask = Some(x.data().iter().map(|&v| v > 0.0).collect()),
            Layer::Flatten { input_shape } => *input_shape = Some(x.shape().to_vec()),
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: Tensor) -> Result<Tensor> {
        let missing = || Error::State("backward called without a preceding forward".into());
        match self {
            Layer::Dense(d) => {
                let input = d.input.take().ok_or_else(missing)?;
                d.backward(&grad_out, &input)
            }
            Layer::Conv2dSmall(c) => {
                let input = c.input.take().ok_or_else(missing)?;
                c.backward(&grad_out, &input)
            }
            Layer::Relu { mask } => {
                let mask = mask.take().ok_or_else(missing)?;
                let mut g = grad_out;
                for (v, keep) in g.data_mut().iter_mut().zip(mask) {
                    if !keep {
                        *v = 0.0;
                    }
                }
                Ok(g)
            }
            Layer::Flatten { input_shape } => {
                let shape = input_shape.take().ok_or_else(missing)?;
                grad_out.reshape(shape)
            }
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Dense(d) => d.input = None,
            Layer::Conv2dSmall(c) => c.input = None,
            Layer::Relu { mask } => *mask = None,
            Layer::Flatten { input_shape } => *input_shape = None,
        }
    }

    /// Xavier-uniform weights, zero biases.
    fn xavier_init(&mut self, rng: &mut ChaCha8Rng) {
        let (fan_in, fan_out, weight, bias) = match self {
            Layer::Dense(d) => (d.fan_in(), d.fan_out(), &mut d.weight, &mut d.bias),
            Layer::Conv2dSmall(c) => {
                let kk = c.kernel * c.kernel;
                (
                    c.in_channels * kk,
                    c.out_channels * kk,
                    &mut c.weight,
                    &mut c.bias,
                )
            }
            _ => return,
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in weight.data_mut() {
            *w = rng.gen_range(-limit..=limit);
        }
        bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
    }
}

/// A client's private network: an ordered stack of layers.
#[derive(Debug, Clone)]
pub struct Model {
    arch_id: String,
    input_dim: usize,
    layers: Vec<Layer>,
    output_shape: Option<Vec<usize>>,
}

impl Model {
    /// Builds a model and checks that adjacent layers fit together.
    pub fn new(arch_id: impl Into<String>, input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let model = Model {
            arch_id: arch_id.into(),
            input_dim,
            layers,
            output_shape: None,
        };
        let probe = Tensor::zeros(vec![1, input_dim]);
        model.infer(&probe)?;
        Ok(model)
    }

    pub fn arch_id(&self) -> &str {
        &self.arch_id
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::grads).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn num_classes(&self) -> usize {
        let probe = Tensor::zeros(vec![1, self.input_dim]);
        self.infer(&probe).map(|t| t.row_len()).unwrap_or(0)
    }

    /// Re-initialises every parameter from `seed` (Xavier-uniform, zero bias).
    pub fn initialize(&mut self, seed: u64) {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            layer.xavier_init(&mut rng);
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != 2 || batch.shape()[1] != self.input_dim {
            return Err(Error::in_layer(
                0,
                format!(
                    "model `{}` expects [b x {}] input, got {:?}",
                    self.arch_id,
                    self.input_dim,
                    batch.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Logits for `batch` without caching anything for backward.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.infer(&x).map_err(|m| Error::in_layer(i, m))?;
        }
        Ok(x)
    }

    /// Raw logits; caches the activations needed by [`Model::backward`].
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        self.clear_cache();
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            x = layer.forward(x).map_err(|m| Error::in_layer(i, m))?;
        }
        self.output_shape = Some(x.shape().to_vec());
        Ok(x)
    }

    /// Overwrites every layer's parameter gradients given `∂L/∂logits`.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<()> {
        let Some(shape) = self.output_shape.take() else {
            return Err(Error::State(
                "backward called without a preceding forward".into(),
            ));
        };
        if loss_grad.shape() != shape.as_slice() {
            self.clear_cache();
            return Err(Error::dim(format!(
                "loss gradient shape {:?} does not match logits {:?}",
                loss_grad.shape(),
                shape
            )));
        }
        let mut g = loss_grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g)?;
        }
        Ok(())
    }

    fn clear_cache(&mut self) {
        self.output_shape = None;
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Bitwise parameter equality.
    pub fn same_parameters(&self, other: &Model) -> bool {
        let (a, b) = (self.params(), other.params());
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| {
                x.shape() == y.shape()
                    && x.data()
                        .iter()
                        .zip(y.data())
                        .all(|(p, q)| p.to_bits() == q.to_bits())
            })
    }
}

/// Row-wise softmax, stabilised by subtracting each row's maximum.
pub fn softmax(logits: &Tensor) -> Tensor {
    softmax_with_temperature(logits, 1.0)
}

pub fn softmax_with_temperature(logits: &Tensor, temperature: f64) -> Tensor {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / temperature).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Moment estimates and hyper-parameters for bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &Model, alpha: f64) -> Self {
        let m: Vec<Tensor> = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update from the model's current gradients.
///
/// A step where every gradient entry is exactly zero only advances `t`:
/// parameters and moments stay as they are.
pub fn adam_step(model: &mut Model, state: &mut AdamState) -> Result<()> {
    let mut pairs: Vec<(&mut Tensor, &Tensor)> = model
        .layers
        .iter_mut()
        .flat_map(Layer::params_and_grads_mut)
        .collect();
    if pairs.len() != state.m.len()
        || pairs
            .iter()
            .zip(state.m.iter().zip(&state.v))
            .any(|((p, _), (m, v))| p.shape() != m.shape() || p.shape() != v.shape())
    {
        return Err(Error::Config(
            "optimizer state does not match model parameter shapes".into(),
        ));
    }
    state.t += 1;
    if pairs
        .iter()
        .all(|(_, g)| g.data().iter().all(|&x| x == 0.0))
    {
        return Ok(());
    }
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for ((param, grad), (m, v)) in pairs
        .iter_mut()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let it = param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((w, &g), (mi, vi)) in it {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * g;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= state.alpha * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
