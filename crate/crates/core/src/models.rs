//! Architecture registry: the heterogeneous model zoo handed out to clients.

use crate::error::{Error, Result};
use crate::nn::{Conv2dSmall, Layer, Model};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerPlan {
    Dense(usize),
    Relu,
    /// Single-stride valid convolution over a square single-channel input.
    Conv2d {
        out_channels: usize,
        kernel: usize,
    },
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub arch_id: String,
    pub layer_plan: Vec<LayerPlan>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ArchitectureSpec {
    /// Dense stack with ReLU between the given hidden widths and a final
    /// `num_classes`-wide output layer.
    pub fn mlp(arch_id: &str, hidden: &[usize], input_dim: usize, num_classes: usize) -> Self {
        let mut layer_plan = Vec::new();
        for &h in hidden {
            layer_plan.push(LayerPlan::Dense(h));
            layer_plan.push(LayerPlan::Relu);
        }
        layer_plan.push(LayerPlan::Dense(num_classes));
        ArchitectureSpec {
            arch_id: arch_id.to_string(),
            layer_plan,
            input_dim,
            num_classes,
        }
    }

    fn layers(&self) -> Result<Vec<Layer>> {
        let mut width = self.input_dim;
        let mut layers = Vec::with_capacity(self.layer_plan.len());
        for plan in &self.layer_plan {
            match *plan {
                LayerPlan::Dense(out) => {
                    layers.push(Layer::dense(width, out));
                    width = out;
                }
                LayerPlan::Relu => layers.push(Layer::relu()),
                LayerPlan::Flatten => layers.push(Layer::flatten()),
                LayerPlan::Conv2d {
                    out_channels,
                    kernel,
                } => {
                    let side = (width as f64).sqrt().round() as usize;
                    if side * side != width || kernel > side {
                        return Err(Error::Config(format!(
                            "`{}`: conv2d needs a square input of side >= {kernel}, got {width}",
                            self.arch_id
                        )));
                    }
                    let conv = Conv2dSmall::zeros(1, side, side, out_channels, kernel);
                    width = conv.output_len();
                    layers.push(Layer::Conv2dSmall(conv));
                }
            }
        }
        if self.layer_plan.last() != Some(&LayerPlan::Dense(self.num_classes)) {
            return Err(Error::Config(format!(
                "`{}` must end in a dense layer of width {}",
                self.arch_id, self.num_classes
            )));
        }
        Ok(layers)
    }

    /// Zero-parameter model with this structure.
    pub fn build(&self) -> Result<Model> {
        Model::new(self.arch_id.clone(), self.input_dim, self.layers()?)
    }

    /// Xavier-initialised model; identical `seed` gives identical weights.
    pub fn init_model(&self, seed: u64) -> Result<Model> {
        let mut model = self.build()?;
        model.initialize(seed);
        Ok(model)
    }

    pub fn parameter_count(&self) -> usize {
        self.build().map(|m| m.num_parameters()).unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.layer_plan
            .iter()
            .filter(|l| matches!(l, LayerPlan::Dense(_) | LayerPlan::Conv2d { .. }))
            .count()
    }
}

pub const MLP_SHALLOW: &str = "mlp-shallow";
pub const MLP_DEEP: &str = "mlp-deep";
pub const MLP_WIDE: &str = "mlp-wide";
pub const MLP_PYRAMID: &str = "mlp-pyramid";
pub const CNN_SMALL: &str = "cnn-small";

/// The four heterogeneous MLPs, in assignment order.
pub fn register_builtin_zoo(input_dim: usize, num_classes: usize) -> Vec<ArchitectureSpec> {
    vec![
        ArchitectureSpec::mlp(MLP_SHALLOW, &[64], input_dim, num_classes),
        ArchitectureSpec::mlp(MLP_DEEP, &[64, 64, 64], input_dim, num_classes),
        ArchitectureSpec::mlp(MLP_WIDE, &[256], input_dim, num_classes),
        ArchitectureSpec::mlp(MLP_PYRAMID, &[128, 64, 32], input_dim, num_classes),
    ]
}

/// Small convnet for square inputs; not part of the default zoo.
pub fn cnn_small(input_dim: usize, num_classes: usize) -> ArchitectureSpec {
    ArchitectureSpec {
        arch_id: CNN_SMALL.to_string(),
        layer_plan: vec![
            LayerPlan::Conv2d {
                out_channels: 4,
                kernel: 3,
            },
            LayerPlan::Relu,
            LayerPlan::Flatten,
            LayerPlan::Dense(num_classes),
        ],
        input_dim,
        num_classes,
    }
}

/// Lookup from architecture id to spec for fixed input and class counts.
///
/// Besides the registered ids, `mlp-<w1>-<w2>-...` names an ad-hoc MLP with
/// those hidden widths.
#[derive(Debug, Clone)]
pub struct ArchitectureRegistry {
    specs: Vec<ArchitectureSpec>,
    input_dim: usize,
    num_classes: usize,
}

impl ArchitectureRegistry {
    pub fn builtin(input_dim: usize, num_classes: usize) -> Self {
        let mut specs = register_builtin_zoo(input_dim, num_classes);
        let cnn = cnn_small(input_dim, num_classes);
        if cnn.build().is_ok() {
            specs.push(cnn);
        }
        ArchitectureRegistry {
            specs,
            input_dim,
            num_classes,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.arch_id.as_str()).collect()
    }

    pub fn zoo(&self) -> &[ArchitectureSpec] {
        &self.specs[..4]
    }

    pub fn get(&self, arch_id: &str) -> Result<ArchitectureSpec> {
        if let Some(s) = self.specs.iter().find(|s| s.arch_id == arch_id) {
            return Ok(s.clone());
        }
        if let Some(widths) = arch_id.strip_prefix("mlp-") {
            let hidden: Option<Vec<usize>> = widths
                .split('-')
                .map(|w| w.parse().ok().filter(|&w: &usize| w > 0))
                .collect();
            if let Some(hidden) = hidden {
                return Ok(ArchitectureSpec::mlp(
                    arch_id,
                    &hidden,
                    self.input_dim,
                    self.num_classes,
                ));
            }
        }
        Err(Error::Config(format!(
            "unknown architecture `{arch_id}`; registered: {} (or mlp-<w1>-<w2>-...)",
            self.ids().join(", ")
        )))
    }

    pub fn init_model(&self, arch_id: &str, seed: u64) -> Result<Model> {
        self.get(arch_id)?.init_model(seed)
    }
}

pub fn homogeneous_assignment(spec: &ArchitectureSpec, num_clients: usize) -> Vec<String> {
    vec![spec.arch_id.clone(); num_clients]
}

/// Client `p` gets zoo entry `p mod zoo.len()`.
pub fn heterogeneous_assignment(zoo: &[ArchitectureSpec], num_clients: usize) -> Vec<String> {
    (0..num_clients)
        .map(|p| zoo[p % zoo.len()].arch_id.clone())
        .collect()
}
