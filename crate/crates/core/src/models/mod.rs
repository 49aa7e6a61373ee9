//! The four forecasting architectures. Each maps one `seq_len x n_features`
//! window to a scalar one-step forecast of the target column.

mod dlinear;
pub mod layers;
mod lstnet;
mod transformer;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Graph, Tensor, Var};

pub use layers::{attention_weights, causal_mask, multi_head_attention, series_decompose, sinusoidal_encoding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    DLinear,
    LstNet,
    Vanilla,
    Tst,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::DLinear,
        ModelKind::LstNet,
        ModelKind::Vanilla,
        ModelKind::Tst,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ModelKind::DLinear => "dlinear",
            ModelKind::LstNet => "lstnet",
            ModelKind::Vanilla => "vanilla",
            ModelKind::Tst => "tst",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::DLinear => "DLinear",
            ModelKind::LstNet => "LSTNet",
            ModelKind::Vanilla => "Vanilla Transformer",
            ModelKind::Tst => "TST",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "dlinear" => Ok(ModelKind::DLinear),
            "lstnet" | "ltsnet" => Ok(ModelKind::LstNet),
            "vanilla" | "vanillatransformer" | "transformer" => Ok(ModelKind::Vanilla),
            "tst" | "timeseriestransformer" => Ok(ModelKind::Tst),
            other => Err(Error::InvalidArgument(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Window geometry a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub seq_len: usize,
    pub n_features: usize,
    /// Column of the forecast target inside the window (used by the LSTNet AR path).
    pub target_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DLinearHyper {
    /// Requested moving-average kernel; clamped to the largest odd value `<= 2L - 1`.
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstNetHyper {
    pub filters: usize,
    pub width: usize,
    pub hidden: usize,
    pub skip: usize,
    pub skip_hidden: usize,
    /// Autoregressive window; clamped to `seq_len`.
    pub ar_window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerHyper {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum Hyper {
    DLinear(DLinearHyper),
    LstNet(LstNetHyper),
    Vanilla(TransformerHyper),
    Tst(TransformerHyper),
}

impl Hyper {
    pub fn default_for(kind: ModelKind) -> Hyper {
        let transformer = TransformerHyper {
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            ff_width: 64,
        };
        match kind {
            ModelKind::DLinear => Hyper::DLinear(DLinearHyper { kernel: 25 }),
            ModelKind::LstNet => Hyper::LstNet(LstNetHyper {
                filters: 16,
                width: 3,
                hidden: 32,
                skip: 2,
                skip_hidden: 8,
                ar_window: 5,
            }),
            ModelKind::Vanilla => Hyper::Vanilla(transformer),
            ModelKind::Tst => Hyper::Tst(transformer),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Hyper::DLinear(_) => ModelKind::DLinear,
            Hyper::LstNet(_) => ModelKind::LstNet,
            Hyper::Vanilla(_) => ModelKind::Vanilla,
            Hyper::Tst(_) => ModelKind::Tst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

/// Architecture, geometry and parameter tensors of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub hyper: Hyper,
    pub shape: ModelShape,
    pub seed: u64,
    pub tensors: Vec<NamedTensor>,
}

/// Mode and dropout stream for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardCtx {
    pub train: bool,
    pub dropout: f64,
    pub seed: u64,
    /// Optimizer step and sample position, folded into dropout stream names.
    pub step: u64,
    pub sample: u64,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            train: false,
            dropout: 0.0,
            seed: 0,
            step: 0,
            sample: 0,
        }
    }

    /// Dropout at site `layer` for this step and sample.
    pub(crate) fn dropout(&self, g: &mut Graph, x: Var, layer: u64) -> Result<Var> {
        g.dropout(x, self.dropout, self.seed, &[layer, self.step, self.sample], self.train)
    }
}

/// Parameter leaves of one graph, addressable by tensor name.
pub struct ParamVars<'a> {
    names: Vec<&'a str>,
    vars: Vec<Var>,
}

impl ParamVars<'_> {
    pub fn get(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| *n == name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

struct Init {
    seed: u64,
    tensors: Vec<NamedTensor>,
}

impl Init {
    /// Glorot-uniform weight with explicit fans.
    fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = rng::stream(self.seed, &[0x494E_4954, self.tensors.len() as u64]);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
        self.push(name, Tensor::new(shape.to_vec(), data).expect("init shape"));
    }

    /// Glorot-uniform matrix with `fan_in = rows`, `fan_out = cols`.
    fn matrix(&mut self, name: &str, rows: usize, cols: usize) {
        self.weight(name, &[rows, cols], rows, cols);
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) {
        self.push(name, Tensor::zeros(shape));
    }

    fn ones(&mut self, name: &str, shape: &[usize]) {
        self.push(name, Tensor::full(shape, 1.0));
    }

    fn push(&mut self, name: &str, value: Tensor) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            value,
        });
    }
}

fn validate(hyper: &Hyper, shape: ModelShape) -> Result<()> {
    if shape.seq_len == 0 || shape.n_features == 0 {
        return Err(Error::InvalidArgument(format!("degenerate model shape {shape:?}")));
    }
    if shape.target_index >= shape.n_features {
        return Err(Error::InvalidArgument(format!(
            "target index {} outside {} features",
            shape.target_index, shape.n_features
        )));
    }
    match hyper {
        Hyper::DLinear(h) if h.kernel == 0 => {
            Err(Error::InvalidArgument("decomposition kernel must be positive".into()))
        }
        Hyper::LstNet(h) => {
            if h.skip == 0 || h.skip >= shape.seq_len {
                return Err(Error::InvalidArgument(format!(
                    "skip interval {} must be in [1, seq_len = {})",
                    h.skip, shape.seq_len
                )));
            }
            if h.width == 0 || h.width > shape.seq_len {
                return Err(Error::InvalidArgument(format!(
                    "conv width {} exceeds seq_len {}",
                    h.width, shape.seq_len
                )));
            }
            if h.filters == 0 || h.hidden == 0 || h.skip_hidden == 0 || h.ar_window == 0 {
                return Err(Error::InvalidArgument(format!("degenerate LSTNet sizes {h:?}")));
            }
            Ok(())
        }
        Hyper::Vanilla(h) | Hyper::Tst(h) => {
            if h.n_heads == 0 || h.d_model % h.n_heads != 0 {
                return Err(Error::InvalidArgument(format!(
                    "d_model {} not divisible by {} heads",
                    h.d_model, h.n_heads
                )));
            }
            if h.d_model % 2 != 0 {
                return Err(Error::InvalidArgument(format!("d_model {} must be even", h.d_model)));
            }
            if h.n_layers == 0 || h.ff_width == 0 {
                return Err(Error::InvalidArgument(format!("degenerate transformer sizes {h:?}")));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Default hyper-structure for `kind`, weights drawn from `seed`.
pub fn init_params(kind: ModelKind, shape: ModelShape, seed: u64) -> Result<ModelParams> {
    init_params_with(Hyper::default_for(kind), shape, seed)
}

/// Weights are Glorot-uniform, biases zero, layer-norm gains one.
pub fn init_params_with(hyper: Hyper, shape: ModelShape, seed: u64) -> Result<ModelParams> {
    validate(&hyper, shape)?;
    let mut init = Init {
        seed,
        tensors: Vec::new(),
    };
    match &hyper {
        Hyper::DLinear(_) => dlinear::init(&mut init, shape),
        Hyper::LstNet(h) => lstnet::init(&mut init, shape, h),
        Hyper::Vanilla(h) | Hyper::Tst(h) => transformer::init(&mut init, shape, h),
    }
    Ok(ModelParams {
        kind: hyper.kind(),
        hyper,
        shape,
        seed,
        tensors: init.tensors,
    })
}

pub const CHECKPOINT_FORMAT: &str = "stockcast-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelCheckpoint {
    format: String,
    version: u32,
    params: ModelParams,
}

impl ModelParams {
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.value.numel()).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name).map(|t| &mut t.value)
    }

    /// Registers every tensor as a trainable leaf of `g`.
    pub fn bind<'a>(&'a self, g: &mut Graph) -> ParamVars<'a> {
        ParamVars {
            names: self.tensors.iter().map(|t| t.name.as_str()).collect(),
            vars: self.tensors.iter().map(|t| g.param(t.value.clone())).collect(),
        }
    }

    /// Pairs caller-created leaves (one per tensor, in order) with tensor names.
    pub fn vars_from<'a>(&'a self, vars: &[Var]) -> ParamVars<'a> {
        assert_eq!(vars.len(), self.tensors.len(), "one var per parameter tensor");
        ParamVars {
            names: self.tensors.iter().map(|t| t.name.as_str()).collect(),
            vars: vars.to_vec(),
        }
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| t.value.clone()).collect()
    }

    /// Registers every tensor as a constant leaf (no gradients).
    pub fn bind_frozen<'a>(&'a self, g: &mut Graph) -> ParamVars<'a> {
        ParamVars {
            names: self.tensors.iter().map(|t| t.name.as_str()).collect(),
            vars: self.tensors.iter().map(|t| g.constant(t.value.clone())).collect(),
        }
    }

    fn check_window(&self, g: &Graph, window: Var) -> Result<()> {
        let want = [self.shape.seq_len, self.shape.n_features];
        if g.shape(window) != want {
            return Err(Error::Shape(format!(
                "window {:?} for a model built on {want:?}",
                g.shape(window)
            )));
        }
        Ok(())
    }

    /// Records the forward pass; the result has shape `[1]`.
    pub fn forward(&self, g: &mut Graph, p: &ParamVars<'_>, window: Var, ctx: &ForwardCtx) -> Result<Var> {
        self.check_window(g, window)?;
        match &self.hyper {
            Hyper::DLinear(h) => dlinear::forward(g, p, window, self.shape, h, ctx),
            Hyper::LstNet(h) => lstnet::forward(g, p, window, self.shape, h, ctx),
            Hyper::Vanilla(h) => transformer::forward(g, p, window, h, false, ctx),
            Hyper::Tst(h) => transformer::forward(g, p, window, h, true, ctx),
        }
    }

    /// Final encoder states (`L x d_model`) of a transformer model.
    pub fn encoder_states(&self, g: &mut Graph, p: &ParamVars<'_>, window: Var, ctx: &ForwardCtx) -> Result<Var> {
        self.check_window(g, window)?;
        match &self.hyper {
            Hyper::Vanilla(h) => transformer::encode(g, p, window, h, false, ctx),
            Hyper::Tst(h) => transformer::encode(g, p, window, h, true, ctx),
            _ => Err(Error::InvalidArgument(format!("{} has no encoder", self.kind))),
        }
    }

    /// Eval-mode forecast for one window.
    pub fn predict(&self, window: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.bind_frozen(&mut g);
        let x = g.constant(window.clone());
        let y = self.forward(&mut g, &p, x, &ForwardCtx::eval())?;
        Ok(g.value(y).item())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<ModelParams> {
        let ck: ModelCheckpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let fresh = init_params_with(ck.params.hyper, ck.params.shape, ck.params.seed)?;
        let layout_matches = fresh.tensors.len() == ck.params.tensors.len()
            && fresh
                .tensors
                .iter()
                .zip(&ck.params.tensors)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if !layout_matches || ck.params.kind != ck.params.hyper.kind() {
            return Err(Error::Checkpoint("tensor layout does not match architecture".into()));
        }
        Ok(ck.params)
    }
}
