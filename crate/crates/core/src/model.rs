//! The dual-branch network.
//!
//! ```text
//! semantic ids ─ mean_pool(MS) ─ [tanh(W·x+b)]×L ─┐
//!                                                 ⊙ ─ σ(W_out·h + b_out) ─ per-app probabilities
//! history ids  ─ mean_pool(MA) ─ [tanh(W·x+b)]×L ─┘
//! ```
//!
//! The two ablations drop one branch and feed the other straight into the
//! output layer. Outputs are independent per-app probabilities trained with
//! mean binary cross-entropy against the multi-hot target set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::WindowInstance;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::{
    hadamard, matvec, matvec_transposed, seeded_rng, sigmoid_forward, Matrix, Param, ParamSet, Prng,
};

/// Floor applied to log arguments in the loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Both branches, fused by elementwise product.
    Cosem,
    /// App-history branch only.
    DnnA,
    /// Semantic branch only.
    DnnS,
}

impl Variant {
    pub fn uses_semantic(self) -> bool {
        matches!(self, Variant::Cosem | Variant::DnnS)
    }

    pub fn uses_history(self) -> bool {
        matches!(self, Variant::Cosem | Variant::DnnA)
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Cosem => "CoSEM",
            Variant::DnnA => "DNN-A",
            Variant::DnnS => "DNN-S",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cosem => "cosem",
            Variant::DnnA => "dnn-a",
            Variant::DnnS => "dnn-s",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cosem" => Ok(Variant::Cosem),
            "dnn-a" => Ok(Variant::DnnA),
            "dnn-s" => Ok(Variant::DnnS),
            other => Err(Error::invalid(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub variant: Variant,
    pub app_count: usize,
    pub chunk_count: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Default sizes (`D = H = 64`, two hidden layers) for the given
    /// vocabularies.
    pub fn new(variant: Variant, app_count: usize, chunk_count: usize) -> Self {
        ModelConfig {
            embed_dim: 64,
            hidden_layers: 2,
            hidden_width: 64,
            variant,
            app_count,
            chunk_count,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("embed_dim", self.embed_dim),
            ("hidden_layers", self.hidden_layers),
            ("hidden_width", self.hidden_width),
            ("app_count", self.app_count),
            ("chunk_count", self.chunk_count),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Fully connected layer; the bias is stored as an `out x 1` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(fan_out: usize, fan_in: usize, rng: &mut Prng) -> Self {
        Dense {
            weight: Param::new(Matrix::glorot(fan_out, fan_in, rng)),
            bias: Param::new(Matrix::zeros(fan_out, 1)),
        }
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::shape(format!("bias of length {}", weight.rows()), bias.len()));
        }
        let rows = bias.len();
        Ok(Dense {
            weight: Param::new(weight),
            bias: Param::new(Matrix::from_vec(rows, 1, bias)?),
        })
    }

    fn affine(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = matvec(&self.weight.value, x)?;
        for (yi, b) in y.iter_mut().zip(self.bias.value.as_slice()) {
            *yi += b;
        }
        Ok(y)
    }

    /// Accumulates parameter gradients for upstream `d_pre` (gradient at the
    /// pre-activation) and returns the gradient at the input.
    fn backward(&mut self, input: &[f64], d_pre: &[f64]) -> Result<Vec<f64>> {
        self.weight.grad.add_outer(1.0, d_pre, input);
        for (g, d) in self.bias.grad.as_mut_slice().iter_mut().zip(d_pre) {
            *g += d;
        }
        matvec_transposed(&self.weight.value, d_pre)
    }
}

/// Every learnable value of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `MA`, one row per app.
    pub app_embedding: EmbeddingTable,
    /// `MS`, one row per semantic chunk.
    pub semantic_embedding: EmbeddingTable,
    pub semantic_layers: Vec<Dense>,
    pub history_layers: Vec<Dense>,
    pub output: Dense,
}

impl ModelParams {
    /// Seeded initialization: Glorot-uniform dense weights, zero biases,
    /// embeddings uniform in `[-0.5/D, 0.5/D]`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.seed);
        let app_embedding = EmbeddingTable::new(cfg.app_count, cfg.embed_dim, &mut rng);
        let semantic_embedding = EmbeddingTable::new(cfg.chunk_count, cfg.embed_dim, &mut rng);
        let stack = |rng: &mut Prng| {
            (0..cfg.hidden_layers)
                .map(|l| {
                    let fan_in = if l == 0 { cfg.embed_dim } else { cfg.hidden_width };
                    Dense::new(cfg.hidden_width, fan_in, rng)
                })
                .collect::<Vec<_>>()
        };
        let semantic_layers = stack(&mut rng);
        let history_layers = stack(&mut rng);
        let output = Dense::new(cfg.app_count, cfg.hidden_width, &mut rng);
        Ok(ModelParams {
            app_embedding,
            semantic_embedding,
            semantic_layers,
            history_layers,
            output,
        })
    }

    /// Checks that every shape agrees with `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(Error::shape(format!("{what} {want:?}"), format!("{got:?}")))
            } else {
                Ok(())
            }
        };
        expect(
            "app embedding",
            self.app_embedding.table.value.shape(),
            (cfg.app_count, cfg.embed_dim),
        )?;
        expect(
            "semantic embedding",
            self.semantic_embedding.table.value.shape(),
            (cfg.chunk_count, cfg.embed_dim),
        )?;
        for layers in [&self.semantic_layers, &self.history_layers] {
            if layers.len() != cfg.hidden_layers {
                return Err(Error::shape(
                    format!("{} hidden layers", cfg.hidden_layers),
                    layers.len(),
                ));
            }
            for (l, d) in layers.iter().enumerate() {
                let fan_in = if l == 0 { cfg.embed_dim } else { cfg.hidden_width };
                expect("hidden weight", d.weight.value.shape(), (cfg.hidden_width, fan_in))?;
                expect("hidden bias", d.bias.value.shape(), (cfg.hidden_width, 1))?;
            }
        }
        expect(
            "output weight",
            self.output.weight.value.shape(),
            (cfg.app_count, cfg.hidden_width),
        )?;
        expect("output bias", self.output.bias.value.shape(), (cfg.app_count, 1))
    }

    /// Parameter names in [`ParamSet`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["app_embedding".to_owned(), "semantic_embedding".to_owned()];
        for (prefix, layers) in [("semantic", &self.semantic_layers), ("history", &self.history_layers)] {
            for l in 0..layers.len() {
                names.push(format!("{prefix}.{l}.weight"));
                names.push(format!("{prefix}.{l}.bias"));
            }
        }
        names.push("output.weight".to_owned());
        names.push("output.bias".to_owned());
        names
    }
}

impl ParamSet for ModelParams {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.app_embedding.table, &self.semantic_embedding.table];
        for d in self.semantic_layers.iter().chain(&self.history_layers) {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v.push(&self.output.weight);
        v.push(&self.output.bias);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.app_embedding.table, &mut self.semantic_embedding.table];
        for d in self.semantic_layers.iter_mut().chain(self.history_layers.iter_mut()) {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v.push(&mut self.output.weight);
        v.push(&mut self.output.bias);
        v
    }
}

/// Intermediate values of one branch. `layers[l]` is the input to layer `l`;
/// the last element is the branch output.
#[derive(Clone, Debug)]
struct BranchTrace {
    layers: Vec<Vec<f64>>,
}

impl BranchTrace {
    fn output(&self) -> &[f64] {
        self.layers.last().expect("branch has an input")
    }
}

#[derive(Clone, Debug)]
struct Trace {
    semantic: Option<BranchTrace>,
    history: Option<BranchTrace>,
    fused: Vec<f64>,
    probs: Vec<f64>,
}

/// Combines the two branch outputs. The ablations pass their single branch
/// through unchanged.
pub fn fuse(variant: Variant, semantic: Option<&[f64]>, history: Option<&[f64]>) -> Result<Vec<f64>> {
    match (variant, semantic, history) {
        (Variant::Cosem, Some(s), Some(h)) => hadamard(s, h),
        (Variant::DnnS, Some(s), _) => Ok(s.to_vec()),
        (Variant::DnnA, _, Some(h)) => Ok(h.to_vec()),
        _ => Err(Error::invalid(format!("missing branch output for {variant}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Model { config, params })
    }

    fn branch(table: &EmbeddingTable, layers: &[Dense], ids: &[usize]) -> Result<BranchTrace> {
        let mut trace = Vec::with_capacity(layers.len() + 1);
        trace.push(table.mean_pool(ids)?);
        for d in layers {
            let mut h = d.affine(trace.last().expect("non-empty"))?;
            h.iter_mut().for_each(|v| *v = v.tanh());
            trace.push(h);
        }
        Ok(BranchTrace { layers: trace })
    }

    fn trace(&self, semantic_ids: &[usize], history_ids: &[usize]) -> Result<Trace> {
        let p = &self.params;
        let variant = self.config.variant;
        let semantic = variant
            .uses_semantic()
            .then(|| Self::branch(&p.semantic_embedding, &p.semantic_layers, semantic_ids))
            .transpose()?;
        let history = variant
            .uses_history()
            .then(|| Self::branch(&p.app_embedding, &p.history_layers, history_ids))
            .transpose()?;
        let fused = fuse(
            variant,
            semantic.as_ref().map(BranchTrace::output),
            history.as_ref().map(BranchTrace::output),
        )?;
        let probs = sigmoid_forward(&p.output.affine(&fused)?);
        Ok(Trace {
            semantic,
            history,
            fused,
            probs,
        })
    }

    /// Per-app probabilities, each strictly inside `(0, 1)`.
    pub fn forward(&self, semantic_ids: &[usize], history_ids: &[usize]) -> Result<Vec<f64>> {
        Ok(self.trace(semantic_ids, history_ids)?.probs)
    }

    /// Loss of one instance at the current parameters.
    pub fn instance_loss(&self, inst: &WindowInstance) -> Result<f64> {
        bce_loss(&self.forward(&inst.semantic_ids, &inst.history_ids)?, &inst.target_ids)
    }

    /// Adds `scale · ∂loss/∂θ` for one instance to every parameter gradient
    /// and returns the (unscaled) loss.
    pub fn accumulate_gradients(&mut self, inst: &WindowInstance, scale: f64) -> Result<f64> {
        let trace = self.trace(&inst.semantic_ids, &inst.history_ids)?;
        let loss = bce_loss(&trace.probs, &inst.target_ids)?;

        let d_logits: Vec<f64> = bce_logit_grad(&trace.probs, &inst.target_ids)
            .into_iter()
            .map(|g| g * scale)
            .collect();
        let d_fused = self.params.output.backward(&trace.fused, &d_logits)?;

        let (d_semantic, d_history) = match (&trace.semantic, &trace.history) {
            (Some(s), Some(h)) => (
                Some(hadamard(&d_fused, h.output())?),
                Some(hadamard(&d_fused, s.output())?),
            ),
            (Some(_), None) => (Some(d_fused), None),
            (None, Some(_)) => (None, Some(d_fused)),
            (None, None) => unreachable!("every variant keeps a branch"),
        };

        let p = &mut self.params;
        if let (Some(t), Some(d)) = (&trace.semantic, d_semantic) {
            let d_in = branch_backward(&mut p.semantic_layers, t, d)?;
            p.semantic_embedding.mean_pool_backward(&inst.semantic_ids, &d_in)?;
        }
        if let (Some(t), Some(d)) = (&trace.history, d_history) {
            let d_in = branch_backward(&mut p.history_layers, t, d)?;
            p.app_embedding.mean_pool_backward(&inst.history_ids, &d_in)?;
        }
        Ok(loss)
    }

    /// Gradient of one instance's loss, starting from zeroed gradients.
    pub fn backward(&mut self, inst: &WindowInstance) -> Result<f64> {
        self.params.zero_grad();
        self.accumulate_gradients(inst, 1.0)
    }

    pub fn predict_topk(&self, semantic_ids: &[usize], history_ids: &[usize], k: usize) -> Result<Vec<usize>> {
        predict_topk(&self.forward(semantic_ids, history_ids)?, k)
    }
}

fn branch_backward(layers: &mut [Dense], trace: &BranchTrace, upstream: Vec<f64>) -> Result<Vec<f64>> {
    let mut d = upstream;
    for (l, layer) in layers.iter_mut().enumerate().rev() {
        let out = &trace.layers[l + 1];
        let d_pre: Vec<f64> = d.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
        d = layer.backward(&trace.layers[l], &d_pre)?;
    }
    Ok(d)
}

fn check_targets(probs: &[f64], target_ids: &[usize]) -> Result<()> {
    if target_ids.is_empty() {
        return Err(Error::invalid("target set is empty"));
    }
    if let Some(&bad) = target_ids.iter().find(|&&t| t >= probs.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: probs.len(),
        });
    }
    Ok(())
}

fn multi_hot(len: usize, target_ids: &[usize]) -> Vec<f64> {
    let mut y = vec![0.0; len];
    for &t in target_ids {
        y[t] = 1.0;
    }
    y
}

/// Mean binary cross-entropy over all apps against the multi-hot target.
/// Log arguments are floored at [`LOG_FLOOR`].
pub fn bce_loss(probs: &[f64], target_ids: &[usize]) -> Result<f64> {
    check_targets(probs, target_ids)?;
    let y = multi_hot(probs.len(), target_ids);
    let total: f64 = probs
        .iter()
        .zip(&y)
        .map(|(&p, &y)| {
            let pos = if y > 0.0 { -y * p.max(LOG_FLOOR).ln() } else { 0.0 };
            let neg = if y < 1.0 {
                -(1.0 - y) * (1.0 - p).max(LOG_FLOOR).ln()
            } else {
                0.0
            };
            pos + neg
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// `∂ bce_loss / ∂ logit` for sigmoid outputs `probs`. A term whose log
/// argument sits on the floor contributes nothing.
fn bce_logit_grad(probs: &[f64], target_ids: &[usize]) -> Vec<f64> {
    let c = probs.len() as f64;
    let y = multi_hot(probs.len(), target_ids);
    probs
        .iter()
        .zip(&y)
        .map(|(&p, &y)| {
            let q = 1.0 - p;
            let pos = if y > 0.0 && p > LOG_FLOOR { -y * q } else { 0.0 };
            let neg = if y < 1.0 && q > LOG_FLOOR { (1.0 - y) * p } else { 0.0 };
            (pos + neg) / c
        })
        .collect()
}

/// Ids of the `k` highest probabilities, best first; ties go to the lower id.
pub fn predict_topk(probs: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > probs.len() {
        return Err(Error::invalid(format!("k must be in 1..={}, got {k}", probs.len())));
    }
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    let cmp = |a: &usize, b: &usize| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b));
    if k < ids.len() {
        ids.select_nth_unstable_by(k - 1, cmp);
        ids.truncate(k);
    }
    ids.sort_by(cmp);
    Ok(ids)
}
