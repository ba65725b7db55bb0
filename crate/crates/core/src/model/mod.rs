//! The residual message-passing network: input projection, stacked
//! softmax-aggregation layers, dense concatenation, attention pooling and a
//! discrete hazard head.

mod export;
mod gradcheck;
mod primitives;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, WsiGraph};
use crate::nn::{init_parameters, Eval, Exec, ParamId, ParamStore, Tape, Tensor2};

pub use export::{attention_heatmap, write_attention_csv};
pub use gradcheck::{gradcheck_config, layer_gradcheck, model_gradcheck};
pub use primitives::{
    message_construct_phi, softmax_aggregate_rho, survival_from_logits, SurvivalOutput,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_feat: usize,
    pub d_model: usize,
    pub d_attn: usize,
    pub n_layers: usize,
    pub n_bins: usize,
    /// Inverse temperature of the neighbor softmax.
    pub beta: f64,
    /// Added to every message after the ReLU.
    pub eps: f64,
    pub gated_attention: bool,
    /// Whether the projected input joins the dense concatenation.
    pub include_input_in_dense: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_feat: 1024,
            d_model: 128,
            d_attn: 128,
            n_layers: 4,
            n_bins: 4,
            beta: 1.0,
            eps: 1e-7,
            gated_attention: false,
            include_input_in_dense: true,
        }
    }
}

impl ModelConfig {
    pub fn with_features(d_feat: usize) -> Self {
        Self {
            d_feat,
            ..Self::default()
        }
    }

    /// Width of the dense concatenation.
    pub fn d_cat(&self) -> usize {
        self.dense_blocks() * self.d_model
    }

    fn dense_blocks(&self) -> usize {
        // Without message passing the projected input is the only block.
        if self.n_layers == 0 {
            1
        } else {
            self.n_layers + usize::from(self.include_input_in_dense)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_feat", self.d_feat),
            ("d_model", self.d_model),
            ("d_attn", self.d_attn),
            ("n_bins", self.n_bins),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    input_w: ParamId,
    input_b: ParamId,
    layers: Vec<LayerParams>,
    attn_v: ParamId,
    attn_v_bias: ParamId,
    attn_gate: Option<(ParamId, ParamId)>,
    attn_w: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

/// Differentiable intermediates of one forward pass.
pub struct ForwardVars<V> {
    /// Projected input followed by every layer output.
    pub blocks: Vec<V>,
    pub h_cat: V,
    /// `1 x M` attention weights.
    pub attention: V,
    pub h_bag: V,
    /// `1 x n_bins` hazard logits.
    pub logits: V,
}

/// Plain values from an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub blocks: Vec<Tensor2>,
    pub attention: Vec<f64>,
    pub h_bag: Vec<f64>,
    pub logits: Vec<f64>,
    pub hazards: Vec<f64>,
    pub survival: Vec<f64>,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGcn {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

impl PatchGcn {
    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut counter = 0u64;
        let mut weight = |params: &mut ParamStore, name: String, rows: usize, cols: usize| {
            counter += 1;
            let sub_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(counter);
            params.add(name, init_parameters(rows, cols, sub_seed))
        };
        let bias = |params: &mut ParamStore, name: String, cols: usize| {
            params.add(name, Tensor2::zeros(1, cols))
        };
        let (d, d_cat, d_attn) = (config.d_model, config.d_cat(), config.d_attn);

        let input_w = weight(&mut params, "input.weight".into(), config.d_feat, d);
        let input_b = bias(&mut params, "input.bias".into(), d);
        let layers = (0..config.n_layers)
            .map(|l| LayerParams {
                w1: weight(&mut params, format!("layers.{l}.mlp.w1"), d, d),
                b1: bias(&mut params, format!("layers.{l}.mlp.b1"), d),
                w2: weight(&mut params, format!("layers.{l}.mlp.w2"), d, d),
                b2: bias(&mut params, format!("layers.{l}.mlp.b2"), d),
            })
            .collect();
        let attn_v = weight(&mut params, "attention.v".into(), d_cat, d_attn);
        let attn_v_bias = bias(&mut params, "attention.v_bias".into(), d_attn);
        let attn_gate = config.gated_attention.then(|| {
            (
                weight(&mut params, "attention.u".into(), d_cat, d_attn),
                bias(&mut params, "attention.u_bias".into(), d_attn),
            )
        });
        let attn_w = weight(&mut params, "attention.w".into(), d_attn, 1);
        let head_w = weight(&mut params, "head.weight".into(), d_cat, config.n_bins);
        let head_b = bias(&mut params, "head.bias".into(), config.n_bins);
        Ok(Self {
            config,
            params,
            ids: Ids {
                input_w,
                input_b,
                layers,
                attn_v,
                attn_v_bias,
                attn_gate,
                attn_w,
                head_w,
                head_b,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layer_params(&self) -> &[LayerParams] {
        &self.ids.layers
    }

    /// Sets every message-passing MLP weight and bias to zero.
    pub fn zero_layer_mlps(&mut self) {
        for layer in self.ids.layers.clone() {
            for id in [layer.w1, layer.b1, layer.w2, layer.b2] {
                self.params.value_mut(id).fill(0.0);
            }
        }
    }

    /// Node features as a tensor, checked against `d_feat`.
    pub fn input_tensor(&self, graph: &WsiGraph) -> Result<Tensor2> {
        if graph.n_nodes() == 0 {
            return Err(Error::EmptyGraph(format!(
                "patient {:?} has no patches",
                graph.patient_id()
            )));
        }
        if graph.feature_dim() != self.config.d_feat {
            return Err(Error::Shape {
                op: "input_projection",
                left: (graph.n_nodes(), graph.feature_dim()),
                right: (self.config.d_feat, self.config.d_model),
            });
        }
        let f = graph.features();
        Tensor2::from_f32(f.rows(), f.cols(), f.data())
    }

    /// Full forward pass against any executor.
    pub fn forward<E: Exec>(
        &self,
        ex: &mut E,
        input: &Tensor2,
        adj: &Arc<Adjacency>,
    ) -> Result<ForwardVars<E::Var>> {
        let blocks = self.dense_blocks(ex, input, adj)?;
        let h_cat = if blocks.len() == 1 {
            blocks[0].clone()
        } else {
            ex.concat_cols(&blocks)?
        };
        let (h_bag, attention) = self.attention_pool(ex, &h_cat)?;
        let logits = self.hazard_logits(ex, &h_bag)?;
        Ok(ForwardVars {
            blocks,
            h_cat,
            attention,
            h_bag,
            logits,
        })
    }

    /// `[X0 | X1 | ... | XL]` (or without `X0` when configured) as separate
    /// blocks.
    pub fn dense_blocks<E: Exec>(
        &self,
        ex: &mut E,
        input: &Tensor2,
        adj: &Arc<Adjacency>,
    ) -> Result<Vec<E::Var>> {
        if adj.n_nodes() != input.rows() {
            return Err(Error::Shape {
                op: "dense_forward",
                left: input.shape(),
                right: (adj.n_nodes(), adj.n_nodes()),
            });
        }
        let x = ex.constant(input.clone());
        let w = ex.param(&self.params, self.ids.input_w);
        let b = ex.param(&self.params, self.ids.input_b);
        let xw = ex.matmul(&x, &w)?;
        let pre = ex.add_broadcast_row(&xw, &b)?;
        let x0 = ex.relu(&pre);

        let mut blocks = Vec::with_capacity(self.config.dense_blocks());
        if self.config.n_layers == 0 || self.config.include_input_in_dense {
            blocks.push(x0.clone());
        }
        let mut h = x0;
        for layer in &self.ids.layers {
            h = self.gcn_layer_forward(ex, &h, adj, layer)?;
            blocks.push(h.clone());
        }
        Ok(blocks)
    }

    /// One residual layer: `MLP(h_v + rho({phi(h_u)})) + h_v`.
    pub fn gcn_layer_forward<E: Exec>(
        &self,
        ex: &mut E,
        h: &E::Var,
        adj: &Arc<Adjacency>,
        layer: &LayerParams,
    ) -> Result<E::Var> {
        let pos = ex.relu(h);
        let messages = ex.add_scalar(&pos, self.config.eps);
        let aggregated = ex.neighbor_softmax_aggregate(&messages, adj, self.config.beta)?;
        let z = ex.add(h, &aggregated)?;

        let w1 = ex.param(&self.params, layer.w1);
        let b1 = ex.param(&self.params, layer.b1);
        let w2 = ex.param(&self.params, layer.w2);
        let b2 = ex.param(&self.params, layer.b2);
        let zw = ex.matmul(&z, &w1)?;
        let hidden_pre = ex.add_broadcast_row(&zw, &b1)?;
        let hidden = ex.relu(&hidden_pre);
        let hw = ex.matmul(&hidden, &w2)?;
        let update = ex.add_broadcast_row(&hw, &b2)?;
        ex.add(&update, h)
    }

    /// `a = softmax_nodes(w^T tanh(V h + b))` (optionally gated), `h_bag =
    /// a H`. Returns `(h_bag, a)`, both as row vectors.
    pub fn attention_pool<E: Exec>(&self, ex: &mut E, h_cat: &E::Var) -> Result<(E::Var, E::Var)> {
        if ex.value(h_cat).rows() == 0 {
            return Err(Error::EmptyGraph("attention pooling over zero nodes".into()));
        }
        let v = ex.param(&self.params, self.ids.attn_v);
        let vb = ex.param(&self.params, self.ids.attn_v_bias);
        let hv = ex.matmul(h_cat, &v)?;
        let hv = ex.add_broadcast_row(&hv, &vb)?;
        let mut hidden = ex.tanh(&hv);
        if let Some((u, ub)) = self.ids.attn_gate {
            let u = ex.param(&self.params, u);
            let ub = ex.param(&self.params, ub);
            let hu = ex.matmul(h_cat, &u)?;
            let hu = ex.add_broadcast_row(&hu, &ub)?;
            let gate = ex.sigmoid(&hu);
            hidden = ex.mul(&hidden, &gate)?;
        }
        let w = ex.param(&self.params, self.ids.attn_w);
        let scores = ex.matmul(&hidden, &w)?;
        let scores = ex.transpose(&scores);
        let attention = ex.rowwise_softmax(&scores);
        let h_bag = ex.matmul(&attention, h_cat)?;
        Ok((h_bag, attention))
    }

    pub fn hazard_logits<E: Exec>(&self, ex: &mut E, h_bag: &E::Var) -> Result<E::Var> {
        let w = ex.param(&self.params, self.ids.head_w);
        let b = ex.param(&self.params, self.ids.head_b);
        let hw = ex.matmul(h_bag, &w)?;
        ex.add_broadcast_row(&hw, &b)
    }

    /// Inference without a tape.
    pub fn predict(&self, graph: &WsiGraph) -> Result<ForwardTrace> {
        let input = self.input_tensor(graph)?;
        let adj = Arc::new(graph.adjacency().clone());
        let mut ex = Eval;
        let out = self.forward(&mut ex, &input, &adj)?;
        let logits = out.logits.into_data();
        let SurvivalOutput {
            hazards,
            survival,
            risk,
        } = survival_from_logits(&logits);
        Ok(ForwardTrace {
            blocks: out.blocks,
            attention: out.attention.into_data(),
            h_bag: out.h_bag.into_data(),
            logits,
            hazards,
            survival,
            risk,
        })
    }

    pub fn risk(&self, graph: &WsiGraph) -> Result<f64> {
        Ok(self.predict(graph)?.risk)
    }

    /// Survival negative log-likelihood for one patient. Gradients are added
    /// to the parameter store; the loss is returned.
    pub fn accumulate_gradients(
        &mut self,
        graph: &WsiGraph,
        bin: usize,
        censored: bool,
    ) -> Result<f64> {
        let input = self.input_tensor(graph)?;
        let adj = Arc::new(graph.adjacency().clone());
        let mut tape = Tape::new();
        let loss = self.loss_on(&mut tape, &input, &adj, bin, censored)?;
        tape.backward(loss, &mut self.params)
    }

    pub fn loss_on<E: Exec>(
        &self,
        ex: &mut E,
        input: &Tensor2,
        adj: &Arc<Adjacency>,
        bin: usize,
        censored: bool,
    ) -> Result<E::Var> {
        if bin >= self.config.n_bins {
            return Err(Error::Index {
                index: bin,
                len: self.config.n_bins,
            });
        }
        let out = self.forward(ex, input, adj)?;
        ex.survival_nll(&out.logits, bin, censored)
    }

    /// Writes the checkpoint at `path` and its configuration next to it as
    /// `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::nn::checkpoint::write_checkpoint(&self.params, path)?;
        let json = serde_json::to_vec_pretty(&self.config)?;
        crate::fsutil::atomic_write(sidecar(path), &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar(path);
        let text = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
        let config: ModelConfig = serde_json::from_slice(&text)?;
        let mut model = Self::new(config, 0)?;
        model
            .params
            .load_values(crate::nn::checkpoint::read_checkpoint(path)?)?;
        Ok(model)
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    name.into()
}
