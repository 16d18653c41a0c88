//! The end-to-end diffusion network.
//!
//! Pipeline: per-type input encoding -> per-type affine to a common width ->
//! stalk projection -> L diffusion layers, each with its own (or one shared)
//! restriction-map predictor -> task-specific postprocessing. Hidden states
//! are cochains of shape (n*d x f) throughout.

use crate::error::{Error, Result};
use crate::graph::{FeatureStore, HeteroGraph};
use crate::laplacian::{assemble, laplacian_apply_blocks, normalize, CochainIndex};
use crate::predictor::{PredictorKind, SheafPredictor};
use crate::restriction::{build_maps, MapKind};
use crate::tensor::{Activation, Linear, ParamStore, Tape, Tid};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Regularizer added to diagonal blocks before the inverse square root.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Nc,
    Lp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Use every type's own feature matrix.
    #[default]
    Type0,
    /// Keep only the target type's features; other nodes get zero vectors.
    Type1,
    /// Replace all features by one-hot node-id-within-type vectors.
    Type2,
}

fn default_d() -> usize {
    2
}
fn default_f() -> usize {
    4
}
fn default_layers() -> usize {
    2
}
fn default_predictor() -> PredictorKind {
    PredictorKind::Te
}
fn default_map_kind() -> MapKind {
    MapKind::Diagonal
}
fn default_hidden() -> usize {
    32
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Stalk dimension; the search space uses 2..=5.
    #[serde(default = "default_d")]
    pub d: usize,
    /// Feature channels per stalk dimension.
    #[serde(default = "default_f")]
    pub f: usize,
    /// Diffusion layers; the search space uses 2..=8, 0 is the degenerate
    /// projection-only model.
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_predictor")]
    pub predictor: PredictorKind,
    #[serde(default = "default_map_kind")]
    pub map_kind: MapKind,
    #[serde(default)]
    pub input_feature_mode: FeatureMode,
    /// Dropout on raw per-type inputs.
    #[serde(default)]
    pub initial_dropout: f64,
    /// Dropout on the stalk projection.
    #[serde(default)]
    pub input_dropout: f64,
    /// Dropout inside each diffusion layer, after the nonlinearity.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub share_sheaf_across_layers: bool,
    pub task: TaskKind,
    /// Hidden width of the predictor nets; 0 means linear.
    #[serde(default = "default_hidden")]
    pub predictor_hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub ensemble_with_node_types: bool,
    /// Route gradients through the D^{-1/2} eigendecomposition instead of
    /// treating it as a constant of the forward pass.
    #[serde(default)]
    pub grad_through_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: default_d(),
            f: default_f(),
            layers: default_layers(),
            predictor: default_predictor(),
            map_kind: default_map_kind(),
            input_feature_mode: FeatureMode::Type0,
            initial_dropout: 0.0,
            input_dropout: 0.0,
            dropout: 0.0,
            share_sheaf_across_layers: false,
            task: TaskKind::Nc,
            predictor_hidden: default_hidden(),
            activation: Activation::Elu,
            ensemble_with_node_types: false,
            grad_through_norm: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.f == 0 {
            return Err(Error::validation("stalk dimension and channels must be positive"));
        }
        self.map_kind.validate(self.d)?;
        for (name, rate) in [
            ("initial_dropout", self.initial_dropout),
            ("input_dropout", self.input_dropout),
            ("dropout", self.dropout),
        ] {
            if !(0.0..=0.9).contains(&rate) {
                return Err(Error::validation(format!(
                    "{name} = {rate} outside the allowed range [0, 0.9]"
                )));
            }
        }
        Ok(())
    }

    /// Stalk width d*f, the common width after preprocessing.
    pub fn stalk_width(&self) -> usize {
        self.d * self.f
    }

    /// Width of the embedding the task head consumes.
    pub fn embedding_width(&self) -> usize {
        match self.task {
            TaskKind::Nc => self.stalk_width(),
            TaskKind::Lp => self.stalk_width() * self.layers.max(1),
        }
    }
}

/// Hidden states of one forward pass.
pub struct ForwardOutput {
    /// Stalk projection h^(0), shape (n*d x f).
    pub stalks: Tid,
    /// One entry per diffusion layer, same shape.
    pub layers: Vec<Tid>,
}

impl ForwardOutput {
    pub fn last(&self) -> Tid {
        self.layers.last().copied().unwrap_or(self.stalks)
    }
}

pub struct SheafModel {
    pub cfg: ModelConfig,
    pub num_node_types: usize,
    pub num_edge_types: usize,
    /// Per-type input width before the common affine.
    pre_widths: Vec<usize>,
    pre: Vec<Linear>,
    proj: Linear,
    predictors: Vec<SheafPredictor>,
    w1: Vec<usize>,
    w2: Vec<usize>,
    target_type: Option<usize>,
}

fn glorot(store: &mut ParamStore, name: String, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<usize> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.gen();
            a * (2.0 * u - 1.0)
        })
        .collect();
    store.add(name, rows, cols, data)
}

impl SheafModel {
    /// Registers all trainable tensors in `store`. `features` is required by
    /// modes that read it; `target_type` only by the target-only mode.
    pub fn init(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        graph: &HeteroGraph,
        features: Option<&FeatureStore>,
        target_type: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<SheafModel> {
        cfg.validate()?;
        let pre_widths = input_widths(cfg.input_feature_mode, graph, features, target_type)?;
        let dw = cfg.stalk_width();
        let mut pre = Vec::with_capacity(pre_widths.len());
        for (t, &w) in pre_widths.iter().enumerate() {
            pre.push(Linear::init(store, &format!("pre.t{t}"), w, dw, rng)?);
        }
        let proj = Linear::init(store, "proj", dw, dw, rng)?;

        let num_preds = if cfg.layers == 0 {
            0
        } else if cfg.share_sheaf_across_layers {
            1
        } else {
            cfg.layers
        };
        let mut predictors = Vec::with_capacity(num_preds);
        for i in 0..num_preds {
            let name =
                if cfg.share_sheaf_across_layers { "sheaf".to_string() } else { format!("sheaf{i}") };
            predictors.push(SheafPredictor::init(
                store,
                &name,
                cfg.predictor,
                cfg.map_kind,
                cfg.d,
                cfg.f,
                graph.num_node_types(),
                graph.num_edge_types(),
                cfg.predictor_hidden,
                cfg.activation,
                cfg.ensemble_with_node_types,
                rng,
            )?);
        }
        let mut w1 = Vec::with_capacity(cfg.layers);
        let mut w2 = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            w1.push(glorot(store, format!("layer{l}.w1"), cfg.d, cfg.d, rng)?);
            w2.push(glorot(store, format!("layer{l}.w2"), cfg.f, cfg.f, rng)?);
        }
        Ok(SheafModel {
            cfg: cfg.clone(),
            num_node_types: graph.num_node_types(),
            num_edge_types: graph.num_edge_types(),
            pre_widths,
            pre,
            proj,
            predictors,
            w1,
            w2,
            target_type,
        })
    }

    /// Per-type encoding and affine to the common width, (n x d*f).
    pub fn preprocess(
        &self,
        tape: &mut Tape,
        leaves: &[Tid],
        graph: &HeteroGraph,
        features: Option<&FeatureStore>,
        rng: &mut impl Rng,
    ) -> Result<Tid> {
        let widths = input_widths(self.cfg.input_feature_mode, graph, features, self.target_type)?;
        if widths != self.pre_widths {
            return Err(Error::dim(format!(
                "per-type input widths {widths:?} do not match the model's {:?}",
                self.pre_widths
            )));
        }
        let n = graph.n();
        let dw = self.cfg.stalk_width();
        let mut acc = tape.constant(n, dw, vec![0.0; n * dw])?;
        for t in 0..graph.num_node_types() {
            let nodes = graph.nodes_of_type(t);
            if nodes.is_empty() {
                continue;
            }
            let raw = type_input_matrix(self.cfg.input_feature_mode, graph, features, self.target_type, t)?;
            let raw = tape.constant(nodes.len(), self.pre_widths[t], raw)?;
            let dropped = tape.dropout(raw, self.cfg.initial_dropout, || rng.gen())?;
            let out = self.pre[t].forward(tape, leaves, dropped)?;
            let scattered = tape.scatter_add_rows(out, nodes, n)?;
            acc = tape.add(acc, scattered)?;
        }
        Ok(acc)
    }

    /// Affine to d*f followed by the reshape into stalk blocks, (n*d x f).
    pub fn project_to_stalks(&self, tape: &mut Tape, leaves: &[Tid], x: Tid) -> Result<Tid> {
        let n = tape.rows(x);
        let out = self.proj.forward(tape, leaves, x)?;
        tape.reshape(out, n * self.cfg.d, self.cfg.f)
    }

    /// One diffusion step: h - sigma(Delta (I_n (x) W1) h W2) with dropout
    /// after the nonlinearity.
    #[allow(clippy::too_many_arguments)]
    fn diffusion_layer(
        &self,
        tape: &mut Tape,
        idx: &CochainIndex,
        norm_luu: Tid,
        norm_luv: Tid,
        h: Tid,
        w1: Tid,
        w2: Tid,
        rng: &mut impl Rng,
    ) -> Result<Tid> {
        let n = idx.n;
        let hw2 = tape.matmul(h, w2)?;
        let hw1 = tape.block_lmul_shared(w1, hw2, n)?;
        let lx = laplacian_apply_blocks(tape, idx, norm_luu, norm_luv, hw1)?;
        let s = self.cfg.activation.apply(tape, lx);
        let s = tape.dropout(s, self.cfg.dropout, || rng.gen())?;
        tape.sub(h, s)
    }

    /// Full forward pass. In training mode dropout masks are drawn from
    /// `rng`; in eval mode the pass is deterministic.
    pub fn forward(
        &self,
        tape: &mut Tape,
        leaves: &[Tid],
        graph: &HeteroGraph,
        features: Option<&FeatureStore>,
        rng: &mut impl Rng,
        training: bool,
    ) -> Result<ForwardOutput> {
        if graph.num_node_types() != self.num_node_types
            || graph.num_edge_types() != self.num_edge_types
        {
            return Err(Error::validation(format!(
                "graph schema ({} node types, {} edge types) does not match the model ({}, {})",
                graph.num_node_types(),
                graph.num_edge_types(),
                self.num_node_types,
                self.num_edge_types
            )));
        }
        tape.set_training(training);
        let n = graph.n();
        let (d, f) = (self.cfg.d, self.cfg.f);
        let pre = self.preprocess(tape, leaves, graph, features, rng)?;
        let h0 = self.project_to_stalks(tape, leaves, pre)?;
        let h0 = tape.dropout(h0, self.cfg.input_dropout, || rng.gen())?;
        let idx = CochainIndex::new(graph, d);
        let mut h = h0;
        let mut hidden = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let pred =
                if self.cfg.share_sheaf_across_layers { &self.predictors[0] } else { &self.predictors[l] };
            let stalk_rows = tape.reshape(h, n, d * f)?;
            let params = pred.predict(tape, leaves, graph, stalk_rows)?;
            let maps = build_maps(tape, self.cfg.map_kind, params, d)?;
            let (luu, luv) = assemble(tape, &idx, maps)?;
            let nb = normalize(tape, &idx, luu, luv, NORM_EPS, self.cfg.grad_through_norm)?;
            h = self.diffusion_layer(
                tape,
                &idx,
                nb.luu,
                nb.luv,
                h,
                leaves[self.w1[l]],
                leaves[self.w2[l]],
                rng,
            )?;
            hidden.push(h);
        }
        Ok(ForwardOutput { stalks: h0, layers: hidden })
    }

    /// Row-normalized final embedding, (n x d*f).
    pub fn postprocess_nc(&self, tape: &mut Tape, out: &ForwardOutput) -> Result<Tid> {
        let h = out.last();
        let n = tape.rows(h) / self.cfg.d;
        let rows = tape.reshape(h, n, self.cfg.stalk_width())?;
        Ok(tape.l2_normalize_rows(rows))
    }

    /// Per-layer row-normalized embeddings concatenated in layer order,
    /// (n x layers*d*f). The degenerate zero-layer model exposes the stalk
    /// projection as its single block.
    pub fn postprocess_lp(&self, tape: &mut Tape, out: &ForwardOutput) -> Result<Tid> {
        let blocks: Vec<Tid> =
            if out.layers.is_empty() { vec![out.stalks] } else { out.layers.clone() };
        let mut parts = Vec::with_capacity(blocks.len());
        for h in blocks {
            let n = tape.rows(h) / self.cfg.d;
            let rows = tape.reshape(h, n, self.cfg.stalk_width())?;
            parts.push(tape.l2_normalize_rows(rows));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        tape.concat_cols(&parts)
    }

    /// Normalized sheaf Laplacian the given layer would apply at the
    /// current parameters, in eval mode. This is the inspection path for
    /// examining a learned (or freshly initialized) sheaf directly.
    pub fn layer_laplacian(
        &self,
        tape: &mut Tape,
        leaves: &[Tid],
        graph: &HeteroGraph,
        features: Option<&FeatureStore>,
        layer: usize,
    ) -> Result<crate::laplacian::SheafLaplacian> {
        if layer >= self.cfg.layers {
            return Err(Error::validation(format!(
                "layer {layer} out of range: the model has {} diffusion layers",
                self.cfg.layers
            )));
        }
        tape.set_training(false);
        let mut silent = crate::rng::seeded(0);
        let n = graph.n();
        let (d, f) = (self.cfg.d, self.cfg.f);
        let pre = self.preprocess(tape, leaves, graph, features, &mut silent)?;
        let h0 = self.project_to_stalks(tape, leaves, pre)?;
        let idx = CochainIndex::new(graph, d);
        let mut h = h0;
        for l in 0..=layer {
            let pred =
                if self.cfg.share_sheaf_across_layers { &self.predictors[0] } else { &self.predictors[l] };
            let stalk_rows = tape.reshape(h, n, d * f)?;
            let params = pred.predict(tape, leaves, graph, stalk_rows)?;
            let maps = build_maps(tape, self.cfg.map_kind, params, d)?;
            let (luu, luv) = assemble(tape, &idx, maps)?;
            let nb = normalize(tape, &idx, luu, luv, NORM_EPS, self.cfg.grad_through_norm)?;
            if l == layer {
                return Ok(crate::laplacian::SheafLaplacian::from_tape(
                    tape, graph, d, nb.luu, nb.luv,
                ));
            }
            h = self.diffusion_layer(
                tape,
                &idx,
                nb.luu,
                nb.luv,
                h,
                leaves[self.w1[l]],
                leaves[self.w2[l]],
                &mut silent,
            )?;
        }
        unreachable!("loop returns at the requested layer")
    }
}

/// Per-type input widths for a mode. Modes that read features insist on a
/// store whose row counts match the graph.
fn input_widths(
    mode: FeatureMode,
    graph: &HeteroGraph,
    features: Option<&FeatureStore>,
    target_type: Option<usize>,
) -> Result<Vec<usize>> {
    match mode {
        FeatureMode::Type0 | FeatureMode::Type1 => {
            let store = features.ok_or_else(|| {
                Error::validation("this input mode needs node features, but none were provided")
            })?;
            store.validate_against(graph)?;
            if mode == FeatureMode::Type1 && target_type.is_none() {
                return Err(Error::validation(
                    "target-only input mode needs a target node type",
                ));
            }
            Ok((0..graph.num_node_types()).map(|t| store.width(t)).collect())
        }
        FeatureMode::Type2 => {
            Ok((0..graph.num_node_types()).map(|t| graph.type_count(t).max(1)).collect())
        }
    }
}

/// Raw (pre-affine) input rows for type `t`, in per-type row order.
fn type_input_matrix(
    mode: FeatureMode,
    graph: &HeteroGraph,
    features: Option<&FeatureStore>,
    target_type: Option<usize>,
    t: usize,
) -> Result<Vec<f64>> {
    let count = graph.type_count(t);
    match mode {
        FeatureMode::Type0 => Ok(features.unwrap().matrix(t).to_vec()),
        FeatureMode::Type1 => {
            let store = features.unwrap();
            if Some(t) == target_type {
                Ok(store.matrix(t).to_vec())
            } else {
                Ok(vec![0.0; count * store.width(t)])
            }
        }
        FeatureMode::Type2 => {
            let w = count.max(1);
            let mut out = vec![0.0; count * w];
            for i in 0..count {
                out[i * w + i] = 1.0;
            }
            Ok(out)
        }
    }
}
