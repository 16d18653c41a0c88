//! Full-batch training, checkpoint-based evaluation, and the multi-seed
//! driver.
//!
//! A run is deterministic in (config, seed): model init, dropout, negative
//! sampling, and candidate sampling each draw from their own seeded stream,
//! so reruns produce byte-identical artifacts. Early stopping tracks the
//! validation metric (micro-F1 for node classification, AUROC for link
//! prediction) and restores the best parameters before the test pass, so
//! the reported checkpoint is never worse on validation than any recorded
//! epoch.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{check_schema, load_checkpoint, save_checkpoint};
use crate::data::{
    load_dataset, make_lp_split, make_nc_split, message_graph, sample_negatives, Dataset, Split,
};
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, LabelKind, LabelStore};
use crate::heads::{DecoderKind, LpHead, NcHead};
use crate::metrics::{self, MetricReport};
use crate::model::{ModelConfig, SheafModel, TaskKind};
use crate::rng;
use crate::tensor::{
    adam_step, gradcheck, AdamConfig, AdamState, GradCheckConfig, GradCheckReport, ParamStore,
    Tape, Tid,
};

/// Test/validation counts for the node split when enough labels exist.
pub const NC_TEST_NODES: usize = 1000;
pub const NC_VAL_NODES: usize = 500;
/// Distractors per ranked candidate list in the MRR pass.
pub const MRR_DISTRACTORS: usize = 50;

// Independent rng streams per purpose. Model and head init share stream 0,
// dropout consumes stream 1 across all epochs, and the samplers get their
// own derived seeds so adding an epoch never shifts another stream.
const STREAM_INIT: u64 = 0;
const STREAM_DROPOUT: u64 = 1;
const STREAM_MRR: u64 = 2;
const SEED_VAL_NEG: u64 = 101;
const SEED_TEST_NEG: u64 = 102;
const SEED_TRAIN_NEG_BASE: u64 = 1000;

fn default_lr() -> f64 {
    0.01
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_epochs() -> usize {
    500
}
fn default_patience() -> usize {
    50
}
fn default_negative_ratio() -> usize {
    1
}

/// Everything one training run needs: the model configuration plus
/// optimization, seeding, task-head, and I/O settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    /// Dataset directory.
    pub dataset: PathBuf,
    /// Run directory for the config echo, checkpoint, metrics, and epoch
    /// log. Omitted: nothing is written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Epoch cap; early stopping usually ends the run first.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    /// Edge decoder for link prediction; ignored by node classification.
    #[serde(default)]
    pub decoder: DecoderKind,
    /// Negatives per positive in the link-prediction loss and eval pools.
    #[serde(default = "default_negative_ratio")]
    pub negative_ratio: usize,
}

impl RunConfig {
    pub fn new(model: ModelConfig, dataset: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            model,
            dataset: dataset.into(),
            out_dir: None,
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            epochs: default_epochs(),
            patience: default_patience(),
            seed: 0,
            decoder: DecoderKind::default(),
            negative_ratio: default_negative_ratio(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::validation(format!("lr = {} must be positive", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::validation(format!(
                "weight_decay = {} must be nonnegative",
                self.weight_decay
            )));
        }
        if self.patience == 0 {
            return Err(Error::validation("patience must be at least 1"));
        }
        if self.negative_ratio == 0 {
            return Err(Error::validation("negative_ratio must be at least 1"));
        }
        Ok(())
    }

    /// The tuned search space uses lr in {1,5}x10^-k for k in 2..=5 and
    /// weight decay in {1,5}x10^-k for k in 3..=5 (or exactly 0). Other
    /// positive values run fine; they just get flagged.
    pub fn grid_warnings(&self) -> Vec<String> {
        fn on_grid(x: f64, exps: std::ops::RangeInclusive<i32>) -> bool {
            exps.flat_map(|k| [1.0, 5.0].map(|m| m * 10f64.powi(-k)))
                .any(|g| (x - g).abs() <= 1e-9 * g)
        }
        let mut warnings = Vec::new();
        if !on_grid(self.lr, 2..=5) {
            warnings.push(format!("lr = {} is outside the documented search grid", self.lr));
        }
        if self.weight_decay != 0.0 && !on_grid(self.weight_decay, 3..=5) {
            warnings.push(format!(
                "weight_decay = {} is outside the documented search grid",
                self.weight_decay
            ));
        }
        warnings
    }
}

enum Head {
    Nc(NcHead),
    Lp(LpHead),
}

enum TaskData {
    Nc {
        split: Split,
        labels: LabelStore,
    },
    Lp {
        split: Split,
        target_etype: usize,
        train_pos: Vec<(usize, usize)>,
        val_pos: Vec<(usize, usize)>,
        test_pos: Vec<(usize, usize)>,
        val_neg: Vec<(usize, usize)>,
        test_neg: Vec<(usize, usize)>,
    },
}

/// One run's frozen context: the diffusion graph (message graph for link
/// prediction), the initialized model and head, and the split with its
/// fixed evaluation pools.
struct Engine<'a> {
    cfg: &'a RunConfig,
    ds: &'a Dataset,
    graph: HeteroGraph,
    model: SheafModel,
    head: Head,
    task: TaskData,
}

fn as_typed(pairs: &[(usize, usize)], etype: usize) -> Vec<(usize, usize, usize)> {
    pairs.iter().map(|&(u, v)| (u, v, etype)).collect()
}

impl<'a> Engine<'a> {
    fn build(cfg: &'a RunConfig, ds: &'a Dataset, store: &mut ParamStore) -> Result<Engine<'a>> {
        cfg.validate()?;
        if cfg.model.task != ds.meta.task {
            return Err(Error::validation(format!(
                "config task {:?} does not match dataset task {:?}",
                cfg.model.task, ds.meta.task
            )));
        }
        let mut init_rng = rng::substream(cfg.seed, STREAM_INIT);
        match ds.meta.task {
            TaskKind::Nc => {
                let labels = ds
                    .labels
                    .clone()
                    .ok_or_else(|| Error::validation("nc training needs labels"))?;
                let split = make_nc_split(&labels, NC_TEST_NODES, NC_VAL_NODES, cfg.seed)?;
                let graph = ds.graph.clone();
                let model = SheafModel::init(
                    store,
                    &cfg.model,
                    &graph,
                    ds.features.as_ref(),
                    ds.target_node_type(),
                    &mut init_rng,
                )?;
                let head = NcHead::init(
                    store,
                    "head",
                    cfg.model.embedding_width(),
                    labels.num_classes,
                    cfg.model.activation,
                    &mut init_rng,
                )?;
                Ok(Engine { cfg, ds, graph, model, head: Head::Nc(head), task: TaskData::Nc { split, labels } })
            }
            TaskKind::Lp => {
                let te = ds
                    .target_edge_type()
                    .ok_or_else(|| Error::validation("lp training needs a target edge type"))?;
                let split = make_lp_split(&ds.target_edges, cfg.seed)?;
                let graph = message_graph(ds, &split)?;
                let pick = |idx: &[usize]| -> Vec<(usize, usize)> {
                    idx.iter().map(|&i| ds.target_edges[i]).collect()
                };
                let train_pos = pick(&split.train);
                let val_pos = pick(&split.val);
                let test_pos = pick(&split.test);
                // Fixed pools; the known list spans every positive so no
                // sampled negative is a true edge of any split.
                let val_neg = sample_negatives(
                    &val_pos,
                    &ds.target_edges,
                    &ds.graph,
                    cfg.negative_ratio,
                    cfg.seed.wrapping_add(SEED_VAL_NEG),
                )?;
                let test_neg = sample_negatives(
                    &test_pos,
                    &ds.target_edges,
                    &ds.graph,
                    cfg.negative_ratio,
                    cfg.seed.wrapping_add(SEED_TEST_NEG),
                )?;
                let model = SheafModel::init(
                    store,
                    &cfg.model,
                    &graph,
                    ds.features.as_ref(),
                    None,
                    &mut init_rng,
                )?;
                let head = LpHead::init(
                    store,
                    "head",
                    cfg.decoder,
                    cfg.model.embedding_width(),
                    graph.num_edge_types(),
                    cfg.model.activation,
                    &mut init_rng,
                )?;
                Ok(Engine {
                    cfg,
                    ds,
                    graph,
                    model,
                    head: Head::Lp(head),
                    task: TaskData::Lp { split, target_etype: te, train_pos, val_pos, test_pos, val_neg, test_neg },
                })
            }
        }
    }

    /// One full-batch gradient step. Returns the training loss.
    fn train_step(
        &self,
        store: &mut ParamStore,
        adam: &mut AdamState,
        adam_cfg: &AdamConfig,
        drop_rng: &mut impl Rng,
        epoch: usize,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let leaves = store.load(&mut tape)?;
        let out = self.model.forward(
            &mut tape,
            &leaves,
            &self.graph,
            self.ds.features.as_ref(),
            drop_rng,
            true,
        )?;
        let loss = match (&self.head, &self.task) {
            (Head::Nc(head), TaskData::Nc { split, labels }) => {
                let emb = self.model.postprocess_nc(&mut tape, &out)?;
                let (loss, _) = head.loss(&mut tape, &leaves, emb, labels, &split.train)?;
                loss
            }
            (Head::Lp(head), TaskData::Lp { target_etype, train_pos, .. }) => {
                let emb = self.model.postprocess_lp(&mut tape, &out)?;
                let neg = sample_negatives(
                    train_pos,
                    &self.ds.target_edges,
                    &self.ds.graph,
                    self.cfg.negative_ratio,
                    self.cfg.seed.wrapping_add(SEED_TRAIN_NEG_BASE).wrapping_add(epoch as u64),
                )?;
                head.loss(
                    &mut tape,
                    &leaves,
                    emb,
                    &as_typed(train_pos, *target_etype),
                    &as_typed(&neg, *target_etype),
                )?
            }
            _ => unreachable!("head and task are built together"),
        };
        let loss_val = tape.scalar(loss);
        if !loss_val.is_finite() {
            return Err(Error::numeric(format!(
                "epoch {epoch}: training loss is {loss_val}; stopping with the best checkpoint retained"
            )));
        }
        tape.backward(loss)?;
        let grads = store.collect_grads(&tape, &leaves);
        adam_step(store, &grads, adam, adam_cfg)?;
        Ok(loss_val)
    }

    /// Deterministic eval-mode embedding pass.
    fn eval_embeddings(&self, store: &ParamStore) -> Result<(Tape, Vec<Tid>, Tid)> {
        let mut tape = Tape::new();
        let leaves = store.load(&mut tape)?;
        // Eval mode draws nothing from the rng; any stream works.
        let mut silent = rng::substream(self.cfg.seed, STREAM_DROPOUT);
        let out = self.model.forward(
            &mut tape,
            &leaves,
            &self.graph,
            self.ds.features.as_ref(),
            &mut silent,
            false,
        )?;
        let emb = match self.head {
            Head::Nc(_) => self.model.postprocess_nc(&mut tape, &out)?,
            Head::Lp(_) => self.model.postprocess_lp(&mut tape, &out)?,
        };
        Ok((tape, leaves, emb))
    }

    /// Predicted class sets for the listed nodes: argmax for multiclass,
    /// positive logits for multilabel.
    fn nc_predict(
        &self,
        tape: &mut Tape,
        leaves: &[Tid],
        emb: Tid,
        nodes: &[usize],
    ) -> Result<Vec<Vec<usize>>> {
        let (head, labels) = match (&self.head, &self.task) {
            (Head::Nc(h), TaskData::Nc { labels, .. }) => (h, labels),
            _ => return Err(Error::validation("nc prediction on a link-prediction run")),
        };
        let logits = head.logits(tape, leaves, emb, nodes)?;
        let k = labels.num_classes;
        let vals = tape.values(logits);
        let mut preds = Vec::with_capacity(nodes.len());
        for row in vals.chunks_exact(k) {
            let p = match labels.kind {
                LabelKind::Multiclass => {
                    let mut best = 0;
                    for (c, &x) in row.iter().enumerate() {
                        if x > row[best] {
                            best = c;
                        }
                    }
                    vec![best]
                }
                LabelKind::Multilabel => {
                    (0..k).filter(|&c| row[c] > 0.0).collect()
                }
            };
            preds.push(p);
        }
        Ok(preds)
    }

    fn nc_f1(&self, store: &ParamStore, nodes: &[usize]) -> Result<(f64, f64)> {
        let (mut tape, leaves, emb) = self.eval_embeddings(store)?;
        let preds = self.nc_predict(&mut tape, &leaves, emb, nodes)?;
        let labels = match &self.task {
            TaskData::Nc { labels, .. } => labels,
            _ => unreachable!(),
        };
        let truth: Vec<Vec<usize>> = nodes
            .iter()
            .map(|&u| {
                labels
                    .get(u)
                    .map(|c| c.to_vec())
                    .ok_or_else(|| Error::validation(format!("node {u} has no label")))
            })
            .collect::<Result<_>>()?;
        metrics::f1_scores(&preds, &truth, labels.num_classes, labels.kind)
    }

    /// Probabilities for positives then negatives, plus the truth mask.
    fn lp_pool_scores(
        &self,
        store: &ParamStore,
        pos: &[(usize, usize)],
        neg: &[(usize, usize)],
    ) -> Result<(Vec<f64>, Vec<bool>)> {
        let (head, te) = match (&self.head, &self.task) {
            (Head::Lp(h), TaskData::Lp { target_etype, .. }) => (h, *target_etype),
            _ => return Err(Error::validation("edge scoring on a node-classification run")),
        };
        let (mut tape, leaves, emb) = self.eval_embeddings(store)?;
        let mut pairs = as_typed(pos, te);
        pairs.extend(as_typed(neg, te));
        let scores = head.score(&mut tape, &leaves, emb, &pairs)?;
        let vals = tape.values(scores).to_vec();
        let mut truth = vec![true; pos.len()];
        truth.extend(std::iter::repeat(false).take(neg.len()));
        Ok((vals, truth))
    }

    /// Validation metric steering early stopping: micro-F1 or AUROC.
    fn val_metric(&self, store: &ParamStore) -> Result<f64> {
        match &self.task {
            TaskData::Nc { split, .. } => Ok(self.nc_f1(store, &split.val)?.1),
            TaskData::Lp { val_pos, val_neg, .. } => {
                let (scores, truth) = self.lp_pool_scores(store, val_pos, val_neg)?;
                metrics::auroc(&scores, &truth)
            }
        }
    }

    /// Ranked candidate lists for the test positives: the true tail at
    /// index 0 against type-matched distractors that are not known edges.
    fn mrr_lists(&self, store: &ParamStore) -> Result<Vec<(Vec<f64>, usize)>> {
        let (head, te, test_pos) = match (&self.head, &self.task) {
            (Head::Lp(h), TaskData::Lp { target_etype, test_pos, .. }) => {
                (h, *target_etype, test_pos)
            }
            _ => return Err(Error::validation("mrr on a node-classification run")),
        };
        let known: HashSet<(usize, usize)> = self
            .ds
            .target_edges
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        let mut cand_rng = rng::substream(self.cfg.seed, STREAM_MRR);
        let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
        let mut list_lens = Vec::with_capacity(test_pos.len());
        for &(u, v) in test_pos {
            let tail_type = self.ds.graph.node_type(v);
            let pool: Vec<usize> = self
                .ds
                .graph
                .nodes_of_type(tail_type)
                .into_iter()
                .filter(|&w| w != u && !known.contains(&(u.min(w), u.max(w))))
                .collect();
            let distractors: Vec<usize> = pool
                .choose_multiple(&mut cand_rng, MRR_DISTRACTORS)
                .copied()
                .collect();
            pairs.push((u, v, te));
            pairs.extend(distractors.iter().map(|&w| (u, w, te)));
            list_lens.push(1 + distractors.len());
        }
        let (mut tape, leaves, emb) = self.eval_embeddings(store)?;
        let scores = head.score(&mut tape, &leaves, emb, &pairs)?;
        let vals = tape.values(scores);
        let mut lists = Vec::with_capacity(test_pos.len());
        let mut at = 0;
        for len in list_lens {
            lists.push((vals[at..at + len].to_vec(), 0));
            at += len;
        }
        Ok(lists)
    }

    /// Final report from the current parameters: validation and test
    /// metrics plus the split sizes.
    fn final_report(&self, store: &ParamStore) -> Result<MetricReport> {
        let mut report = MetricReport::new(self.cfg.seed);
        match &self.task {
            TaskData::Nc { split, .. } => {
                report.split_sizes.insert("train".into(), split.train.len());
                report.split_sizes.insert("val".into(), split.val.len());
                report.split_sizes.insert("test".into(), split.test.len());
                let (_, val_micro) = self.nc_f1(store, &split.val)?;
                let (test_macro, test_micro) = self.nc_f1(store, &split.test)?;
                report.insert("val_micro_f1", val_micro)?;
                report.insert("test_micro_f1", test_micro)?;
                report.insert("test_macro_f1", test_macro)?;
            }
            TaskData::Lp { split, val_pos, val_neg, test_pos, test_neg, .. } => {
                report.split_sizes.insert("train".into(), split.train.len());
                report.split_sizes.insert("val".into(), split.val.len());
                report.split_sizes.insert("test".into(), split.test.len());
                let (scores, truth) = self.lp_pool_scores(store, val_pos, val_neg)?;
                report.insert("val_auroc", metrics::auroc(&scores, &truth)?)?;
                let (scores, truth) = self.lp_pool_scores(store, test_pos, test_neg)?;
                report.insert("test_auroc", metrics::auroc(&scores, &truth)?)?;
                report.insert("test_aupr", metrics::aupr(&scores, &truth)?)?;
                report.insert("test_mrr", metrics::mrr(&self.mrr_lists(store)?)?)?;
            }
        }
        Ok(report)
    }
}

fn snapshot(store: &ParamStore) -> Vec<Vec<f64>> {
    store.entries().iter().map(|p| p.data.clone()).collect()
}

fn restore(store: &mut ParamStore, data: &[Vec<f64>]) {
    for (i, d) in data.iter().enumerate() {
        store.entry_mut(i).data.clone_from(d);
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: MetricReport,
    /// Completed epochs at the best validation metric; 0 means the
    /// untrained initialization was never improved on (or epochs = 0).
    pub best_epoch: usize,
    pub epochs_run: usize,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let ds = load_dataset(&cfg.dataset)?;
    train_on(cfg, &ds)
}

/// Training against an already-loaded dataset. The run directory (when
/// configured) receives `config.json`, `checkpoint.bin` (best validation
/// parameters), `log.tsv` (epoch, train loss, validation metric), and
/// `metrics.json`.
pub fn train_on(cfg: &RunConfig, ds: &Dataset) -> Result<TrainOutcome> {
    for w in cfg.grid_warnings() {
        eprintln!("warning: {w}");
    }
    let mut store = ParamStore::new();
    let engine = Engine::build(cfg, ds, &mut store)?;

    let run_dir = cfg.out_dir.clone();
    let mut log: Option<fs::File> = None;
    if let Some(dir) = &run_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let echo = serde_json::to_string_pretty(cfg)
            .map_err(|e| Error::validation(format!("config echo: {e}")))?;
        write_text(&dir.join("config.json"), &(echo + "\n"))?;
        let log_path = dir.join("log.tsv");
        let mut f = fs::File::create(&log_path)
            .map_err(|e| Error::io(log_path.display().to_string(), e))?;
        writeln!(f, "epoch\ttrain_loss\tval_metric")
            .map_err(|e| Error::io(log_path.display().to_string(), e))?;
        log = Some(f);
    }
    let save_best = |store: &ParamStore| -> Result<()> {
        if let Some(dir) = &run_dir {
            save_checkpoint(
                dir.join("checkpoint.bin"),
                cfg,
                engine.graph.num_node_types(),
                engine.graph.num_edge_types(),
                store,
            )?;
        }
        Ok(())
    };

    let adam_cfg = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut adam = AdamState::new(&store);
    let mut drop_rng = rng::substream(cfg.seed, STREAM_DROPOUT);

    let mut best_data = snapshot(&store);
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;
    // The untrained state goes to disk first so a numeric abort in epoch 0
    // still leaves a loadable checkpoint behind.
    save_best(&store)?;

    for epoch in 0..cfg.epochs {
        let loss = engine.train_step(&mut store, &mut adam, &adam_cfg, &mut drop_rng, epoch)?;
        let val = engine.val_metric(&store)?;
        epochs_run = epoch + 1;
        if let Some(f) = &mut log {
            writeln!(f, "{epoch}\t{loss}\t{val}")
                .map_err(|e| Error::io("log.tsv", e))?;
        }
        if val > best_val {
            best_val = val;
            best_epoch = epoch + 1;
            best_data = snapshot(&store);
            since_best = 0;
            save_best(&store)?;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    restore(&mut store, &best_data);
    let report = engine.final_report(&store)?;
    if let Some(dir) = &run_dir {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::validation(format!("metrics serialization: {e}")))?;
        write_text(&dir.join("metrics.json"), &(json + "\n"))?;
    }
    Ok(TrainOutcome { report, best_epoch, epochs_run })
}

/// Re-evaluates a checkpoint against a dataset. The split and evaluation
/// pools are rebuilt from the seed echoed in the checkpoint, so running
/// this on the training dataset reproduces the training run's metrics
/// exactly.
pub fn evaluate(ckpt_path: impl AsRef<Path>, data_dir: impl AsRef<Path>) -> Result<MetricReport> {
    let ck = load_checkpoint(ckpt_path)?;
    let ds = load_dataset(data_dir)?;
    evaluate_on(&ck.header.config, &ck.header, &ck.store, &ds)
}

fn evaluate_on(
    cfg: &RunConfig,
    header: &crate::checkpoint::CheckpointHeader,
    loaded: &ParamStore,
    ds: &Dataset,
) -> Result<MetricReport> {
    let mut cfg = cfg.clone();
    cfg.out_dir = None;
    let mut store = ParamStore::new();
    let engine = Engine::build(&cfg, ds, &mut store)?;
    if engine.graph.num_edge_types() != header.num_edge_types {
        return Err(Error::validation(format!(
            "checkpoint was trained with {} edge types, dataset has {}",
            header.num_edge_types,
            engine.graph.num_edge_types()
        )));
    }
    if engine.graph.num_node_types() != header.num_node_types {
        return Err(Error::validation(format!(
            "checkpoint was trained with {} node types, dataset has {}",
            header.num_node_types,
            engine.graph.num_node_types()
        )));
    }
    check_schema(&store, loaded)?;
    for i in 0..store.len() {
        let name = store.entry(i).name.clone();
        store.entry_mut(i).data.clone_from(&loaded.by_name(&name).unwrap().data);
    }
    engine.final_report(&store)
}

#[derive(Debug, Serialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<MetricReport>,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

/// Repeats a run across seeds and aggregates every reported metric with
/// mean and population standard deviation. Per-seed artifacts land in
/// `seed_<s>/` under the configured run directory.
pub fn train_multi(cfg: &RunConfig, seeds: &[u64]) -> Result<SeedSummary> {
    if seeds.is_empty() {
        return Err(Error::validation("multi-seed run: empty seed list"));
    }
    let ds = load_dataset(&cfg.dataset)?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let mut c = cfg.clone();
        c.seed = s;
        c.out_dir = cfg.out_dir.as_ref().map(|d| d.join(format!("seed_{s}")));
        per_seed.push(train_on(&c, &ds)?.report);
    }
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    for key in per_seed[0].values.keys() {
        let xs: Vec<f64> = per_seed
            .iter()
            .map(|r| {
                r.values.get(key).copied().ok_or_else(|| {
                    Error::validation(format!("seed runs disagree on reported metrics: {key}"))
                })
            })
            .collect::<Result<_>>()?;
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
        mean.insert(key.clone(), m);
        std.insert(key.clone(), var.sqrt());
    }
    let summary = SeedSummary { seeds: seeds.to_vec(), per_seed, mean, std };
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::validation(format!("summary serialization: {e}")))?;
        write_text(&dir.join("summary.json"), &(json + "\n"))?;
    }
    Ok(summary)
}

/// Finite-difference verification of the whole training objective (model,
/// head, and loss) on the given dataset, in eval mode so the objective is
/// deterministic. Uses the run's train split. Gradients are routed through
/// the degree normalization regardless of the config: under the default
/// stop-gradient the tape intentionally ignores how D^{-1/2} moves with the
/// parameters, which finite differences cannot emulate.
pub fn run_gradcheck(cfg: &RunConfig, ds: &Dataset, gc: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut cfg = cfg.clone();
    cfg.model.grad_through_norm = true;
    let cfg = &cfg;
    let mut store = ParamStore::new();
    let engine = Engine::build(cfg, ds, &mut store)?;
    // One fixed negative pool so every probe sees the same objective.
    let fixed_neg = match &engine.task {
        TaskData::Lp { train_pos, .. } => Some(sample_negatives(
            train_pos,
            &ds.target_edges,
            &ds.graph,
            cfg.negative_ratio,
            cfg.seed.wrapping_add(SEED_TRAIN_NEG_BASE),
        )?),
        TaskData::Nc { .. } => None,
    };
    let loss_tid = |params: &ParamStore, tape: &mut Tape| -> Result<(Vec<Tid>, Tid)> {
        let leaves = params.load(tape)?;
        let mut silent = rng::substream(cfg.seed, STREAM_DROPOUT);
        let out = engine.model.forward(
            tape,
            &leaves,
            &engine.graph,
            ds.features.as_ref(),
            &mut silent,
            false,
        )?;
        let loss = match (&engine.head, &engine.task) {
            (Head::Nc(head), TaskData::Nc { split, labels }) => {
                let emb = engine.model.postprocess_nc(tape, &out)?;
                head.loss(tape, &leaves, emb, labels, &split.train)?.0
            }
            (Head::Lp(head), TaskData::Lp { target_etype, train_pos, .. }) => {
                let emb = engine.model.postprocess_lp(tape, &out)?;
                head.loss(
                    tape,
                    &leaves,
                    emb,
                    &as_typed(train_pos, *target_etype),
                    &as_typed(fixed_neg.as_ref().unwrap(), *target_etype),
                )?
            }
            _ => unreachable!(),
        };
        Ok((leaves, loss))
    };
    gradcheck(
        &store,
        |params| {
            let mut tape = Tape::new();
            let (_, loss) = loss_tid(params, &mut tape)?;
            Ok(tape.scalar(loss))
        },
        |params| {
            let mut tape = Tape::new();
            let (leaves, loss) = loss_tid(params, &mut tape)?;
            tape.backward(loss)?;
            Ok(params.collect_grads(&tape, &leaves))
        },
        gc,
    )
}
