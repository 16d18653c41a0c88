//! Dataset directories, split generation, negative sampling, and synthetic
//! graph generators.
//!
//! A dataset lives in one directory: `meta.json` (schema and task),
//! `nodes.tsv` (`id<TAB>type`, dense ascending), `edges.tsv`
//! (`src<TAB>dst<TAB>etype`), one `feat_<type>.tsv` per node type, and
//! either `labels.tsv` or `target_edges.tsv`. Floats are written with 17
//! significant digits so save/load round-trips are byte-exact.

use crate::error::{Error, Result};
use crate::graph::{CanonicalizeOptions, FeatureStore, HeteroGraph, LabelKind, LabelStore};
use crate::model::TaskKind;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetMeta {
    pub task: TaskKind,
    pub node_types: Vec<String>,
    pub edge_types: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_node_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_edge_type: Option<String>,
    #[serde(default)]
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_kind: Option<LabelKind>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub graph: HeteroGraph,
    pub features: Option<FeatureStore>,
    pub labels: Option<LabelStore>,
    /// Positive pairs for link prediction, canonical `u < v`, file order.
    pub target_edges: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn target_node_type(&self) -> Option<usize> {
        let name = self.meta.target_node_type.as_deref()?;
        self.meta.node_types.iter().position(|t| t == name)
    }

    pub fn target_edge_type(&self) -> Option<usize> {
        let name = self.meta.target_edge_type.as_deref()?;
        self.meta.edge_types.iter().position(|t| t == name)
    }
}

fn file_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::validation(format!("{}: {msg}", path.display()))
}

fn line_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::validation(format!("{}:{}: {msg}", path.display(), line + 1))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// 17 significant digits: enough for f64 round-trips, fixed width for
/// byte-stable files.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_float(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| line_err(path, line, format!("bad float {s:?}")))?;
    if !v.is_finite() {
        return Err(line_err(path, line, format!("non-finite value {s}")));
    }
    Ok(v)
}

fn parse_usize(path: &Path, line: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|_| line_err(path, line, format!("bad integer {s:?}")))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| file_err(&meta_path, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_text).map_err(|e| file_err(&meta_path, e))?;
    if meta.node_types.is_empty() || meta.edge_types.is_empty() {
        return Err(file_err(&meta_path, "need at least one node type and one edge type"));
    }
    match meta.task {
        TaskKind::Nc => {
            let name = meta
                .target_node_type
                .as_deref()
                .ok_or_else(|| file_err(&meta_path, "nc task needs target_node_type"))?;
            if !meta.node_types.iter().any(|t| t == name) {
                return Err(file_err(&meta_path, format!("unknown target node type {name:?}")));
            }
            if meta.num_classes == 0 {
                return Err(file_err(&meta_path, "nc task needs num_classes >= 1"));
            }
        }
        TaskKind::Lp => {
            let name = meta
                .target_edge_type
                .as_deref()
                .ok_or_else(|| file_err(&meta_path, "lp task needs target_edge_type"))?;
            if !meta.edge_types.iter().any(|t| t == name) {
                return Err(file_err(&meta_path, format!("unknown target edge type {name:?}")));
            }
        }
    }

    // nodes.tsv: dense ascending ids.
    let nodes_path = dir.join("nodes.tsv");
    let mut node_type = Vec::new();
    for (i, line) in read_lines(&nodes_path)?.iter().enumerate() {
        let (id, ty) = line
            .split_once('\t')
            .ok_or_else(|| line_err(&nodes_path, i, "want node_id<TAB>type_id"))?;
        let id = parse_usize(&nodes_path, i, id)?;
        if id != i {
            return Err(line_err(&nodes_path, i, format!("node id {id}, expected {i}")));
        }
        let ty = parse_usize(&nodes_path, i, ty)?;
        if ty >= meta.node_types.len() {
            return Err(line_err(&nodes_path, i, format!("node type {ty} out of range")));
        }
        node_type.push(ty);
    }
    let n = node_type.len();

    let edges_path = dir.join("edges.tsv");
    let mut raw_edges = Vec::new();
    for (i, line) in read_lines(&edges_path)?.iter().enumerate() {
        let mut it = line.split('\t');
        let (s, d, t) = match (it.next(), it.next(), it.next(), it.next()) {
            (Some(s), Some(d), Some(t), None) => (s, d, t),
            _ => return Err(line_err(&edges_path, i, "want src<TAB>dst<TAB>etype")),
        };
        let s = parse_usize(&edges_path, i, s)?;
        let d = parse_usize(&edges_path, i, d)?;
        let t = parse_usize(&edges_path, i, t)?;
        if s >= n || d >= n {
            return Err(line_err(&edges_path, i, format!("endpoint out of 0..{n}")));
        }
        if t >= meta.edge_types.len() {
            return Err(line_err(&edges_path, i, format!("edge type {t} out of range")));
        }
        raw_edges.push((s, d, t));
    }
    let graph = HeteroGraph::canonicalize(
        node_type,
        meta.node_types.len(),
        &raw_edges,
        meta.edge_types.len(),
        CanonicalizeOptions::default(),
    )?;

    // Feature files are optional as a set: none at all means a featureless
    // dataset, a partial set zero-fills the remaining types at width 1.
    let feat_paths: Vec<_> =
        meta.node_types.iter().map(|t| dir.join(format!("feat_{t}.tsv"))).collect();
    let features = if feat_paths.iter().any(|p| p.exists()) {
        let mut widths = Vec::new();
        let mut mats = Vec::new();
        for (t, path) in feat_paths.iter().enumerate() {
            let count = graph.type_count(t);
            if !path.exists() {
                widths.push(1);
                mats.push(vec![0.0; count]);
                continue;
            }
            let lines = read_lines(path)?;
            if lines.len() != count {
                return Err(file_err(
                    path,
                    format!(
                        "{} rows for {count} nodes of type {:?}",
                        lines.len(),
                        meta.node_types[t]
                    ),
                ));
            }
            let mut width = 0;
            let mut mat = Vec::new();
            for (i, line) in lines.iter().enumerate() {
                let row: Vec<&str> = line.split_whitespace().collect();
                if i == 0 {
                    width = row.len();
                    if width == 0 {
                        return Err(line_err(path, i, "empty feature row"));
                    }
                } else if row.len() != width {
                    return Err(line_err(
                        path,
                        i,
                        format!("{} values, expected {width}", row.len()),
                    ));
                }
                for s in row {
                    mat.push(parse_float(path, i, s)?);
                }
            }
            widths.push(width.max(1));
            mats.push(mat);
        }
        Some(FeatureStore::new(widths, mats)?)
    } else {
        None
    };
    if let Some(f) = &features {
        f.validate_against(&graph)?;
    }

    let mut labels = None;
    let mut target_edges = Vec::new();
    match meta.task {
        TaskKind::Nc => {
            let target = meta
                .node_types
                .iter()
                .position(|t| Some(t.as_str()) == meta.target_node_type.as_deref())
                .expect("validated above");
            let kind = meta.label_kind.unwrap_or(LabelKind::Multiclass);
            let labels_path = dir.join("labels.tsv");
            let mut entries = Vec::new();
            for (i, line) in read_lines(&labels_path)?.iter().enumerate() {
                let (node, rest) = line
                    .split_once('\t')
                    .ok_or_else(|| line_err(&labels_path, i, "want node_id<TAB>label"))?;
                let node = parse_usize(&labels_path, i, node)?;
                if node >= n {
                    return Err(line_err(&labels_path, i, format!("node {node} out of 0..{n}")));
                }
                if graph.node_type(node) != target {
                    return Err(line_err(
                        &labels_path,
                        i,
                        format!("node {node} is not of the target type"),
                    ));
                }
                let classes = match kind {
                    LabelKind::Multiclass => vec![parse_usize(&labels_path, i, rest)?],
                    LabelKind::Multilabel => {
                        let bits: Vec<&str> = rest.split(',').collect();
                        if bits.len() != meta.num_classes {
                            return Err(line_err(
                                &labels_path,
                                i,
                                format!("{} bits, expected {}", bits.len(), meta.num_classes),
                            ));
                        }
                        let mut classes = Vec::new();
                        for (c, b) in bits.iter().enumerate() {
                            match *b {
                                "0" => {}
                                "1" => classes.push(c),
                                other => {
                                    return Err(line_err(
                                        &labels_path,
                                        i,
                                        format!("bit {other:?} is not 0/1"),
                                    ))
                                }
                            }
                        }
                        classes
                    }
                };
                entries.push((node, classes));
            }
            labels = Some(LabelStore::new(kind, target, meta.num_classes, n, &entries)?);
        }
        TaskKind::Lp => {
            let te = meta
                .edge_types
                .iter()
                .position(|t| Some(t.as_str()) == meta.target_edge_type.as_deref())
                .expect("validated above");
            let present: HashSet<(usize, usize)> = graph
                .edges()
                .iter()
                .filter(|e| e.etype == te)
                .map(|e| (e.u, e.v))
                .collect();
            let te_path = dir.join("target_edges.tsv");
            let mut seen = HashSet::new();
            for (i, line) in read_lines(&te_path)?.iter().enumerate() {
                let (s, d) = line
                    .split_once('\t')
                    .ok_or_else(|| line_err(&te_path, i, "want src<TAB>dst"))?;
                let s = parse_usize(&te_path, i, s)?;
                let d = parse_usize(&te_path, i, d)?;
                if s == d {
                    return Err(line_err(&te_path, i, "self pair"));
                }
                let key = (s.min(d), s.max(d));
                if !present.contains(&key) {
                    return Err(line_err(
                        &te_path,
                        i,
                        format!("pair ({s}, {d}) is not a target-type edge of the graph"),
                    ));
                }
                if !seen.insert(key) {
                    return Err(line_err(&te_path, i, format!("duplicate pair ({s}, {d})")));
                }
                target_edges.push(key);
            }
            if target_edges.is_empty() {
                return Err(file_err(&te_path, "no target edges"));
            }
        }
    }

    Ok(Dataset { meta, graph, features, labels, target_edges })
}

pub fn save_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    let write = |name: &str, content: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, content).map_err(|e| file_err(&path, e))
    };

    let mut meta_json = serde_json::to_string_pretty(&ds.meta).expect("meta serializes");
    meta_json.push('\n');
    write("meta.json", meta_json)?;

    let mut nodes = String::new();
    for u in 0..ds.graph.n() {
        writeln!(nodes, "{u}\t{}", ds.graph.node_type(u)).unwrap();
    }
    write("nodes.tsv", nodes)?;

    let mut edges = String::new();
    for e in ds.graph.edges() {
        writeln!(edges, "{}\t{}\t{}", e.u, e.v, e.etype).unwrap();
    }
    write("edges.tsv", edges)?;

    if let Some(f) = &ds.features {
        for (t, name) in ds.meta.node_types.iter().enumerate() {
            let w = f.width(t);
            let mut out = String::new();
            for r in 0..f.rows(t) {
                let row: Vec<String> = f.row(t, r).iter().map(|&x| fmt_float(x)).collect();
                debug_assert_eq!(row.len(), w);
                writeln!(out, "{}", row.join("\t")).unwrap();
            }
            write(&format!("feat_{name}.tsv"), out)?;
        }
    }

    if let Some(l) = &ds.labels {
        let mut out = String::new();
        for u in l.labeled_nodes() {
            match l.kind {
                LabelKind::Multiclass => {
                    writeln!(out, "{u}\t{}", l.get(u).unwrap()[0]).unwrap();
                }
                LabelKind::Multilabel => {
                    let bits: Vec<String> = l
                        .binary_vector(u)
                        .unwrap()
                        .iter()
                        .map(|&b| if b > 0.5 { "1".into() } else { "0".into() })
                        .collect();
                    writeln!(out, "{u}\t{}", bits.join(",")).unwrap();
                }
            }
        }
        write("labels.tsv", out)?;
    }

    if ds.meta.task == TaskKind::Lp {
        let mut out = String::new();
        for &(u, v) in &ds.target_edges {
            writeln!(out, "{u}\t{v}").unwrap();
        }
        write("target_edges.tsv", out)?;
    }
    Ok(())
}

/// Disjoint train/val/test index sets plus the seed that produced them.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Node split over labeled target nodes. When there are enough labels the
/// requested test/val counts are taken and the remainder trains; small
/// datasets fall back to a 50/25/25 split.
pub fn make_nc_split(
    labels: &LabelStore,
    n_test: usize,
    n_val: usize,
    seed: u64,
) -> Result<Split> {
    let mut pool = labels.labeled_nodes();
    if pool.is_empty() {
        return Err(Error::validation("nc split: no labeled nodes"));
    }
    let m = pool.len();
    let (n_test, n_val) = if m >= n_test + n_val + 1 { (n_test, n_val) } else { (m / 4, m / 4) };
    let mut rng = crate::rng::seeded(seed);
    pool.shuffle(&mut rng);
    let mut test: Vec<usize> = pool[..n_test].to_vec();
    let mut val: Vec<usize> = pool[n_test..n_test + n_val].to_vec();
    let mut train: Vec<usize> = pool[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, val, test, seed })
}

/// 81/9/10 edge-index split over the positive pairs.
pub fn make_lp_split(target_edges: &[(usize, usize)], seed: u64) -> Result<Split> {
    let m = target_edges.len();
    if m < 10 {
        return Err(Error::validation(format!("lp split: {m} target edges, need at least 10")));
    }
    let n_test = (m as f64 * 0.10).round() as usize;
    let n_val = (m as f64 * 0.09).round() as usize;
    let mut pool: Vec<usize> = (0..m).collect();
    let mut rng = crate::rng::seeded(seed);
    pool.shuffle(&mut rng);
    let mut test: Vec<usize> = pool[..n_test].to_vec();
    let mut val: Vec<usize> = pool[n_test..n_test + n_val].to_vec();
    let mut train: Vec<usize> = pool[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, val, test, seed })
}

/// Message-passing graph for link prediction: the dataset graph with the
/// val and test positives removed, so held-out edges never leak into
/// diffusion.
pub fn message_graph(ds: &Dataset, split: &Split) -> Result<HeteroGraph> {
    let te = ds
        .target_edge_type()
        .ok_or_else(|| Error::validation("message graph needs an lp dataset"))?;
    let held: HashSet<(usize, usize)> = split
        .val
        .iter()
        .chain(&split.test)
        .map(|&i| ds.target_edges[i])
        .collect();
    let kept: Vec<(usize, usize, usize)> = ds
        .graph
        .edges()
        .iter()
        .filter(|e| !(e.etype == te && held.contains(&(e.u, e.v))))
        .map(|e| (e.u, e.v, e.etype))
        .collect();
    HeteroGraph::canonicalize(
        ds.graph.node_types().to_vec(),
        ds.graph.num_node_types(),
        &kept,
        ds.meta.edge_types.len(),
        CanonicalizeOptions::default(),
    )
}

/// Tail-corruption negative sampling: each positive (u, v) yields `ratio`
/// pairs (u, v') with v' uniform over nodes of v's type, rejecting known
/// positives. `known` should cover every positive pair in the dataset,
/// not just the batch being corrupted.
pub fn sample_negatives(
    positives: &[(usize, usize)],
    known: &[(usize, usize)],
    graph: &HeteroGraph,
    ratio: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let known_set: HashSet<(usize, usize)> =
        known.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    // Heads whose eligible tail pool is exhausted cannot be corrupted.
    let mut known_tails: HashMap<(usize, usize), usize> = HashMap::new();
    for &(a, b) in &known_set {
        *known_tails.entry((a, graph.node_type(b))).or_insert(0) += 1;
        *known_tails.entry((b, graph.node_type(a))).or_insert(0) += 1;
    }
    let mut rng = crate::rng::seeded(seed);
    let mut out = Vec::with_capacity(positives.len() * ratio);
    for &(u, v) in positives {
        let tt = graph.node_type(v);
        let tails = graph.nodes_of_type(tt);
        if tails.len() < 2 {
            return Err(Error::validation(format!(
                "negative sampling: tail type {tt} has {} node(s)",
                tails.len()
            )));
        }
        let taken = known_tails.get(&(u, tt)).copied().unwrap_or(0);
        let self_excluded = usize::from(graph.node_type(u) == tt);
        if taken + self_excluded >= tails.len() {
            return Err(Error::validation(format!(
                "negative sampling: every type-{tt} tail of node {u} is already positive"
            )));
        }
        for _ in 0..ratio {
            loop {
                let cand = tails[rng.gen_range(0..tails.len())];
                if cand == u {
                    continue;
                }
                if known_set.contains(&(u.min(cand), u.max(cand))) {
                    continue;
                }
                out.push((u, cand));
                break;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    TypeSignalNc,
    ConflictingEdgesNc,
    BipartiteLp,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SynthSizes {
    #[serde(default = "default_nodes")]
    pub nodes_per_type: usize,
    /// Edges per target node and edge type.
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_noise")]
    pub feature_noise: f64,
}

fn default_nodes() -> usize {
    200
}
fn default_degree() -> usize {
    4
}
fn default_classes() -> usize {
    3
}
fn default_noise() -> f64 {
    0.1
}

impl Default for SynthSizes {
    fn default() -> Self {
        SynthSizes {
            nodes_per_type: default_nodes(),
            degree: default_degree(),
            num_classes: default_classes(),
            feature_noise: default_noise(),
        }
    }
}

/// Agreement probability of the planted edge model in
/// `conflicting_edges_nc`: an `agree` edge links a target to a context
/// sharing its label bit with this probability, a `disagree` edge with its
/// complement. At degree 4 the type-aware Bayes rule is right 99.7% of the
/// time while type-blind aggregation carries no signal at all.
pub const CONFLICT_AGREEMENT: f64 = 0.9;

pub fn synth_hetero(kind: SynthKind, sizes: &SynthSizes, seed: u64) -> Result<Dataset> {
    let n = sizes.nodes_per_type;
    if n < 2 || sizes.degree == 0 || sizes.degree >= n {
        return Err(Error::validation(format!(
            "synth: need 2 <= degree {} < nodes_per_type {n}",
            sizes.degree
        )));
    }
    match kind {
        SynthKind::TypeSignalNc => synth_type_signal(sizes, seed),
        SynthKind::ConflictingEdgesNc => synth_conflicting(sizes, seed),
        SynthKind::BipartiteLp => synth_bipartite(sizes, seed),
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Distinct partners for one node, drawn uniformly from `pool`.
fn draw_distinct(
    rng: &mut impl Rng,
    pool: &[usize],
    count: usize,
    used: &mut HashSet<usize>,
) -> Vec<usize> {
    let mut picked = Vec::with_capacity(count);
    while picked.len() < count {
        let cand = pool[rng.gen_range(0..pool.len())];
        if used.insert(cand) {
            picked.push(cand);
        }
    }
    picked
}

/// Two node types; each target node's label is a fixed function of how
/// many edges of each type it carries, and its features are those counts
/// plus Gaussian noise.
fn synth_type_signal(sizes: &SynthSizes, seed: u64) -> Result<Dataset> {
    let n = sizes.nodes_per_type;
    let k = sizes.num_classes.max(2);
    let mut rng = crate::rng::seeded(seed);
    let node_type: Vec<usize> = (0..2 * n).map(|u| usize::from(u >= n)).collect();
    let context: Vec<usize> = (n..2 * n).collect();

    let mut edges = Vec::new();
    let mut counts = vec![(0usize, 0usize); n];
    for u in 0..n {
        let mut used = HashSet::new();
        for v in draw_distinct(&mut rng, &context, sizes.degree, &mut used) {
            let t = usize::from(rng.gen_bool(0.5));
            if t == 0 {
                counts[u].0 += 1;
            } else {
                counts[u].1 += 1;
            }
            edges.push((u, v, t));
        }
    }
    let graph =
        HeteroGraph::canonicalize(node_type, 2, &edges, 2, CanonicalizeOptions::default())?;

    let sigma = sizes.feature_noise;
    let mut target_feats = Vec::with_capacity(2 * n);
    for &(c0, c1) in &counts {
        target_feats.push(c0 as f64 + sigma * normal(&mut rng));
        target_feats.push(c1 as f64 + sigma * normal(&mut rng));
    }
    let context_feats: Vec<f64> = (0..2 * n).map(|_| normal(&mut rng)).collect();
    let features = FeatureStore::new(vec![2, 2], vec![target_feats, context_feats])?;

    let entries: Vec<(usize, Vec<usize>)> =
        (0..n).map(|u| (u, vec![type_signal_label(counts[u].0, counts[u].1, k)])).collect();
    let labels = LabelStore::new(LabelKind::Multiclass, 0, k, 2 * n, &entries)?;

    Ok(Dataset {
        meta: DatasetMeta {
            task: TaskKind::Nc,
            node_types: vec!["left".into(), "right".into()],
            edge_types: vec!["r0".into(), "r1".into()],
            target_node_type: Some("left".into()),
            target_edge_type: None,
            num_classes: k,
            label_kind: Some(LabelKind::Multiclass),
        },
        graph,
        features: Some(features),
        labels: Some(labels),
        target_edges: Vec::new(),
    })
}

/// The generative labeling rule of `type_signal_nc`, exposed so tests and
/// docs can recompute labels from a saved graph.
pub fn type_signal_label(count_r0: usize, count_r1: usize, num_classes: usize) -> usize {
    (count_r0 + 2 * count_r1) % num_classes
}

/// Binary labels with two edge types of opposite polarity: `agree` edges
/// prefer contexts carrying the node's label bit, `disagree` edges prefer
/// the complement. Context feature 0 states the bit; merging the edge
/// types makes the two signals cancel exactly.
fn synth_conflicting(sizes: &SynthSizes, seed: u64) -> Result<Dataset> {
    let n = sizes.nodes_per_type;
    let mut rng = crate::rng::seeded(seed);
    let node_type: Vec<usize> = (0..2 * n).map(|u| usize::from(u >= n)).collect();
    // Context bit: alternating so both pools stay large.
    let z: Vec<usize> = (0..n).map(|j| j % 2).collect();
    let pool: [Vec<usize>; 2] = [
        (0..n).filter(|&j| z[j] == 0).map(|j| n + j).collect(),
        (0..n).filter(|&j| z[j] == 1).map(|j| n + j).collect(),
    ];
    if pool[0].len() <= sizes.degree || pool[1].len() <= sizes.degree {
        return Err(Error::validation("synth: context pools smaller than the degree"));
    }

    let ys: Vec<usize> = (0..n).map(|_| usize::from(rng.gen_bool(0.5))).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        let y = ys[u];
        for etype in 0..2usize {
            let mut used = HashSet::new();
            for _ in 0..sizes.degree {
                let agree = rng.gen_bool(CONFLICT_AGREEMENT);
                // agree-edges want the label bit, disagree-edges its flip.
                let want = if (etype == 0) == agree { y } else { 1 - y };
                let v = draw_distinct(&mut rng, &pool[want], 1, &mut used)[0];
                edges.push((u, v, etype));
            }
        }
    }
    let graph =
        HeteroGraph::canonicalize(node_type, 2, &edges, 2, CanonicalizeOptions::default())?;

    let sigma = sizes.feature_noise;
    let target_feats: Vec<f64> = (0..3 * n).map(|_| normal(&mut rng)).collect();
    let mut context_feats = Vec::with_capacity(3 * n);
    for &zj in &z {
        context_feats.push(zj as f64);
        context_feats.push(sigma * normal(&mut rng));
        context_feats.push(sigma * normal(&mut rng));
    }
    let features = FeatureStore::new(vec![3, 3], vec![target_feats, context_feats])?;
    let entries: Vec<(usize, Vec<usize>)> = (0..n).map(|u| (u, vec![ys[u]])).collect();
    let labels = LabelStore::new(LabelKind::Multiclass, 0, 2, 2 * n, &entries)?;

    Ok(Dataset {
        meta: DatasetMeta {
            task: TaskKind::Nc,
            node_types: vec!["entity".into(), "context".into()],
            edge_types: vec!["agree".into(), "disagree".into()],
            target_node_type: Some("entity".into()),
            target_edge_type: None,
            num_classes: 2,
            label_kind: Some(LabelKind::Multiclass),
        },
        graph,
        features: Some(features),
        labels: Some(labels),
        target_edges: Vec::new(),
    })
}

/// Users and items with rank-2 latent preferences: positives are each
/// user's best-scoring items, features are the latents plus noise, and an
/// auxiliary item-item edge type links nearest neighbors.
fn synth_bipartite(sizes: &SynthSizes, seed: u64) -> Result<Dataset> {
    let n = sizes.nodes_per_type;
    let mut rng = crate::rng::seeded(seed);
    let node_type: Vec<usize> = (0..2 * n).map(|u| usize::from(u >= n)).collect();
    let latent = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 2] {
        let (a, b): (f64, f64) = (normal(rng), normal(rng));
        let norm = (a * a + b * b).sqrt().max(1e-12);
        [a / norm, b / norm]
    };
    let users: Vec<[f64; 2]> = (0..n).map(|_| latent(&mut rng)).collect();
    let items: Vec<[f64; 2]> = (0..n).map(|_| latent(&mut rng)).collect();
    let dot = |p: &[f64; 2], q: &[f64; 2]| p[0] * q[0] + p[1] * q[1];

    let mut edges = Vec::new();
    let mut target_edges = Vec::new();
    for u in 0..n {
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.sort_by(|&a, &b| dot(&users[u], &items[b]).total_cmp(&dot(&users[u], &items[a])));
        for &i in ranked.iter().take(sizes.degree) {
            edges.push((u, n + i, 0));
            target_edges.push((u, n + i));
        }
    }
    for i in 0..n {
        let best = (0..n)
            .filter(|&j| j != i)
            .max_by(|&a, &b| dot(&items[i], &items[a]).total_cmp(&dot(&items[i], &items[b])))
            .expect("n >= 2");
        edges.push((n + i, n + best, 1));
    }
    let graph =
        HeteroGraph::canonicalize(node_type, 2, &edges, 2, CanonicalizeOptions::default())?;

    let sigma = sizes.feature_noise;
    let mut user_feats = Vec::with_capacity(2 * n);
    let mut item_feats = Vec::with_capacity(2 * n);
    for u in 0..n {
        user_feats.push(users[u][0] + sigma * normal(&mut rng));
        user_feats.push(users[u][1] + sigma * normal(&mut rng));
    }
    for i in 0..n {
        item_feats.push(items[i][0] + sigma * normal(&mut rng));
        item_feats.push(items[i][1] + sigma * normal(&mut rng));
    }
    let features = FeatureStore::new(vec![2, 2], vec![user_feats, item_feats])?;

    Ok(Dataset {
        meta: DatasetMeta {
            task: TaskKind::Lp,
            node_types: vec!["user".into(), "item".into()],
            edge_types: vec!["buys".into(), "similar".into()],
            target_node_type: None,
            target_edge_type: Some("buys".into()),
            num_classes: 0,
            label_kind: None,
        },
        graph,
        features: Some(features),
        labels: None,
        target_edges,
    })
}
