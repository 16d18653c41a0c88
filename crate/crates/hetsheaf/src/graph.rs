//! Heterogeneous graph data model: typed nodes and edges, canonical
//! undirected storage, per-type feature matrices, labels.
//!
//! Node ids are global (one namespace across types); each node also has a
//! per-type row index used for feature lookup. Edges are stored once with
//! u < v. Two edges between the same pair with different types are kept;
//! same-type duplicates are merged.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub etype: usize,
}

#[derive(Debug, Clone)]
pub struct HeteroGraph {
    node_type: Vec<usize>,
    edges: Vec<Edge>,
    num_node_types: usize,
    num_edge_types: usize,
    /// Row index of each node within its type's feature matrix.
    type_row: Vec<usize>,
    type_counts: Vec<usize>,
    /// Incidences per node: (edge index, other endpoint, edge type),
    /// ascending by edge index.
    adj: Vec<Vec<(usize, usize, usize)>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CanonicalizeOptions {
    /// When set, a directed input edge (s, t) with s > t whose reverse
    /// (t, s) with the same type is absent keeps its direction as a derived
    /// edge type `t + num_input_types`. If any derived edge materializes the
    /// edge-type count doubles so type ids stay consecutive.
    pub add_reverse_types: bool,
}

impl HeteroGraph {
    /// Builds a canonical graph from raw (possibly directed, possibly
    /// duplicated) edges. Self-loops are dropped with a note on stderr;
    /// dangling endpoints are an error listing the offending edges.
    pub fn canonicalize(
        node_type: Vec<usize>,
        num_node_types: usize,
        raw_edges: &[(usize, usize, usize)],
        num_edge_types: usize,
        options: CanonicalizeOptions,
    ) -> Result<HeteroGraph> {
        let n = node_type.len();
        if let Some((i, &t)) = node_type.iter().enumerate().find(|&(_, &t)| t >= num_node_types) {
            return Err(Error::validation(format!(
                "node {i} has type {t}, but only {num_node_types} node types are declared"
            )));
        }
        let dangling: Vec<&(usize, usize, usize)> = raw_edges
            .iter()
            .filter(|&&(s, t, _)| s >= n || t >= n)
            .collect();
        if !dangling.is_empty() {
            return Err(Error::validation(format!(
                "{} edges reference nodes outside 0..{n}: {:?}",
                dangling.len(),
                dangling.iter().take(8).collect::<Vec<_>>()
            )));
        }
        if let Some(&(_, _, t)) = raw_edges.iter().find(|&&(_, _, t)| t >= num_edge_types) {
            return Err(Error::validation(format!(
                "edge type {t} out of declared range {num_edge_types}"
            )));
        }

        let mut dropped_loops = 0usize;
        // Directed presence per (min, max, type): bit 0 = forward (u < v),
        // bit 1 = backward.
        let mut presence: std::collections::BTreeMap<(usize, usize, usize), u8> =
            std::collections::BTreeMap::new();
        for &(s, t, ty) in raw_edges {
            if s == t {
                dropped_loops += 1;
                continue;
            }
            let (a, b, dir) = if s < t { (s, t, 1u8) } else { (t, s, 2u8) };
            *presence.entry((a, b, ty)).or_insert(0) |= dir;
        }
        if dropped_loops > 0 {
            eprintln!("canonicalize: dropped {dropped_loops} self-loop(s)");
        }

        let mut edges = Vec::with_capacity(presence.len());
        let mut any_derived = false;
        for (&(a, b, ty), &dirs) in &presence {
            let etype = if options.add_reverse_types && dirs == 2 {
                // Backward only: keep direction as a derived type.
                any_derived = true;
                ty + num_edge_types
            } else {
                ty
            };
            edges.push(Edge { u: a, v: b, etype });
        }
        edges.sort_by_key(|e| (e.u, e.v, e.etype));
        edges.dedup();
        let out_edge_types = if any_derived { 2 * num_edge_types } else { num_edge_types };

        let mut type_counts = vec![0usize; num_node_types];
        let mut type_row = vec![0usize; n];
        for (i, &t) in node_type.iter().enumerate() {
            type_row[i] = type_counts[t];
            type_counts[t] += 1;
        }
        let mut adj = vec![Vec::new(); n];
        for (ei, e) in edges.iter().enumerate() {
            adj[e.u].push((ei, e.v, e.etype));
            adj[e.v].push((ei, e.u, e.etype));
        }

        Ok(HeteroGraph {
            node_type,
            edges,
            num_node_types,
            num_edge_types: out_edge_types,
            type_row,
            type_counts,
            adj,
        })
    }

    pub fn n(&self) -> usize {
        self.node_type.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_type(&self, u: usize) -> usize {
        self.node_type[u]
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_type
    }

    pub fn num_node_types(&self) -> usize {
        self.num_node_types
    }

    pub fn num_edge_types(&self) -> usize {
        self.num_edge_types
    }

    /// Row of this node inside its type's feature matrix.
    pub fn type_row(&self, u: usize) -> usize {
        self.type_row[u]
    }

    pub fn type_count(&self, t: usize) -> usize {
        self.type_counts[t]
    }

    pub fn nodes_of_type(&self, t: usize) -> Vec<usize> {
        (0..self.n()).filter(|&u| self.node_type[u] == t).collect()
    }

    /// Incident edges of u as (edge index, other endpoint, edge type),
    /// ascending by edge index.
    pub fn neighborhood(&self, u: usize) -> &[(usize, usize, usize)] {
        &self.adj[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeKind {
    Node,
    Edge,
}

/// Unit basis vector e_id of the given length.
pub fn one_hot(kind: TypeKind, id: usize, cardinality: usize) -> Result<Vec<f64>> {
    if id >= cardinality {
        let what = match kind {
            TypeKind::Node => "node",
            TypeKind::Edge => "edge",
        };
        return Err(Error::validation(format!(
            "{what} type {id} out of range 0..{cardinality}"
        )));
    }
    let mut v = vec![0.0; cardinality];
    v[id] = 1.0;
    Ok(v)
}

/// Per-node-type feature matrices. All nodes of one type share one feature
/// width; rows follow the per-type row index of the graph.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    widths: Vec<usize>,
    mats: Vec<Vec<f64>>,
}

impl FeatureStore {
    pub fn new(widths: Vec<usize>, mats: Vec<Vec<f64>>) -> Result<FeatureStore> {
        if widths.len() != mats.len() {
            return Err(Error::dim(format!(
                "feature store: {} widths for {} matrices",
                widths.len(),
                mats.len()
            )));
        }
        for (t, (w, m)) in widths.iter().zip(&mats).enumerate() {
            if *w == 0 {
                return Err(Error::validation(format!("feature width 0 for node type {t}")));
            }
            if m.len() % w != 0 {
                return Err(Error::dim(format!(
                    "feature matrix for type {t}: {} values not divisible by width {w}",
                    m.len()
                )));
            }
            if let Some(bad) = m.iter().find(|x| !x.is_finite()) {
                return Err(Error::validation(format!(
                    "non-finite feature value {bad} for node type {t}"
                )));
            }
        }
        Ok(FeatureStore { widths, mats })
    }

    pub fn num_types(&self) -> usize {
        self.widths.len()
    }

    pub fn width(&self, t: usize) -> usize {
        self.widths[t]
    }

    pub fn rows(&self, t: usize) -> usize {
        self.mats[t].len() / self.widths[t]
    }

    pub fn row(&self, t: usize, idx: usize) -> &[f64] {
        let w = self.widths[t];
        &self.mats[t][idx * w..(idx + 1) * w]
    }

    pub fn matrix(&self, t: usize) -> &[f64] {
        &self.mats[t]
    }

    /// Row counts must match the graph's per-type node counts.
    pub fn validate_against(&self, graph: &HeteroGraph) -> Result<()> {
        if self.num_types() != graph.num_node_types() {
            return Err(Error::dim(format!(
                "feature store covers {} node types, graph has {}",
                self.num_types(),
                graph.num_node_types()
            )));
        }
        for t in 0..self.num_types() {
            if self.rows(t) != graph.type_count(t) {
                return Err(Error::dim(format!(
                    "feature matrix for type {t} has {} rows, graph has {} nodes of that type",
                    self.rows(t),
                    graph.type_count(t)
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Multiclass,
    Multilabel,
}

/// Labels for target-type nodes, indexed by global node id. Nodes outside
/// the target type (or unlabeled targets) hold None.
#[derive(Debug, Clone)]
pub struct LabelStore {
    pub kind: LabelKind,
    pub target_type: usize,
    pub num_classes: usize,
    labels: Vec<Option<Vec<usize>>>,
}

impl LabelStore {
    /// `entries` maps node id to either a single class (multiclass) or the
    /// set of active class ids (multilabel).
    pub fn new(
        kind: LabelKind,
        target_type: usize,
        num_classes: usize,
        n: usize,
        entries: &[(usize, Vec<usize>)],
    ) -> Result<LabelStore> {
        let mut labels = vec![None; n];
        for (node, classes) in entries {
            if *node >= n {
                return Err(Error::validation(format!("label for unknown node {node}")));
            }
            if kind == LabelKind::Multiclass && classes.len() != 1 {
                return Err(Error::validation(format!(
                    "node {node}: multiclass label must be a single class"
                )));
            }
            if let Some(&c) = classes.iter().find(|&&c| c >= num_classes) {
                return Err(Error::validation(format!(
                    "node {node}: class {c} out of range 0..{num_classes}"
                )));
            }
            if labels[*node].is_some() {
                return Err(Error::validation(format!("duplicate label for node {node}")));
            }
            labels[*node] = Some(classes.clone());
        }
        Ok(LabelStore { kind, target_type, num_classes, labels })
    }

    pub fn get(&self, node: usize) -> Option<&[usize]> {
        self.labels[node].as_deref()
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&u| self.labels[u].is_some()).collect()
    }

    /// Multilabel target as a 0/1 vector of length num_classes.
    pub fn binary_vector(&self, node: usize) -> Option<Vec<f64>> {
        self.labels[node].as_ref().map(|classes| {
            let mut v = vec![0.0; self.num_classes];
            for &c in classes {
                v[c] = 1.0;
            }
            v
        })
    }
}
