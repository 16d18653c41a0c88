//! Restriction-map predictors.
//!
//! A predictor maps per-incidence information to the flat parameter vector a
//! map builder consumes. For edge e = (u, v) with u < v the output tensor has
//! 2|E| rows: slot 2e holds the u-side parameters (u's data first in every
//! concatenation), slot 2e+1 the v-side parameters with the roles swapped.
//! This slot layout is the one the Laplacian assembly expects.
//!
//! Kinds differ only in what they concatenate: node stalk rows (width
//! w = d*f), one-hot node types, one-hot edge types, or a per-edge-type
//! network. Type-only kinds never touch the feature tensor, so their output
//! is bit-identical under feature changes.

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::restriction::MapKind;
use crate::tensor::{Activation, Mlp, ParamStore, Tape, Tid};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Endpoint stalk rows only, type-blind.
    Nsd,
    /// Stalks, both node types, edge type.
    Te,
    /// Stalks and the edge type.
    Ee,
    /// Stalks and both node types.
    Ne,
    /// Both node types and the edge type, no features.
    Types,
    /// Node types only.
    Nt,
    /// Edge type only.
    Et,
    /// One network per edge type over endpoint stalks.
    Ensemble,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 8] = [
        PredictorKind::Nsd,
        PredictorKind::Te,
        PredictorKind::Ee,
        PredictorKind::Ne,
        PredictorKind::Types,
        PredictorKind::Nt,
        PredictorKind::Et,
        PredictorKind::Ensemble,
    ];

    /// Width of the concatenated network input given stalk width w = d*f and
    /// the type cardinalities.
    pub fn input_width(
        self,
        w: usize,
        num_node_types: usize,
        num_edge_types: usize,
        ensemble_with_node_types: bool,
    ) -> usize {
        let (phi, psi) = (num_node_types, num_edge_types);
        match self {
            PredictorKind::Nsd => 2 * w,
            PredictorKind::Te => 2 * w + 2 * phi + psi,
            PredictorKind::Ee => 2 * w + psi,
            PredictorKind::Ne => 2 * w + 2 * phi,
            PredictorKind::Types => 2 * phi + psi,
            PredictorKind::Nt => 2 * phi,
            PredictorKind::Et => psi,
            PredictorKind::Ensemble => {
                2 * w + if ensemble_with_node_types { 2 * phi } else { 0 }
            }
        }
    }

    /// Whether predicted maps depend on the stalk features at all.
    pub fn uses_features(self) -> bool {
        !matches!(self, PredictorKind::Types | PredictorKind::Nt | PredictorKind::Et)
    }

    pub fn num_nets(self, num_edge_types: usize) -> usize {
        if self == PredictorKind::Ensemble { num_edge_types } else { 1 }
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PredictorKind::Nsd => "nsd",
            PredictorKind::Te => "te",
            PredictorKind::Ee => "ee",
            PredictorKind::Ne => "ne",
            PredictorKind::Types => "types",
            PredictorKind::Nt => "nt",
            PredictorKind::Et => "et",
            PredictorKind::Ensemble => "ensemble",
        };
        f.write_str(s)
    }
}

/// Exact trainable scalar count of the predictor net(s). `hidden = 0` means
/// a single linear layer.
pub fn param_budget(
    kind: PredictorKind,
    map_kind: MapKind,
    d: usize,
    f: usize,
    num_node_types: usize,
    num_edge_types: usize,
    hidden: usize,
    ensemble_with_node_types: bool,
) -> usize {
    let in_w = kind.input_width(d * f, num_node_types, num_edge_types, ensemble_with_node_types);
    let out = map_kind.param_count(d);
    let single = if hidden == 0 {
        in_w * out + out
    } else {
        in_w * hidden + hidden + hidden * out + out
    };
    kind.num_nets(num_edge_types) * single
}

/// Predictor nets registered in a `ParamStore`, tied to fixed type
/// cardinalities and stalk geometry.
#[derive(Debug, Clone)]
pub struct SheafPredictor {
    pub kind: PredictorKind,
    pub d: usize,
    pub w: usize,
    pub out_width: usize,
    pub num_node_types: usize,
    pub num_edge_types: usize,
    pub ensemble_with_node_types: bool,
    nets: Vec<Mlp>,
}

impl SheafPredictor {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        kind: PredictorKind,
        map_kind: MapKind,
        d: usize,
        f: usize,
        num_node_types: usize,
        num_edge_types: usize,
        hidden: usize,
        activation: Activation,
        ensemble_with_node_types: bool,
        rng: &mut impl Rng,
    ) -> Result<SheafPredictor> {
        map_kind.validate(d)?;
        if num_node_types == 0 || num_edge_types == 0 {
            return Err(Error::validation(
                "predictor needs at least one node type and one edge type",
            ));
        }
        let w = d * f;
        let out_width = map_kind.param_count(d);
        let in_w = kind.input_width(w, num_node_types, num_edge_types, ensemble_with_node_types);
        let dims: Vec<usize> =
            if hidden == 0 { vec![in_w, out_width] } else { vec![in_w, hidden, out_width] };
        let mut nets = Vec::new();
        if kind == PredictorKind::Ensemble {
            for t in 0..num_edge_types {
                nets.push(Mlp::init(store, &format!("{name}.net{t}"), &dims, activation, rng)?);
            }
        } else {
            nets.push(Mlp::init(store, &format!("{name}.net"), &dims, activation, rng)?);
        }
        Ok(SheafPredictor {
            kind,
            d,
            w,
            out_width,
            num_node_types,
            num_edge_types,
            ensemble_with_node_types,
            nets,
        })
    }

    pub fn net_scalar_count(&self) -> usize {
        self.nets.iter().map(Mlp::param_count).sum()
    }

    /// Parameter vectors for every incidence, (2|E| x out_width).
    ///
    /// `stalk_rows` is the per-node flattened stalk tensor (n x w); kinds
    /// that ignore features never read it. The graph's type cardinalities
    /// must match the ones the predictor was built with.
    pub fn predict(
        &self,
        tape: &mut Tape,
        leaves: &[Tid],
        graph: &HeteroGraph,
        stalk_rows: Tid,
    ) -> Result<Tid> {
        if graph.num_node_types() != self.num_node_types {
            return Err(Error::validation(format!(
                "graph has {} node types, predictor was built for {}",
                graph.num_node_types(),
                self.num_node_types
            )));
        }
        if graph.num_edge_types() != self.num_edge_types {
            return Err(Error::validation(format!(
                "graph has {} edge types, predictor was built for {}",
                graph.num_edge_types(),
                self.num_edge_types
            )));
        }
        if self.kind.uses_features()
            && (tape.rows(stalk_rows) != graph.n() || tape.cols(stalk_rows) != self.w)
        {
            return Err(Error::dim(format!(
                "stalk rows are {}x{}, expected {}x{}",
                tape.rows(stalk_rows),
                tape.cols(stalk_rows),
                graph.n(),
                self.w
            )));
        }
        let m = graph.num_edges();
        let rows = 2 * m;
        let input = self.assemble_input(tape, graph, stalk_rows)?;
        if self.kind != PredictorKind::Ensemble {
            return self.nets[0].forward(tape, leaves, input);
        }

        // Route each incidence row through its edge type's network. Types
        // with no edges are skipped; disjoint scatters reassemble the output.
        let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); self.num_edge_types];
        for (e, edge) in graph.edges().iter().enumerate() {
            by_type[edge.etype].push(2 * e);
            by_type[edge.etype].push(2 * e + 1);
        }
        let mut acc = tape.constant(rows, self.out_width, vec![0.0; rows * self.out_width])?;
        for (t, rows_t) in by_type.iter().enumerate() {
            if rows_t.is_empty() {
                continue;
            }
            let sub = tape.gather_rows(input, rows_t.clone())?;
            let out_t = self.nets[t].forward(tape, leaves, sub)?;
            let scattered = tape.scatter_add_rows(out_t, rows_t.clone(), rows)?;
            acc = tape.add(acc, scattered)?;
        }
        Ok(acc)
    }

    /// Concatenated per-incidence input in the kind's fixed order, with the
    /// incidence's own endpoint first.
    fn assemble_input(&self, tape: &mut Tape, graph: &HeteroGraph, stalk_rows: Tid) -> Result<Tid> {
        let m = graph.num_edges();
        let rows = 2 * m;
        let mut parts: Vec<Tid> = Vec::new();

        if self.kind.uses_features() {
            let mut first = Vec::with_capacity(rows);
            let mut second = Vec::with_capacity(rows);
            for edge in graph.edges() {
                first.push(edge.u);
                first.push(edge.v);
                second.push(edge.v);
                second.push(edge.u);
            }
            parts.push(tape.gather_rows(stalk_rows, first)?);
            parts.push(tape.gather_rows(stalk_rows, second)?);
        }

        let wants_node_types = matches!(
            self.kind,
            PredictorKind::Te | PredictorKind::Ne | PredictorKind::Types | PredictorKind::Nt
        ) || (self.kind == PredictorKind::Ensemble && self.ensemble_with_node_types);
        if wants_node_types {
            let phi = self.num_node_types;
            let mut own = vec![0.0; rows * phi];
            let mut other = vec![0.0; rows * phi];
            for (e, edge) in graph.edges().iter().enumerate() {
                let (tu, tv) = (graph.node_type(edge.u), graph.node_type(edge.v));
                own[(2 * e) * phi + tu] = 1.0;
                own[(2 * e + 1) * phi + tv] = 1.0;
                other[(2 * e) * phi + tv] = 1.0;
                other[(2 * e + 1) * phi + tu] = 1.0;
            }
            parts.push(tape.constant(rows, phi, own)?);
            parts.push(tape.constant(rows, phi, other)?);
        }

        let wants_edge_type = matches!(
            self.kind,
            PredictorKind::Te | PredictorKind::Ee | PredictorKind::Types | PredictorKind::Et
        );
        if wants_edge_type {
            let psi = self.num_edge_types;
            let mut hot = vec![0.0; rows * psi];
            for (e, edge) in graph.edges().iter().enumerate() {
                hot[(2 * e) * psi + edge.etype] = 1.0;
                hot[(2 * e + 1) * psi + edge.etype] = 1.0;
            }
            parts.push(tape.constant(rows, psi, hot)?);
        }

        match parts.len() {
            0 => unreachable!("every kind concatenates at least one part"),
            1 => Ok(parts[0]),
            _ => tape.concat_cols(&parts),
        }
    }
}
