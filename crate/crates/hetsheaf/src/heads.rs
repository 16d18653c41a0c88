//! Task heads: classification over node embeddings and edge scoring for
//! link prediction. Losses are computed on logits; sigmoids appear only in
//! the probability-returning entry points.

use crate::error::{Error, Result};
use crate::graph::{LabelKind, LabelStore};
use crate::tensor::{Activation, Mlp, ParamStore, Tape, Tid};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Edge scoring rule. DistMult keeps one bilinear matrix per edge type;
/// Dot and Concat are shared across types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    #[default]
    Dot,
    DistMult,
    Concat,
}

/// Classifier over final node embeddings: one hidden layer as wide as the
/// embedding, then class logits.
#[derive(Debug, Clone)]
pub struct NcHead {
    pub mlp: Mlp,
    pub embed_width: usize,
    pub num_classes: usize,
}

impl NcHead {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        embed_width: usize,
        num_classes: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<NcHead> {
        if embed_width == 0 || num_classes == 0 {
            return Err(Error::validation("nc head needs positive widths"));
        }
        let mlp = Mlp::init(
            store,
            name,
            &[embed_width, embed_width, num_classes],
            activation,
            rng,
        )?;
        Ok(NcHead { mlp, embed_width, num_classes })
    }

    /// Logits for the listed nodes, shape `|nodes| x num_classes`.
    pub fn logits(
        &self,
        tape: &mut Tape,
        leaves: &[Tid],
        embeddings: Tid,
        nodes: &[usize],
    ) -> Result<Tid> {
        if nodes.is_empty() {
            return Err(Error::validation("nc head: empty node list"));
        }
        let rows = tape.gather_rows(embeddings, nodes.to_vec())?;
        self.mlp.forward(tape, leaves, rows)
    }

    /// Mean loss over the listed nodes plus the logits it was computed
    /// from. Multiclass labels go through softmax cross-entropy,
    /// multilabel ones through per-class sigmoid BCE.
    pub fn loss(
        &self,
        tape: &mut Tape,
        leaves: &[Tid],
        embeddings: Tid,
        labels: &LabelStore,
        nodes: &[usize],
    ) -> Result<(Tid, Tid)> {
        if labels.num_classes != self.num_classes {
            return Err(Error::validation(format!(
                "label store has {} classes, head {}",
                labels.num_classes, self.num_classes
            )));
        }
        let logits = self.logits(tape, leaves, embeddings, nodes)?;
        let loss = match labels.kind {
            LabelKind::Multiclass => {
                let mut idx = Vec::with_capacity(nodes.len());
                for &u in nodes {
                    let classes = labels
                        .get(u)
                        .ok_or_else(|| Error::validation(format!("node {u} has no label")))?;
                    let c = classes[0];
                    if c >= self.num_classes {
                        return Err(Error::validation(format!(
                            "node {u}: class {c} out of range 0..{}",
                            self.num_classes
                        )));
                    }
                    idx.push(c);
                }
                let logp = tape.log_softmax(logits);
                tape.pick_neg_mean(logp, idx)?
            }
            LabelKind::Multilabel => {
                let mut targets = Vec::with_capacity(nodes.len() * self.num_classes);
                for &u in nodes {
                    let row = labels
                        .binary_vector(u)
                        .ok_or_else(|| Error::validation(format!("node {u} has no label")))?;
                    targets.extend_from_slice(&row);
                }
                tape.bce_with_logits_mean(logits, targets)?
            }
        };
        Ok((loss, logits))
    }
}

/// Edge scorer. Pairs are `(u, v, edge_type)` over rows of the embedding
/// matrix; the type index only matters to DistMult.
#[derive(Debug, Clone)]
pub struct LpHead {
    pub decoder: DecoderKind,
    pub embed_width: usize,
    pub num_edge_types: usize,
    ws: Vec<usize>,
    net: Option<Mlp>,
}

impl LpHead {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        decoder: DecoderKind,
        embed_width: usize,
        num_edge_types: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<LpHead> {
        if embed_width == 0 {
            return Err(Error::validation("lp head needs a positive embedding width"));
        }
        let mut ws = Vec::new();
        let mut net = None;
        match decoder {
            DecoderKind::Dot => {}
            DecoderKind::DistMult => {
                // Bilinear forms start at the identity, so an untrained
                // DistMult scores exactly like Dot.
                let w = embed_width;
                let eye: Vec<f64> =
                    (0..w * w).map(|i| if i % (w + 1) == 0 { 1.0 } else { 0.0 }).collect();
                for t in 0..num_edge_types {
                    ws.push(store.add(format!("{name}.w{t}"), w, w, eye.clone())?);
                }
            }
            DecoderKind::Concat => {
                net = Some(Mlp::init(
                    store,
                    &format!("{name}.net"),
                    &[2 * embed_width, embed_width, 1],
                    activation,
                    rng,
                )?);
            }
        }
        Ok(LpHead { decoder, embed_width, num_edge_types, ws, net })
    }

    /// Raw scores before the sigmoid, shape `|pairs| x 1`.
    pub fn score_logits(
        &self,
        tape: &mut Tape,
        leaves: &[Tid],
        embeddings: Tid,
        pairs: &[(usize, usize, usize)],
    ) -> Result<Tid> {
        if pairs.is_empty() {
            return Err(Error::validation("lp head: empty pair list"));
        }
        if tape.cols(embeddings) != self.embed_width {
            return Err(Error::dim(format!(
                "lp head built for width {}, embeddings have {}",
                self.embed_width,
                tape.cols(embeddings)
            )));
        }
        match self.decoder {
            DecoderKind::Dot => {
                let hu = tape.gather_rows(embeddings, pairs.iter().map(|p| p.0).collect())?;
                let hv = tape.gather_rows(embeddings, pairs.iter().map(|p| p.1).collect())?;
                let prod = tape.mul(hu, hv)?;
                Ok(tape.row_sum(prod))
            }
            DecoderKind::DistMult => {
                if let Some(p) = pairs.iter().find(|p| p.2 >= self.num_edge_types) {
                    return Err(Error::validation(format!(
                        "edge type {} out of range 0..{}",
                        p.2, self.num_edge_types
                    )));
                }
                let m = pairs.len();
                let mut acc = tape.constant(m, 1, vec![0.0; m])?;
                for t in 0..self.num_edge_types {
                    let idx: Vec<usize> =
                        (0..m).filter(|&i| pairs[i].2 == t).collect();
                    if idx.is_empty() {
                        continue;
                    }
                    let us: Vec<usize> = idx.iter().map(|&i| pairs[i].0).collect();
                    let vs: Vec<usize> = idx.iter().map(|&i| pairs[i].1).collect();
                    let hu = tape.gather_rows(embeddings, us)?;
                    let hv = tape.gather_rows(embeddings, vs)?;
                    let hw = tape.matmul(hu, leaves[self.ws[t]])?;
                    let prod = tape.mul(hw, hv)?;
                    let s = tape.row_sum(prod);
                    let scattered = tape.scatter_add_rows(s, idx, m)?;
                    acc = tape.add(acc, scattered)?;
                }
                Ok(acc)
            }
            DecoderKind::Concat => {
                let hu = tape.gather_rows(embeddings, pairs.iter().map(|p| p.0).collect())?;
                let hv = tape.gather_rows(embeddings, pairs.iter().map(|p| p.1).collect())?;
                let x = tape.concat_cols(&[hu, hv])?;
                self.net.as_ref().expect("concat decoder has a net").forward(tape, leaves, x)
            }
        }
    }

    /// Probabilities in (0, 1), shape `|pairs| x 1`.
    pub fn score(
        &self,
        tape: &mut Tape,
        leaves: &[Tid],
        embeddings: Tid,
        pairs: &[(usize, usize, usize)],
    ) -> Result<Tid> {
        let logits = self.score_logits(tape, leaves, embeddings, pairs)?;
        Ok(tape.sigmoid(logits))
    }

    /// Mean BCE with positives labeled 1 and negatives labeled 0.
    pub fn loss(
        &self,
        tape: &mut Tape,
        leaves: &[Tid],
        embeddings: Tid,
        positives: &[(usize, usize, usize)],
        negatives: &[(usize, usize, usize)],
    ) -> Result<Tid> {
        if positives.is_empty() {
            return Err(Error::validation("lp loss: no positive examples"));
        }
        if negatives.is_empty() {
            return Err(Error::validation("lp loss: no negative examples"));
        }
        let mut all = Vec::with_capacity(positives.len() + negatives.len());
        all.extend_from_slice(positives);
        all.extend_from_slice(negatives);
        let logits = self.score_logits(tape, leaves, embeddings, &all)?;
        let mut targets = vec![1.0; positives.len()];
        targets.extend(std::iter::repeat(0.0).take(negatives.len()));
        tape.bce_with_logits_mean(logits, targets)
    }
}
