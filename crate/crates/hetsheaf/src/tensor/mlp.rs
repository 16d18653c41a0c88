//! Affine layers and small MLPs on top of the tape.

use crate::error::Result;
use crate::tensor::params::ParamStore;
use crate::tensor::tape::{Tape, Tid};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Tid) -> Tid {
        match self {
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh_op(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

/// y = x W + b with W stored (in x out) and b as a broadcast row.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Linear> {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w_data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| {
                let u: f64 = rng.gen();
                a * (2.0 * u - 1.0)
            })
            .collect();
        let w = store.add(format!("{name}.w"), in_dim, out_dim, w_data)?;
        let b = store.add(format!("{name}.b"), 1, out_dim, vec![0.0; out_dim])?;
        Ok(Linear { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, leaves: &[Tid], x: Tid) -> Result<Tid> {
        let wx = tape.matmul(x, leaves[self.w])?;
        tape.add(wx, leaves[self.b])
    }
}

/// Fully connected stack: hidden layers get the chosen activation, the last
/// layer stays linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims` chains input through hidden widths to the output width, e.g.
    /// `[in, hidden, out]` for one hidden layer.
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Mlp> {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            layers.push(Linear::init(
                store,
                &format!("{name}.l{i}"),
                dims[i],
                dims[i + 1],
                rng,
            )?);
        }
        Ok(Mlp { layers, activation })
    }

    pub fn forward(&self, tape: &mut Tape, leaves: &[Tid], x: Tid) -> Result<Tid> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, leaves, h)?;
            if i < last {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }

    /// Trainable scalar count (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.in_dim * l.out_dim + l.out_dim).sum()
    }
}
