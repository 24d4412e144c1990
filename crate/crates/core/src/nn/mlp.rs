use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{EdenError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// Stack of affine layers whose parameters live in a [`ParamStore`] under
/// `{prefix}.w{i}` and `{prefix}.b{i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    prefix: String,
    dims: Vec<usize>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`; weights are Glorot-uniform, biases zero.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(EdenError::Dimension(format!("{prefix}: invalid layer sizes {dims:?}")));
        }
        for (i, pair) in dims.windows(2).enumerate() {
            store.glorot(&format!("{prefix}.w{i}"), pair[0], pair[1], rng)?;
            store.zeros(&format!("{prefix}.b{i}"), 1, pair[1])?;
        }
        Ok(Mlp {
            prefix: prefix.to_string(),
            dims: dims.to_vec(),
            hidden,
            output,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.w{layer}", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.b{layer}", self.prefix)
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Sets the last layer's weights and bias to zero, so the output is constant.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        let last = self.num_layers() - 1;
        for name in [self.weight_name(last), self.bias_name(last)] {
            store.get_mut(&name).unwrap().fill(0.0);
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.shape(x).1 != self.in_dim() {
            return Err(EdenError::Dimension(format!(
                "{} expects {} input columns, got {}",
                self.prefix,
                self.in_dim(),
                tape.shape(x).1
            )));
        }
        let mut h = x;
        for layer in 0..self.num_layers() {
            let w = tape.param(store, &self.weight_name(layer))?;
            let b = tape.param(store, &self.bias_name(layer))?;
            let z = tape.matmul(h, w)?;
            let z = tape.add_row(z, b)?;
            let act = if layer + 1 == self.num_layers() { self.output } else { self.hidden };
            h = act.apply(tape, z);
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use ndarray::{array, Array2};

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            &mut stream_rng(0, 0),
            "lin",
            &[3, 3],
            Activation::Relu,
            Activation::Identity,
        )
        .unwrap();
        *store.get_mut("lin.w0").unwrap() = Array2::eye(3);
        let x = array![[1.0, -2.0, 3.5]];
        let mut t = Tape::new();
        let xv = t.input(x.clone());
        let y = mlp.forward(&mut t, &store, xv).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            &mut stream_rng(0, 0),
            "lin",
            &[2, 2],
            Activation::Relu,
            Activation::Identity,
        )
        .unwrap();
        store.get_mut("lin.w0").unwrap().fill(0.0);
        *store.get_mut("lin.b0").unwrap() = array![[0.25, -1.0]];
        let mut t = Tape::new();
        let xv = t.input(array![[5.0, 6.0], [-1.0, 0.0]]);
        let y = mlp.forward(&mut t, &store, xv).unwrap();
        assert_eq!(t.value(y), &array![[0.25, -1.0], [0.25, -1.0]]);
        assert_eq!(mlp.num_params(), store.num_scalars());
    }

    #[test]
    fn rejects_wrong_width() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            &mut stream_rng(0, 0),
            "m",
            &[2, 4, 1],
            Activation::Relu,
            Activation::Identity,
        )
        .unwrap();
        let mut t = Tape::new();
        let xv = t.input(Array2::zeros((1, 3)));
        assert!(matches!(mlp.forward(&mut t, &store, xv), Err(EdenError::Dimension(_))));
    }
}
