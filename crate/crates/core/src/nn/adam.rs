use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::error::{EdenError, Result};

/// Adam with the usual bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    #[serde(skip)]
    first: Vec<Array2<f64>>,
    #[serde(skip)]
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Moves every parameter one step against its gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        if grads.len() != store.len() {
            return Err(EdenError::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        if self.first.len() != store.len() {
            self.first = (0..store.len()).map(|i| Array2::zeros(store.value_at(i).dim())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..store.len() {
            let g = grads.at(i);
            if g.dim() != store.value_at(i).dim() {
                return Err(EdenError::Dimension(format!("gradient {i} has the wrong shape")));
            }
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let p = store.value_at_mut(i);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut store = ParamStore::new();
        store.glorot("w", 4, 3, &mut stream_rng(9, 0)).unwrap();
        let before = store.clone();
        let mut grads = Grads::zeros_like(&store);
        grads.accumulate(0, &Array2::from_elem((4, 3), 0.7));
        let mut adam = Adam::new(0.0);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.zeros("w", 1, 2).unwrap();
        let mut grads = Grads::zeros_like(&store);
        grads.accumulate(0, &ndarray::array![[2.0, -3.0]]);
        Adam::new(0.1).step(&mut store, &grads).unwrap();
        let w = store.get("w").unwrap();
        assert!((w[[0, 0]] + 0.1).abs() < 1e-8 && (w[[0, 1]] - 0.1).abs() < 1e-8);
    }
}
