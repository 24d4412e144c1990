use rand::seq::index::sample;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::rng::salted_rng;

/// Outcome of comparing backprop gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Checks the gradient of the scalar built by `f` with respect to every
/// parameter in `store`. At most `max_coords` coordinates are probed, picked
/// with `seed`; the relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(store: &mut ParamStore, f: F, eps: f64, max_coords: usize, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss, store)?;
    let coords: Vec<(usize, usize)> = (0..store.len())
        .flat_map(|p| (0..store.value_at(p).len()).map(move |k| (p, k)))
        .collect();
    let chosen: Vec<usize> = if coords.len() <= max_coords {
        (0..coords.len()).collect()
    } else {
        sample(&mut salted_rng(seed, &[0x6c]), coords.len(), max_coords).into_vec()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = f(&mut t, store)?;
        Ok(t.scalar(v))
    };
    let mut worst = 0.0f64;
    for &c in &chosen {
        let (p, k) = coords[c];
        let original = store.value_at(p).as_slice_memory_order().unwrap()[k];
        let set = |store: &mut ParamStore, x: f64| store.value_at_mut(p).as_slice_memory_order_mut().unwrap()[k] = x;
        set(store, original + eps);
        let plus = eval(store)?;
        set(store, original - eps);
        let minus = eval(store)?;
        set(store, original);
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.at(p).as_slice_memory_order().unwrap()[k];
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(GradCheck {
        max_rel_error: worst,
        coords_checked: chosen.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use crate::rng::stream_rng;
    use ndarray::Array2;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream_rng(seed, 0);
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn half_squared_norm_gradient_is_outer_product() {
        let mut store = ParamStore::new();
        store.insert("w", random(3, 3, 1)).unwrap();
        let x = random(3, 1, 2);
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let xv = tape.input(x.clone());
        let wx = tape.matmul(w, xv).unwrap();
        let sq = tape.mul(wx, wx).unwrap();
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        let grads = tape.backward(loss, &store).unwrap();
        let wxv = store.get("w").unwrap().dot(&x);
        let expected = wxv.dot(&x.t());
        let diff = (grads.get(&store, "w").unwrap() - &expected).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn linear_regression_loss() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            &mut stream_rng(3, 0),
            "lr",
            &[4, 1],
            Activation::Relu,
            Activation::Identity,
        )
        .unwrap();
        let x = random(10, 4, 4);
        let y = random(10, 1, 5);
        let r = grad_check(
            &mut store,
            |t, s| {
                let xv = t.input(x.clone());
                let yv = t.input(y.clone());
                let pred = mlp.forward(t, s, xv)?;
                let d = t.sub(pred, yv)?;
                let sq = t.mul(d, d)?;
                Ok(t.mean(sq))
            },
            1e-5,
            1000,
            0,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn sigmoid_mlp_cross_entropy() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            &mut stream_rng(6, 0),
            "c",
            &[5, 7, 3],
            Activation::Sigmoid,
            Activation::Identity,
        )
        .unwrap();
        let x = random(8, 5, 7);
        let labels = [0, 1, 2, 1, 0, 2, 2, 1];
        let r = grad_check(
            &mut store,
            |t, s| {
                let xv = t.input(x.clone());
                let logits = mlp.forward(t, s, xv)?;
                t.cross_entropy(logits, &labels)
            },
            1e-5,
            1000,
            0,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        store.insert("w", random(2, 2, 8)).unwrap();
        let r = grad_check(&mut store, |t, _| Ok(t.input(Array2::from_elem((1, 1), 3.0))), 1e-5, 10, 0).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn every_operator_differentiates() {
        let mut store = ParamStore::new();
        store.insert("a", random(3, 4, 10).mapv(|x| x + 1.5)).unwrap();
        store.insert("b", random(2, 4, 11)).unwrap();
        store.insert("c", random(3, 1, 12).mapv(|x| x.abs() + 0.5)).unwrap();
        let r = grad_check(
            &mut store,
            |t, s| {
                let a = t.param(s, "a")?;
                let b = t.param(s, "b")?;
                let c = t.param(s, "c")?;
                let pairs = t.pair_sum(a, b)?;
                let th = t.tanh(pairs);
                let sp = t.softplus(th);
                let sm = t.softmax_rows(sp);
                let ent = t.row_entropy(sm);
                let norms = t.row_l2_norm(a);
                let lg = t.ln(norms);
                let div = t.div_col(a, c)?;
                let mc = t.mul_col(div, c)?;
                let g = t.gather_rows(mc, &[2, 0, 2])?;
                let bt = t.transpose(b);
                let prod = t.matmul(g, bt)?;
                let cat = t.concat_cols(&[prod, lg])?;
                let sig = t.sigmoid(cat);
                let stack = t.vstack(&[lg, ent])?;
                let cl = t.clamp_min(stack, -10.0);
                let ls = t.log_sigmoid(cl);
                let ce = t.cross_entropy(prod, &[0, 1, 1])?;
                let m = t.mean(ls);
                let ms = t.mean(sig);
                let out = t.add(m, ce)?;
                let out = t.add(out, ms)?;
                Ok(t.add_scalar(out, 1.0))
            },
            1e-6,
            1000,
            0,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
