use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;

use crate::error::{EdenError, Result};

const MAGIC: &[u8; 4] = b"EDNW";

/// Named trainable matrices, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> Result<usize> {
        if self.params.contains_key(name) {
            return Err(EdenError::Parameter(format!("parameter {name} already exists")));
        }
        Ok(self.params.insert_full(name.to_string(), value).0)
    }

    /// Glorot-uniform initialisation.
    pub fn glorot<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> Result<usize> {
        let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound));
        self.insert(name, value)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<usize> {
        self.insert(name, Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Array2::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.params.get_mut(name)
    }

    pub fn value_at(&self, idx: usize) -> &Array2<f64> {
        &self.params[idx]
    }

    pub fn value_at_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_scalars() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, value) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
            for x in value.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| EdenError::Value(format!("malformed checkpoint: {msg}"));
        let mut magic = [0u8; 4];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("wrong magic"));
        }
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            bytes.read_exact(&mut buf).map_err(|_| bad("truncated body"))?;
            Ok(buf)
        };
        let u64_of = |b: Vec<u8>| u64::from_le_bytes(b.try_into().unwrap());
        let count = u64_of(take(8)?);
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(len)?).map_err(|_| bad("non-UTF-8 name"))?;
            let rows = u64_of(take(8)?) as usize;
            let cols = u64_of(take(8)?) as usize;
            let size = rows.checked_mul(cols).ok_or_else(|| bad("huge shape"))?;
            let raw = take(size.checked_mul(8).ok_or_else(|| bad("huge shape"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            store.insert(&name, Array2::from_shape_vec((rows, cols), data).unwrap())?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| EdenError::file(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| EdenError::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| EdenError::file(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Overwrites values of parameters present in both stores; shapes must agree.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, value) in &other.params {
            let slot = self
                .params
                .get_mut(name)
                .ok_or_else(|| EdenError::Parameter(format!("unknown parameter {name}")))?;
            if slot.dim() != value.dim() {
                return Err(EdenError::Dimension(format!("parameter {name} changed shape")));
            }
            slot.assign(value);
        }
        Ok(())
    }
}

/// Gradients aligned with a [`ParamStore`] by index.
#[derive(Debug, Clone)]
pub struct Grads {
    values: Vec<Array2<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            values: store.params.values().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    pub(crate) fn accumulate(&mut self, idx: usize, g: &Array2<f64>) {
        self.values[idx] += g;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, idx: usize) -> &Array2<f64> {
        &self.values[idx]
    }

    pub fn get(&self, store: &ParamStore, name: &str) -> Option<&Array2<f64>> {
        store.index_of(name).map(|i| &self.values[i])
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flat_map(|v| v.iter()).fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(4, 0);
        store.glorot("a.w0", 3, 2, &mut rng).unwrap();
        store.zeros("a.b0", 1, 2).unwrap();
        let bytes = store.to_bytes();
        assert_eq!(&bytes[..4], b"EDNW");
        assert_eq!(ParamStore::from_bytes(&bytes).unwrap(), store);
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ParamStore::from_bytes(b"NOPE").is_err());
    }

    #[test]
    fn glorot_bounds() {
        let mut store = ParamStore::new();
        store.glorot("w", 10, 20, &mut stream_rng(1, 0)).unwrap();
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(store.get("w").unwrap().iter().all(|x| x.abs() <= bound));
        assert!(store.zeros("w", 1, 1).is_err());
    }
}
