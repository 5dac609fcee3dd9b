use std::collections::HashMap;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use super::plan::{Init, ParamSpec};
use super::LivError;
use crate::grad::Tensor;
use crate::rng::{derive_seed, GenomeRng};
use crate::Scalar;

/// Leading bytes of a serialized parameter store.
pub const BLOB_MAGIC: &[u8; 8] = b"LIVPRM01";

/// Named parameter tensors in plan order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    keys: Vec<String>,
    index: HashMap<String, usize>,
    tensors: Vec<Tensor<T>>,
    decay: Vec<bool>,
}

fn init_tensor<T: Scalar>(spec: &ParamSpec, rng: &mut GenomeRng) -> Tensor<T> {
    let noise = |std: f64, rng: &mut GenomeRng| Normal::new(0.0, std).expect("finite std").sample(rng);
    match spec.init {
        Init::Normal(std) => Tensor::randn(&spec.shape, std, rng),
        Init::Const(c) => Tensor::full(&spec.shape, T::of(c)),
        Init::PassThroughTaps(std) => {
            let mut t = Tensor::randn(&spec.shape, std, rng);
            for c in 0..t.cols() {
                let v = t.at(0, c) + T::one();
                t.set(0, c, v);
            }
            t
        }
        Init::ImplicitKernel(std) => {
            let (rows, cols) = (spec.shape[0], spec.shape[1]);
            let cosines = rows.div_ceil(2) as f64;
            let mut t = Tensor::zeros(&spec.shape);
            for r in 0..rows {
                for c in 0..cols {
                    let base = if r % 2 == 0 { 1.0 / cosines } else { 0.0 };
                    t.set(r, c, T::of(base + noise(std, rng)));
                }
            }
            t
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Initializes every tensor from its own stream of `seed`.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let tensors = specs
            .iter()
            .enumerate()
            .map(|(i, s)| init_tensor(s, &mut GenomeRng::new(derive_seed(seed, 0x9a7a), i as u64)))
            .collect();
        Self::assemble(specs.iter().map(|s| s.key.clone()).collect(), tensors, specs.iter().map(|s| s.decay).collect())
    }

    fn assemble(keys: Vec<String>, tensors: Vec<Tensor<T>>, decay: Vec<bool>) -> Self {
        let index = keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        Self { keys, index, tensors, decay }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn get(&self, key: &str) -> Option<&Tensor<T>> {
        self.index.get(key).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor<T>> {
        self.index.get(key).map(|&i| &mut self.tensors[i])
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn decay_mask(&self) -> &[bool] {
        &self.decay
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore::assemble(self.keys.clone(), self.tensors.iter().map(Tensor::cast).collect(), self.decay.clone())
    }

    /// Flat keyed binary form: magic, count, then per tensor the key, the
    /// weight-decay flag, the shape and the values as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for ((key, t), decay) in self.keys.iter().zip(&self.tensors).zip(&self.decay) {
            out.extend_from_slice(&(key.len() as u64).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.push(u8::from(*decay));
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for &s in t.shape() {
                out.extend_from_slice(&(s as u64).to_le_bytes());
            }
            for x in t.data() {
                out.extend_from_slice(&x.wide().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LivError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(BLOB_MAGIC.len())? != BLOB_MAGIC {
            return Err(LivError::Blob("bad magic".into()));
        }
        let count = r.u64()? as usize;
        let (mut keys, mut tensors, mut decay) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..count {
            let len = r.u64()? as usize;
            let key = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| LivError::Blob(e.to_string()))?;
            decay.push(r.take(1)?[0] != 0);
            let rank = r.u64()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|s| s as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| r.take(8).map(|b| T::of(f64::from_le_bytes(b.try_into().expect("8 bytes")))))
                .collect::<Result<Vec<_>, _>>()?;
            tensors.push(Tensor::from_vec(&shape, data)?);
            keys.push(key);
        }
        if r.pos != bytes.len() {
            return Err(LivError::Blob("trailing bytes".into()));
        }
        Ok(Self::assemble(keys, tensors, decay))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, LivError> {
        let bytes = std::fs::read(path).map_err(|e| LivError::Blob(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LivError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| LivError::Blob("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, LivError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
