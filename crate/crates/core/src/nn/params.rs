//! Named parameter storage shared across tapes, plus the binary weight
//! checkpoint format.

use super::{NnError, Tensor};
use rand::Rng;
use std::collections::HashMap;
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of named tensors. Iteration and checkpoint order is
/// insertion order, so a model built the same way always serializes
/// identically.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::InvalidArgument(format!("duplicate parameter {name:?}")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.to_string(), id.0);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(id)
    }

    /// New parameter initialized uniformly in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId, NnError> {
        if fan_in == 0 {
            return Err(NnError::InvalidArgument("fan_in must be positive".into()));
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    /// New parameter of zeros (biases).
    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId, NnError> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }
}

/// Per-parameter gradient accumulator, index-parallel to a store.
#[derive(Debug, Clone)]
pub struct Gradients {
    data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(store: &ParamStore) -> Self {
        Gradients { data: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn clear(&mut self) {
        for g in &mut self.data {
            g.fill(0.0);
        }
    }

    pub fn add(&mut self, id: ParamId, grad: &[f64]) {
        let buf = &mut self.data[id.0];
        assert_eq!(buf.len(), grad.len(), "gradient size mismatch");
        for (b, &g) in buf.iter_mut().zip(grad) {
            *b += g;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.data {
            for v in g.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    /// Euclidean norm over all entries; useful as a training diagnostic.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

// --- checkpoint format ---------------------------------------------------
//
// Little-endian binary:
//   magic  b"FAWT"
//   u32    version (1)
//   u32    tensor count
// then per tensor, in store order:
//   u32    name length, name bytes (utf-8)
//   u32    rank, u32 x rank dims
//   f64 x prod(dims) values

const MAGIC: &[u8; 4] = b"FAWT";
const VERSION: u32 = 1;

pub fn write_weights<W: Write>(store: &ParamStore, mut w: W) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.tensor(id);
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<ParamStore, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(NnError::Format("unreasonable name length".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| NnError::Format("non-utf8 name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(NnError::Format("unreasonable rank".into()));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        store.add(&name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
