//! Named parameter sets, gradient maps, and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "ARSGCKPT" | version: u32
//! repeated until EOF:
//!   name_len: u32 | name: UTF-8 | rank: u32 | extents: u32 × rank | values: f64 × Π extents
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ARSGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// An ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: IndexMap<String, Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name.clone(), Parameter::new(name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    /// Replaces a value, keeping the shape contract.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.value_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                shapes: vec![slot.shape().to_vec(), value.shape().to_vec()],
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.values_mut()
    }

    /// Total number of scalar entries.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Adds a gradient map into the per-parameter accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::contract(format!("gradient for unknown parameter {name}")))?;
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Returns a copy restricted to entries whose name satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> ParamSet {
        ParamSet {
            params: self
                .params
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for p in self.params.values() {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
            for &e in p.value.shape() {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<ParamSet> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor::new(&bytes);
        let magic = cur.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(cur.error(0, "bad checkpoint magic"));
        }
        let version = cur.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(cur.error(8, &format!("unsupported checkpoint version {version}")));
        }
        let mut set = ParamSet::new();
        while !cur.at_end() {
            let start = cur.pos;
            let len = cur.u32("name length")? as usize;
            let name = std::str::from_utf8(cur.take(len, "name")?)
                .map_err(|_| cur.error(start + 4, "parameter name is not UTF-8"))?
                .to_string();
            let rank = cur.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u32("extent")? as usize);
            }
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(cur.f64("value")?);
            }
            let t = Tensor::new(shape, values).map_err(|_| cur.error(start, "invalid extents"))?;
            set.insert(name, t)
                .map_err(|_| cur.error(start, "duplicate parameter name"))?;
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::file(path, e))?;
        ParamSet::read_checkpoint(std::io::BufReader::new(f))
    }
}

/// Little-endian reader that reports byte offsets on failure.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteCursor { bytes, pos: 0 }
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn error(&self, offset: usize, message: &str) -> Error {
        Error::Parse {
            offset: offset as u64,
            message: message.to_string(),
        }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(self.pos, &format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Gradient of a scalar loss with respect to every parameter of a set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(IndexMap<String, Tensor>);

impl Gradients {
    pub fn zeros_like(set: &ParamSet) -> Self {
        Gradients(
            set.iter()
                .map(|p| (p.name.clone(), Tensor::zeros(p.value.shape())))
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.0.values_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }

    /// Entrywise sum of two maps over the same parameter names.
    pub fn added(&self, other: &Gradients) -> Result<Gradients> {
        let mut out = self.clone();
        for (name, g) in other.iter() {
            let slot = out
                .0
                .get_mut(name)
                .ok_or_else(|| Error::contract(format!("gradient maps differ at {name}")))?;
            for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        Ok(out)
    }
}
