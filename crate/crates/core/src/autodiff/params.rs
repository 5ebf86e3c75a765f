//! Named parameter collections and their binary checkpoint format.
//!
//! Checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! magic   8 bytes  "SUENTSR1"
//! count   u32
//! repeated `count` times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim     u32, dims (u64 × ndim)
//!   values   f64 × product(dims), row-major
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SUENTSR1";

/// Ordered collection of named 2-D parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    lookup: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    /// Glorot-uniform weight of shape `fan_in × fan_out`.
    pub fn insert_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..bound));
        self.insert(name, w)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.insert(name, Array2::zeros((rows, cols)))
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index(name).map(move |i| &mut self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn map_values(&mut self, f: impl Fn(&str, &mut Array2<f64>)) {
        for (n, v) in self.names.iter().zip(self.values.iter_mut()) {
            f(n, v);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_scalars() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, value) in self.names.iter().zip(&self.values) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
            for x in value.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &Path) -> Result<Self> {
        let err = |message: String| Error::Format {
            path: source.to_path_buf(),
            message,
        };
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| err("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(err("bad magic".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        let mut read_u32 = |r: &mut &[u8]| -> Result<u32> {
            r.read_exact(&mut u32buf).map_err(|_| err("truncated".into()))?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let count = read_u32(&mut r)?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            if r.len() < len {
                return Err(err("truncated name".into()));
            }
            let (name, rest) = r.split_at(len);
            let name = std::str::from_utf8(name)
                .map_err(|_| err("name is not UTF-8".into()))?
                .to_string();
            r = rest;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                r.read_exact(&mut u64buf).map_err(|_| err("truncated shape".into()))?;
                shape.push(u64::from_le_bytes(u64buf) as usize);
            }
            let (rows, cols) = match shape.as_slice() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => return Err(err(format!("tensor {name} has unsupported rank {ndim}"))),
            };
            let n = rows * cols;
            if r.len() < n * 8 {
                return Err(err(format!("truncated values for {name}")));
            }
            let values: Vec<f64> = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            r = &r[n * 8..];
            if set.index(&name).is_some() {
                return Err(err(format!("duplicate tensor {name}")));
            }
            set.insert(
                name,
                Array2::from_shape_vec((rows, cols), values).expect("length checked"),
            );
        }
        if !r.is_empty() {
            return Err(err(format!("{} trailing bytes", r.len())));
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}
