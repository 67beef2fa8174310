//! Named parameter arrays with co-located gradients, plus the `BWLK` binary
//! container used for checkpoints.
//!
//! Container layout (all integers unsigned 32-bit little-endian):
//!
//! ```text
//! "BWLK" | version | entry count | { name len | name (UTF-8) | rank | dims.. | values (f32 LE).. }*
//! ```
//!
//! Values are stored as IEEE-754 single precision. A set whose values are all
//! representable in `f32` (see [`ParamSet::quantize_f32`]) round-trips bit-exactly.

use std::io::{Read, Write};

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BWLK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows/cols when viewed as a matrix. Vectors are a single row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            dims => (dims[0], dims[1..].iter().product()),
        }
    }

    pub fn as_matrix(&self) -> ArrayView2<'_, f64> {
        let (r, c) = self.matrix_dims();
        ArrayView2::from_shape((r, c), &self.values).expect("entry shape is consistent")
    }

    pub fn as_vector(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[..])
    }
}

/// Ordered, uniquely named collection of parameter arrays.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a new entry and returns its index.
    pub fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<usize> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::dim(format!("parameter {name}"), n, values.len()));
        }
        if self.index_of(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            values,
        });
        Ok(self.entries.len() - 1)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<usize> {
        let n = shape.iter().product();
        self.insert(name, shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(ParamEntry::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut ParamEntry {
        &mut self.entries[idx]
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index_of(name).map(|i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.index_of(name).map(move |i| &mut self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// A set with the same names and shapes, all values zero.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    values: vec![0.0; e.len()],
                    grad: vec![0.0; e.len()],
                })
                .collect(),
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn grads_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.grad.iter().all(|g| g.is_finite()))
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Rounds every value to the nearest `f32`, making the set exactly
    /// representable in the on-disk container.
    pub fn quantize_f32(&mut self) {
        for e in &mut self.entries {
            e.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Same names, same shapes, same order.
    pub fn same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Checkpoint(format!(
                "entry count {} != {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Checkpoint(format!(
                    "first mismatched entry: {:?} {:?} vs {:?} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    /// Copies values from `other` where names match; errors naming the first
    /// entry that is missing or differs in shape.
    pub fn load_values_from(&mut self, other: &ParamSet) -> Result<()> {
        for e in &mut self.entries {
            let src = other.get(&e.name).ok_or_else(|| {
                Error::Checkpoint(format!("first mismatched entry: {:?} missing", e.name))
            })?;
            if src.shape != e.shape {
                return Err(Error::Checkpoint(format!(
                    "first mismatched entry: {:?} has shape {:?}, expected {:?}",
                    e.name, src.shape, e.shape
                )));
            }
            e.values.copy_from_slice(&src.values);
        }
        Ok(())
    }

    /// All entries of `other` appended with `prefix` prepended to their names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) -> Result<()> {
        for e in &other.entries {
            self.insert(&format!("{prefix}{}", e.name), &e.shape, e.values.clone())?;
        }
        Ok(())
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn extract_prefixed(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        for e in &self.entries {
            if let Some(rest) = e.name.strip_prefix(prefix) {
                out.entries.push(ParamEntry {
                    name: rest.to_string(),
                    shape: e.shape.clone(),
                    values: e.values.clone(),
                    grad: vec![0.0; e.len()],
                });
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&u32_len(self.entries.len())?.to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&u32_len(name.len())?.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&u32_len(e.shape.len())?.to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&u32_len(d)?.to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(e.len() * 4);
            for &v in &e.values {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<ParamSet> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let count = read_u32(r)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| Error::Format(format!("entry name is not UTF-8: {e}")))?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            set.insert(&name, &shape, values)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(set)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        let mut cursor = bytes;
        ParamSet::read_from(&mut cursor)
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} does not fit in u32")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert_zeros("w", &[2, 2]).unwrap();
        assert!(p.insert_zeros("w", &[3]).is_err());
    }

    #[test]
    fn shape_must_match_values() {
        let mut p = ParamSet::new();
        assert!(matches!(
            p.insert("w", &[2, 3], vec![0.0; 5]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn header_layout() {
        let mut p = ParamSet::new();
        p.insert("ab", &[2], vec![1.0, -2.0]).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[0..4], b"BWLK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(&bytes[16..18], b"ab");
        assert_eq!(u32::from_le_bytes(bytes[18..22].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[22..26].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[26..30].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(bytes[30..34].try_into().unwrap()), -2.0);
        assert_eq!(bytes.len(), 34);
    }

    #[test]
    fn bad_magic_is_format_error() {
        assert!(matches!(
            ParamSet::from_bytes(b"XXXX\x01\0\0\0\0\0\0\0"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn load_values_names_first_mismatch() {
        let mut a = ParamSet::new();
        a.insert_zeros("x", &[2]).unwrap();
        a.insert_zeros("y", &[3]).unwrap();
        let mut b = ParamSet::new();
        b.insert_zeros("x", &[2]).unwrap();
        b.insert_zeros("y", &[4]).unwrap();
        let err = a.load_values_from(&b).unwrap_err().to_string();
        assert!(err.contains("\"y\""), "{err}");
    }

    proptest! {
        #[test]
        fn container_round_trip_is_bit_exact(
            vals in proptest::collection::vec(
                proptest::num::f32::NORMAL | proptest::num::f32::SUBNORMAL | proptest::num::f32::ZERO
                    | proptest::num::f32::INFINITE | proptest::num::f32::POSITIVE | proptest::num::f32::NEGATIVE,
                1..40,
            ),
            rows in 1usize..5,
        ) {
            let mut p = ParamSet::new();
            let n = vals.len();
            p.insert("v", &[n], vals.iter().map(|&v| v as f64).collect()).unwrap();
            p.insert_zeros("m", &[rows, 3]).unwrap();
            let q = ParamSet::from_bytes(&p.to_bytes()).unwrap();
            prop_assert_eq!(q.len(), 2);
            for (a, b) in p.iter().zip(q.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
