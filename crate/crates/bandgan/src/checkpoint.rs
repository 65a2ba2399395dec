//! Binary checkpoint container: named little-endian f32 arrays.
//!
//! Layout: magic "BGCK", version u32, array count u32, then per array
//! name length u16 + UTF-8 name, rank u8, one u32 per dim, f32 payload.
//! Strings and counters needed by higher layers (architecture descriptor,
//! epoch, config hash) are encoded as small arrays so the container stays
//! a plain bag of named tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BGCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct NamedArrays {
    pub entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl NamedArrays {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) {
        let name = name.into();
        debug_assert_eq!(shape.iter().product::<usize>(), values.len(), "{name}");
        self.entries.push((name, shape, values));
    }

    /// Scalar stored as a rank-1 array of one element.
    pub fn push_scalar(&mut self, name: impl Into<String>, v: f32) {
        self.push(name, vec![1], vec![v]);
    }

    /// u64 stored as two raw u32 bit patterns; bit-exact round trip.
    pub fn push_u64(&mut self, name: impl Into<String>, v: u64) {
        self.push(
            name,
            vec![2],
            vec![f32::from_bits(v as u32), f32::from_bits((v >> 32) as u32)],
        );
    }

    /// ASCII string stored one code point per element.
    pub fn push_string(&mut self, name: impl Into<String>, s: &str) {
        self.push(
            name,
            vec![s.len()],
            s.chars().map(|c| c as u32 as f32).collect(),
        );
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, v)| (s.as_slice(), v.as_slice()))
    }

    pub fn require(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.get(name)
            .ok_or_else(|| Error::Input(format!("checkpoint is missing array '{name}'")))
    }

    pub fn get_scalar(&self, name: &str) -> Result<f32> {
        let (_, v) = self.require(name)?;
        if v.len() != 1 {
            return Err(Error::Input(format!("'{name}' is not a scalar")));
        }
        Ok(v[0])
    }

    pub fn get_u64(&self, name: &str) -> Result<u64> {
        let (_, v) = self.require(name)?;
        if v.len() != 2 {
            return Err(Error::Input(format!("'{name}' is not a stored u64")));
        }
        Ok(v[0].to_bits() as u64 | ((v[1].to_bits() as u64) << 32))
    }

    pub fn get_string(&self, name: &str) -> Result<String> {
        let (_, v) = self.require(name)?;
        v.iter()
            .map(|&f| char::from_u32(f as u32).ok_or_else(|| {
                Error::Input(format!("'{name}' holds a non-character code"))
            }))
            .collect()
    }
}

pub fn write_bgck(path: &Path, arrays: &NamedArrays) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(arrays.entries.len() as u32).to_le_bytes())?;
    for (name, shape, values) in &arrays.entries {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Usage(format!("array name too long: {name}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_bgck(path: &Path) -> Result<NamedArrays> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |msg: String| Error::Input(format!("{}: {msg}", path.display()));

    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| bad("truncated checkpoint header".into()))?;
    if &head[0..4] != MAGIC {
        return Err(bad("bad magic, not a BGCK checkpoint".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(head[8..12].try_into().unwrap());

    let mut arrays = NamedArrays::default();
    for _ in 0..count {
        let mut len2 = [0u8; 2];
        r.read_exact(&mut len2).map_err(|_| bad("truncated array name".into()))?;
        let name_len = u16::from_le_bytes(len2) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(|_| bad("truncated array name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| bad("array name is not UTF-8".into()))?;

        let mut rank = [0u8; 1];
        r.read_exact(&mut rank).map_err(|_| bad("truncated rank".into()))?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 4];
            r.read_exact(&mut d).map_err(|_| bad("truncated dims".into()))?;
            shape.push(u32::from_le_bytes(d) as usize);
        }
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload)
            .map_err(|_| bad(format!("truncated payload for '{name}'")))?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.entries.push((name, shape, values));
    }
    Ok(arrays)
}
