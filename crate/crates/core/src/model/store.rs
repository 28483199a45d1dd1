//! Named tensor store and its on-disk container.
//!
//! Layout: a UTF-8 manifest
//!
//! ```text
//! PICO-WEIGHTS 1
//! cfg <key> <value>
//! tensor <name> <f32|u8|i32> <d0>x<d1>x... <offset> <length>
//! end
//! ```
//!
//! followed by the little-endian payloads. Offsets are relative to the first
//! byte after the `end\n` line. Entries are written in sorted order, so equal
//! stores serialise to equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC_LINE: &str = "PICO-WEIGHTS 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    U8,
    I32,
}

impl DType {
    fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::U8 => "u8",
            DType::I32 => "i32",
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_le_bytes(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(bytes.to_vec()),
            DType::I32 => TensorData::I32(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

/// Configuration key-values plus named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    pub config: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, StoredTensor>,
}

fn container(msg: impl Into<String>) -> Error {
    Error::Container(msg.into())
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace())
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<()> {
        let name = name.into();
        if !valid_token(&name) {
            return Err(container(format!("invalid tensor name `{name}`")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(container(format!(
                "tensor {name}: shape {shape:?} does not match {} elements",
                data.len()
            )));
        }
        self.tensors.insert(name, StoredTensor { shape, data });
        Ok(())
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        self.insert(name, shape, TensorData::F32(data))
    }

    pub fn set_config(&mut self, key: impl Into<String>, value: impl Into<String>) -> Result<()> {
        let (key, value) = (key.into(), value.into());
        if !valid_token(&key) || value.contains('\n') {
            return Err(container(format!("invalid config entry `{key}`")));
        }
        self.config.insert(key, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| container(format!("missing tensor `{name}`")))
    }

    pub fn get_f32(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(container(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        match &t.data {
            TensorData::F32(v) => Ok(v),
            other => Err(container(format!("tensor {name} is {}, expected f32", other.dtype().name()))),
        }
    }

    pub fn config_value(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| container(format!("missing config key `{key}`")))
    }

    /// Entries under `prefix`, with the prefix stripped.
    pub fn scoped(&self, prefix: &str) -> WeightStore {
        fn strip<V: Clone>(m: &BTreeMap<String, V>, prefix: &str) -> BTreeMap<String, V> {
            m.iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect()
        }
        WeightStore {
            config: strip(&self.config, prefix),
            tensors: strip(&self.tensors, prefix),
        }
    }

    /// Adds every entry of `other` under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: WeightStore) {
        for (k, v) in other.config {
            self.config.insert(format!("{prefix}{k}"), v);
        }
        for (k, v) in other.tensors {
            self.tensors.insert(format!("{prefix}{k}"), v);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        manifest.push_str(MAGIC_LINE);
        manifest.push('\n');
        for (k, v) in &self.config {
            manifest.push_str(&format!("cfg {k} {v}\n"));
        }
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            let offset = payload.len();
            t.data.to_le_bytes(&mut payload);
            let dims = if t.shape.is_empty() {
                "scalar".to_string()
            } else {
                t.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
            };
            manifest.push_str(&format!(
                "tensor {name} {} {dims} {offset} {}\n",
                t.data.dtype().name(),
                payload.len() - offset
            ));
        }
        manifest.push_str("end\n");
        let mut out = manifest.into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut store = WeightStore::new();
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<&str> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| container("manifest is not terminated"))?;
            *pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| container("manifest is not UTF-8"))
        };
        if next_line(&mut pos)? != MAGIC_LINE {
            return Err(container("bad magic line"));
        }
        let mut entries = Vec::new();
        loop {
            let line = next_line(&mut pos)?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("cfg ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                store.config.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 5 {
                    return Err(container(format!("bad tensor line `{line}`")));
                }
                let dtype = match f[1] {
                    "f32" => DType::F32,
                    "u8" => DType::U8,
                    "i32" => DType::I32,
                    d => return Err(container(format!("unknown dtype `{d}`"))),
                };
                let shape: Vec<usize> = if f[2] == "scalar" {
                    Vec::new()
                } else {
                    f[2].split('x')
                        .map(|d| d.parse().map_err(|_| container(format!("bad shape `{}`", f[2]))))
                        .collect::<Result<_>>()?
                };
                let num = |s: &str| s.parse::<usize>().map_err(|_| container(format!("bad number `{s}`")));
                entries.push((f[0].to_string(), dtype, shape, num(f[3])?, num(f[4])?));
            } else {
                return Err(container(format!("unrecognised manifest line `{line}`")));
            }
        }
        let payload = &bytes[pos..];
        for (name, dtype, shape, offset, len) in entries {
            let end = offset
                .checked_add(len)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| container(format!("tensor {name} runs past the payload")))?;
            let n: usize = shape.iter().product();
            if n * dtype.width() != len {
                return Err(container(format!("tensor {name}: length {len} does not match shape")));
            }
            let data = TensorData::from_le_bytes(dtype, &payload[offset..end]);
            store.tensors.insert(name, StoredTensor { shape, data });
        }
        Ok(store)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialised container, hex encoded.
    pub fn content_hash(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightStore {
        let mut s = WeightStore::new();
        s.set_config("dec.role", "outer_decoder").unwrap();
        s.set_config("note", "two words").unwrap();
        s.insert_f32("a.weight", vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-8, f32::MAX]).unwrap();
        s.insert("q.data", vec![4], TensorData::U8(vec![0, 1, 254, 255])).unwrap();
        s.insert("q.bias", vec![2], TensorData::I32(vec![i32::MIN, 7])).unwrap();
        s.insert("empty", vec![0], TensorData::F32(vec![])).unwrap();
        s
    }

    #[test]
    fn container_roundtrip() {
        let s = sample();
        let bytes = s.to_bytes();
        assert_eq!(WeightStore::from_bytes(&bytes).unwrap(), s);
        assert_eq!(WeightStore::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        assert_eq!(s.content_hash().len(), 64);
    }

    #[test]
    fn manifest_is_text() {
        let bytes = sample().to_bytes();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("PICO-WEIGHTS 1\ncfg dec.role outer_decoder\n"));
        assert!(text.contains("tensor a.weight f32 2x3 0 24\n"));
    }

    #[test]
    fn malformed_containers_rejected() {
        let bytes = sample().to_bytes();
        assert!(WeightStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(WeightStore::from_bytes(b"PICO-WEIGHTS 2\nend\n").is_err());
        assert!(WeightStore::from_bytes(b"PICO-WEIGHTS 1\ntensor x f64 1 0 8\nend\n").is_err());
        let mut s = WeightStore::new();
        assert!(s.insert_f32("bad name", vec![1], vec![0.0]).is_err());
        assert!(s.insert_f32("x", vec![2], vec![0.0]).is_err());
    }

    #[test]
    fn typed_access_checks_shape_and_dtype() {
        let s = sample();
        assert!(s.get_f32("a.weight", &[2, 3]).is_ok());
        assert!(s.get_f32("a.weight", &[3, 2]).is_err());
        assert!(s.get_f32("q.data", &[4]).is_err());
        assert!(s.get_f32("missing", &[1]).is_err());
    }

    #[test]
    fn scoping() {
        let s = sample();
        let q = s.scoped("q.");
        assert_eq!(q.tensors.len(), 2);
        let mut t = WeightStore::new();
        t.absorb("q.", q);
        assert_eq!(t.tensors.keys().collect::<Vec<_>>(), vec!["q.bias", "q.data"]);
    }
}
