//! Directory of raw little-endian arrays described by a JSON manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F64,
    F32,
    U8,
    U32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 | DType::U32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F64(_) => DType::F64,
            ArrayData::F32(_) => DType::F32,
            ArrayData::U8(_) => DType::U8,
            ArrayData::U32(_) => DType::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            ArrayData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::U8(v) => v.clone(),
            ArrayData::U32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_bytes(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F64 => ArrayData::F64(
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
            ),
            DType::F32 => ArrayData::F32(
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
            ),
            DType::U8 => ArrayData::U8(bytes.to_vec()),
            DType::U32 => ArrayData::U32(
                bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
            ),
        }
    }
}

/// Row-major array with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Schema(format!(
                "shape {shape:?} holds {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(NamedArray { shape, data })
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        NamedArray::new(shape, ArrayData::F64(data))
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        NamedArray::new(shape, ArrayData::U8(data))
    }

    pub fn u32(shape: Vec<usize>, data: Vec<u32>) -> Result<Self> {
        NamedArray::new(shape, ArrayData::U32(data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub byte_order: String,
    pub layout: String,
    pub meta: Value,
    pub arrays: BTreeMap<String, ArrayEntry>,
    /// Hash over the sorted array names and their digests.
    pub content_hash: String,
}

pub const BYTE_ORDER: &str = "little";
pub const LAYOUT: &str = "row-major";

fn content_hash(arrays: &BTreeMap<String, ArrayEntry>) -> String {
    let mut h = Sha256::new();
    for (name, e) in arrays {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(e.sha256.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
        && !name.starts_with('.')
}

/// Named arrays plus a free-form metadata value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArrayStore {
    pub arrays: BTreeMap<String, NamedArray>,
}

impl ArrayStore {
    pub fn insert(&mut self, name: &str, array: NamedArray) {
        self.arrays.insert(name.to_string(), array);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays.get(name).ok_or_else(|| Error::Integrity {
            array: name.into(),
            reason: "array is not catalogued".into(),
        })
    }

    /// Checks `shape` against `expected`, where `None` matches any extent.
    pub fn check_shape(name: &str, shape: &[usize], expected: &[Option<usize>]) -> Result<()> {
        let ok = shape.len() == expected.len()
            && shape.iter().zip(expected).all(|(s, e)| e.is_none_or(|e| e == *s));
        if ok {
            Ok(())
        } else {
            Err(Error::Schema(format!(
                "array `{name}` has shape {shape:?}, expected {}",
                describe(expected)
            )))
        }
    }

    /// Float array widened to `f64`, after a shape check.
    pub fn floats(&self, name: &str, expected: &[Option<usize>]) -> Result<(Vec<usize>, Vec<f64>)> {
        let a = self.get(name)?;
        Self::check_shape(name, &a.shape, expected)?;
        let data = match &a.data {
            ArrayData::F64(v) => v.clone(),
            ArrayData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            other => {
                return Err(Error::Schema(format!(
                    "array `{name}` has dtype {:?}, expected a float type",
                    other.dtype()
                )))
            }
        };
        Ok((a.shape.clone(), data))
    }

    pub fn bytes(&self, name: &str, expected: &[Option<usize>]) -> Result<(Vec<usize>, Vec<u8>)> {
        let a = self.get(name)?;
        Self::check_shape(name, &a.shape, expected)?;
        match &a.data {
            ArrayData::U8(v) => Ok((a.shape.clone(), v.clone())),
            other => Err(Error::Schema(format!("array `{name}` has dtype {:?}, expected u8", other.dtype()))),
        }
    }

    pub fn indices(&self, name: &str, expected: &[Option<usize>]) -> Result<(Vec<usize>, Vec<u32>)> {
        let a = self.get(name)?;
        Self::check_shape(name, &a.shape, expected)?;
        match &a.data {
            ArrayData::U32(v) => Ok((a.shape.clone(), v.clone())),
            other => Err(Error::Schema(format!("array `{name}` has dtype {:?}, expected u32", other.dtype()))),
        }
    }

    /// Writes the sidecars and the manifest. Files are written in sorted
    /// name order; the manifest goes last.
    pub fn save(&self, dir: &Path, format: &str, meta: Value) -> Result<Manifest> {
        fs::create_dir_all(dir)?;
        let mut entries = BTreeMap::new();
        for (name, a) in &self.arrays {
            if !valid_name(name) {
                return Err(Error::arg(format!("array name `{name}` is not a plain file stem")));
            }
            let bytes = a.data.to_bytes();
            let file = format!("{name}.bin");
            fs::write(dir.join(&file), &bytes)?;
            entries.insert(
                name.clone(),
                ArrayEntry {
                    dtype: a.data.dtype(),
                    shape: a.shape.clone(),
                    file,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                },
            );
        }
        let manifest = Manifest {
            format: format.into(),
            version: 1,
            byte_order: BYTE_ORDER.into(),
            layout: LAYOUT.into(),
            meta,
            content_hash: content_hash(&entries),
            arrays: entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }

    /// Reads and verifies every catalogued sidecar.
    pub fn load(dir: &Path, format: &str) -> Result<(Manifest, ArrayStore)> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::Integrity {
            array: MANIFEST_FILE.into(),
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{MANIFEST_FILE}: {e}")))?;
        if manifest.format != format {
            return Err(Error::Schema(format!(
                "manifest format `{}`, expected `{format}`",
                manifest.format
            )));
        }
        if manifest.version != 1 || manifest.byte_order != BYTE_ORDER || manifest.layout != LAYOUT {
            return Err(Error::Schema("unsupported manifest version, byte order or layout".into()));
        }
        if content_hash(&manifest.arrays) != manifest.content_hash {
            return Err(Error::Integrity {
                array: MANIFEST_FILE.into(),
                reason: "content hash does not match the array catalogue".into(),
            });
        }
        let mut store = ArrayStore::default();
        for (name, e) in &manifest.arrays {
            let integrity = |reason: String| Error::Integrity {
                array: name.clone(),
                reason,
            };
            if !valid_name(name) || e.file != format!("{name}.bin") {
                return Err(Error::Schema(format!("array `{name}` has an unexpected file name")));
            }
            let bytes = fs::read(dir.join(&e.file)).map_err(|err| integrity(format!("missing sidecar: {err}")))?;
            let count: usize = e.shape.iter().product();
            let expected = count * e.dtype.size();
            if bytes.len() != expected {
                return Err(integrity(format!(
                    "sidecar has {} bytes, shape {:?} of {:?} needs {expected}",
                    bytes.len(),
                    e.shape,
                    e.dtype
                )));
            }
            if hex::encode(Sha256::digest(&bytes)) != e.sha256 {
                return Err(integrity("checksum mismatch".into()));
            }
            store.insert(
                name,
                NamedArray {
                    shape: e.shape.clone(),
                    data: ArrayData::from_bytes(e.dtype, &bytes),
                },
            );
        }
        Ok((manifest, store))
    }
}

fn describe(expected: &[Option<usize>]) -> String {
    let parts: Vec<String> = expected
        .iter()
        .map(|e| e.map_or_else(|| "_".to_string(), |n| n.to_string()))
        .collect();
    format!("[{}]", parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> ArrayStore {
        let mut s = ArrayStore::default();
        s.insert("a", NamedArray::f64(vec![2, 2], vec![1.0, -0.0, f64::NAN, 1e300]).unwrap());
        s.insert("b", NamedArray::new(vec![3], ArrayData::F32(vec![0.1, 0.2, 0.3])).unwrap());
        s.insert("c", NamedArray::u8(vec![0], vec![]).unwrap());
        s.insert("d", NamedArray::u32(vec![1, 2], vec![7, u32::MAX]).unwrap());
        s
    }

    #[test]
    fn round_trip_keeps_bits_and_types() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        s.save(dir.path(), "test", json!({"k": 1})).unwrap();
        let (m, back) = ArrayStore::load(dir.path(), "test").unwrap();
        assert_eq!(m.meta, json!({"k": 1}));
        assert!(matches!(back.get("b").unwrap().data, ArrayData::F32(_)));
        match (&s.get("a").unwrap().data, &back.get("a").unwrap().data) {
            (ArrayData::F64(x), ArrayData::F64(y)) => {
                assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
            }
            _ => panic!("dtype changed"),
        }
        let (_, f) = back.floats("b", &[Some(3)]).unwrap();
        assert_eq!(f[0], f64::from(0.1f32));
    }

    #[test]
    fn corruption_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path(), "test", Value::Null).unwrap();
        let path = dir.path().join("a.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match ArrayStore::load(dir.path(), "test") {
            Err(Error::Integrity { array, .. }) => assert_eq!(array, "a"),
            other => panic!("expected integrity error, got {other:?}"),
        }
        let mut flipped = bytes.clone();
        flipped[0] ^= 1;
        fs::write(&path, &flipped).unwrap();
        assert!(matches!(ArrayStore::load(dir.path(), "test"), Err(Error::Integrity { .. })));
        fs::remove_file(&path).unwrap();
        assert!(matches!(ArrayStore::load(dir.path(), "test"), Err(Error::Integrity { .. })));
    }

    #[test]
    fn schema_checks() {
        let s = sample();
        assert!(matches!(s.floats("a", &[Some(2), Some(3)]), Err(Error::Schema(_))));
        assert!(matches!(s.floats("d", &[None, None]), Err(Error::Schema(_))));
        assert!(matches!(s.bytes("missing", &[None]), Err(Error::Integrity { .. })));
        assert!(NamedArray::f64(vec![3], vec![1.0]).is_err());
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path(), "test", Value::Null).unwrap();
        assert!(matches!(ArrayStore::load(dir.path(), "other"), Err(Error::Schema(_))));
    }
}
