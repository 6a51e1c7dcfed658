//! Named-array container: a small self-describing binary file holding typed n-d arrays and
//! JSON attributes.
//!
//! Layout: the 8-byte magic `DMNAC\0` + little-endian `u16` version, a little-endian `u64`
//! header length, a UTF-8 JSON header, then the raw little-endian array payloads in header
//! order. Keys are kept sorted so equal contents serialise to identical bytes.

use std::any::TypeId;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 6] = b"DMNAC\0";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
            ArrayData::U8(_) => "u8",
        }
    }

    /// Stores `S` natively (f32 or f64) so a round trip is bit-exact.
    pub fn from_scalars<S: Scalar>(values: &[S]) -> Self {
        if TypeId::of::<S>() == TypeId::of::<f32>() {
            ArrayData::F32(values.iter().map(|v| v.as_f64() as f32).collect())
        } else {
            ArrayData::F64(values.iter().map(|v| v.as_f64()).collect())
        }
    }

    pub fn to_scalars<S: Scalar>(&self) -> Vec<S> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| S::of(x as f64)).collect(),
            ArrayData::F64(v) => v.iter().map(|&x| S::of(x)).collect(),
            ArrayData::U8(v) => v.iter().map(|&x| S::of(x as f64)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Container(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arrays: Vec<Entry>,
    attrs: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub arrays: BTreeMap<String, NamedArray>,
    pub attrs: BTreeMap<String, serde_json::Value>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_array(&mut self, name: &str, shape: Vec<usize>, data: ArrayData) -> Result<()> {
        self.arrays.insert(name.to_string(), NamedArray::new(shape, data)?);
        Ok(())
    }

    pub fn insert_attr(&mut self, name: &str, value: impl Into<serde_json::Value>) {
        self.attrs.insert(name.to_string(), value.into());
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing array `{name}`")))
    }

    pub fn attr(&self, name: &str) -> Result<&serde_json::Value> {
        self.attrs
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing attribute `{name}`")))
    }

    pub fn attr_str(&self, name: &str) -> Result<&str> {
        self.attr(name)?
            .as_str()
            .ok_or_else(|| Error::Container(format!("attribute `{name}` is not a string")))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            arrays: self
                .arrays
                .iter()
                .map(|(name, a)| Entry {
                    name: name.clone(),
                    dtype: a.data.dtype().into(),
                    shape: a.shape.clone(),
                })
                .collect(),
            attrs: self.attrs.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        for a in self.arrays.values() {
            match &a.data {
                ArrayData::F32(v) => {
                    for x in v {
                        out.write_all(&x.to_le_bytes())?;
                    }
                }
                ArrayData::F64(v) => {
                    for x in v {
                        out.write_all(&x.to_le_bytes())?;
                    }
                }
                ArrayData::U8(v) => out.write_all(v)?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Container("file too short for magic".into()))?;
        if &magic[..6] != MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let version = u16::from_le_bytes([magic[6], magic[7]]);
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::Container("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&header)?;
        let mut arrays = BTreeMap::new();
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            let data = match e.dtype.as_str() {
                "f32" => ArrayData::F32(
                    read_exact_vec(&mut input, n * 4)?
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                "f64" => ArrayData::F64(
                    read_exact_vec(&mut input, n * 8)?
                        .chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                "u8" => ArrayData::U8(read_exact_vec(&mut input, n)?),
                other => return Err(Error::Container(format!("unknown dtype `{other}`"))),
            };
            arrays.insert(e.name, NamedArray { shape: e.shape, data });
        }
        Ok(Self {
            arrays,
            attrs: header.attrs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_exact_vec<R: Read>(input: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    input
        .read_exact(&mut buf)
        .map_err(|_| Error::Container("truncated array payload".into()))?;
    Ok(buf)
}
