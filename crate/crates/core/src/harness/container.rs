//! On-disk arrays: `NAME.json` header plus `NAME.bin` little-endian,
//! row-major payload whose SHA-256 is recorded in the header.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const FORMAT: &str = "usfwi-array/1";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: bad header: {source}")]
    Header { path: String, source: serde_json::Error },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: payload checksum mismatch")]
    Checksum { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Complex128,
    Complex64,
    Float64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Complex128 => 16,
            Dtype::Complex64 | Dtype::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub shape: Vec<usize>,
    pub axes: Vec<String>,
    pub dtype: Dtype,
    pub units: String,
    pub endianness: String,
    pub order: String,
    pub config_hash: String,
    pub payload_file: String,
    pub payload_bytes: usize,
    pub payload_sha256: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    Complex(Vec<C64>),
    Real(Vec<f64>),
}

impl Values {
    pub fn len(&self) -> usize {
        match self {
            Values::Complex(v) => v.len(),
            Values::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An array with its descriptive header fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayContainer {
    pub shape: Vec<usize>,
    pub axes: Vec<String>,
    pub units: String,
    pub config_hash: String,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub values: Values,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ContainerError + '_ {
    move |source| ContainerError::Io { path: path.display().to_string(), source }
}

fn invalid<T>(path: &Path, message: impl Into<String>) -> Result<T, ContainerError> {
    Err(ContainerError::Invalid { path: path.display().to_string(), message: message.into() })
}

/// Header and payload paths for `dir/name`.
pub fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.json")), dir.join(format!("{name}.bin")))
}

impl ArrayContainer {
    pub fn real(shape: &[usize], axes: &[&str], units: &str, values: Vec<f64>) -> Self {
        Self::with(shape, axes, units, Values::Real(values))
    }

    pub fn complex(shape: &[usize], axes: &[&str], units: &str, values: Vec<C64>) -> Self {
        Self::with(shape, axes, units, Values::Complex(values))
    }

    fn with(shape: &[usize], axes: &[&str], units: &str, values: Values) -> Self {
        Self {
            shape: shape.to_vec(),
            axes: axes.iter().map(|s| s.to_string()).collect(),
            units: units.into(),
            config_hash: String::new(),
            metadata: BTreeMap::new(),
            values,
        }
    }

    pub fn hash(mut self, config_hash: &str) -> Self {
        self.config_hash = config_hash.into();
        self
    }

    pub fn meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match &self.values {
            Values::Real(v) => Some(v),
            Values::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&[C64]> {
        match &self.values {
            Values::Complex(v) => Some(v),
            Values::Real(_) => None,
        }
    }

    /// Writes `dir/name.json` and `dir/name.bin`; complex data is stored as
    /// `complex128` unless `dtype` asks for `complex64`.
    pub fn write(&self, dir: &Path, name: &str, dtype: Option<Dtype>) -> Result<PathBuf, ContainerError> {
        let (hpath, ppath) = paths(dir, name);
        if self.shape.iter().product::<usize>() != self.values.len() || self.axes.len() != self.shape.len() {
            return invalid(&hpath, "shape, axes and value count disagree");
        }
        let dtype = match (&self.values, dtype) {
            (Values::Real(_), None | Some(Dtype::Float64)) => Dtype::Float64,
            (Values::Complex(_), None | Some(Dtype::Complex128)) => Dtype::Complex128,
            (Values::Complex(_), Some(Dtype::Complex64)) => Dtype::Complex64,
            _ => return invalid(&hpath, "dtype does not match the values"),
        };
        let mut payload = Vec::with_capacity(self.values.len() * dtype.size());
        match (&self.values, dtype) {
            (Values::Real(v), _) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            (Values::Complex(v), Dtype::Complex128) => v.iter().for_each(|z| {
                payload.extend_from_slice(&z.re.to_le_bytes());
                payload.extend_from_slice(&z.im.to_le_bytes());
            }),
            (Values::Complex(v), _) => v.iter().for_each(|z| {
                payload.extend_from_slice(&(z.re as f32).to_le_bytes());
                payload.extend_from_slice(&(z.im as f32).to_le_bytes());
            }),
        }
        let header = Header {
            format: FORMAT.into(),
            shape: self.shape.clone(),
            axes: self.axes.clone(),
            dtype,
            units: self.units.clone(),
            endianness: "little".into(),
            order: "row-major".into(),
            config_hash: self.config_hash.clone(),
            payload_file: format!("{name}.bin"),
            payload_bytes: payload.len(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            metadata: self.metadata.clone(),
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        std::fs::write(&ppath, &payload).map_err(io(&ppath))?;
        let text = serde_json::to_string_pretty(&header).expect("header serializes") + "\n";
        std::fs::write(&hpath, text).map_err(io(&hpath))?;
        Ok(hpath)
    }

    pub fn read_header(path: &Path) -> Result<Header, ContainerError> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        serde_json::from_str(&text).map_err(|source| ContainerError::Header { path: path.display().to_string(), source })
    }

    /// Reads a container given its header path, verifying size and checksum.
    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        let header = Self::read_header(path)?;
        if header.format != FORMAT || header.endianness != "little" || header.order != "row-major" {
            return invalid(path, "unsupported format, endianness or order");
        }
        if header.axes.len() != header.shape.len() {
            return invalid(path, "axes and shape lengths differ");
        }
        let n: usize = header.shape.iter().product();
        let ppath = path.parent().unwrap_or(Path::new(".")).join(&header.payload_file);
        let payload = std::fs::read(&ppath).map_err(io(&ppath))?;
        if payload.len() != n * header.dtype.size() || payload.len() != header.payload_bytes {
            return invalid(path, format!("payload has {} bytes, shape needs {}", payload.len(), n * header.dtype.size()));
        }
        if hex::encode(Sha256::digest(&payload)) != header.payload_sha256 {
            return Err(ContainerError::Checksum { path: path.display().to_string() });
        }
        let f64s = |c: &[u8]| f64::from_le_bytes(c.try_into().unwrap());
        let f32s = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap()) as f64;
        let values = match header.dtype {
            Dtype::Float64 => Values::Real(payload.chunks_exact(8).map(f64s).collect()),
            Dtype::Complex128 => Values::Complex(payload.chunks_exact(16).map(|c| C64::new(f64s(&c[..8]), f64s(&c[8..]))).collect()),
            Dtype::Complex64 => Values::Complex(payload.chunks_exact(8).map(|c| C64::new(f32s(&c[..4]), f32s(&c[4..]))).collect()),
        };
        Ok(Self { shape: header.shape, axes: header.axes, units: header.units, config_hash: header.config_hash, metadata: header.metadata, values })
    }
}
