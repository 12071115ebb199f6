//! Binary model container plus a TOML metadata sidecar.
//!
//! Layout (all integers little-endian):
//! `b"SCDMODEL"`, `u32` version, `u32` layer count, `u64` per layer size,
//! `u32`-length-prefixed fingerprint, `u32` label count with each label
//! `u32`-length-prefixed, then every weight matrix as row-major `f64`.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Model, NetworkShape};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SCDMODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    version: u32,
    layer_sizes: Vec<usize>,
    parameters: usize,
    feature_fingerprint: String,
    speaker_labels: Vec<String>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.toml");
    PathBuf::from(name)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).ok_or("length overflow")?;
        let out = self.bytes.get(self.pos..end).ok_or("unexpected end of file")?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.shape.parameter_count() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shape.layers() as u32).to_le_bytes());
        for &s in &self.shape.0 {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        put_str(&mut out, &self.feature_fingerprint);
        out.extend_from_slice(&(self.speaker_labels.len() as u32).to_le_bytes());
        for l in &self.speaker_labels {
            put_str(&mut out, l);
        }
        for w in &self.weights {
            for v in w.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Model, String> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8)? != MAGIC {
            return Err("not a model file (bad magic)".into());
        }
        let version = c.u32()?;
        if version != MODEL_VERSION {
            return Err(format!("unsupported model version {version}"));
        }
        let layers = c.u32()? as usize;
        if layers > 64 {
            return Err(format!("implausible layer count {layers}"));
        }
        let sizes = (0..layers)
            .map(|_| c.u64().map(|v| v as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let shape = NetworkShape::new(sizes).map_err(|e| e.to_string())?;
        let feature_fingerprint = c.string()?;
        let n_labels = c.u32()? as usize;
        if n_labels != shape.output_dim() {
            return Err(format!("{n_labels} speaker labels for {} outputs", shape.output_dim()));
        }
        let speaker_labels = (0..n_labels)
            .map(|_| c.string())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut weights = Vec::new();
        for (r, cols) in shape.weight_shapes() {
            let raw = c.take(r * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            weights.push(Array2::from_shape_vec((r, cols), data).map_err(|e| e.to_string())?);
        }
        if c.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - c.pos));
        }
        let model = Model {
            shape,
            weights,
            speaker_labels,
            feature_fingerprint,
        };
        if !model.is_finite() {
            return Err("non-finite weights".into());
        }
        Ok(model)
    }

    /// Writes the binary model and `<path>.meta.toml`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let meta = Sidecar {
            version: MODEL_VERSION,
            layer_sizes: self.shape.0.clone(),
            parameters: self.shape.parameter_count(),
            feature_fingerprint: self.feature_fingerprint.clone(),
            speaker_labels: self.speaker_labels.clone(),
        };
        let text = toml::to_string_pretty(&meta).expect("sidecar serializes");
        let side = sidecar_path(path);
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::init_weights;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = init_weights(&NetworkShape::new(vec![6, 4, 3]).unwrap(), 9);
        m.speaker_labels = vec!["x".into(), "yy".into(), "zzz".into()];
        m.feature_fingerprint = "abc123".into();
        let p = dir.path().join("m.bin");
        m.save(&p).unwrap();
        assert_eq!(Model::load(&p).unwrap(), m);
        let meta = std::fs::read_to_string(dir.path().join("m.bin.meta.toml")).unwrap();
        assert!(meta.contains("abc123") && meta.contains("layer_sizes"));
    }

    #[test]
    fn rejects_damaged_files() {
        let m = init_weights(&NetworkShape::new(vec![2, 2]).unwrap(), 1);
        let bytes = m.to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Model::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
    }
}
