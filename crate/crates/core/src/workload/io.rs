//! On-disk model artifacts: a key-value manifest plus a flat binary blob.
//!
//! Blob layout, all integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  "CTRM"
//! version    u32      1
//! seed       u64
//! num_tables u32
//! rows       u32      rows per table
//! dim        u32      embedding width
//! n_bottom   u32      number of bottom widths, then n_bottom x u32
//! n_top      u32      number of top widths, then n_top x u32
//! payload    f32...   tables (row-major), then per layer: weights (out x in, row-major), bias
//! ```
//!
//! The payload length must match the header exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::ModelConfig;
use super::model::{Layer, Model};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::tensor::Matrix;

pub const BLOB_MAGIC: [u8; 4] = *b"CTRM";
pub const BLOB_VERSION: u32 = 1;
/// Upper bound on widths per MLP accepted by the decoder.
pub const MAX_MLP_WIDTHS: usize = 64;

/// Arrays decoded from a blob, before they are checked against a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArrays {
    pub seed: u64,
    pub tables: Vec<Matrix>,
    pub bottom: Vec<Layer>,
    pub top: Vec<Layer>,
}

pub fn encode_model<W: Write>(model: &Model, out: &mut W) -> Result<()> {
    let cfg = &model.config;
    out.write_all(&BLOB_MAGIC)?;
    out.write_all(&BLOB_VERSION.to_le_bytes())?;
    out.write_all(&model.seed.to_le_bytes())?;
    for v in [cfg.num_tables, cfg.rows_per_table, cfg.embedding_dim] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for dims in [&cfg.bottom_mlp_dims, &cfg.top_mlp_dims] {
        out.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims.iter() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    let mut put = |xs: &[f32]| -> Result<()> {
        for x in xs {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    for t in &model.tables {
        put(t.as_slice())?;
    }
    for layer in model.bottom.iter().chain(&model.top) {
        put(layer.weights.as_slice())?;
        put(&layer.bias)?;
    }
    Ok(())
}

pub fn encode_model_bytes(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    encode_model(model, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated blob while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn dims(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.u32(what)? as usize;
        if !(2..=MAX_MLP_WIDTHS).contains(&n) {
            return Err(Error::Format(format!("{what}: {n} widths (expected 2..={MAX_MLP_WIDTHS})")));
        }
        (0..n)
            .map(|_| {
                let d = self.u32(what)? as usize;
                if d == 0 {
                    Err(Error::Format(format!("{what}: zero width")))
                } else {
                    Ok(d)
                }
            })
            .collect()
    }

    fn floats(&mut self, n: usize) -> Vec<f32> {
        let s = self.take(n * 4, "payload").expect("length checked up front");
        s.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}

fn layer_elems(dims: &[usize]) -> Option<usize> {
    dims.windows(2)
        .try_fold(0usize, |acc, w| acc.checked_add(w[0].checked_mul(w[1])?.checked_add(w[1])?))
}

/// Decodes a blob. Never allocates more than the input length implies.
pub fn decode_model(bytes: &[u8]) -> Result<ModelArrays> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != BLOB_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != BLOB_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let seed = r.u64("seed")?;
    let tables = r.u32("num_tables")? as usize;
    let rows = r.u32("rows")? as usize;
    let dim = r.u32("dim")? as usize;
    if tables == 0 || rows == 0 || dim == 0 {
        return Err(Error::Format("zero table dimension".into()));
    }
    let bottom_dims = r.dims("bottom widths")?;
    let top_dims = r.dims("top widths")?;

    let expected = tables
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(dim))
        .and_then(|x| x.checked_add(layer_elems(&bottom_dims)?))
        .and_then(|x| x.checked_add(layer_elems(&top_dims)?))
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let remaining = bytes.len() - r.pos;
    if remaining != expected {
        return Err(Error::Format(format!(
            "payload is {remaining} bytes, header implies {expected}"
        )));
    }

    let tables = (0..tables)
        .map(|_| Matrix::from_vec(rows, dim, r.floats(rows * dim)))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = |dims: &[usize]| -> Result<Vec<Layer>> {
        dims.windows(2)
            .map(|w| {
                let weights = Matrix::from_vec(w[1], w[0], r.floats(w[0] * w[1]))?;
                Layer::new(weights, r.floats(w[1]))
            })
            .collect()
    };
    let bottom = layers(&bottom_dims)?;
    let top = layers(&top_dims)?;
    Ok(ModelArrays { seed, tables, bottom, top })
}

impl Model {
    /// Pairs decoded arrays with a config, checking every shape.
    pub fn from_parts(config: ModelConfig, arrays: ModelArrays) -> Result<Model> {
        let model = Model {
            config,
            tables: arrays.tables,
            bottom: arrays.bottom,
            top: arrays.top,
            seed: arrays.seed,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Keys the manifest adds on top of the config keys.
pub const MANIFEST_KEYS: &[&str] = &["seed", "blob", "blob_bytes", "table_bytes_total", "mlp_bytes_total"];

/// Manifest text for a model whose blob is stored as `blob_name`.
pub fn render_manifest(model: &Model, blob_name: &str, blob_bytes: u64) -> String {
    let cfg = &model.config;
    let mut doc = cfg.to_kv();
    doc.set("seed", model.seed);
    doc.set("blob", blob_name);
    doc.set("blob_bytes", blob_bytes);
    doc.set("table_bytes_total", cfg.total_table_bytes());
    doc.set("mlp_bytes_total", cfg.mlp_bytes());
    format!(
        "# model manifest: {} tables x {} rows x {} dims\n{}",
        cfg.num_tables,
        cfg.rows_per_table,
        cfg.embedding_dim,
        doc.render()
    )
}

/// Parsed manifest: the config plus where to find the blob.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config: ModelConfig,
    pub seed: u64,
    pub blob: String,
    pub blob_bytes: u64,
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let doc = KvDoc::parse(text)?;
    let mut config_doc = KvDoc::new();
    for key in doc.keys() {
        if !MANIFEST_KEYS.contains(&key) {
            config_doc.set(key, doc.get(key).unwrap());
        }
    }
    Ok(Manifest {
        config: ModelConfig::from_kv(&config_doc)?,
        seed: doc
            .parse_value("seed")?
            .ok_or_else(|| Error::config("seed", "required key is missing"))?,
        blob: doc.require("blob")?.to_string(),
        blob_bytes: doc
            .parse_value("blob_bytes")?
            .ok_or_else(|| Error::config("blob_bytes", "required key is missing"))?,
    })
}

/// Writes `<dir>/model.kv` and `<dir>/model.bin`; returns the manifest path.
pub fn save_model(model: &Model, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let blob_path = dir.join("model.bin");
    let mut w = BufWriter::new(fs::File::create(&blob_path)?);
    encode_model(model, &mut w)?;
    w.flush()?;
    drop(w);
    let blob_bytes = fs::metadata(&blob_path)?.len();
    let manifest_path = dir.join("model.kv");
    fs::write(&manifest_path, render_manifest(model, "model.bin", blob_bytes))?;
    Ok(manifest_path)
}

/// Loads a model from a manifest path or a directory holding `model.kv`.
pub fn load_model(path: &Path) -> Result<Model> {
    let manifest_path = if path.is_dir() { path.join("model.kv") } else { path.to_path_buf() };
    let manifest = parse_manifest(&fs::read_to_string(&manifest_path)?)?;
    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let bytes = fs::read(&blob_path)?;
    if bytes.len() as u64 != manifest.blob_bytes {
        return Err(Error::Format(format!(
            "{} is {} bytes, manifest says {}",
            blob_path.display(),
            bytes.len(),
            manifest.blob_bytes
        )));
    }
    let arrays = decode_model(&bytes)?;
    if arrays.seed != manifest.seed {
        return Err(Error::Format("blob seed does not match manifest".into()));
    }
    Model::from_parts(manifest.config, arrays)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{build_model, Preset};

    fn small() -> Model {
        let cfg = Preset::by_name("dlrm1").unwrap().config_scaled(8192).unwrap();
        build_model(&cfg, 5).unwrap()
    }

    #[test]
    fn blob_round_trip_is_exact() {
        let m = small();
        let bytes = encode_model_bytes(&m);
        let arrays = decode_model(&bytes).unwrap();
        let back = Model::from_parts(m.config.clone(), arrays).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn decoder_rejects_corruption() {
        let bytes = encode_model_bytes(&small());
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_model(&magic).is_err());
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(decode_model(&version).is_err());
        assert!(decode_model(&[]).is_err());
    }

    #[test]
    fn huge_header_does_not_allocate() {
        let mut b = Vec::new();
        b.extend_from_slice(&BLOB_MAGIC);
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&0u64.to_le_bytes());
        for v in [u32::MAX, u32::MAX, u32::MAX, 2, 1, 1, 2, 1, 1] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode_model(&b), Err(Error::Format(_))));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let m = small();
        let manifest = save_model(&m, dir.path()).unwrap();
        let text = fs::read_to_string(&manifest).unwrap();
        assert!(text.contains("rows_per_table = 25"), "{text}");
        assert_eq!(load_model(dir.path()).unwrap(), m);
    }

    #[test]
    fn manifest_requires_artifact_keys() {
        let m = small();
        let text = render_manifest(&m, "model.bin", 1);
        let parsed = parse_manifest(&text).unwrap();
        assert_eq!(parsed.config, m.config);
        let missing = text.replace("blob = model.bin\n", "");
        let err = parse_manifest(&missing).unwrap_err();
        assert!(err.to_string().contains("blob"), "{err}");
    }
}
