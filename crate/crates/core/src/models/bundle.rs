//! Binary model file: `SCTG` magic, LE u32 version, length-prefixed JSON
//! config, tensor table of LE f32 values, CRC-32 trailer over everything before it.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Architecture, ModelBundle, TrainingMeta};
use crate::correction::TagVocabulary;
use crate::nn::{ParamStore, Tensor, CODEC_VERSION};

pub const MAGIC: &[u8; 4] = b"SCTG";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bad magic: not a model bundle")]
    BadMagic,
    #[error("unsupported version {found} (expected {BUNDLE_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("truncated bundle at byte {offset}")]
    Truncated { offset: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("unsupported character codec version {0}")]
    CodecVersion(u32),
    #[error("invalid config block: {0}")]
    Config(#[from] serde_json::Error),
    #[error("parameters do not match architecture: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl BundleError {
    /// Stable short code, one per failure class.
    pub fn code(&self) -> &'static str {
        match self {
            BundleError::BadMagic => "bad_magic",
            BundleError::UnsupportedVersion { .. } => "unsupported_version",
            BundleError::Truncated { .. } => "truncated",
            BundleError::Checksum { .. } => "checksum",
            BundleError::CodecVersion(_) => "codec_version",
            BundleError::Config(_) => "config",
            BundleError::Mismatch(_) => "mismatch",
            BundleError::Io(_) => "io",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Config {
    kind: super::ModelKind,
    architecture: Architecture,
    vocab: TagVocabulary,
    codec_version: u32,
    training_meta: TrainingMeta,
}

pub fn write_bundle(bundle: &ModelBundle) -> Result<Vec<u8>, BundleError> {
    let config = serde_json::to_vec(&Config {
        kind: bundle.kind(),
        architecture: bundle.architecture.clone(),
        vocab: bundle.vocab.clone(),
        codec_version: bundle.codec_version,
        training_meta: bundle.meta.clone(),
    })?;
    let mut out = Vec::with_capacity(config.len() + bundle.params.total_values() * 4 + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(bundle.params.len() as u32).to_le_bytes());
    for p in bundle.params.params() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.trainable as u8);
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BundleError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(BundleError::Truncated { offset: self.buf.len() })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, BundleError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, BundleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, BundleError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, BundleError> {
        usize::try_from(self.u64()?).map_err(|_| BundleError::Truncated { offset: self.buf.len() })
    }
}

pub fn read_bundle(bytes: &[u8]) -> Result<ModelBundle, BundleError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(BundleError::BadMagic);
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u32()?;
    if version != BUNDLE_VERSION {
        return Err(BundleError::UnsupportedVersion { found: version });
    }
    let config_len = r.len()?;
    let config_bytes = r.take(config_len)?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let trainable = r.u8()? != 0;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(BundleError::Truncated { offset: bytes.len() })?;
        let data = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value = Tensor::new(shape, data).map_err(|e| BundleError::Mismatch(e.to_string()))?;
        params.insert(name, value, trainable);
    }
    let body_end = r.pos;
    let stored = r.u32()?;
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(BundleError::Checksum { stored, computed });
    }

    let config: Config = serde_json::from_slice(config_bytes)?;
    if config.codec_version != CODEC_VERSION {
        return Err(BundleError::CodecVersion(config.codec_version));
    }
    if config.kind != config.architecture.kind() {
        return Err(BundleError::Mismatch("kind disagrees with architecture".into()));
    }
    config
        .architecture
        .validate()
        .map_err(|e| BundleError::Mismatch(e.to_string()))?;
    if config.architecture.output_dim() != config.vocab.len() {
        return Err(BundleError::Mismatch(format!(
            "{} outputs for {} tags",
            config.architecture.output_dim(),
            config.vocab.len()
        )));
    }
    let expected: ParamStore<f32> = config.architecture.init_params(0);
    if expected.len() != params.len() {
        return Err(BundleError::Mismatch(format!(
            "{} tensors, expected {}",
            params.len(),
            expected.len()
        )));
    }
    for e in expected.params() {
        let got = params
            .get(&e.name)
            .map_err(|_| BundleError::Mismatch(format!("missing tensor {}", e.name)))?;
        if got.shape() != e.value.shape() {
            return Err(BundleError::Mismatch(format!(
                "{}: shape {:?}, expected {:?}",
                e.name,
                got.shape(),
                e.value.shape()
            )));
        }
    }
    Ok(ModelBundle {
        architecture: config.architecture,
        params,
        vocab: config.vocab,
        codec_version: config.codec_version,
        meta: config.training_meta,
    })
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<(), BundleError> {
    let bytes = write_bundle(bundle)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle, BundleError> {
    read_bundle(&fs::read(path)?)
}
