//! Binary checkpoint files.
//!
//! Layout: the magic bytes `BALM`, a little-endian `u32` format version, a
//! UTF-8 header of `key=value` lines ended by an empty line, then for every
//! parameter in canonical order a name line, a shape line (space-separated
//! extents) and the raw little-endian `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{AutoencoderModel, FfnParams, TranslatorModel};
use crate::decoder::{DecoderConfig, DecoderParams};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::Result;
use crate::numerics::Tensor;
use crate::text::TOKENIZER_VERSION;

pub const MAGIC: &[u8; 4] = b"BALM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint file is truncated")]
    Truncated,
    #[error("parameter {name}: header says shape {expected:?} but found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    Kind { expected: &'static str, found: &'static str },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Encoder(EncoderParams<f32>),
    Autoencoder(AutoencoderModel<f32>),
    Translator(TranslatorModel<f32>),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Encoder(_) => "encoder",
            Model::Autoencoder(_) => "autoencoder",
            Model::Translator(_) => "translator",
        }
    }

    fn named_params(&self) -> Vec<(String, &Tensor<f32>)> {
        match self {
            Model::Encoder(e) => {
                let mut out = Vec::new();
                e.weights.visit("encoder.", &mut |n, t| out.push((n, t)));
                out
            }
            Model::Autoencoder(m) => m.named_params(),
            Model::Translator(m) => m.named_params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        match self {
            Model::Encoder(e) => e.params_mut(),
            Model::Autoencoder(m) => m.params_mut(),
            Model::Translator(m) => m.params_mut(),
        }
    }
}

/// A model plus free-form string metadata (for example vocabulary paths).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.meta.insert(key.to_owned(), value.to_owned());
        self
    }

    pub fn into_encoder(self) -> Result<EncoderParams<f32>, CheckpointError> {
        match self.model {
            Model::Encoder(e) => Ok(e),
            other => Err(CheckpointError::Kind {
                expected: "encoder",
                found: other.kind(),
            }),
        }
    }

    pub fn into_autoencoder(self) -> Result<AutoencoderModel<f32>, CheckpointError> {
        match self.model {
            Model::Autoencoder(m) => Ok(m),
            other => Err(CheckpointError::Kind {
                expected: "autoencoder",
                found: other.kind(),
            }),
        }
    }

    pub fn into_translator(self) -> Result<TranslatorModel<f32>, CheckpointError> {
        match self.model {
            Model::Translator(m) => Ok(m),
            other => Err(CheckpointError::Kind {
                expected: "translator",
                found: other.kind(),
            }),
        }
    }
}

const RESERVED_KEYS: [&str; 3] = ["kind", "tokenizer", "k"];

fn encoder_header(h: &mut Vec<(String, String)>, c: &EncoderConfig) {
    let mut put = |k: &str, v: String| h.push((format!("encoder.{k}"), v));
    put("vocab_size", c.vocab_size.to_string());
    put("layers", c.num_layers.to_string());
    put("heads", c.num_heads.to_string());
    put("ffn_hidden", c.ffn_hidden.to_string());
    put("max_positions", c.max_positions.to_string());
    put("dropout", c.dropout.to_string());
}

fn header(ckpt: &Checkpoint) -> Result<Vec<(String, String)>, CheckpointError> {
    let (enc, dec) = match &ckpt.model {
        Model::Encoder(e) => (&e.config, None),
        Model::Autoencoder(m) => (&m.encoder.config, Some(&m.decoder.config)),
        Model::Translator(m) => (&m.src_encoder.config, Some(&m.tgt_decoder.config)),
    };
    let mut h = vec![
        ("kind".to_owned(), ckpt.model.kind().to_owned()),
        ("tokenizer".to_owned(), TOKENIZER_VERSION.to_owned()),
        ("k".to_owned(), enc.embed_dim.to_string()),
    ];
    encoder_header(&mut h, enc);
    if let Some(d) = dec {
        h.push(("decoder.vocab_size".to_owned(), d.vocab_size.to_string()));
    }
    for (k, v) in &ckpt.meta {
        let bad_key = k.is_empty() || k.contains(['=', '\n', '\r']) || k.contains('.') || RESERVED_KEYS.contains(&k.as_str());
        if bad_key || v.contains(['\n', '\r']) {
            return Err(CheckpointError::Header(format!("metadata entry {k:?} cannot be stored")));
        }
        h.push((k.clone(), v.clone()));
    }
    Ok(h)
}

/// Serializes the checkpoint bytes.
pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (k, v) in header(ckpt)? {
        out.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    out.push(b'\n');
    for (name, t) in ckpt.model.named_params() {
        out.extend_from_slice(name.as_bytes());
        out.push(b'\n');
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        out.extend_from_slice(shape.join(" ").as_bytes());
        out.push(b'\n');
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(ckpt)?).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })?;
    from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn line(&mut self) -> Result<&'a str, CheckpointError> {
        let rest = &self.bytes[self.pos..];
        let n = rest.iter().position(|&b| b == b'\n').ok_or(CheckpointError::Truncated)?;
        let line = std::str::from_utf8(&rest[..n]).map_err(|_| CheckpointError::Header("invalid UTF-8".into()))?;
        self.pos += n + 1;
        Ok(line)
    }
}

fn field<T: std::str::FromStr>(h: &BTreeMap<String, String>, key: &str) -> Result<T, CheckpointError> {
    let raw = h.get(key).ok_or_else(|| CheckpointError::Header(format!("missing key {key}")))?;
    raw.parse().map_err(|_| CheckpointError::Header(format!("bad value for {key}: {raw:?}")))
}

fn encoder_skeleton(h: &BTreeMap<String, String>) -> Result<EncoderParams<f32>, CheckpointError> {
    let config = EncoderConfig {
        vocab_size: field(h, "encoder.vocab_size")?,
        embed_dim: field(h, "k")?,
        num_layers: field(h, "encoder.layers")?,
        num_heads: field(h, "encoder.heads")?,
        ffn_hidden: field(h, "encoder.ffn_hidden")?,
        max_positions: field(h, "encoder.max_positions")?,
        dropout: field(h, "encoder.dropout")?,
    };
    config.validate().map_err(|e| CheckpointError::Header(e.to_string()))?;
    EncoderParams::init(config, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| CheckpointError::Header(e.to_string()))
}

fn decoder_skeleton(h: &BTreeMap<String, String>) -> Result<DecoderParams<f32>, CheckpointError> {
    let config = DecoderConfig {
        vocab_size: field(h, "decoder.vocab_size")?,
        embed_dim: field(h, "k")?,
    };
    if config.vocab_size == 0 || config.embed_dim == 0 {
        return Err(CheckpointError::Header("decoder dimensions must be positive".into()));
    }
    Ok(DecoderParams::zeros(config))
}

/// Parses checkpoint bytes, checking every name and shape.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| CheckpointError::BadMagic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("four bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut h = BTreeMap::new();
    loop {
        let line = r.line()?;
        if line.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Header(format!("expected key=value, got {line:?}")))?;
        h.insert(k.to_owned(), v.to_owned());
    }
    let tokenizer: String = field(&h, "tokenizer")?;
    if tokenizer != TOKENIZER_VERSION {
        return Err(CheckpointError::Header(format!(
            "tokenizer {tokenizer:?} differs from {TOKENIZER_VERSION:?}"
        )));
    }
    let kind: String = field(&h, "kind")?;
    let mut model = match kind.as_str() {
        "encoder" => Model::Encoder(encoder_skeleton(&h)?),
        "autoencoder" => Model::Autoencoder(AutoencoderModel {
            encoder: encoder_skeleton(&h)?,
            decoder: decoder_skeleton(&h)?,
        }),
        "translator" => Model::Translator(TranslatorModel {
            src_encoder: encoder_skeleton(&h)?,
            ffn: FfnParams::zeros(field(&h, "k")?),
            tgt_decoder: decoder_skeleton(&h)?,
        }),
        other => return Err(CheckpointError::Header(format!("unknown model kind {other:?}"))),
    };

    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(model.params_mut()) {
        let found_name = r.line()?;
        if found_name != name {
            return Err(CheckpointError::Header(format!("expected parameter {name}, found {found_name:?}")));
        }
        let shape: Vec<usize> = r
            .line()?
            .split(' ')
            .map(|d| d.parse().map_err(|_| CheckpointError::Header(format!("bad shape for {name}"))))
            .collect::<Result<_, _>>()?;
        if shape != t.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: t.shape().to_vec(),
                found: shape,
            });
        }
        let raw = r.take(t.len() * 4)?;
        for (x, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().expect("four bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Header(format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
    }
    let meta = h
        .into_iter()
        .filter(|(k, _)| !RESERVED_KEYS.contains(&k.as_str()) && !k.contains('.'))
        .collect();
    Ok(Checkpoint { model, meta })
}
