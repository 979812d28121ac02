//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header,
//! then every parameter as little-endian `f64` in tensor storage order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::Layout;
use super::{SeqModel, SeqModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEROLMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: SeqModelConfig,
    vocab_size: usize,
    vocab_hash: String,
    tensors: Vec<TensorEntry>,
    loss_curve: Vec<f64>,
    #[serde(default)]
    config_hash: String,
}

/// Writes `model`; `config_hash` identifies the run that produced it.
pub fn save_checkpoint(model: &SeqModel, path: impl AsRef<Path>, config_hash: &str) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        vocab_size: model.vocab_size(),
        vocab_hash: model.vocab_hash.clone(),
        tensors: model
            .tensor_shapes()
            .into_iter()
            .map(|(name, r, c)| TensorEntry { name, shape: [r, c] })
            .collect(),
        loss_curve: model.loss_curve.clone(),
        config_hash: config_hash.to_string(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &model.params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(buf)
}

/// Reads a checkpoint, checking magic, version and tensor layout. If
/// `expected_vocab_hash` is given it must match the stored hash.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_vocab_hash: Option<&str>) -> Result<SeqModel> {
    let bytes = std::fs::read(path)?;
    let mut r = bytes.as_slice();
    if &read_exact::<8>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a sequence-model checkpoint".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(read_exact(&mut r)?) as usize;
    if header_len > r.len() {
        return Err(Error::Format("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&r[..header_len])?;
    r = &r[header_len..];
    header.config.validate()?;
    if let Some(h) = expected_vocab_hash {
        if h != header.vocab_hash {
            return Err(Error::SchemaMismatch(
                "checkpoint vocabulary does not match the tokenizer".into(),
            ));
        }
    }
    let layout = Layout::new(header.config.dims(header.vocab_size));
    let named = layout.named();
    let shapes_match = named.len() == header.tensors.len()
        && named
            .iter()
            .zip(&header.tensors)
            .all(|((n, t, _), e)| *n == e.name && [t.rows, t.cols] == e.shape);
    if !shapes_match {
        return Err(Error::Format("checkpoint tensor layout does not match its config".into()));
    }
    if r.len() != 8 * layout.total {
        return Err(Error::Format(format!(
            "checkpoint holds {} bytes of parameters, expected {}",
            r.len(),
            8 * layout.total
        )));
    }
    let params: Vec<f64> = r
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("checkpoint contains non-finite parameters".into()));
    }
    Ok(SeqModel {
        config: header.config,
        vocab_hash: header.vocab_hash,
        layout,
        params,
        loss_curve: header.loss_curve,
    })
}

/// `epoch,loss` rows; epoch 0 is the untrained model.
pub fn write_loss_curve_csv<W: Write>(model: &SeqModel, mut writer: W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(writer, "# {c}")?;
    }
    writeln!(writer, "epoch,loss")?;
    for (i, l) in model.loss_curve.iter().enumerate() {
        writeln!(writer, "{i},{l}")?;
    }
    Ok(())
}
