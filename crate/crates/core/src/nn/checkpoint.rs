//! Checkpoint container.
//!
//! Layout:
//!
//! ```text
//! "KGCAP1\n"                      7 bytes
//! header length                   u64 little-endian
//! header                          UTF-8 JSON
//! tensor data                     f64 little-endian, in header order
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::model::{CaptionModel, ModelDims, ModelKind};
use crate::dataset::{VocabEntry, Vocabulary};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"KGCAP1\n";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    mode: String,
    dims: ModelDims,
    num_params: usize,
    vocabulary: Vec<VocabEntry>,
    tensors: Vec<TensorInfo>,
}

pub fn save<W: Write>(model: &CaptionModel, mut sink: W) -> Result<()> {
    let params = &model.params;
    let header = Header {
        format: "KGCAP1".into(),
        version: VERSION,
        mode: model.kind.tag().into(),
        dims: model.dims.clone(),
        num_params: params.num_params(),
        vocabulary: model.vocab.entries(),
        tensors: params
            .names()
            .into_iter()
            .zip(params.tensors())
            .map(|(name, t)| TensorInfo {
                name,
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    sink.write_all(MAGIC)?;
    sink.write_all(&(json.len() as u64).to_le_bytes())?;
    sink.write_all(&json)?;
    let mut buf = Vec::with_capacity(params.num_params() * 8);
    for t in params.tensors() {
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(())
}

pub fn load<R: Read>(mut source: R) -> Result<CaptionModel> {
    let mut magic = [0u8; 7];
    source.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::invalid("not a KGCAP1 checkpoint"));
    }
    let mut len = [0u8; 8];
    source.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    source.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.version != VERSION {
        return Err(Error::invalid(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let kind = ModelKind::from_tag(&header.mode)?;
    let vocab = Vocabulary::from_entries(&header.vocabulary)?;
    let mut model = CaptionModel::zeros(kind, header.dims, vocab);
    let names = model.params.names();
    if names.len() != header.tensors.len() {
        return Err(Error::invalid("checkpoint tensor list does not match its mode"));
    }
    for ((info, name), t) in header.tensors.iter().zip(&names).zip(model.params.tensors_mut()) {
        if &info.name != name || (info.rows, info.cols) != t.shape() {
            return Err(Error::invalid(format!(
                "tensor `{}` ({}x{}) does not match expected `{name}` {:?}",
                info.name,
                info.rows,
                info.cols,
                t.shape()
            )));
        }
        let mut bytes = vec![0u8; t.data().len() * 8];
        source.read_exact(&mut bytes)?;
        for (x, chunk) in t.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    let mut rest = Vec::new();
    source.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::invalid("trailing bytes after checkpoint data"));
    }
    Ok(model)
}
