//! Tensor container: `GLSOCKPT`, a little-endian u32 manifest length, a JSON
//! manifest (format version, caller header, tensor names, shapes and byte
//! offsets), then every tensor as little-endian f32.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::NnError;

const MAGIC: &[u8; 8] = b"GLSOCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub header: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_container<W: Write>(
    mut w: W,
    header: serde_json::Value,
    params: &ParamSet<f32>,
) -> Result<(), NnError> {
    let mut offset = 0;
    let tensors = params
        .tensors()
        .iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
                len: t.data.len(),
            };
            offset += 4 * t.data.len();
            e
        })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        header,
        tensors,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(offset);
    for t in params.tensors() {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<(Manifest, ParamSet<f32>), NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let manifest: Manifest =
        serde_json::from_slice(&json).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut params = ParamSet::new();
    for e in &manifest.tensors {
        let end = e.offset + 4 * e.len;
        if end > data.len() || e.shape.iter().product::<usize>() != e.len {
            return Err(NnError::Checkpoint(format!("tensor {} out of bounds", e.name)));
        }
        let values = data[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(e.name.clone(), e.shape.clone(), values);
    }
    Ok((manifest, params))
}
