use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{read_container, write_container, NnError};

use super::{GraphVae, TrainingConfig, VaeConfig, VaeError};

/// Metadata stored in front of the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub d_latent: usize,
    pub t_mp: usize,
    pub grammar_hash: String,
    pub model: VaeConfig,
    pub training: Option<TrainingConfig>,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &GraphVae<f32>,
    header: &CheckpointHeader,
) -> Result<(), VaeError> {
    let mut w = BufWriter::new(File::create(path)?);
    let value = serde_json::to_value(header)
        .map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
    write_container(&mut w, value, &model.params)?;
    w.flush()?;
    Ok(())
}

/// Rebuilds the model described by the header and loads its tensors.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(GraphVae<f32>, CheckpointHeader), VaeError> {
    let r = BufReader::new(File::open(path)?);
    let (manifest, params) = read_container(r)?;
    let header: CheckpointHeader = serde_json::from_value(manifest.header)
        .map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
    if header.d_latent != header.model.d_latent || header.t_mp != header.model.t_mp {
        return Err(NnError::Checkpoint("header sizes disagree".into()).into());
    }
    let mut model = GraphVae::new(header.model, 0);
    model.params.load_from(&params)?;
    Ok((model, header))
}
