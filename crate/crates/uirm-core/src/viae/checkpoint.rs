//! Model checkpoints: one tensor-container file holding the full parameter
//! vector, with the configuration and input dimension carried as metadata.

use std::path::Path;

use crate::datasets::tensor_io::{read_tensor, write_tensor, Metadata, Tensor, TensorData};
use crate::error::{Error, Result};

use super::{ViaeConfig, ViaeModel};

const FORMAT: &str = "viae-checkpoint";
const FORMAT_VERSION: &str = "1";

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ViaeModel) -> Result<()> {
    let tensor = Tensor::new(
        vec![model.param_len()],
        TensorData::F64(model.params().to_vec()),
    )?;
    let mut meta = Metadata::new();
    meta.insert("format".into(), FORMAT.into());
    meta.insert("format_version".into(), FORMAT_VERSION.into());
    meta.insert("input_dim".into(), model.input_dim().to_string());
    let config = serde_json::to_string(model.config())
        .map_err(|e| Error::domain(format!("config serialization failed: {e}")))?;
    meta.insert("config".into(), config);
    write_tensor(path, &tensor, &meta)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ViaeModel> {
    let (tensor, meta) = read_tensor(path)?;
    let format = meta.get("format").map(String::as_str);
    if format != Some(FORMAT) {
        return Err(Error::domain(format!(
            "not a model checkpoint (format {format:?})"
        )));
    }
    if meta.get("format_version").map(String::as_str) != Some(FORMAT_VERSION) {
        return Err(Error::domain(format!(
            "unsupported checkpoint version {:?}",
            meta.get("format_version")
        )));
    }
    let input_dim: usize = meta
        .get("input_dim")
        .ok_or_else(|| Error::domain("checkpoint missing input_dim"))?
        .parse()
        .map_err(|e| Error::domain(format!("bad input_dim: {e}")))?;
    let config: ViaeConfig = serde_json::from_str(
        meta.get("config")
            .ok_or_else(|| Error::domain("checkpoint missing config"))?,
    )
    .map_err(|e| Error::domain(format!("bad checkpoint config: {e}")))?;
    let params = tensor.f64_slice()?.to_vec();
    ViaeModel::from_parts(config, input_dim, params)
}
