//! Manifests, hashing, and shared file helpers for the commands.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use uirm_core::datasets::{load_env_image_dataset, EnvImageDataset};
use uirm_core::probes::{train_probe, LinearProbe, ProbeConfig};
use uirm_core::viae::ViaeModel;

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Machine-readable run record written next to every command's outputs.
/// Contains no timestamps so reruns are bit-identical.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub toolkit_version: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config_json: &str) -> Self {
        Manifest {
            command: command.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: sha256_hex(config_json.as_bytes()),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> &mut Self {
        self.inputs.push(path.as_ref().display().to_string());
        self
    }

    pub fn output(&mut self, path: impl AsRef<Path>) -> &mut Self {
        self.outputs.push(path.as_ref().display().to_string());
        self
    }

    pub fn write(&mut self, out_dir: &Path) -> Result<(), CliError> {
        self.inputs.sort();
        self.outputs.sort();
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::config(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::config(format!("cannot write manifest: {e}")))?;
        Ok(())
    }
}

pub fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", path.display())))
}

/// Loads the training-environment datasets (env 0 and 1) from a built
/// dataset directory.
pub fn load_train_envs(data_dir: &Path) -> Result<Vec<EnvImageDataset>, CliError> {
    Ok(vec![
        load_env_image_dataset(data_dir, 0)?,
        load_env_image_dataset(data_dir, 1)?,
    ])
}

/// Model training slice plus the held-out probe-test slice of one
/// environment dataset.
pub fn train_and_probe_slices(
    dataset: &EnvImageDataset,
    train_per_env: usize,
    probe_test_per_env: usize,
) -> Result<(EnvImageDataset, EnvImageDataset), CliError> {
    let need = train_per_env + probe_test_per_env;
    if dataset.n() < need {
        return Err(CliError::config(format!(
            "environment {} has {} images but the protocol needs {need}",
            dataset.env,
            dataset.n()
        )));
    }
    let train = dataset.slice(0..train_per_env)?;
    let probe = dataset.slice(train_per_env..need)?;
    Ok((train, probe))
}

/// The vanilla-pixel digit probe used to score digit retention: multinomial
/// logistic regression on raw single-channel pixels of marker-free images.
pub struct DigitPixelProbe {
    probe: LinearProbe,
}

impl DigitPixelProbe {
    pub fn train(images: &nalgebra::DMatrix<f64>, labels: &[u8]) -> Result<Self, CliError> {
        let targets: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let config = ProbeConfig {
            max_epochs: 400,
            ..ProbeConfig::default()
        };
        let probe = train_probe(images, &targets, 10, &config)?;
        Ok(DigitPixelProbe { probe })
    }

    /// Predicts digits; multi-channel images are collapsed to one channel by
    /// summing (each dataset writes the digit into a single channel).
    pub fn predict(&self, images: &nalgebra::DMatrix<f64>, channels: usize) -> Result<Vec<usize>, CliError> {
        let collapsed = collapse_channels(images, channels);
        Ok(self.probe.predict(&collapsed)?)
    }
}

pub fn collapse_channels(images: &nalgebra::DMatrix<f64>, channels: usize) -> nalgebra::DMatrix<f64> {
    if channels == 1 {
        return images.clone();
    }
    let pixels = images.ncols() / channels;
    nalgebra::DMatrix::from_fn(images.nrows(), pixels, |i, p| {
        (0..channels).map(|c| images[(i, c * pixels + p)]).sum()
    })
}

/// First `n` rows of a dataset as model input.
pub fn head_images(dataset: &EnvImageDataset, n: usize) -> Result<EnvImageDataset, CliError> {
    if dataset.n() < n {
        return Err(CliError::config(format!(
            "requested {n} images but environment {} has only {}",
            dataset.env,
            dataset.n()
        )));
    }
    Ok(dataset.slice(0..n)?)
}

/// Rows of a flat image matrix as [`uirm_core::datasets::Image`]s.
pub fn rows_to_images(
    data: &nalgebra::DMatrix<f64>,
    channels: usize,
) -> Result<Vec<uirm_core::datasets::Image>, CliError> {
    use uirm_core::datasets::{Image, IMAGE_SIDE};
    let mut out = Vec::with_capacity(data.nrows());
    for i in 0..data.nrows() {
        let row: Vec<f64> = data.row(i).iter().cloned().collect();
        // Clamp tiny negative/overshoot values from the gaussian decoder so
        // quantization stays in range.
        let row = row.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        out.push(Image::new(channels, IMAGE_SIDE, IMAGE_SIDE, row)?);
    }
    Ok(out)
}

/// Writes the checkpoint path used by the training and evaluation commands.
pub fn model_path(dir: &Path) -> PathBuf {
    dir.join("model.uirm")
}

pub fn load_model(path: &Path) -> Result<ViaeModel, CliError> {
    Ok(uirm_core::viae::load_checkpoint(path)?)
}
