//! Run configuration: one JSON document with a section per module, strict
//! schema (unknown keys rejected), every field defaulted except the seed,
//! which stochastic commands require.

use serde::{Deserialize, Serialize};
use uirm_core::viae::{ReconLikelihood, ViaeConfig};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; mandatory for any stochastic command.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scm: ScmSection,
    #[serde(default)]
    pub pica: PicaSection,
    #[serde(default)]
    pub ppica: PpicaSection,
    #[serde(default)]
    pub viae: ViaeSection,
    #[serde(default)]
    pub datasets: DatasetsSection,
    #[serde(default)]
    pub probes: ProbesSection,
    #[serde(default)]
    pub transfer: TransferSection,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("bad config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&std::path::Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    /// The seed, or the uniform missing-seed config error.
    pub fn require_seed(&self, override_seed: Option<u64>) -> Result<u64, CliError> {
        override_seed.or(self.seed).ok_or_else(|| {
            CliError::config("this command is stochastic: set \"seed\" in the config or pass --seed")
        })
    }

    /// Canonical JSON used for hashing into the manifest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Synthetic linear-Gaussian generator section. The defaults are the
/// toolkit's standard two-environment demonstration model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmSection {
    pub env_means: Vec<Vec<f64>>,
    /// D×d_inv mixing matrix, row per data dimension.
    pub a_inv: Vec<Vec<f64>>,
    /// D×d_e mixing matrix, row per data dimension.
    pub a_env: Vec<Vec<f64>>,
    pub env_vars: Vec<f64>,
    pub noise_var: f64,
    pub n_per_env: usize,
}

impl Default for ScmSection {
    fn default() -> Self {
        ScmSection {
            env_means: vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 5.0]],
            a_inv: vec![vec![1.0], vec![1.0], vec![1.0]],
            a_env: vec![vec![1.0], vec![1.0], vec![-1.0]],
            env_vars: vec![10.0, 2.0],
            noise_var: 0.025,
            n_per_env: 1000,
        }
    }
}

impl ScmSection {
    pub fn to_params(&self) -> Result<uirm_core::scm::ScmParams, CliError> {
        let means = self
            .env_means
            .iter()
            .map(|m| nalgebra::DVector::from_vec(m.clone()))
            .collect();
        let a_inv = rows_to_matrix(&self.a_inv, "scm.a_inv")?;
        let a_env = rows_to_matrix(&self.a_env, "scm.a_env")?;
        uirm_core::scm::ScmParams::new(means, a_inv, a_env, self.env_vars.clone(), self.noise_var)
            .map_err(CliError::from)
    }
}

pub fn rows_to_matrix(
    rows: &[Vec<f64>],
    what: &str,
) -> Result<nalgebra::DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Err(CliError::config(format!("{what} is empty")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::config(format!("{what} rows have uneven lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(nalgebra::DMatrix::from_row_slice(rows.len(), cols, &flat))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicaSection {
    pub d_r: usize,
    /// Kernel tolerance for empirical covariances.
    pub tol: f64,
}

impl Default for PicaSection {
    fn default() -> Self {
        PicaSection {
            d_r: 1,
            tol: uirm_core::pica::KERNEL_TOL_EMPIRICAL,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpicaSection {
    pub d: usize,
    /// Override for the second environment's latent variance; the trace
    /// ratio is used when absent.
    #[serde(default)]
    pub sigma2_env2: Option<f64>,
}

impl Default for PpicaSection {
    fn default() -> Self {
        PpicaSection {
            d: 1,
            sigma2_env2: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViaeSection {
    pub d_inv: usize,
    pub d_e: usize,
    pub prior_magnitude: f64,
    pub env_hidden: usize,
    pub inv_hidden: usize,
    pub dec_hidden: usize,
    /// "bernoulli" or "gaussian".
    pub recon: String,
    pub gaussian_sigma2: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ViaeSection {
    fn default() -> Self {
        ViaeSection {
            d_inv: 16,
            d_e: 4,
            prior_magnitude: 3.0,
            env_hidden: 256,
            inv_hidden: 256,
            dec_hidden: 256,
            recon: "bernoulli".into(),
            gaussian_sigma2: 1.0,
            lr: 1e-3,
            batch_size: 128,
            epochs: 10,
        }
    }
}

impl ViaeSection {
    pub fn to_config(&self, n_envs: usize, seed: u64) -> Result<ViaeConfig, CliError> {
        let recon = match self.recon.as_str() {
            "bernoulli" => ReconLikelihood::Bernoulli,
            "gaussian" => ReconLikelihood::GaussianFixedVariance {
                sigma2: self.gaussian_sigma2,
            },
            other => {
                return Err(CliError::config(format!(
                    "viae.recon must be \"bernoulli\" or \"gaussian\", got {other:?}"
                )));
            }
        };
        if self.d_e < n_envs {
            return Err(CliError::config(format!(
                "viae.d_e = {} cannot hold one-hot prior means for {n_envs} environments",
                self.d_e
            )));
        }
        Ok(ViaeConfig {
            d_inv: self.d_inv,
            d_e: self.d_e,
            prior_means: ViaeConfig::one_hot_prior_means(n_envs, self.d_e, self.prior_magnitude),
            env_hidden: self.env_hidden,
            inv_hidden: self.inv_hidden,
            dec_hidden: self.dec_hidden,
            recon,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetsSection {
    /// Images per training environment used for model training.
    pub train_per_env: usize,
    /// Held-out images per training environment used as probe test data.
    pub probe_test_per_env: usize,
    /// Vanilla MNIST images reserved for the pixel digit probe.
    pub vanilla_probe_images: usize,
}

impl Default for DatasetsSection {
    fn default() -> Self {
        DatasetsSection {
            train_per_env: 2000,
            probe_test_per_env: 1000,
            vanilla_probe_images: 5000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbesSection {
    pub ridge: f64,
    pub max_epochs: usize,
    pub repeats: usize,
    /// Independent model trainings in the reproduction protocol.
    pub n_runs: usize,
}

impl Default for ProbesSection {
    fn default() -> Self {
        ProbesSection {
            ridge: 1e-4,
            max_epochs: 2000,
            repeats: 1,
            n_runs: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    /// Images transferred per request.
    pub n: usize,
    pub deterministic: bool,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection {
            n: 64,
            deterministic: true,
        }
    }
}
