//! Linear-Gaussian multi-environment data simulator.
//!
//! Each environment `e` draws observations
//!
//! ```text
//! X = mean(e) + A_inv · Z_inv + A_env · Z_env + noise
//! Z_inv ~ N(0, I)            shared across environments
//! Z_env ~ N(0, var(e) · I)   environment-specific scale
//! noise ~ N(0, noise_var · I)
//! ```
//!
//! The invariant mixing matrix `A_inv` is shared by every environment; only
//! the mean and the environmental latent variance move with `e`. Population
//! covariances are available in closed form for analytic cross-checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Parameters of the linear-Gaussian generative model.
#[derive(Debug, Clone)]
pub struct ScmParams {
    env_means: Vec<DVector<f64>>,
    a_inv: DMatrix<f64>,
    a_env: DMatrix<f64>,
    env_vars: Vec<f64>,
    noise_var: f64,
}

impl ScmParams {
    /// Validates and stores the model parameters.
    ///
    /// Requires at least two environments, one mean and one strictly positive
    /// environmental variance per environment, matching row counts between
    /// means and both mixing matrices, and non-negative noise variance.
    pub fn new(
        env_means: Vec<DVector<f64>>,
        a_inv: DMatrix<f64>,
        a_env: DMatrix<f64>,
        env_vars: Vec<f64>,
        noise_var: f64,
    ) -> Result<Self> {
        if env_means.len() < 2 {
            return Err(Error::domain(format!(
                "need at least 2 environments, got {}",
                env_means.len()
            )));
        }
        if env_means.len() != env_vars.len() {
            return Err(Error::dim(format!(
                "{} environment means but {} environment variances",
                env_means.len(),
                env_vars.len()
            )));
        }
        let dim = a_inv.nrows();
        if a_env.nrows() != dim {
            return Err(Error::dim(format!(
                "a_inv has {} rows but a_env has {}",
                dim,
                a_env.nrows()
            )));
        }
        for (e, mean) in env_means.iter().enumerate() {
            if mean.len() != dim {
                return Err(Error::dim(format!(
                    "environment {e} mean has length {} but data dimension is {dim}",
                    mean.len()
                )));
            }
        }
        for (e, &v) in env_vars.iter().enumerate() {
            if !(v > 0.0) {
                return Err(Error::domain(format!(
                    "environment {e} variance must be strictly positive, got {v}"
                )));
            }
        }
        if !(noise_var >= 0.0) {
            return Err(Error::domain(format!(
                "noise variance must be non-negative, got {noise_var}"
            )));
        }
        Ok(ScmParams {
            env_means,
            a_inv,
            a_env,
            env_vars,
            noise_var,
        })
    }

    /// The toolkit's default two-environment demonstration model:
    /// three-dimensional data, scalar invariant and environmental latents,
    /// a mean shift of 5 in the third coordinate of environment 1, and
    /// environmental variances 10 vs 2 over noise variance 0.025.
    pub fn default_two_env() -> Self {
        ScmParams::new(
            vec![
                DVector::from_vec(vec![0.0, 0.0, 0.0]),
                DVector::from_vec(vec![0.0, 0.0, 5.0]),
            ],
            DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]),
            DMatrix::from_column_slice(3, 1, &[1.0, 1.0, -1.0]),
            vec![10.0, 2.0],
            0.025,
        )
        .expect("default parameters are valid")
    }

    pub fn n_envs(&self) -> usize {
        self.env_means.len()
    }

    /// Data dimension D.
    pub fn dim(&self) -> usize {
        self.a_inv.nrows()
    }

    pub fn d_inv(&self) -> usize {
        self.a_inv.ncols()
    }

    pub fn d_env(&self) -> usize {
        self.a_env.ncols()
    }

    pub fn env_mean(&self, env: usize) -> Result<&DVector<f64>> {
        self.env_means.get(env).ok_or(Error::InvalidEnv {
            env,
            count: self.n_envs(),
        })
    }

    pub fn env_var(&self, env: usize) -> Result<f64> {
        self.env_vars.get(env).copied().ok_or(Error::InvalidEnv {
            env,
            count: self.n_envs(),
        })
    }

    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn a_env(&self) -> &DMatrix<f64> {
        &self.a_env
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }
}

/// A matrix of samples with per-row environment tags and optional class
/// labels. The universal data carrier between modules.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub data: DMatrix<f64>,
    pub env: Vec<usize>,
    pub labels: Option<Vec<u8>>,
}

impl LabeledBatch {
    pub fn new(data: DMatrix<f64>, env: Vec<usize>, labels: Option<Vec<u8>>) -> Result<Self> {
        if env.len() != data.nrows() {
            return Err(Error::dim(format!(
                "{} rows but {} environment tags",
                data.nrows(),
                env.len()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != data.nrows() {
                return Err(Error::dim(format!(
                    "{} rows but {} labels",
                    data.nrows(),
                    labels.len()
                )));
            }
        }
        Ok(LabeledBatch { data, env, labels })
    }

    /// Batch where every row shares one environment tag.
    pub fn homogeneous(data: DMatrix<f64>, env: usize) -> Self {
        let n = data.nrows();
        LabeledBatch {
            data,
            env: vec![env; n],
            labels: None,
        }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Distinct environment tags present, in increasing order.
    pub fn env_set(&self) -> Vec<usize> {
        let mut set: Vec<usize> = self.env.clone();
        set.sort_unstable();
        set.dedup();
        set
    }

    /// Validates that all tags lie below `count`.
    pub fn check_envs(&self, count: usize) -> Result<()> {
        for &e in &self.env {
            if e >= count {
                return Err(Error::InvalidEnv { env: e, count });
            }
        }
        Ok(())
    }
}

/// Samples plus the ground-truth latents that generated them, row-aligned.
#[derive(Debug, Clone)]
pub struct ScmSample {
    pub batch: LabeledBatch,
    pub z_inv: DMatrix<f64>,
    pub z_env: DMatrix<f64>,
}

/// Draws `n` samples from environment `env`.
///
/// Per row the draw order is fixed: invariant latent coordinates, then
/// environmental latents, then observation noise. Latents are returned
/// row-aligned with the samples so diagnostics can use ground truth.
pub fn scm_sample(params: &ScmParams, env: usize, n: usize, rng: &mut Rng) -> Result<ScmSample> {
    if n == 0 {
        return Err(Error::domain("cannot sample an empty batch (n = 0)"));
    }
    let mean = params.env_mean(env)?.clone();
    let env_sd = params.env_var(env)?.sqrt();
    let noise_sd = params.noise_var.sqrt();
    let (dim, d_inv, d_env) = (params.dim(), params.d_inv(), params.d_env());

    let mut z_inv = DMatrix::zeros(n, d_inv);
    let mut z_env = DMatrix::zeros(n, d_env);
    let mut noise = DMatrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..d_inv {
            z_inv[(i, j)] = rng.normal();
        }
        for j in 0..d_env {
            z_env[(i, j)] = env_sd * rng.normal();
        }
        for j in 0..dim {
            noise[(i, j)] = noise_sd * rng.normal();
        }
    }

    let mut data = &z_inv * params.a_inv.transpose() + &z_env * params.a_env.transpose() + noise;
    for i in 0..n {
        for j in 0..dim {
            data[(i, j)] += mean[j];
        }
    }

    Ok(ScmSample {
        batch: LabeledBatch::homogeneous(data, env),
        z_inv,
        z_env,
    })
}

/// Closed-form population covariance of environment `env`:
/// `A_inv A_invᵀ + var(env) · A_env A_envᵀ + noise_var · I`. No sampling.
pub fn scm_population_covariance(params: &ScmParams, env: usize) -> Result<DMatrix<f64>> {
    let var = params.env_var(env)?;
    let dim = params.dim();
    let mut cov = &params.a_inv * params.a_inv.transpose() + (&params.a_env * params.a_env.transpose()) * var;
    for i in 0..dim {
        cov[(i, i)] += params.noise_var;
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_norm;

    fn degenerate_params(mean: Vec<f64>) -> ScmParams {
        let d = mean.len();
        ScmParams::new(
            vec![DVector::from_vec(mean.clone()), DVector::from_vec(mean)],
            DMatrix::zeros(d, 1),
            DMatrix::zeros(d, 1),
            vec![1.0, 2.0],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_model_returns_the_mean() {
        let params = degenerate_params(vec![1.0, 2.0, 3.0]);
        let mut rng = Rng::seed_from_u64(0);
        let sample = scm_sample(&params, 0, 16, &mut rng).unwrap();
        for i in 0..16 {
            assert_eq!(sample.batch.data[(i, 0)], 1.0);
            assert_eq!(sample.batch.data[(i, 1)], 2.0);
            assert_eq!(sample.batch.data[(i, 2)], 3.0);
        }
    }

    #[test]
    fn invalid_env_and_zero_n_are_domain_errors() {
        let params = ScmParams::default_two_env();
        let mut rng = Rng::seed_from_u64(0);
        assert!(matches!(
            scm_sample(&params, 5, 10, &mut rng),
            Err(Error::InvalidEnv { env: 5, count: 2 })
        ));
        assert!(matches!(
            scm_sample(&params, 0, 0, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            scm_population_covariance(&params, 9),
            Err(Error::InvalidEnv { env: 9, count: 2 })
        ));
    }

    #[test]
    fn mean_shift_recovered_in_second_environment() {
        // Third coordinate of environment 1 is centered at 5; the sample mean
        // should land within four standard errors.
        let params = ScmParams::default_two_env();
        let mut rng = Rng::seed_from_u64(42);
        let n = 1000;
        let sample = scm_sample(&params, 1, n, &mut rng).unwrap();
        let cov = scm_population_covariance(&params, 1).unwrap();
        let mean3 = sample.batch.data.column(2).sum() / n as f64;
        let tol = 4.0 * (cov[(2, 2)] / n as f64).sqrt();
        assert!(
            (mean3 - 5.0).abs() < tol,
            "third-coordinate mean {mean3}, tolerance {tol}"
        );
    }

    #[test]
    fn empirical_covariance_entry_matches_hand_evaluation() {
        // Hand evaluation of the population covariance for environment 0:
        // entry (0,0) of A_inv A_invᵀ + 10 A_env A_envᵀ + 0.025 I is
        // 1 + 10 + 0.025 = 11.025.
        let params = ScmParams::default_two_env();
        let mut rng = Rng::seed_from_u64(7);
        let n = 10_000;
        let sample = scm_sample(&params, 0, n, &mut rng).unwrap();
        let data = &sample.batch.data;
        let mean0 = data.column(0).sum() / n as f64;
        let var0 = data
            .column(0)
            .iter()
            .map(|x| (x - mean0).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!(
            (var0 - 11.025).abs() / 11.025 < 0.05,
            "empirical variance {var0} vs analytic 11.025"
        );
    }

    #[test]
    fn population_covariance_closed_form() {
        // Noise-only model gives the identity.
        let d = 4;
        let params = ScmParams::new(
            vec![DVector::zeros(d), DVector::zeros(d)],
            DMatrix::zeros(d, 1),
            DMatrix::zeros(d, 1),
            vec![1.0, 2.0],
            1.0,
        )
        .unwrap();
        let cov = scm_population_covariance(&params, 0).unwrap();
        assert_eq!(cov, DMatrix::identity(d, d));

        // Hand evaluation with A_inv=[1,1,1]ᵀ, A_env=[1,1,-1]ᵀ:
        // entry (0,2) of Σ⁰ is 1·1 + 10·(1·(-1)) = -9.
        let params = ScmParams::default_two_env();
        let cov0 = scm_population_covariance(&params, 0).unwrap();
        assert_eq!(cov0[(0, 2)], -9.0);

        // Σ⁰ − Σ¹ = (10−2)·A_env A_envᵀ, so entry (0,0) is 8.
        let cov1 = scm_population_covariance(&params, 1).unwrap();
        let diff = &cov0 - &cov1;
        assert!((diff[(0, 0)] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_covariance_converges_to_population() {
        let params = ScmParams::default_two_env();
        let mut rng = Rng::seed_from_u64(2024);
        let n = 100_000;
        let sample = scm_sample(&params, 0, n, &mut rng).unwrap();
        let data = &sample.batch.data;
        let mean = crate::linalg::row_mean(data);
        let mut centered = data.clone();
        for i in 0..n {
            for j in 0..data.ncols() {
                centered[(i, j)] -= mean[j];
            }
        }
        let emp = centered.transpose() * &centered / n as f64;
        let pop = scm_population_covariance(&params, 0).unwrap();
        let rel = frobenius_norm(&(&emp - &pop)) / frobenius_norm(&pop);
        assert!(rel < 0.02, "relative Frobenius error {rel}");
    }

    #[test]
    fn identical_seeds_give_identical_samples() {
        let params = ScmParams::default_two_env();
        let a = scm_sample(&params, 0, 64, &mut Rng::seed_from_u64(5)).unwrap();
        let b = scm_sample(&params, 0, 64, &mut Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.batch.data, b.batch.data);
        assert_eq!(a.z_inv, b.z_inv);
        assert_eq!(a.z_env, b.z_env);
    }

    #[test]
    fn invariant_latents_identically_distributed_across_envs() {
        let params = ScmParams::default_two_env();
        let mut rng = Rng::seed_from_u64(99);
        let n = 100_000;
        let s0 = scm_sample(&params, 0, n, &mut rng).unwrap();
        let s1 = scm_sample(&params, 1, n, &mut rng).unwrap();
        for j in 0..params.d_inv() {
            let m0 = s0.z_inv.column(j).sum() / n as f64;
            let m1 = s1.z_inv.column(j).sum() / n as f64;
            let v0 = s0.z_inv.column(j).iter().map(|x| (x - m0).powi(2)).sum::<f64>() / n as f64;
            let v1 = s1.z_inv.column(j).iter().map(|x| (x - m1).powi(2)).sum::<f64>() / n as f64;
            // Means hover near zero; compare on the unit latent scale.
            assert!((m0 - m1).abs() < 0.05, "means {m0} vs {m1}");
            assert!((v0 - v1).abs() / v0.max(v1) < 0.05, "variances {v0} vs {v1}");
        }
    }

    #[test]
    fn batch_validation() {
        let data = DMatrix::zeros(3, 2);
        assert!(LabeledBatch::new(data.clone(), vec![0, 1], None).is_err());
        assert!(LabeledBatch::new(data.clone(), vec![0, 1, 0], Some(vec![1])).is_err());
        let batch = LabeledBatch::new(data, vec![0, 1, 0], None).unwrap();
        assert_eq!(batch.env_set(), vec![0, 1]);
        assert!(batch.check_envs(2).is_ok());
        assert!(batch.check_envs(1).is_err());
    }
}
