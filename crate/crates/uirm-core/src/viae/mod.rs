//! Variational autoencoder with an environment-factorized latent space.
//!
//! The latent space splits into an invariant block `z_inv` and an
//! environmental block `z_e`. One gaussian-head encoder per training
//! environment produces `z_e` from the data; a single shared invariant
//! encoder produces `z_inv` from the concatenation `[x, z_e]` (conditioning
//! on `z_e` because the two latents become dependent given the observation);
//! a single decoder reconstructs from `[z_inv, z_e]` and never sees an
//! environment tag. Priors: `z_inv ~ N(0, I)` everywhere, and
//! `z_e ~ N(prior_mean(e), I)` with mutually orthogonal per-environment
//! prior means, which is what makes prior-conditioned generation and
//! environment transfer possible.
//!
//! Training maximizes the per-sample evidence lower bound
//!
//! ```text
//! elbo = recon − KL(q(z_e|x) ‖ N(μᵖ(e), I)) − KL(q(z_inv|z_e,x) ‖ N(0, I))
//! ```
//!
//! with a single reparameterized sample for each latent block, minibatch
//! ascent, and environments interleaved round-robin per step.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nn::{
    self, backward, forward_cached, init_params, Loss, LossValue, MlpSpec, OutputGrad, OutputHead,
};
use crate::rng::Rng;
use crate::scm::LabeledBatch;

/// Reconstruction mean clamp under the bernoulli likelihood.
const BERNOULLI_CLAMP: f64 = 1e-6;

/// Reconstruction likelihood of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReconLikelihood {
    /// Cross-entropy on pixels in [0, 1]; the decoder output is passed
    /// through a logistic and clamped to [1e-6, 1−1e-6].
    Bernoulli,
    /// Isotropic gaussian with fixed variance; the decoder output is the
    /// mean.
    GaussianFixedVariance { sigma2: f64 },
}

/// Everything needed to build and train a model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ViaeConfig {
    pub d_inv: usize,
    pub d_e: usize,
    /// One prior mean per training environment, each of length `d_e`,
    /// mutually orthogonal (dot products exactly zero).
    pub prior_means: Vec<Vec<f64>>,
    pub env_hidden: usize,
    pub inv_hidden: usize,
    pub dec_hidden: usize,
    pub recon: ReconLikelihood,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl ViaeConfig {
    /// Defaults for image data: d_inv 16, d_e 4, hidden 256 everywhere,
    /// bernoulli likelihood, one-hot prior means of magnitude 3.
    pub fn default_image(n_envs: usize) -> Self {
        ViaeConfig {
            d_inv: 16,
            d_e: 4,
            prior_means: Self::one_hot_prior_means(n_envs, 4, 3.0),
            env_hidden: 256,
            inv_hidden: 256,
            dec_hidden: 256,
            recon: ReconLikelihood::Bernoulli,
            lr: 1e-3,
            batch_size: 128,
            epochs: 10,
            seed: 0,
        }
    }

    /// Orthogonal prior means: magnitude · one-hot at the environment index.
    pub fn one_hot_prior_means(n_envs: usize, d_e: usize, magnitude: f64) -> Vec<Vec<f64>> {
        assert!(d_e >= n_envs, "one-hot prior means need d_e >= n_envs");
        (0..n_envs)
            .map(|e| {
                let mut m = vec![0.0; d_e];
                m[e] = magnitude;
                m
            })
            .collect()
    }

    pub fn n_envs(&self) -> usize {
        self.prior_means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_inv == 0 || self.d_e == 0 {
            return Err(Error::domain("d_inv and d_e must be at least 1"));
        }
        if self.prior_means.is_empty() {
            return Err(Error::domain("at least one prior mean is required"));
        }
        for (e, m) in self.prior_means.iter().enumerate() {
            if m.len() != self.d_e {
                return Err(Error::dim(format!(
                    "prior mean {e} has length {} but d_e is {}",
                    m.len(),
                    self.d_e
                )));
            }
        }
        for i in 0..self.prior_means.len() {
            for j in (i + 1)..self.prior_means.len() {
                let dot: f64 = self.prior_means[i]
                    .iter()
                    .zip(&self.prior_means[j])
                    .map(|(a, b)| a * b)
                    .sum();
                if dot != 0.0 {
                    return Err(Error::domain(format!(
                        "prior means {i} and {j} are not orthogonal (dot {dot})"
                    )));
                }
            }
        }
        if self.env_hidden == 0 || self.inv_hidden == 0 || self.dec_hidden == 0 {
            return Err(Error::domain("hidden widths must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::domain(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be at least 1"));
        }
        if let ReconLikelihood::GaussianFixedVariance { sigma2 } = self.recon {
            if !(sigma2 > 0.0) {
                return Err(Error::domain(format!(
                    "gaussian likelihood variance must be positive, got {sigma2}"
                )));
            }
        }
        Ok(())
    }

    fn prior_mean_vec(&self, env: usize) -> DVector<f64> {
        DVector::from_vec(self.prior_means[env].clone())
    }
}

/// Per-batch evidence lower bound pieces (means per sample).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// Expected reconstruction log-likelihood.
    pub recon: f64,
    /// KL of the environmental posterior against its environment prior.
    pub kl_env: f64,
    /// KL of the invariant posterior against the standard prior, at the
    /// sampled z_e.
    pub kl_inv: f64,
    /// recon − kl_env − kl_inv, exactly.
    pub total: f64,
}

impl ElboTerms {
    fn of(recon: f64, kl_env: f64, kl_inv: f64) -> Self {
        ElboTerms {
            recon,
            kl_env,
            kl_inv,
            total: recon - kl_env - kl_inv,
        }
    }

    /// Componentwise mean, with `total` recomputed from the identity.
    pub fn mean_of(terms: &[ElboTerms]) -> ElboTerms {
        let n = terms.len().max(1) as f64;
        let recon = terms.iter().map(|t| t.recon).sum::<f64>() / n;
        let kl_env = terms.iter().map(|t| t.kl_env).sum::<f64>() / n;
        let kl_inv = terms.iter().map(|t| t.kl_inv).sum::<f64>() / n;
        ElboTerms::of(recon, kl_env, kl_inv)
    }
}

/// KL(N(μ, diag(exp(logvar))) ‖ N(prior_mean, I)) for diagonal gaussians:
/// (1/2) Σᵢ [exp(logvarᵢ) + (μᵢ − μᵖᵢ)² − 1 − logvarᵢ].
pub fn kl_diag_gaussian(mu: &[f64], logvar: &[f64], prior_mean: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() || mu.len() != prior_mean.len() {
        return Err(Error::dim(format!(
            "kl widths disagree: {} / {} / {}",
            mu.len(),
            logvar.len(),
            prior_mean.len()
        )));
    }
    let mut acc = 0.0;
    for i in 0..mu.len() {
        let (m, lv, p) = (mu[i], logvar[i], prior_mean[i]);
        if !m.is_finite() || !lv.is_finite() || !p.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite kl input at coordinate {i}: mu {m}, logvar {lv}, prior {p}"
            )));
        }
        acc += lv.exp() + (m - p).powi(2) - 1.0 - lv;
    }
    Ok(0.5 * acc)
}

/// One encoder pass: posterior mean, log-variance, and the reparameterized
/// sample μ + exp(logvar/2)·ξ.
#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub mean: DMatrix<f64>,
    pub logvar: DMatrix<f64>,
    pub sample: DMatrix<f64>,
}

/// The trained model: per-environment encoders, the shared invariant
/// encoder, the environment-blind decoder, and one flat parameter vector
/// holding all of them.
#[derive(Debug, Clone)]
pub struct ViaeModel {
    config: ViaeConfig,
    input_dim: usize,
    env_specs: Vec<MlpSpec>,
    inv_spec: MlpSpec,
    dec_spec: MlpSpec,
    params: Vec<f64>,
}

impl ViaeModel {
    /// Freshly initialized model. Networks are initialized in a fixed
    /// order (environment encoders by index, invariant encoder, decoder)
    /// so a seed fixes the whole vector.
    pub fn init(config: ViaeConfig, input_dim: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::domain("input dimension must be positive"));
        }
        let n_envs = config.n_envs();
        let env_spec = MlpSpec::rectifier(
            &[input_dim, config.env_hidden, 2 * config.d_e],
            OutputHead::Gaussian,
        )?;
        let inv_spec = MlpSpec::rectifier(
            &[input_dim + config.d_e, config.inv_hidden, 2 * config.d_inv],
            OutputHead::Gaussian,
        )?;
        let dec_spec = MlpSpec::rectifier(
            &[config.d_inv + config.d_e, config.dec_hidden, input_dim],
            OutputHead::Plain,
        )?;

        let mut params = Vec::new();
        for _ in 0..n_envs {
            params.extend_from_slice(init_params(&env_spec, rng).as_slice());
        }
        params.extend_from_slice(init_params(&inv_spec, rng).as_slice());
        params.extend_from_slice(init_params(&dec_spec, rng).as_slice());

        Ok(ViaeModel {
            env_specs: vec![env_spec; n_envs],
            inv_spec,
            dec_spec,
            config,
            input_dim,
            params,
        })
    }

    pub(crate) fn from_parts(
        config: ViaeConfig,
        input_dim: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut model = ViaeModel::init(config, input_dim, &mut Rng::seed_from_u64(0))?;
        if params.len() != model.params.len() {
            return Err(Error::dim(format!(
                "parameter vector has length {} but the architecture needs {}",
                params.len(),
                model.params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ViaeConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_envs(&self) -> usize {
        self.config.n_envs()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn env_params_len(&self) -> usize {
        self.env_specs[0].param_count()
    }

    pub(crate) fn env_range(&self, env: usize) -> std::ops::Range<usize> {
        let len = self.env_params_len();
        env * len..(env + 1) * len
    }

    pub(crate) fn inv_range(&self) -> std::ops::Range<usize> {
        let start = self.n_envs() * self.env_params_len();
        start..start + self.inv_spec.param_count()
    }

    pub(crate) fn dec_range(&self) -> std::ops::Range<usize> {
        let start = self.n_envs() * self.env_params_len() + self.inv_spec.param_count();
        start..start + self.dec_spec.param_count()
    }

    fn check_env(&self, env: usize) -> Result<()> {
        if env >= self.n_envs() {
            return Err(Error::InvalidEnv {
                env,
                count: self.n_envs(),
            });
        }
        Ok(())
    }

    /// Reparameterized pass through environment `env`'s encoder.
    ///
    /// An unknown environment is a domain error: there is no encoder for it,
    /// which is precisely the unseen-environment limitation that
    /// [`crate::transfer::transfer_unseen`] works around.
    pub fn env_encode(&self, env: usize, x: &DMatrix<f64>, rng: &mut Rng) -> Result<EncodeOutput> {
        let (mean, logvar) = self.env_posterior(env, x)?;
        let sample = reparameterize(&mean, &logvar, rng);
        Ok(EncodeOutput {
            mean,
            logvar,
            sample,
        })
    }

    /// Posterior mean and log-variance of environment `env`'s encoder
    /// (the ξ = 0 deterministic embedding).
    pub fn env_posterior(&self, env: usize, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_env(env)?;
        let params = &self.params[self.env_range(env)];
        let (out, _) = forward_cached(&self.env_specs[env], params, x)?;
        Ok(out.gaussian())
    }

    /// Reparameterized pass through the invariant encoder on `[x, z_e]`.
    pub fn inv_encode(
        &self,
        x: &DMatrix<f64>,
        z_e: &DMatrix<f64>,
        rng: &mut Rng,
    ) -> Result<EncodeOutput> {
        let (mean, logvar) = self.inv_posterior(x, z_e)?;
        let sample = reparameterize(&mean, &logvar, rng);
        Ok(EncodeOutput {
            mean,
            logvar,
            sample,
        })
    }

    /// Posterior mean and log-variance of the invariant encoder.
    pub fn inv_posterior(
        &self,
        x: &DMatrix<f64>,
        z_e: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if z_e.ncols() != self.config.d_e {
            return Err(Error::dim(format!(
                "z_e has width {} but d_e is {}",
                z_e.ncols(),
                self.config.d_e
            )));
        }
        if z_e.nrows() != x.nrows() {
            return Err(Error::dim(format!(
                "x has {} rows but z_e has {}",
                x.nrows(),
                z_e.nrows()
            )));
        }
        let input = hcat(x, z_e);
        let params = &self.params[self.inv_range()];
        let (out, _) = forward_cached(&self.inv_spec, params, &input)?;
        Ok(out.gaussian())
    }

    /// Decodes latents to the likelihood mean. Takes no environment tag:
    /// the decoder is environment-blind by construction.
    pub fn decode(&self, z_inv: &DMatrix<f64>, z_e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z_inv.ncols() != self.config.d_inv || z_e.ncols() != self.config.d_e {
            return Err(Error::dim(format!(
                "latent widths {}x{} do not match d_inv {} / d_e {}",
                z_inv.ncols(),
                z_e.ncols(),
                self.config.d_inv,
                self.config.d_e
            )));
        }
        if z_inv.nrows() != z_e.nrows() {
            return Err(Error::dim("latent row counts differ"));
        }
        let input = hcat(z_inv, z_e);
        let params = &self.params[self.dec_range()];
        let (out, _) = forward_cached(&self.dec_spec, params, &input)?;
        let raw = out.plain();
        Ok(match self.config.recon {
            ReconLikelihood::Bernoulli => raw.map(sigmoid),
            ReconLikelihood::GaussianFixedVariance { .. } => raw,
        })
    }

    /// Single-sample ELBO of a batch from environment `env`.
    pub fn elbo(&self, x: &DMatrix<f64>, env: usize, rng: &mut Rng) -> Result<ElboTerms> {
        self.check_env(env)?;
        let xi_e = noise_matrix(x.nrows(), self.config.d_e, rng);
        let xi_i = noise_matrix(x.nrows(), self.config.d_inv, rng);
        let eval = self.elbo_at(&self.params, x, env, &xi_e, &xi_i, false)?;
        Ok(eval.terms)
    }

    /// Prior-conditioned generation: per row, z_e ~ N(prior_mean(env), I)
    /// and z_inv ~ N(0, I) fresh — unless `fixed_z_inv` is given, in which
    /// case that one invariant latent is reused for every row. Returns the
    /// likelihood mean. Draw order per row: z_e coordinates then z_inv.
    pub fn generate(
        &self,
        env: usize,
        n: usize,
        rng: &mut Rng,
        fixed_z_inv: Option<&DVector<f64>>,
    ) -> Result<DMatrix<f64>> {
        self.check_env(env)?;
        if n == 0 {
            return Err(Error::domain("cannot generate an empty batch (n = 0)"));
        }
        if let Some(z) = fixed_z_inv {
            if z.len() != self.config.d_inv {
                return Err(Error::dim(format!(
                    "fixed z_inv has length {} but d_inv is {}",
                    z.len(),
                    self.config.d_inv
                )));
            }
        }
        let prior = self.config.prior_mean_vec(env);
        let mut z_e = DMatrix::zeros(n, self.config.d_e);
        let mut z_inv = DMatrix::zeros(n, self.config.d_inv);
        for i in 0..n {
            for j in 0..self.config.d_e {
                z_e[(i, j)] = prior[j] + rng.normal();
            }
            match fixed_z_inv {
                Some(z) => {
                    for j in 0..self.config.d_inv {
                        z_inv[(i, j)] = z[j];
                    }
                }
                None => {
                    for j in 0..self.config.d_inv {
                        z_inv[(i, j)] = rng.normal();
                    }
                }
            }
        }
        self.decode(&z_inv, &z_e)
    }

    /// ELBO (and optionally the gradient of −ELBO over the full parameter
    /// vector) at explicit parameters with frozen reparameterization noise.
    fn elbo_at(
        &self,
        params: &[f64],
        x: &DMatrix<f64>,
        env: usize,
        xi_e: &DMatrix<f64>,
        xi_i: &DMatrix<f64>,
        want_grad: bool,
    ) -> Result<ElboEval> {
        self.check_env(env)?;
        if params.len() != self.params.len() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let n = x.nrows();
        if n == 0 {
            return Err(Error::domain("elbo of an empty batch"));
        }
        if let ReconLikelihood::Bernoulli = self.config.recon {
            if let Some(bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::domain(format!(
                    "bernoulli likelihood needs pixels in [0,1], found {bad}"
                )));
            }
        }
        let scale = 1.0 / n as f64;
        let prior = self.config.prior_mean_vec(env);

        // Forward: environment encoder, invariant encoder, decoder.
        let env_params = &params[self.env_range(env)];
        let (env_out, env_cache) = forward_cached(&self.env_specs[env], env_params, x)?;
        let (mu_e, lv_e) = env_out.gaussian();
        let z_e = reparameterize_with(&mu_e, &lv_e, xi_e);

        let inv_params = &params[self.inv_range()];
        let inv_input = hcat(x, &z_e);
        let (inv_out, inv_cache) = forward_cached(&self.inv_spec, inv_params, &inv_input)?;
        let (mu_i, lv_i) = inv_out.gaussian();
        let z_i = reparameterize_with(&mu_i, &lv_i, xi_i);

        let dec_params = &params[self.dec_range()];
        let dec_input = hcat(&z_i, &z_e);
        let (dec_out, dec_cache) = forward_cached(&self.dec_spec, dec_params, &dec_input)?;
        let logits = dec_out.plain();

        // Reconstruction log-likelihood (mean per sample).
        let mut recon_total = 0.0;
        let mut d_logits = if want_grad {
            DMatrix::zeros(n, self.input_dim)
        } else {
            DMatrix::zeros(0, 0)
        };
        match self.config.recon {
            ReconLikelihood::Bernoulli => {
                for i in 0..n {
                    for j in 0..self.input_dim {
                        let s = sigmoid(logits[(i, j)]);
                        let clamped = s.clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP);
                        let xv = x[(i, j)];
                        recon_total += xv * clamped.ln() + (1.0 - xv) * (1.0 - clamped).ln();
                        if want_grad && s > BERNOULLI_CLAMP && s < 1.0 - BERNOULLI_CLAMP {
                            // d(−elbo)/d logit = −(x − σ)/n where unclamped.
                            d_logits[(i, j)] = -scale * (xv - s);
                        }
                    }
                }
            }
            ReconLikelihood::GaussianFixedVariance { sigma2 } => {
                let log_norm =
                    0.5 * self.input_dim as f64 * (2.0 * std::f64::consts::PI * sigma2).ln();
                for i in 0..n {
                    let mut sq = 0.0;
                    for j in 0..self.input_dim {
                        let r = x[(i, j)] - logits[(i, j)];
                        sq += r * r;
                        if want_grad {
                            d_logits[(i, j)] = -scale * r / sigma2;
                        }
                    }
                    recon_total += -sq / (2.0 * sigma2) - log_norm;
                }
            }
        }
        let recon = recon_total * scale;

        // KL terms (means per sample).
        let mut kl_env_total = 0.0;
        for i in 0..n {
            for j in 0..self.config.d_e {
                let (m, lv) = (mu_e[(i, j)], lv_e[(i, j)]);
                kl_env_total += lv.exp() + (m - prior[j]).powi(2) - 1.0 - lv;
            }
        }
        let kl_env = 0.5 * kl_env_total * scale;

        let mut kl_inv_total = 0.0;
        for i in 0..n {
            for j in 0..self.config.d_inv {
                let (m, lv) = (mu_i[(i, j)], lv_i[(i, j)]);
                kl_inv_total += lv.exp() + m * m - 1.0 - lv;
            }
        }
        let kl_inv = 0.5 * kl_inv_total * scale;

        let terms = ElboTerms::of(recon, kl_env, kl_inv);
        let min_abs_preact = env_cache
            .min_abs_preact
            .min(inv_cache.min_abs_preact)
            .min(dec_cache.min_abs_preact);

        if !want_grad {
            return Ok(ElboEval {
                terms,
                min_abs_preact,
                grads: None,
            });
        }

        // Backward pass for J = −elbo (the training objective).
        let (dec_grads, d_dec_input) =
            backward(&self.dec_spec, dec_params, &dec_cache, OutputGrad::Plain(d_logits));
        let d_z_i = d_dec_input.columns(0, self.config.d_inv).into_owned();
        let d_z_e_dec = d_dec_input.columns(self.config.d_inv, self.config.d_e).into_owned();

        // z_i = μ + exp(lv/2)·ξ plus the KL contribution on (μ_i, lv_i).
        let mut d_mu_i = d_z_i.clone();
        let mut d_lv_i = DMatrix::zeros(n, self.config.d_inv);
        for i in 0..n {
            for j in 0..self.config.d_inv {
                d_lv_i[(i, j)] = d_z_i[(i, j)] * xi_i[(i, j)] * 0.5 * (lv_i[(i, j)] / 2.0).exp();
                d_mu_i[(i, j)] += scale * mu_i[(i, j)];
                d_lv_i[(i, j)] += scale * 0.5 * (lv_i[(i, j)].exp() - 1.0);
            }
        }
        let (inv_grads, d_inv_input) = backward(
            &self.inv_spec,
            inv_params,
            &inv_cache,
            OutputGrad::Gaussian {
                d_mean: d_mu_i,
                d_logvar: d_lv_i,
            },
        );
        let d_z_e_inv = d_inv_input
            .columns(self.input_dim, self.config.d_e)
            .into_owned();

        let mut d_mu_e = DMatrix::zeros(n, self.config.d_e);
        let mut d_lv_e = DMatrix::zeros(n, self.config.d_e);
        for i in 0..n {
            for j in 0..self.config.d_e {
                let d_z = d_z_e_dec[(i, j)] + d_z_e_inv[(i, j)];
                d_mu_e[(i, j)] = d_z + scale * (mu_e[(i, j)] - prior[j]);
                d_lv_e[(i, j)] = d_z * xi_e[(i, j)] * 0.5 * (lv_e[(i, j)] / 2.0).exp()
                    + scale * 0.5 * (lv_e[(i, j)].exp() - 1.0);
            }
        }
        let (env_grads, _) = backward(
            &self.env_specs[env],
            env_params,
            &env_cache,
            OutputGrad::Gaussian {
                d_mean: d_mu_e,
                d_logvar: d_lv_e,
            },
        );

        let mut grads = vec![0.0; params.len()];
        grads[self.env_range(env)].copy_from_slice(&env_grads);
        grads[self.inv_range()].copy_from_slice(&inv_grads);
        grads[self.dec_range()].copy_from_slice(&dec_grads);

        Ok(ElboEval {
            terms,
            min_abs_preact,
            grads: Some(grads),
        })
    }
}

struct ElboEval {
    terms: ElboTerms,
    min_abs_preact: f64,
    grads: Option<Vec<f64>>,
}

/// Negative-ELBO training objective over the model's full parameter vector,
/// with frozen reparameterization noise so it is an ordinary deterministic
/// function of the parameters. This is the loss [`crate::nn::grad_check`]
/// validates.
pub struct ElboLoss {
    model: ViaeModel,
    x: DMatrix<f64>,
    env: usize,
    xi_e: DMatrix<f64>,
    xi_i: DMatrix<f64>,
}

impl ElboLoss {
    /// Freezes one noise draw for the given batch.
    pub fn new(model: &ViaeModel, x: DMatrix<f64>, env: usize, rng: &mut Rng) -> Result<Self> {
        model.check_env(env)?;
        let xi_e = noise_matrix(x.nrows(), model.config.d_e, rng);
        let xi_i = noise_matrix(x.nrows(), model.config.d_inv, rng);
        Ok(ElboLoss {
            model: model.clone(),
            x,
            env,
            xi_e,
            xi_i,
        })
    }
}

impl Loss for ElboLoss {
    fn param_len(&self) -> usize {
        self.model.param_len()
    }

    fn value(&self, params: &[f64]) -> Result<LossValue> {
        let eval = self
            .model
            .elbo_at(params, &self.x, self.env, &self.xi_e, &self.xi_i, false)?;
        Ok(LossValue {
            value: -eval.terms.total,
            min_abs_preact: eval.min_abs_preact,
        })
    }

    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let eval = self
            .model
            .elbo_at(params, &self.x, self.env, &self.xi_e, &self.xi_i, true)?;
        Ok((-eval.terms.total, eval.grads.expect("gradient requested")))
    }
}

/// Trains a model on one batch per training environment.
///
/// Each epoch shuffles every environment's rows, chops them into minibatches
/// of `config.batch_size`, and steps through the environments round-robin
/// (step t uses environment t mod |E|, skipping exhausted ones). Every step
/// is one Adam update on the single-sample negative ELBO of that minibatch.
/// Returns the trained model and, per epoch, the per-environment mean of
/// the step-level ELBO terms.
pub fn train(
    config: &ViaeConfig,
    datasets: &[LabeledBatch],
    rng: &mut Rng,
) -> Result<(ViaeModel, Vec<Vec<ElboTerms>>)> {
    config.validate()?;
    if datasets.len() < 2 {
        return Err(Error::domain(format!(
            "training needs at least 2 environments, got {}",
            datasets.len()
        )));
    }
    if datasets.len() != config.n_envs() {
        return Err(Error::dim(format!(
            "{} datasets but {} prior means",
            datasets.len(),
            config.n_envs()
        )));
    }
    let input_dim = datasets[0].dim();
    for (e, d) in datasets.iter().enumerate() {
        if d.n() == 0 {
            return Err(Error::domain(format!("environment {e} dataset is empty")));
        }
        if d.dim() != input_dim {
            return Err(Error::dim(format!(
                "environment {e} has width {} but environment 0 has {input_dim}",
                d.dim()
            )));
        }
    }

    let mut model = ViaeModel::init(config.clone(), input_dim, rng)?;
    let mut adam = nn::AdamState::new(model.param_len());
    let hp = nn::AdamHyperParams::with_lr(config.lr);
    let n_envs = datasets.len();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        // Per-environment minibatch queues for this epoch.
        let mut queues: Vec<Vec<Vec<usize>>> = Vec::with_capacity(n_envs);
        for d in datasets {
            let mut idx: Vec<usize> = (0..d.n()).collect();
            rng.shuffle(&mut idx);
            let chunks = idx
                .chunks(config.batch_size)
                .map(|c| c.to_vec())
                .collect::<Vec<_>>();
            queues.push(chunks);
        }
        let mut cursors = vec![0usize; n_envs];
        let mut epoch_terms: Vec<Vec<ElboTerms>> = vec![Vec::new(); n_envs];

        let mut step = 0usize;
        loop {
            // Round-robin over environments that still have minibatches.
            let mut advanced = false;
            for offset in 0..n_envs {
                let env = (step + offset) % n_envs;
                if cursors[env] >= queues[env].len() {
                    continue;
                }
                let chunk = &queues[env][cursors[env]];
                cursors[env] += 1;
                advanced = true;

                let x = select_rows(&datasets[env].data, chunk);
                let xi_e = noise_matrix(x.nrows(), config.d_e, rng);
                let xi_i = noise_matrix(x.nrows(), config.d_inv, rng);
                let eval = model
                    .elbo_at(&model.params, &x, env, &xi_e, &xi_i, true)
                    .map_err(|e| {
                        Error::numeric(format!("epoch {epoch}, step {step}, env {env}: {e}"))
                    })?;
                let terms = eval.terms;
                if !terms.total.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite elbo at epoch {epoch}, step {step}, env {env}: {terms:?}"
                    )));
                }
                assert!(
                    terms.kl_env >= -1e-9 && terms.kl_inv >= -1e-9,
                    "negative KL at epoch {epoch}, step {step}: {terms:?}"
                );
                let grads = eval.grads.expect("gradient requested");
                nn::adam_step(&mut model.params, &grads, &mut adam, &hp).map_err(|e| {
                    Error::numeric(format!("epoch {epoch}, step {step}, env {env}: {e}"))
                })?;
                epoch_terms[env].push(terms);
                break;
            }
            if !advanced {
                break;
            }
            step += 1;
        }
        history.push(epoch_terms.iter().map(|t| ElboTerms::mean_of(t)).collect());
    }

    Ok((model, history))
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn noise_matrix(n: usize, d: usize, rng: &mut Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            m[(i, j)] = rng.normal();
        }
    }
    m
}

fn reparameterize(mean: &DMatrix<f64>, logvar: &DMatrix<f64>, rng: &mut Rng) -> DMatrix<f64> {
    let xi = noise_matrix(mean.nrows(), mean.ncols(), rng);
    reparameterize_with(mean, logvar, &xi)
}

fn reparameterize_with(
    mean: &DMatrix<f64>,
    logvar: &DMatrix<f64>,
    xi: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut out = mean.clone();
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            out[(i, j)] += (logvar[(i, j)] / 2.0).exp() * xi[(i, j)];
        }
    }
    out
}

fn select_rows(data: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), data.ncols());
    for (dst, &src) in rows.iter().enumerate() {
        out.set_row(dst, &data.row(src));
    }
    out
}

/// The small fixture used by the gradient-contract self test and the
/// `gradcheck` command: 12 input dims, 3 invariant / 2 environmental latent
/// dims, hidden width 8, two environments.
pub fn gradcheck_fixture(recon: ReconLikelihood) -> Result<(ViaeModel, DMatrix<f64>)> {
    let config = ViaeConfig {
        d_inv: 3,
        d_e: 2,
        prior_means: ViaeConfig::one_hot_prior_means(2, 2, 3.0),
        env_hidden: 8,
        inv_hidden: 8,
        dec_hidden: 8,
        recon,
        lr: 1e-3,
        batch_size: 4,
        epochs: 1,
        seed: 7,
    };
    let mut rng = Rng::seed_from_u64(config.seed);
    let model = ViaeModel::init(config, 12, &mut rng)?;
    let x = match recon {
        ReconLikelihood::Bernoulli => DMatrix::from_fn(4, 12, |_, _| rng.next_f64()),
        ReconLikelihood::GaussianFixedVariance { .. } => {
            DMatrix::from_fn(4, 12, |_, _| rng.normal())
        }
    };
    Ok((model, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    fn small_config(n_envs: usize) -> ViaeConfig {
        ViaeConfig {
            d_inv: 3,
            d_e: 2,
            prior_means: ViaeConfig::one_hot_prior_means(n_envs, 2, 3.0),
            env_hidden: 8,
            inv_hidden: 8,
            dec_hidden: 8,
            recon: ReconLikelihood::GaussianFixedVariance { sigma2: 1.0 },
            lr: 1e-2,
            batch_size: 8,
            epochs: 3,
            seed: 11,
        }
    }

    fn small_model() -> ViaeModel {
        let mut rng = Rng::seed_from_u64(5);
        ViaeModel::init(small_config(2), 6, &mut rng).unwrap()
    }

    // ---- config validation ----

    #[test]
    fn prior_orthogonality_is_enforced() {
        let mut config = small_config(2);
        config.prior_means = vec![vec![1.0, 0.5], vec![0.0, 1.0]];
        assert!(matches!(config.validate(), Err(Error::Domain(_))));
        config.prior_means = vec![vec![3.0, 0.0], vec![0.0, 3.0]];
        assert!(config.validate().is_ok());
    }

    #[test]
    fn config_rejects_zero_latents() {
        let mut config = small_config(2);
        config.d_inv = 0;
        assert!(config.validate().is_err());
    }

    // ---- kl_diag_gaussian ----

    #[test]
    fn kl_closed_form_hand_values() {
        // Identical gaussians.
        let kl = kl_diag_gaussian(&[1.0, -2.0], &[0.0, 0.0], &[1.0, -2.0]).unwrap();
        assert!(kl.abs() < 1e-12);

        // d = 1, mean offset 2, unit variance: 0.5·(1 + 4 − 1 − 0) = 2.
        let kl = kl_diag_gaussian(&[2.0], &[0.0], &[0.0]).unwrap();
        assert!((kl - 2.0).abs() < 1e-12);

        // d = 2, matched means, variance e per coordinate:
        // 0.5·2·(e − 1 − 1) = e − 2.
        let kl = kl_diag_gaussian(&[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((kl - (std::f64::consts::E - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_bad_inputs() {
        assert!(kl_diag_gaussian(&[0.0], &[0.0, 1.0], &[0.0]).is_err());
        assert!(matches!(
            kl_diag_gaussian(&[f64::NAN], &[0.0], &[0.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn kl_is_nonnegative_on_random_inputs() {
        let mut rng = Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mu: Vec<f64> = rng.normal_vec(4).iter().map(|v| 3.0 * v).collect();
            let lv: Vec<f64> = rng.normal_vec(4).iter().map(|v| 2.0 * v).collect();
            let pm: Vec<f64> = rng.normal_vec(4);
            let kl = kl_diag_gaussian(&mu, &lv, &pm).unwrap();
            assert!(kl >= 0.0, "negative kl {kl}");
        }
    }

    // ---- encoders / decoder ----

    #[test]
    fn zero_noise_sample_equals_posterior_mean() {
        let model = small_model();
        let mut rng = Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(5, 6, |_, _| rng.normal());
        let (mean, logvar) = model.env_posterior(0, &x).unwrap();
        let zero_xi = DMatrix::zeros(5, 2);
        let z = reparameterize_with(&mean, &logvar, &zero_xi);
        assert_eq!(z, mean);

        let (mu_i, _) = model.inv_posterior(&x, &z).unwrap();
        assert_eq!(mu_i.ncols(), 3);
    }

    #[test]
    fn different_envs_have_distinct_parameters() {
        let model = small_model();
        let mut rng = Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(3, 6, |_, _| rng.normal());
        let (m0, _) = model.env_posterior(0, &x).unwrap();
        let (m1, _) = model.env_posterior(1, &x).unwrap();
        assert_ne!(m0, m1);
    }

    #[test]
    fn unknown_env_is_rejected() {
        let model = small_model();
        let x = DMatrix::zeros(2, 6);
        let mut rng = Rng::seed_from_u64(0);
        assert!(matches!(
            model.env_encode(7, &x, &mut rng),
            Err(Error::InvalidEnv { env: 7, count: 2 })
        ));
    }

    #[test]
    fn batch_noise_is_per_row_and_seeded() {
        let model = small_model();
        let mut rng_data = Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(6, 6, |_, _| rng_data.normal());
        let a = model.env_encode(0, &x, &mut Rng::seed_from_u64(4)).unwrap();
        let b = model.env_encode(0, &x, &mut Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.sample, b.sample);
        // Rows get independent noise: two rows with identical inputs still
        // produce different samples.
        let same = DMatrix::from_fn(2, 6, |_, j| x[(0, j)]);
        let enc = model.env_encode(0, &same, &mut Rng::seed_from_u64(4)).unwrap();
        assert_ne!(enc.sample.row(0), enc.sample.row(1));
    }

    #[test]
    fn zero_weight_inv_encoder_mean_is_bias() {
        let mut model = small_model();
        let inv_range = model.inv_range();
        for v in &mut model.params[inv_range] {
            *v = 0.0;
        }
        let mut rng = Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(4, 6, |_, _| rng.normal());
        let z_e = DMatrix::from_fn(4, 2, |_, _| rng.normal());
        let (mu, _) = model.inv_posterior(&x, &z_e).unwrap();
        // All-zero parameters leave the mean at the (zero) bias for any input.
        assert!(mu.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perturbing_z_e_moves_the_invariant_mean() {
        // Non-degenerate dependence of the invariant encoder on its z_e
        // input, finite-difference sensitivity on a (briefly) trained model.
        let config = small_config(2);
        let mut rng = Rng::seed_from_u64(21);
        let data0 = DMatrix::from_fn(32, 6, |_, _| rng.normal());
        let data1 = DMatrix::from_fn(32, 6, |_, _| rng.normal() + 0.5);
        let datasets = vec![
            LabeledBatch::homogeneous(data0, 0),
            LabeledBatch::homogeneous(data1, 1),
        ];
        let (model, _) = train(&config, &datasets, &mut rng).unwrap();

        let x = DMatrix::from_fn(1, 6, |_, _| 0.3);
        let z_e = DMatrix::zeros(1, 2);
        let (mu_a, _) = model.inv_posterior(&x, &z_e).unwrap();
        let mut z_e_b = z_e.clone();
        z_e_b[(0, 0)] += 0.5;
        let (mu_b, _) = model.inv_posterior(&x, &z_e_b).unwrap();
        let sensitivity = (&mu_b - &mu_a).norm();
        assert!(sensitivity > 0.0, "invariant encoder ignores z_e");
    }

    #[test]
    fn decoder_is_environment_blind() {
        // decode() has no environment argument; identical latents decode
        // bit-identically no matter which environment the caller has in mind.
        let model = small_model();
        let mut rng = Rng::seed_from_u64(8);
        let z_inv = DMatrix::from_fn(3, 3, |_, _| rng.normal());
        let z_e = DMatrix::from_fn(3, 2, |_, _| rng.normal());
        let once = model.decode(&z_inv, &z_e).unwrap();
        let again = model.decode(&z_inv, &z_e).unwrap();
        assert_eq!(once, again);
    }

    // ---- elbo ----

    #[test]
    fn elbo_terms_satisfy_identity_and_nonnegativity() {
        let model = small_model();
        let mut rng = Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(10, 6, |_, _| rng.normal());
        let terms = model.elbo(&x, 0, &mut rng).unwrap();
        assert!(terms.total.is_finite());
        assert!(terms.kl_env >= 0.0);
        assert!(terms.kl_inv >= 0.0);
        assert_eq!(terms.total, terms.recon - terms.kl_env - terms.kl_inv);
    }

    #[test]
    fn bernoulli_elbo_rejects_out_of_range_pixels() {
        let mut config = small_config(2);
        config.recon = ReconLikelihood::Bernoulli;
        let mut rng = Rng::seed_from_u64(14);
        let model = ViaeModel::init(config, 6, &mut rng).unwrap();
        let x = DMatrix::from_element(2, 6, 1.5);
        assert!(matches!(
            model.elbo(&x, 0, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn perfect_reconstruction_has_near_zero_cross_entropy() {
        // Plug-in bound at the clamp: with x binary and the reconstruction
        // clamped to 1e-6 / 1−1e-6, each pixel contributes ln(1−1e-6), so
        // recon per sample is ≥ −D·1e-5 comfortably.
        let mut config = small_config(2);
        config.recon = ReconLikelihood::Bernoulli;
        let mut rng = Rng::seed_from_u64(15);
        let mut model = ViaeModel::init(config, 4, &mut rng).unwrap();
        // Force the decoder to produce saturated logits reproducing x = 1.
        let dec_range = model.dec_range();
        for v in &mut model.params[dec_range.clone()] {
            *v = 0.0;
        }
        // Set the output-layer biases (the last input_dim entries) high.
        let len = dec_range.len();
        for v in &mut model.params[dec_range][len - 4..] {
            *v = 50.0;
        }
        let x = DMatrix::from_element(3, 4, 1.0);
        let terms = model.elbo(&x, 0, &mut rng).unwrap();
        assert!(
            terms.recon >= -(4.0 * 1e-5),
            "recon {} below the clamp bound",
            terms.recon
        );
    }

    #[test]
    fn kl_env_vanishes_when_encoder_outputs_the_prior() {
        let mut model = small_model();
        // Zero the encoder, then bias the mean head at the prior mean and
        // the log-variance head at zero.
        let env_range = model.env_range(0);
        for v in &mut model.params[env_range.clone()] {
            *v = 0.0;
        }
        let prior = model.config.prior_mean_vec(0);
        // Output layer bias layout: last 2·d_e entries are [mean, logvar].
        let len = env_range.len();
        let bias_start = env_range.start + len - 4;
        model.params[bias_start] = prior[0];
        model.params[bias_start + 1] = prior[1];
        let mut rng = Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(5, 6, |_, _| rng.normal());
        let terms = model.elbo(&x, 0, &mut rng).unwrap();
        assert!(terms.kl_env.abs() < 1e-12, "kl_env {}", terms.kl_env);
    }

    // ---- gradients ----

    #[test]
    fn elbo_gradient_passes_finite_differences_gaussian() {
        let (model, x) =
            gradcheck_fixture(ReconLikelihood::GaussianFixedVariance { sigma2: 0.5 }).unwrap();
        for env in 0..2 {
            let mut rng = Rng::seed_from_u64(100 + env as u64);
            let loss = ElboLoss::new(&model, x.clone(), env, &mut rng).unwrap();
            let report = grad_check(&loss, model.params(), 1e-5).unwrap();
            assert!(
                report.max_rel_error <= 1e-4,
                "env {env}: max rel error {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn elbo_gradient_passes_finite_differences_bernoulli() {
        let (model, x) = gradcheck_fixture(ReconLikelihood::Bernoulli).unwrap();
        let mut rng = Rng::seed_from_u64(55);
        let loss = ElboLoss::new(&model, x, 0, &mut rng).unwrap();
        let report = grad_check(&loss, model.params(), 1e-5).unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "max rel error {}",
            report.max_rel_error
        );
    }

    // ---- train ----

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let mut config = small_config(2);
        config.epochs = 0;
        let mut rng = Rng::seed_from_u64(1);
        let data = DMatrix::from_fn(16, 6, |_, _| rng.normal());
        let datasets = vec![
            LabeledBatch::homogeneous(data.clone(), 0),
            LabeledBatch::homogeneous(data, 1),
        ];
        let (model, history) = train(&config, &datasets, &mut rng).unwrap();
        assert!(history.is_empty());
        assert_eq!(model.n_envs(), 2);
    }

    #[test]
    fn training_improves_the_elbo() {
        let mut config = small_config(2);
        config.epochs = 12;
        let mut rng = Rng::seed_from_u64(77);
        let data0 = DMatrix::from_fn(64, 6, |_, _| rng.normal());
        let data1 = DMatrix::from_fn(64, 6, |_, _| rng.normal() + 1.0);
        let datasets = vec![
            LabeledBatch::homogeneous(data0, 0),
            LabeledBatch::homogeneous(data1, 1),
        ];
        let (_, history) = train(&config, &datasets, &mut rng).unwrap();
        let first: f64 = history[0].iter().map(|t| t.total).sum::<f64>() / 2.0;
        let last: f64 = history
            .last()
            .unwrap()
            .iter()
            .map(|t| t.total)
            .sum::<f64>()
            / 2.0;
        assert!(last > first, "elbo did not improve: {first} → {last}");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let config = small_config(2);
        let mut rng_data = Rng::seed_from_u64(50);
        let data0 = DMatrix::from_fn(24, 6, |_, _| rng_data.normal());
        let data1 = DMatrix::from_fn(24, 6, |_, _| rng_data.normal());
        let datasets = vec![
            LabeledBatch::homogeneous(data0, 0),
            LabeledBatch::homogeneous(data1, 1),
        ];
        let (m1, h1) = train(&config, &datasets, &mut Rng::seed_from_u64(33)).unwrap();
        let (m2, h2) = train(&config, &datasets, &mut Rng::seed_from_u64(33)).unwrap();
        assert_eq!(m1.params(), m2.params());
        assert_eq!(h1, h2);
    }

    #[test]
    fn train_requires_two_environments() {
        let config = small_config(2);
        let data = DMatrix::zeros(8, 6);
        let datasets = vec![LabeledBatch::homogeneous(data, 0)];
        let mut rng = Rng::seed_from_u64(0);
        assert!(matches!(
            train(&config, &datasets, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    // ---- generate ----

    #[test]
    fn generate_is_deterministic_and_respects_fixed_z_inv() {
        let model = small_model();
        let a = model
            .generate(0, 4, &mut Rng::seed_from_u64(2), None)
            .unwrap();
        let b = model
            .generate(0, 4, &mut Rng::seed_from_u64(2), None)
            .unwrap();
        assert_eq!(a, b);

        let z = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let fixed = model
            .generate(1, 3, &mut Rng::seed_from_u64(4), Some(&z))
            .unwrap();
        assert_eq!(fixed.nrows(), 3);
        assert!(matches!(
            model.generate(5, 1, &mut Rng::seed_from_u64(0), None),
            Err(Error::InvalidEnv { .. })
        ));
    }

    #[test]
    fn zero_weight_decoder_generates_constant_bias_image() {
        let mut config = small_config(2);
        config.prior_means = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        // All-zero prior means are (trivially) orthogonal.
        let mut rng = Rng::seed_from_u64(10);
        let mut model = ViaeModel::init(config, 6, &mut rng).unwrap();
        let dec_range = model.dec_range();
        for v in &mut model.params[dec_range.clone()] {
            *v = 0.0;
        }
        let len = dec_range.len();
        // Output-layer biases (last 6 entries) define the constant image.
        for (k, v) in model.params[dec_range][len - 6..].iter_mut().enumerate() {
            *v = k as f64;
        }
        let out = model.generate(0, 1, &mut Rng::seed_from_u64(1), None).unwrap();
        for j in 0..6 {
            assert_eq!(out[(0, j)], j as f64);
        }
    }
}
