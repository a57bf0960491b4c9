//! Linear probe evaluation of the factorized latent space.
//!
//! Four multinomial logistic probes measure where information lives:
//! invariant latents → digit label, environmental latents → digit label,
//! invariant latents → environment, environmental latents → environment.
//! A cleanly separated latent space scores high on the first and last and
//! near chance on the middle two. All four share one training harness; only
//! the (feature source, target) pair differs.
//!
//! Probe training is convex: full-batch gradient descent on the mean
//! cross-entropy with a ridge penalty, step size set from a power-iteration
//! estimate of the feature second-moment spectral norm, stopping at
//! gradient norm 1e-5 or the epoch cap. Features are standardized
//! internally and the scaling is folded back into the returned weights.

use nalgebra::{DMatrix, DVector};

use crate::datasets::EnvImageDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::viae::ViaeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Invariant,
    Environmental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    Label,
    Environment,
}

/// A fitted linear classifier over frozen latents.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    /// k × f weight matrix (classes × features).
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub feature_source: FeatureSource,
    pub target: ProbeTarget,
}

impl LinearProbe {
    /// Per-row argmax of the class scores.
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<usize>> {
        if features.ncols() != self.weights.ncols() {
            return Err(Error::dim(format!(
                "probe expects {} features, got {}",
                self.weights.ncols(),
                features.ncols()
            )));
        }
        let scores = features * self.weights.transpose();
        Ok((0..scores.nrows())
            .map(|i| {
                let mut best = 0;
                let mut best_v = f64::MIN;
                for k in 0..scores.ncols() {
                    let v = scores[(i, k)] + self.bias[k];
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                best
            })
            .collect())
    }

    pub fn accuracy(&self, features: &DMatrix<f64>, targets: &[usize]) -> Result<f64> {
        let preds = self.predict(features)?;
        if preds.len() != targets.len() {
            return Err(Error::dim("prediction/target length mismatch"));
        }
        let hits = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
        Ok(hits as f64 / targets.len().max(1) as f64)
    }
}

/// Probe training configuration.
#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// Ridge penalty λ on ‖W‖².
    pub ridge: f64,
    /// Full-batch gradient descent epoch cap.
    pub max_epochs: usize,
    /// Convergence threshold on the gradient norm.
    pub grad_tol: f64,
    /// Fit an intercept. The probes are usually written without one; the
    /// switch exists because excluding it barely moves the accuracies.
    pub with_bias: bool,
    /// Random initialization seed; zero-initialized when absent. The fit is
    /// convex, so this changes the result only at convergence-tolerance
    /// level.
    pub init_seed: Option<u64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            ridge: 1e-4,
            max_epochs: 2000,
            grad_tol: 1e-5,
            with_bias: true,
            init_seed: None,
        }
    }
}

/// Deterministic latents of one dataset: every image goes through its own
/// environment's encoder (posterior mean), then the invariant encoder
/// (posterior mean). Datasets from environments without an encoder are a
/// domain error.
pub fn extract_latents(
    model: &ViaeModel,
    dataset: &EnvImageDataset,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<u8>, Vec<usize>)> {
    if dataset.env >= model.n_envs() {
        return Err(Error::InvalidEnv {
            env: dataset.env,
            count: model.n_envs(),
        });
    }
    let x = &dataset.images;
    let (z_e, _) = model.env_posterior(dataset.env, x)?;
    let (z_inv, _) = model.inv_posterior(x, &z_e)?;
    let envs = vec![dataset.env; dataset.n()];
    Ok((z_inv, z_e, dataset.labels.clone(), envs))
}

/// Multinomial logistic regression with ridge penalty by full-batch
/// gradient descent. `k` is the number of classes; targets must lie in
/// [0, k).
pub fn train_probe(
    features: &DMatrix<f64>,
    targets: &[usize],
    k: usize,
    config: &ProbeConfig,
) -> Result<LinearProbe> {
    let n = features.nrows();
    let f = features.ncols();
    if targets.len() != n {
        return Err(Error::dim(format!(
            "{n} feature rows but {} targets",
            targets.len()
        )));
    }
    if k < 2 {
        return Err(Error::domain("need at least 2 classes"));
    }
    if n < k {
        return Err(Error::domain(format!(
            "need at least {k} rows for {k} classes, got {n}"
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::domain(format!("target {bad} outside [0, {k})")));
    }
    let mut class_seen = vec![false; k];
    for &t in targets {
        class_seen[t] = true;
    }
    if class_seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::domain(
            "targets are a single class; nothing to separate",
        ));
    }

    // Standardize features; the scaling folds back into the weights below.
    let mut mean = DVector::zeros(f);
    let mut std = DVector::from_element(f, 1.0);
    for j in 0..f {
        let m = features.column(j).sum() / n as f64;
        let v = features.column(j).iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        mean[j] = m;
        std[j] = v.sqrt().max(1e-12);
    }
    let xs = DMatrix::from_fn(n, f, |i, j| (features[(i, j)] - mean[j]) / std[j]);

    // Step size from the curvature bound: ‖(1/n)XᵀX‖₂/2 + 2λ.
    let lmax = spectral_norm_gram(&xs);
    let lr = 0.9 / (0.5 * lmax + 2.0 * config.ridge).max(1e-12);

    let mut w: DMatrix<f64> = DMatrix::zeros(k, f);
    let mut b: DVector<f64> = DVector::zeros(k);
    if let Some(seed) = config.init_seed {
        let mut rng = Rng::seed_from_u64(seed);
        w = DMatrix::from_fn(k, f, |_, _| 0.01 * rng.normal());
    }

    let inv_n = 1.0 / n as f64;
    for _ in 0..config.max_epochs {
        // Softmax probabilities (row-stable).
        let scores = &xs * w.transpose();
        let mut grad_w = DMatrix::zeros(k, f);
        let mut grad_b = DVector::zeros(k);
        let mut diff = DMatrix::zeros(n, k);
        for i in 0..n {
            let mut row_max = f64::MIN;
            for c in 0..k {
                row_max = row_max.max(scores[(i, c)] + b[c]);
            }
            let mut denom = 0.0f64;
            for c in 0..k {
                denom += (scores[(i, c)] + b[c] - row_max).exp();
            }
            for c in 0..k {
                let p = (scores[(i, c)] + b[c] - row_max).exp() / denom;
                diff[(i, c)] = p - if targets[i] == c { 1.0 } else { 0.0 };
            }
        }
        grad_w.gemm(inv_n, &diff.transpose(), &xs, 0.0);
        grad_w += &w * (2.0 * config.ridge);
        if config.with_bias {
            for c in 0..k {
                grad_b[c] = diff.column(c).sum() * inv_n;
            }
        }

        let gnorm = (grad_w.norm_squared() + grad_b.norm_squared()).sqrt();
        w -= &grad_w * lr;
        if config.with_bias {
            b -= &grad_b * lr;
        }
        if gnorm < config.grad_tol {
            break;
        }
    }

    // Fold the standardization into the returned parameters:
    // wᵀ((x − m)/s) + b = (w/s)ᵀ x + (b − Σⱼ wⱼ mⱼ/sⱼ).
    let mut weights = DMatrix::zeros(k, f);
    let mut bias = DVector::zeros(k);
    for c in 0..k {
        let mut shift = 0.0;
        for j in 0..f {
            weights[(c, j)] = w[(c, j)] / std[j];
            shift += w[(c, j)] * mean[j] / std[j];
        }
        bias[c] = b[c] - shift;
    }
    Ok(LinearProbe {
        weights,
        bias,
        feature_source: FeatureSource::Invariant,
        target: ProbeTarget::Label,
    })
}

fn spectral_norm_gram(x: &DMatrix<f64>) -> f64 {
    // Power iteration on (1/n)XᵀX; a handful of rounds is plenty for a
    // step-size bound.
    let n = x.nrows() as f64;
    let f = x.ncols();
    let mut v = DVector::from_element(f, 1.0 / (f as f64).sqrt());
    let mut lambda = 1.0;
    for _ in 0..30 {
        let xv = x * &v;
        let mut next = x.transpose() * xv / n;
        let norm = next.norm();
        if norm < 1e-300 {
            return 1.0;
        }
        next /= norm;
        lambda = norm;
        v = next;
    }
    lambda
}

/// The four probe accuracies of one run, ordered
/// (invariant→label, environmental→label, invariant→environment,
/// environmental→environment).
pub type ProbeAccuracies = [f64; 4];

pub const PROBE_NAMES: [&str; 4] = ["inv_to_label", "env_to_label", "inv_to_env", "env_to_env"];

/// Per-run probe accuracies plus mean ± standard deviation.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub runs: Vec<ProbeAccuracies>,
}

impl ProbeReport {
    pub fn mean(&self) -> ProbeAccuracies {
        let mut m = [0.0; 4];
        for run in &self.runs {
            for (acc, v) in m.iter_mut().zip(run) {
                *acc += v;
            }
        }
        let n = self.runs.len().max(1) as f64;
        m.map(|v| v / n)
    }

    pub fn std(&self) -> ProbeAccuracies {
        let mean = self.mean();
        let mut s = [0.0; 4];
        for run in &self.runs {
            for i in 0..4 {
                s[i] += (run[i] - mean[i]).powi(2);
            }
        }
        let n = self.runs.len().max(1) as f64;
        s.map(|v| (v / n).sqrt())
    }

    /// CSV rows `classifier,dataset,run,accuracy` followed by one
    /// `classifier,dataset,mean,±std` summary line per probe.
    pub fn to_csv(&self, dataset: &str) -> String {
        let mut out = String::from("classifier,dataset,run,accuracy\n");
        for (run_idx, run) in self.runs.iter().enumerate() {
            for (name, acc) in PROBE_NAMES.iter().zip(run) {
                out.push_str(&format!("{name},{dataset},{run_idx},{acc:.6}\n"));
            }
        }
        let mean = self.mean();
        let std = self.std();
        for i in 0..4 {
            out.push_str(&format!(
                "{},{dataset},summary,{:.4}±{:.4}\n",
                PROBE_NAMES[i], mean[i], std[i]
            ));
        }
        out
    }
}

/// Fits the four probes on train-split latents and scores them on
/// test-split latents; `repeats` re-runs the (convex) probe fits from fresh
/// random initializations drawn from `rng`, without retraining the model.
pub fn evaluate_probes(
    model: &ViaeModel,
    train_datasets: &[EnvImageDataset],
    test_datasets: &[EnvImageDataset],
    repeats: usize,
    rng: &mut Rng,
) -> Result<ProbeReport> {
    if train_datasets.is_empty() || test_datasets.is_empty() {
        return Err(Error::domain("need train and test datasets"));
    }
    if repeats == 0 {
        return Err(Error::domain("repeats must be at least 1"));
    }
    let (train_inv, train_env, train_labels, train_envs) =
        stack_latents(model, train_datasets)?;
    let (test_inv, test_env, test_labels, test_envs) = stack_latents(model, test_datasets)?;

    let n_classes = 10;
    let n_envs = model.n_envs();
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let config = ProbeConfig {
            init_seed: Some(rng.next_u64()),
            ..ProbeConfig::default()
        };
        let spec: [(&DMatrix<f64>, &[usize], usize, &DMatrix<f64>, &[usize], FeatureSource, ProbeTarget); 4] = [
            (&train_inv, &train_labels, n_classes, &test_inv, &test_labels, FeatureSource::Invariant, ProbeTarget::Label),
            (&train_env, &train_labels, n_classes, &test_env, &test_labels, FeatureSource::Environmental, ProbeTarget::Label),
            (&train_inv, &train_envs, n_envs, &test_inv, &test_envs, FeatureSource::Invariant, ProbeTarget::Environment),
            (&train_env, &train_envs, n_envs, &test_env, &test_envs, FeatureSource::Environmental, ProbeTarget::Environment),
        ];
        let mut accs = [0.0; 4];
        for (i, (feat, targ, k, test_feat, test_targ, source, target)) in
            spec.into_iter().enumerate()
        {
            let mut probe = train_probe(feat, targ, k, &config)?;
            probe.feature_source = source;
            probe.target = target;
            accs[i] = probe.accuracy(test_feat, test_targ)?;
        }
        runs.push(accs);
    }
    Ok(ProbeReport { runs })
}

fn stack_latents(
    model: &ViaeModel,
    datasets: &[EnvImageDataset],
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<usize>, Vec<usize>)> {
    let mut inv_parts = Vec::new();
    let mut env_parts = Vec::new();
    let mut labels = Vec::new();
    let mut envs = Vec::new();
    for ds in datasets {
        let (z_inv, z_e, y, e) = extract_latents(model, ds)?;
        inv_parts.push(z_inv);
        env_parts.push(z_e);
        labels.extend(y.into_iter().map(|v| v as usize));
        envs.extend(e);
    }
    Ok((vstack(&inv_parts), vstack(&env_parts), labels, envs))
}

fn vstack(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let cols = parts[0].ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.nrows()).copy_from(p);
        at += p.nrows();
    }
    out
}
