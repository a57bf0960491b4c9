//! Principal invariant component analysis.
//!
//! Given per-environment covariances Σ¹, Σ², an invariant direction `u`
//! satisfies uᵀ(Σ¹−Σ²)u = 0, i.e. lies in the kernel of the covariance
//! difference. Among those directions we keep the ones with the largest
//! retained second moment uᵀ(Σ¹+Σ²)u. The whole fit reduces to two
//! symmetric eigenproblems:
//!
//! 1. eigenvectors of Σ¹−Σ² with |eigenvalue| below a relative tolerance
//!    span the invariant kernel U;
//! 2. the top eigenvectors v of Uᵀ(Σ¹+Σ²)U give the fitted directions Uv,
//!    with the eigenvalues as retained objective values.
//!
//! When the two covariances are equal the kernel is all of R^D and the fit
//! degenerates to ordinary PCA on Σ¹+Σ².
//!
//! The probabilistic estimator ([`ppica_estimate`]) inverts the
//! linear-Gaussian model of [`crate::scm`] from population covariances:
//! the covariance difference isolates the environmental mixing matrix, and
//! after subtracting its rescaled contribution and the noise floor, the
//! remaining PSD part isolates the invariant mixing matrix.

use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg;
use crate::scm::LabeledBatch;

/// Default kernel tolerance for population-quality covariance inputs.
pub const KERNEL_TOL_POPULATION: f64 = 1e-8;

/// Default kernel tolerance for empirical covariances, where sampling noise
/// makes the exact kernel empty.
pub const KERNEL_TOL_EMPIRICAL: f64 = 1e-3;

/// A pair of per-environment covariance matrices plus the means that were
/// subtracted when centering.
#[derive(Debug, Clone)]
pub struct EnvCovariances {
    sigma1: DMatrix<f64>,
    sigma2: DMatrix<f64>,
    means: [DVector<f64>; 2],
}

impl EnvCovariances {
    /// Validates symmetry (1e-10 relative Frobenius) and positive
    /// semi-definiteness (1e-8 relative eigenvalue tolerance) of both
    /// matrices.
    pub fn new(
        sigma1: DMatrix<f64>,
        sigma2: DMatrix<f64>,
        mean1: DVector<f64>,
        mean2: DVector<f64>,
    ) -> Result<Self> {
        if sigma1.nrows() != sigma1.ncols() || sigma2.nrows() != sigma2.ncols() {
            return Err(Error::dim("covariance matrices must be square"));
        }
        if sigma1.nrows() != sigma2.nrows() {
            return Err(Error::dim(format!(
                "covariance dimensions differ: {} vs {}",
                sigma1.nrows(),
                sigma2.nrows()
            )));
        }
        if mean1.len() != sigma1.nrows() || mean2.len() != sigma2.nrows() {
            return Err(Error::dim("mean length must match covariance dimension"));
        }
        for (name, m) in [("sigma1", &sigma1), ("sigma2", &sigma2)] {
            if !linalg::is_symmetric(m, 1e-10) {
                return Err(Error::domain(format!("{name} is not symmetric")));
            }
            if !linalg::is_psd(m, 1e-8) {
                return Err(Error::domain(format!(
                    "{name} is not positive semi-definite"
                )));
            }
        }
        Ok(EnvCovariances {
            sigma1,
            sigma2,
            means: [mean1, mean2],
        })
    }

    /// Builds covariances from one batch per environment: centers each batch,
    /// then forms the (1/n)XᵀX estimator.
    pub fn from_batches(batch1: &LabeledBatch, batch2: &LabeledBatch) -> Result<Self> {
        let (centered, means) = center_per_env(&[batch1.clone(), batch2.clone()])?;
        let envs1 = batch1.env_set();
        let envs2 = batch2.env_set();
        if envs1.len() != 1 || envs2.len() != 1 {
            return Err(Error::domain(
                "from_batches expects one homogeneous batch per environment",
            ));
        }
        let sigma1 = empirical_cov(&centered[0])?;
        let sigma2 = empirical_cov(&centered[1])?;
        Ok(EnvCovariances {
            sigma1,
            sigma2,
            means: [means[&envs1[0]].clone(), means[&envs2[0]].clone()],
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma1.nrows()
    }

    pub fn sigma1(&self) -> &DMatrix<f64> {
        &self.sigma1
    }

    pub fn sigma2(&self) -> &DMatrix<f64> {
        &self.sigma2
    }

    pub fn means(&self) -> &[DVector<f64>; 2] {
        &self.means
    }

    pub fn difference(&self) -> DMatrix<f64> {
        &self.sigma1 - &self.sigma2
    }

    pub fn sum(&self) -> DMatrix<f64> {
        &self.sigma1 + &self.sigma2
    }
}

/// Subtracts the per-environment sample mean from every row, pooling rows of
/// the same environment across all supplied batches. Returns the centered
/// batches and the removed means keyed by environment.
pub fn center_per_env(
    batches: &[LabeledBatch],
) -> Result<(Vec<LabeledBatch>, BTreeMap<usize, DVector<f64>>)> {
    if batches.is_empty() {
        return Err(Error::domain("no batches supplied"));
    }
    let dim = batches[0].dim();
    let mut sums: BTreeMap<usize, (DVector<f64>, usize)> = BTreeMap::new();
    for (i, batch) in batches.iter().enumerate() {
        if batch.n() == 0 {
            return Err(Error::domain(format!("batch {i} is empty")));
        }
        if batch.dim() != dim {
            return Err(Error::dim(format!(
                "batch {i} has dimension {} but batch 0 has {dim}",
                batch.dim()
            )));
        }
        for (row, &env) in batch.env.iter().enumerate() {
            let entry = sums
                .entry(env)
                .or_insert_with(|| (DVector::zeros(dim), 0));
            entry.1 += 1;
            for j in 0..dim {
                entry.0[j] += batch.data[(row, j)];
            }
        }
    }
    let means: BTreeMap<usize, DVector<f64>> = sums
        .into_iter()
        .map(|(env, (sum, count))| (env, sum / count as f64))
        .collect();

    let centered = batches
        .iter()
        .map(|batch| {
            let mut data = batch.data.clone();
            for (row, &env) in batch.env.iter().enumerate() {
                let mean = &means[&env];
                for j in 0..dim {
                    data[(row, j)] -= mean[j];
                }
            }
            LabeledBatch {
                data,
                env: batch.env.clone(),
                labels: batch.labels.clone(),
            }
        })
        .collect();

    Ok((centered, means))
}

/// Second-moment matrix (1/n)·XᵀX of an already centered batch.
/// Population normalization (1/n, not 1/(n−1)); symmetrized against roundoff.
pub fn empirical_cov(batch: &LabeledBatch) -> Result<DMatrix<f64>> {
    let n = batch.n();
    if n < 2 {
        return Err(Error::domain(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let cov = batch.data.transpose() * &batch.data / n as f64;
    Ok(linalg::symmetrize(&cov))
}

/// Orthonormal basis of the invariant kernel: eigenvectors of Σ¹−Σ² whose
/// |eigenvalue| is at most `tol · max|eigenvalue|`. Equal covariances give a
/// full basis of R^D; an empty kernel returns a D×0 matrix, not an error.
pub fn invariant_kernel(cov: &EnvCovariances, tol: f64) -> Result<DMatrix<f64>> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::domain(format!("tol must lie in (0, 1), got {tol}")));
    }
    kernel_of_difference(&cov.difference(), tol)
}

fn kernel_of_difference(diff: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let dim = diff.nrows();
    let (values, vectors) = linalg::sym_eigen_desc(diff);
    let max_abs = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max_abs == 0.0 {
        // Σ¹ = Σ² exactly: the whole space is invariant.
        return Ok(DMatrix::identity(dim, dim));
    }
    let threshold = tol * max_abs;
    let keep: Vec<usize> = (0..dim).filter(|&i| values[i].abs() <= threshold).collect();
    let mut basis = DMatrix::zeros(dim, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        basis.set_column(dst, &vectors.column(src));
    }
    Ok(basis)
}

/// Fitted invariant projection.
#[derive(Debug, Clone)]
pub struct PicaModel {
    /// Orthonormal projection directions, one column per component.
    pub directions: DMatrix<f64>,
    /// Dimension of the invariant kernel the directions were drawn from.
    pub kernel_dim: usize,
    /// Retained second moments uᵀ(Σ¹+Σ²)u, non-increasing.
    pub objective_values: Vec<f64>,
    /// Kernel tolerance used for the fit.
    pub tol: f64,
}

impl PicaModel {
    pub fn d_r(&self) -> usize {
        self.directions.ncols()
    }

    /// True when the kernel filled the whole space (Σ¹ = Σ² within
    /// tolerance) and the fit degenerated to ordinary PCA.
    pub fn is_pca_fallback(&self) -> bool {
        self.kernel_dim == self.directions.nrows()
    }
}

/// Fits the top `d_r` invariant principal directions.
///
/// The greedy per-direction maximization is realized in one shot: project
/// Σ¹+Σ² into the kernel basis U, eigendecompose, and map the top `d_r`
/// eigenvectors back through U. Eigenvalues come out sorted, so the
/// objective values are non-increasing by construction.
pub fn pica_fit(cov: &EnvCovariances, d_r: usize, tol: f64) -> Result<PicaModel> {
    let kernel = invariant_kernel(cov, tol)?;
    fit_in_kernel(kernel, &cov.sum(), d_r, tol)
}

fn fit_in_kernel(
    kernel: DMatrix<f64>,
    sum: &DMatrix<f64>,
    d_r: usize,
    tol: f64,
) -> Result<PicaModel> {
    let kernel_dim = kernel.ncols();
    if d_r == 0 || d_r > kernel_dim {
        return Err(Error::KernelCapacity {
            requested: d_r,
            available: kernel_dim,
        });
    }
    let projected = kernel.transpose() * sum * &kernel;
    let projected = linalg::symmetrize(&projected);
    let (values, vectors) = linalg::sym_eigen_desc(&projected);
    let mut directions = &kernel * vectors.columns(0, d_r);
    linalg::fix_column_signs(&mut directions);
    Ok(PicaModel {
        directions,
        kernel_dim,
        objective_values: values[..d_r].to_vec(),
        tol,
    })
}

/// Multi-environment extension: the invariant kernel is the intersection
/// ∩ⱼ ker(Σ¹−Σʲ), computed by stacking the differences into one tall matrix
/// and taking its null space; the objective becomes uᵀ(Σ Σᵉ)u.
pub fn pica_fit_multi(covs: &[DMatrix<f64>], d_r: usize, tol: f64) -> Result<PicaModel> {
    if covs.len() < 2 {
        return Err(Error::domain(format!(
            "need at least 2 environments, got {}",
            covs.len()
        )));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::domain(format!("tol must lie in (0, 1), got {tol}")));
    }
    let dim = covs[0].nrows();
    for (e, c) in covs.iter().enumerate() {
        if c.nrows() != dim || c.ncols() != dim {
            return Err(Error::dim(format!(
                "covariance {e} is {}x{}, expected {dim}x{dim}",
                c.nrows(),
                c.ncols()
            )));
        }
    }
    // Null space of the stacked differences via the Gram matrix
    // Σⱼ (Σ¹−Σʲ)ᵀ(Σ¹−Σʲ): eigenvalues are squared singular values, so the
    // kernel test is tol² relative.
    let mut gram = DMatrix::zeros(dim, dim);
    for c in &covs[1..] {
        let diff = &covs[0] - c;
        gram += diff.transpose() * &diff;
    }
    let kernel = kernel_of_difference(&linalg::symmetrize(&gram), tol * tol)?;
    let mut sum = DMatrix::zeros(dim, dim);
    for c in covs {
        sum += c;
    }
    fit_in_kernel(kernel, &sum, d_r, tol)
}

/// Projects a batch onto the fitted directions. Rows are grouped by their
/// environment tag, centered by that group's sample mean, and mapped through
/// the directions; tags and labels are preserved.
pub fn pica_project(model: &PicaModel, batch: &LabeledBatch) -> Result<LabeledBatch> {
    if batch.dim() != model.directions.nrows() {
        return Err(Error::dim(format!(
            "batch dimension {} does not match model dimension {}",
            batch.dim(),
            model.directions.nrows()
        )));
    }
    let (centered, _) = center_per_env(std::slice::from_ref(batch))?;
    let projected = &centered[0].data * &model.directions;
    LabeledBatch::new(projected, batch.env.clone(), batch.labels.clone())
}

/// Recovered linear-Gaussian parameters, population-level.
#[derive(Debug, Clone)]
pub struct PpicaEstimate {
    /// Estimated environmental mixing matrix (D×d).
    pub a_env_hat: DMatrix<f64>,
    /// Estimated invariant mixing matrix (D×d).
    pub a_inv_hat: DMatrix<f64>,
    /// Second environment's latent variance under the convention var(1) = 1.
    pub sigma2_env2: f64,
    /// Estimated observation noise variance.
    pub sigma2_noise: f64,
    /// The intermediate matrix whose top eigenpairs give `a_inv_hat`.
    pub m_matrix: DMatrix<f64>,
    /// True when the two environments were swapped to make Σ¹−Σ² PSD.
    pub swapped: bool,
}

/// Recovers the mixing matrices and noise variance of the linear-Gaussian
/// model from a pair of covariances, assuming equal invariant and
/// environmental latent width `d` and the scale convention var(1) = 1.
///
/// Environments are ordered internally so the covariance difference is PSD
/// (swapping if its trace is negative). `sigma2_env2` defaults to the trace
/// ratio tr(Σ²)/tr(Σ¹) — the value producing the largest admissible
/// distribution shift — unless overridden. The noise variance is the mean of
/// the D−2d smallest eigenvalues of Σ¹, which requires D ≥ 2d+1. Negative
/// eigenvalues of the intermediate matrix are clamped to zero before the
/// rank-d truncation; with more than `d` significantly positive eigenvalues
/// the model is misspecified and no recovery is claimed.
pub fn ppica_estimate(
    cov: &EnvCovariances,
    d: usize,
    sigma2_env2: Option<f64>,
) -> Result<PpicaEstimate> {
    if d == 0 {
        return Err(Error::domain("latent dimension d must be at least 1"));
    }
    let dim = cov.dim();
    if dim < 2 * d + 1 {
        return Err(Error::domain(format!(
            "noise estimation needs D ≥ 2d+1 (D = {dim}, d = {d})"
        )));
    }

    // Order the environments so the difference is PSD.
    let diff_raw = cov.difference();
    let swapped = diff_raw.trace() < 0.0;
    let (sigma1, sigma2) = if swapped {
        (cov.sigma2(), cov.sigma1())
    } else {
        (cov.sigma1(), cov.sigma2())
    };
    let diff = sigma1 - sigma2;

    let tr1 = sigma1.trace();
    let tr2 = sigma2.trace();
    if tr1 <= 0.0 {
        return Err(Error::domain("covariances have non-positive trace"));
    }
    let var2 = match sigma2_env2 {
        Some(v) => v,
        None => tr2 / tr1,
    };
    if var2 >= 1.0 {
        return Err(Error::DegenerateShift(format!(
            "estimated var(2) = {var2} with var(1) = 1; the environments carry no shift"
        )));
    }
    if var2 <= 0.0 {
        return Err(Error::domain(format!(
            "var(2) must be strictly positive, got {var2}"
        )));
    }

    // Environmental mixing from the top-d eigenpairs of the difference.
    let (diff_values, diff_vectors) = linalg::sym_eigen_desc(&diff);
    let scale = 1.0 / (1.0 - var2).sqrt();
    let mut a_env_hat = DMatrix::zeros(dim, d);
    for j in 0..d {
        let lambda = diff_values[j].max(0.0);
        let col = diff_vectors.column(j) * (scale * lambda.sqrt());
        a_env_hat.set_column(j, &col);
    }

    // Noise floor from the D−2d smallest eigenvalues of Σ¹.
    let (s1_values, _) = linalg::sym_eigen_desc(sigma1);
    let tail = &s1_values[2 * d..];
    let sigma2_noise = tail.iter().sum::<f64>() / tail.len() as f64;

    // Invariant mixing from the PSD part of the residual matrix.
    let coeff = (1.0 + var2) / (2.0 * (1.0 - var2));
    let mut m_matrix = (sigma1 + sigma2) * 0.5 - &diff * coeff;
    for i in 0..dim {
        m_matrix[(i, i)] -= sigma2_noise;
    }
    let m_matrix = linalg::symmetrize(&m_matrix);
    let (m_values, m_vectors) = linalg::sym_eigen_desc(&m_matrix);
    let mut a_inv_hat = DMatrix::zeros(dim, d);
    for j in 0..d {
        let lambda = m_values[j].max(0.0);
        let col = m_vectors.column(j) * lambda.sqrt();
        a_inv_hat.set_column(j, &col);
    }

    Ok(PpicaEstimate {
        a_env_hat,
        a_inv_hat,
        sigma2_env2: var2,
        sigma2_noise,
        m_matrix,
        swapped,
    })
}
