//! Property tests over randomized instances: equivariances of the
//! invariant-projection fit and container round-trips.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use uirm_core::datasets::{encode_image, image_grid, Image};
use uirm_core::datasets::{Metadata, Tensor, TensorData};
use uirm_core::linalg::{frobenius_norm, max_principal_angle, symmetrize};
use uirm_core::pica::{pica_fit, EnvCovariances, KERNEL_TOL_POPULATION};
use uirm_core::rng::Rng;
use uirm_core::viae::kl_diag_gaussian;

/// Planted covariance pair with an exact low-rank environmental component,
/// derived deterministically from a seed. The invariant component has rank
/// one so the top objective eigenvalue inside the kernel is simple; the
/// fitted span is only well-defined (and hence equivariance testable) at a
/// spectral gap, ties being span-stable only.
fn planted_pair(seed: u64) -> (EnvCovariances, usize) {
    let mut rng = Rng::seed_from_u64(seed);
    let dim = 3 + rng.next_below(3); // 3..=5
    let d_env = 1 + rng.next_below(dim - 2); // kernel dim >= 2
    let a_inv = DMatrix::from_fn(dim, 1, |_, _| rng.normal());
    let a_env = DMatrix::from_fn(dim, d_env, |_, _| rng.normal());
    let v1 = 2.0 + rng.next_f64();
    let v2 = 0.3 * v1;
    let noise = 0.01 + 0.05 * rng.next_f64();
    let eye = DMatrix::identity(dim, dim);
    let s1 = &a_inv * a_inv.transpose() + (&a_env * a_env.transpose()) * v1 + &eye * noise;
    let s2 = &a_inv * a_inv.transpose() + (&a_env * a_env.transpose()) * v2 + &eye * noise;
    (
        EnvCovariances::new(s1, s2, DVector::zeros(dim), DVector::zeros(dim)).unwrap(),
        dim - d_env,
    )
}

/// Random orthogonal matrix from the QR factorization of a gaussian matrix.
fn random_orthogonal(dim: usize, rng: &mut Rng) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(dim, dim, |_, _| rng.normal());
    let qr = raw.qr();
    qr.q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rotation_equivariance(seed in any::<u64>(), q_seed in any::<u64>()) {
        let (cov, _) = planted_pair(seed);
        let dim = cov.dim();
        let d_r = 1;
        let base = pica_fit(&cov, d_r, KERNEL_TOL_POPULATION).unwrap();

        let mut rng = Rng::seed_from_u64(q_seed);
        let q = random_orthogonal(dim, &mut rng);
        let rotate = |m: &DMatrix<f64>| symmetrize(&(&q * m * q.transpose()));
        let rotated_cov = EnvCovariances::new(
            rotate(cov.sigma1()),
            rotate(cov.sigma2()),
            DVector::zeros(dim),
            DVector::zeros(dim),
        )
        .unwrap();
        let rotated = pica_fit(&rotated_cov, d_r, KERNEL_TOL_POPULATION).unwrap();

        // span(rotated directions) = Q · span(base directions).
        let expected = &q * &base.directions;
        let angle = max_principal_angle(&rotated.directions, &expected).unwrap();
        prop_assert!(angle < 1e-6, "principal angle {angle}");
    }

    #[test]
    fn scale_behavior(seed in any::<u64>(), scale_raw in 1u32..1000) {
        let scale = scale_raw as f64 / 100.0; // 0.01..10
        let (cov, _) = planted_pair(seed);
        let dim = cov.dim();
        let d_r = 1;
        let base = pica_fit(&cov, d_r, KERNEL_TOL_POPULATION).unwrap();
        let scaled_cov = EnvCovariances::new(
            cov.sigma1() * scale,
            cov.sigma2() * scale,
            DVector::zeros(dim),
            DVector::zeros(dim),
        )
        .unwrap();
        let scaled = pica_fit(&scaled_cov, d_r, KERNEL_TOL_POPULATION).unwrap();

        for (a, b) in base.objective_values.iter().zip(&scaled.objective_values) {
            prop_assert!(
                (a * scale - b).abs() <= 1e-8 * (a.abs() * scale).max(1.0),
                "objective {a} · {scale} vs {b}"
            );
        }
        let angle = max_principal_angle(&scaled.directions, &base.directions).unwrap();
        prop_assert!(angle < 1e-6, "span moved by angle {angle}");
    }

    #[test]
    fn tensor_container_round_trip(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
        let mut rng = Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
        let tensor = Tensor::new(vec![rows, cols], TensorData::F64(data)).unwrap();
        let mut meta = Metadata::new();
        meta.insert("seed".into(), seed.to_string());
        let bytes = uirm_core::datasets::tensor_io::encode_tensor(&tensor, &meta).unwrap();
        let (back, meta_back) = uirm_core::datasets::tensor_io::decode_tensor(&bytes).unwrap();
        prop_assert_eq!(back, tensor);
        prop_assert_eq!(meta_back, meta);
    }

    #[test]
    fn kl_nonnegative_everywhere(seed in any::<u64>(), width in 1usize..8) {
        let mut rng = Rng::seed_from_u64(seed);
        let mu: Vec<f64> = (0..width).map(|_| 4.0 * rng.normal()).collect();
        let lv: Vec<f64> = (0..width).map(|_| 3.0 * rng.normal()).collect();
        let pm: Vec<f64> = (0..width).map(|_| 4.0 * rng.normal()).collect();
        let kl = kl_diag_gaussian(&mu, &lv, &pm).unwrap();
        prop_assert!(kl >= 0.0, "kl {kl}");
    }

    #[test]
    fn grid_geometry(n in 1usize..10, cols in 1usize..10, side in 2usize..8) {
        let tile = Image::new(1, side, side, vec![0.5; side * side]).unwrap();
        let tiles: Vec<Image> = (0..n).map(|_| tile.clone()).collect();
        let grid = image_grid(&tiles, cols).unwrap();
        let rows = n.div_ceil(cols);
        prop_assert_eq!(grid.height, rows * side + (rows - 1) * 2);
        prop_assert_eq!(grid.width, cols * side + (cols - 1) * 2);
        prop_assert!(encode_image(&grid).is_ok());
    }
}

#[test]
fn planted_pair_kernels_are_as_declared() {
    for seed in 0..50 {
        let (cov, kernel_dim) = planted_pair(seed);
        let model = pica_fit(&cov, kernel_dim, KERNEL_TOL_POPULATION).unwrap();
        assert_eq!(model.kernel_dim, kernel_dim, "seed {seed}");
        let gram = model.directions.transpose() * &model.directions;
        let eye = DMatrix::identity(kernel_dim, kernel_dim);
        assert!(frobenius_norm(&(&gram - &eye)) < 1e-8);
    }
}
