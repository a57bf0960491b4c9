//! Dataset ingestion and construction.
//!
//! Reads raw MNIST IDX files and builds the two multi-environment image
//! benchmarks:
//!
//! - **SMNIST** (squares): grayscale digits with a 7×7 white square whose
//!   corner encodes the environment. Training environments 0 (top-left) and
//!   1 (bottom-right) each take one half of the train split; test
//!   environments 2 (top-right) and 3 (bottom-left) each take the full test
//!   split.
//! - **SCMNIST** (single-colored): the digit is written into exactly one RGB
//!   channel — red for environment 0, green for environment 1 (training,
//!   half the train split each), blue for environment 2 (full test split).
//!
//! Construction is a pure function of the input files: the train halves are
//! positional (first half / second half), pixels are scaled to [0, 1] by
//! /255, and every built image verifiably satisfies its environment's pixel
//! rule.

pub mod idx;
pub mod image_io;
pub mod tensor_io;

pub use idx::{read_idx, write_idx, IdxData, IdxTensor};
pub use image_io::{encode_image, image_grid, write_image, Image};
pub use tensor_io::{read_tensor, write_tensor, Metadata, Tensor, TensorData};

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scm::LabeledBatch;

pub const IMAGE_SIDE: usize = 28;
const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
/// Side length of the environment marker square in SMNIST.
pub const SQUARE_SIDE: usize = 7;

/// All images of one environment, flattened one image per row
/// (channel-planar), with digit labels and provenance.
#[derive(Debug, Clone)]
pub struct EnvImageDataset {
    /// n × (channels·28·28), pixels in [0, 1].
    pub images: DMatrix<f64>,
    pub channels: usize,
    pub labels: Vec<u8>,
    pub env: usize,
    /// Which MNIST split and which slice produced this dataset.
    pub provenance: String,
}

impl EnvImageDataset {
    pub fn n(&self) -> usize {
        self.images.nrows()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.channels * PIXELS
    }

    /// Row `i` as an [`Image`].
    pub fn image(&self, i: usize) -> Image {
        let row: Vec<f64> = self.images.row(i).iter().cloned().collect();
        Image::new(self.channels, IMAGE_SIDE, IMAGE_SIDE, row).expect("row length is validated")
    }

    /// View as the universal batch carrier.
    pub fn to_batch(&self) -> LabeledBatch {
        LabeledBatch {
            data: self.images.clone(),
            env: vec![self.env; self.n()],
            labels: Some(self.labels.clone()),
        }
    }

    /// A contiguous row slice as its own dataset (probe splits).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<EnvImageDataset> {
        if range.end > self.n() || range.start >= range.end {
            return Err(Error::domain(format!(
                "slice {range:?} out of bounds for {} rows",
                self.n()
            )));
        }
        Ok(EnvImageDataset {
            images: self.images.rows(range.start, range.end - range.start).into_owned(),
            channels: self.channels,
            labels: self.labels[range.clone()].to_vec(),
            env: self.env,
            provenance: format!("{}[{}..{}]", self.provenance, range.start, range.end),
        })
    }
}

/// Raw MNIST images + labels scaled to [0, 1], one image per row.
fn idx_to_images(images: &IdxTensor, labels: &IdxTensor) -> Result<(DMatrix<f64>, Vec<u8>)> {
    if images.dims.len() != 3 || images.dims[1] != IMAGE_SIDE || images.dims[2] != IMAGE_SIDE {
        return Err(Error::dim(format!(
            "expected image dims [n, 28, 28], got {:?}",
            images.dims
        )));
    }
    if labels.dims.len() != 1 || labels.dims[0] != images.dims[0] {
        return Err(Error::dim(format!(
            "expected {} labels, got dims {:?}",
            images.dims[0], labels.dims
        )));
    }
    let n = images.dims[0];
    let pixels: Vec<f64> = match &images.data {
        IdxData::U8(v) => v.iter().map(|&b| b as f64 / 255.0).collect(),
        IdxData::F32(v) => {
            if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(&(**x as f64))) {
                return Err(Error::domain(format!(
                    "f32 image data must already lie in [0,1], found {bad}"
                )));
            }
            v.iter().map(|&x| x as f64).collect()
        }
    };
    let labels: Vec<u8> = match &labels.data {
        IdxData::U8(v) => v.clone(),
        IdxData::F32(_) => {
            return Err(Error::domain("labels must be unsigned bytes"));
        }
    };
    let data = DMatrix::from_row_slice(n, PIXELS, &pixels);
    Ok((data, labels))
}

/// Corner of the SMNIST marker square for each environment index.
/// Row/column origins of the 7×7 window.
pub const SMNIST_CORNERS: [(usize, usize); 4] = [
    (0, 0),                                    // env 0: top-left (train)
    (IMAGE_SIDE - SQUARE_SIDE, IMAGE_SIDE - SQUARE_SIDE), // env 1: bottom-right (train)
    (0, IMAGE_SIDE - SQUARE_SIDE),             // env 2: top-right (test)
    (IMAGE_SIDE - SQUARE_SIDE, 0),             // env 3: bottom-left (test)
];

fn paint_square(images: &mut DMatrix<f64>, corner: (usize, usize)) {
    for i in 0..images.nrows() {
        for r in corner.0..corner.0 + SQUARE_SIDE {
            for c in corner.1..corner.1 + SQUARE_SIDE {
                images[(i, r * IMAGE_SIDE + c)] = 1.0;
            }
        }
    }
}

/// Builds the four SMNIST environments. The train split is halved
/// positionally: rows [0, n/2) become environment 0 and rows [n/2, n)
/// environment 1. The full test split is duplicated into environments 2
/// and 3.
pub fn build_smnist(
    train_images: &IdxTensor,
    train_labels: &IdxTensor,
    test_images: &IdxTensor,
    test_labels: &IdxTensor,
) -> Result<[EnvImageDataset; 4]> {
    let (train, train_y) = idx_to_images(train_images, train_labels)?;
    let (test, test_y) = idx_to_images(test_images, test_labels)?;
    let half = train.nrows() / 2;

    let make = |images: DMatrix<f64>, labels: Vec<u8>, env: usize, provenance: String| {
        let mut images = images;
        paint_square(&mut images, SMNIST_CORNERS[env]);
        EnvImageDataset {
            images,
            channels: 1,
            labels,
            env,
            provenance,
        }
    };

    Ok([
        make(
            train.rows(0, half).into_owned(),
            train_y[..half].to_vec(),
            0,
            format!("train[0..{half}]"),
        ),
        make(
            train.rows(half, train.nrows() - half).into_owned(),
            train_y[half..].to_vec(),
            1,
            format!("train[{half}..{}]", train.nrows()),
        ),
        make(test.clone(), test_y.clone(), 2, "test".into()),
        make(test, test_y, 3, "test".into()),
    ])
}

/// Builds the three SCMNIST environments: red (train half 0), green (train
/// half 1), blue (full test split).
pub fn build_scmnist(
    train_images: &IdxTensor,
    train_labels: &IdxTensor,
    test_images: &IdxTensor,
    test_labels: &IdxTensor,
) -> Result<[EnvImageDataset; 3]> {
    let (train, train_y) = idx_to_images(train_images, train_labels)?;
    let (test, test_y) = idx_to_images(test_images, test_labels)?;
    let half = train.nrows() / 2;

    let make = |gray: DMatrix<f64>, labels: Vec<u8>, env: usize, provenance: String| {
        let n = gray.nrows();
        let mut rgb = DMatrix::zeros(n, 3 * PIXELS);
        // Digit goes into channel `env`, other channels stay zero.
        let offset = env * PIXELS;
        for i in 0..n {
            for p in 0..PIXELS {
                rgb[(i, offset + p)] = gray[(i, p)];
            }
        }
        EnvImageDataset {
            images: rgb,
            channels: 3,
            labels,
            env,
            provenance,
        }
    };

    Ok([
        make(
            train.rows(0, half).into_owned(),
            train_y[..half].to_vec(),
            0,
            format!("train[0..{half}]"),
        ),
        make(
            train.rows(half, train.nrows() - half).into_owned(),
            train_y[half..].to_vec(),
            1,
            format!("train[{half}..{}]", train.nrows()),
        ),
        make(test, test_y, 2, "test".into()),
    ])
}

/// Writes one environment dataset as a u8 image tensor plus a label tensor
/// (`env{e}_images.uirm`, `env{e}_labels.uirm`). Pixels are quantized by
/// round(p·255), which is exact for data that originated as unsigned bytes.
pub fn save_env_image_dataset(
    dir: impl AsRef<Path>,
    dataset: &EnvImageDataset,
    variant: &str,
) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let n = dataset.n();
    let bytes: Vec<u8> = dataset
        .images
        .row_iter()
        .flat_map(|row| {
            row.iter()
                .map(|&p| (p * 255.0).round() as u8)
                .collect::<Vec<_>>()
        })
        .collect();
    let images = Tensor::new(
        vec![n, dataset.channels, IMAGE_SIDE, IMAGE_SIDE],
        TensorData::U8(bytes),
    )?;
    let mut meta = Metadata::new();
    meta.insert("kind".into(), "env-images".into());
    meta.insert("variant".into(), variant.into());
    meta.insert("env".into(), dataset.env.to_string());
    meta.insert("channels".into(), dataset.channels.to_string());
    meta.insert("provenance".into(), dataset.provenance.clone());
    let images_path = dir.join(format!("env{}_images.uirm", dataset.env));
    write_tensor(&images_path, &images, &meta)?;

    let labels = Tensor::new(vec![n], TensorData::U8(dataset.labels.clone()))?;
    let mut label_meta = Metadata::new();
    label_meta.insert("kind".into(), "env-labels".into());
    label_meta.insert("env".into(), dataset.env.to_string());
    let labels_path = dir.join(format!("env{}_labels.uirm", dataset.env));
    write_tensor(&labels_path, &labels, &label_meta)?;
    Ok(vec![images_path, labels_path])
}

/// Loads one environment dataset written by [`save_env_image_dataset`].
pub fn load_env_image_dataset(dir: impl AsRef<Path>, env: usize) -> Result<EnvImageDataset> {
    let dir = dir.as_ref();
    let (images, meta) = read_tensor(dir.join(format!("env{env}_images.uirm")))?;
    if meta.get("kind").map(String::as_str) != Some("env-images") {
        return Err(Error::domain(format!(
            "env{env}_images.uirm is not an environment image tensor"
        )));
    }
    if images.dims.len() != 4 || images.dims[2] != IMAGE_SIDE || images.dims[3] != IMAGE_SIDE {
        return Err(Error::dim(format!(
            "expected dims [n, c, 28, 28], got {:?}",
            images.dims
        )));
    }
    let (n, channels) = (images.dims[0], images.dims[1]);
    let bytes = images.u8_slice()?;
    let data = DMatrix::from_fn(n, channels * PIXELS, |i, j| {
        bytes[i * channels * PIXELS + j] as f64 / 255.0
    });
    let (labels, _) = read_tensor(dir.join(format!("env{env}_labels.uirm")))?;
    if labels.dims != vec![n] {
        return Err(Error::dim(format!(
            "label dims {:?} do not match {n} images",
            labels.dims
        )));
    }
    Ok(EnvImageDataset {
        images: data,
        channels,
        labels: labels.u8_slice()?.to_vec(),
        env,
        provenance: meta.get("provenance").cloned().unwrap_or_default(),
    })
}

/// Serializes a homogeneous batch (one environment tag, no labels) as an
/// f64 tensor with the tag in metadata.
pub fn save_batch(
    path: impl AsRef<Path>,
    batch: &LabeledBatch,
    extra: &Metadata,
) -> Result<()> {
    let envs = batch.env_set();
    if envs.len() != 1 {
        return Err(Error::domain(
            "only homogeneous batches serialize to a single tensor",
        ));
    }
    let data: Vec<f64> = batch
        .data
        .row_iter()
        .flat_map(|r| r.iter().cloned().collect::<Vec<_>>())
        .collect();
    let tensor = Tensor::new(vec![batch.n(), batch.dim()], TensorData::F64(data))?;
    let mut meta = extra.clone();
    meta.insert("kind".into(), "batch".into());
    meta.insert("env".into(), envs[0].to_string());
    write_tensor(path, &tensor, &meta)
}

/// Reads a batch written by [`save_batch`].
pub fn load_batch(path: impl AsRef<Path>) -> Result<(LabeledBatch, Metadata)> {
    let (tensor, meta) = read_tensor(path)?;
    if tensor.dims.len() != 2 {
        return Err(Error::dim(format!(
            "expected a rank-2 batch tensor, got dims {:?}",
            tensor.dims
        )));
    }
    let env: usize = meta
        .get("env")
        .ok_or_else(|| Error::domain("batch tensor missing env tag"))?
        .parse()
        .map_err(|e| Error::domain(format!("bad env tag: {e}")))?;
    let (n, d) = (tensor.dims[0], tensor.dims[1]);
    let data = DMatrix::from_row_slice(n, d, tensor.f64_slice()?);
    Ok((LabeledBatch::homogeneous(data, env), meta))
}

/// The four standard MNIST files.
#[derive(Debug)]
pub struct MnistFiles {
    pub train_images: IdxTensor,
    pub train_labels: IdxTensor,
    pub test_images: IdxTensor,
    pub test_labels: IdxTensor,
}

/// Loads the standard MNIST file quartet from a directory, accepting both
/// the `-idx3-ubyte` and `.idx3-ubyte` naming conventions.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<MnistFiles> {
    let dir = dir.as_ref();
    let find = |stem: &str, suffix: &str| -> Result<IdxTensor> {
        for sep in ["-", "."] {
            let candidate = dir.join(format!("{stem}{sep}{suffix}"));
            if candidate.is_file() {
                return read_idx(&candidate);
            }
        }
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing MNIST file {stem}-{suffix} under {}", dir.display()),
        )))
    };
    Ok(MnistFiles {
        train_images: find("train-images", "idx3-ubyte")?,
        train_labels: find("train-labels", "idx1-ubyte")?,
        test_images: find("t10k-images", "idx3-ubyte")?,
        test_labels: find("t10k-labels", "idx1-ubyte")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A tiny fake MNIST pair: `n` images with a diagonal stripe whose
    /// intensity encodes the label.
    fn fake_mnist(n: usize, label_offset: u8) -> (IdxTensor, IdxTensor) {
        let mut pixels = vec![0u8; n * PIXELS];
        let mut labels = vec![0u8; n];
        for i in 0..n {
            labels[i] = ((i as u8) + label_offset) % 10;
            for d in 0..IMAGE_SIDE {
                pixels[i * PIXELS + d * IMAGE_SIDE + d] = 100 + labels[i] * 10;
            }
        }
        (
            IdxTensor {
                dims: vec![n, IMAGE_SIDE, IMAGE_SIDE],
                data: IdxData::U8(pixels),
            },
            IdxTensor {
                dims: vec![n],
                data: IdxData::U8(labels),
            },
        )
    }

    #[test]
    fn smnist_paints_unit_squares_in_the_right_corners() {
        let (ti, tl) = fake_mnist(10, 0);
        let (si, sl) = fake_mnist(4, 3);
        let envs = build_smnist(&ti, &tl, &si, &sl).unwrap();
        assert_eq!(envs[0].n(), 5);
        assert_eq!(envs[1].n(), 5);
        assert_eq!(envs[2].n(), 4);
        assert_eq!(envs[3].n(), 4);

        for (env, ds) in envs.iter().enumerate() {
            let (r0, c0) = SMNIST_CORNERS[env];
            for i in 0..ds.n() {
                let img = ds.image(i);
                let mut sum = 0.0;
                for r in r0..r0 + SQUARE_SIDE {
                    for c in c0..c0 + SQUARE_SIDE {
                        sum += img.get(0, r, c);
                    }
                }
                let mean = sum / (SQUARE_SIDE * SQUARE_SIDE) as f64;
                assert_eq!(mean, 1.0, "env {env} image {i} square mean {mean}");
            }
        }
    }

    #[test]
    fn smnist_halving_is_deterministic_and_label_aligned() {
        let (ti, tl) = fake_mnist(8, 0);
        let (si, sl) = fake_mnist(2, 0);
        let a = build_smnist(&ti, &tl, &si, &sl).unwrap();
        let b = build_smnist(&ti, &tl, &si, &sl).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.images, y.images);
            assert_eq!(x.labels, y.labels);
        }
        // First half keeps the first labels.
        assert_eq!(a[0].labels, vec![0, 1, 2, 3]);
        assert_eq!(a[1].labels, vec![4, 5, 6, 7]);
    }

    #[test]
    fn scmnist_uses_exactly_one_channel_per_env() {
        let (ti, tl) = fake_mnist(6, 0);
        let (si, sl) = fake_mnist(3, 1);
        let envs = build_scmnist(&ti, &tl, &si, &sl).unwrap();
        assert_eq!(envs[2].n(), 3, "test env takes the full test split");
        for (env, ds) in envs.iter().enumerate() {
            for i in 0..ds.n() {
                let img = ds.image(i);
                for ch in 0..3 {
                    let energy: f64 = (0..IMAGE_SIDE)
                        .flat_map(|r| (0..IMAGE_SIDE).map(move |c| (r, c)))
                        .map(|(r, c)| img.get(ch, r, c))
                        .sum();
                    if ch == env {
                        assert!(energy > 0.0, "env {env} image {i}: digit channel empty");
                    } else {
                        assert_eq!(energy, 0.0, "env {env} image {i}: channel {ch} not zero");
                    }
                }
            }
        }
    }

    #[test]
    fn builders_reject_shape_mismatches() {
        let (ti, _) = fake_mnist(4, 0);
        let bad_labels = IdxTensor {
            dims: vec![3],
            data: IdxData::U8(vec![0, 1, 2]),
        };
        assert!(build_smnist(&ti, &bad_labels, &ti, &bad_labels).is_err());

        let bad_images = IdxTensor {
            dims: vec![4, 14, 14],
            data: IdxData::U8(vec![0; 4 * 196]),
        };
        let (_, tl) = fake_mnist(4, 0);
        assert!(build_scmnist(&bad_images, &tl, &bad_images, &tl).is_err());
    }

    #[test]
    fn env_dataset_save_load_is_exact_for_byte_sourced_pixels() {
        let (ti, tl) = fake_mnist(6, 0);
        let (si, sl) = fake_mnist(2, 0);
        let envs = build_smnist(&ti, &tl, &si, &sl).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_env_image_dataset(dir.path(), &envs[1], "smnist").unwrap();
        let back = load_env_image_dataset(dir.path(), 1).unwrap();
        assert_eq!(back.images, envs[1].images);
        assert_eq!(back.labels, envs[1].labels);
        assert_eq!(back.channels, 1);
        assert_eq!(back.provenance, envs[1].provenance);
    }

    #[test]
    fn batch_save_load_round_trip() {
        let data = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let batch = LabeledBatch::homogeneous(data, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.uirm");
        save_batch(&path, &batch, &Metadata::new()).unwrap();
        let (back, meta) = load_batch(&path).unwrap();
        assert_eq!(back.data, batch.data);
        assert_eq!(back.env, batch.env);
        assert_eq!(meta.get("env").map(String::as_str), Some("1"));
    }

    #[test]
    fn dataset_slice_and_batch_views() {
        let (ti, tl) = fake_mnist(10, 0);
        let (si, sl) = fake_mnist(2, 0);
        let envs = build_smnist(&ti, &tl, &si, &sl).unwrap();
        let sub = envs[0].slice(1..3).unwrap();
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.labels, envs[0].labels[1..3]);
        let batch = sub.to_batch();
        assert_eq!(batch.env, vec![0, 0]);
        assert!(envs[0].slice(4..9).is_err());
    }
}
