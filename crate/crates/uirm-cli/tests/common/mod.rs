//! Shared test fixtures: the image corpus the acceptance suite runs on and
//! the pass/fail reporting helpers.
//!
//! Data resolution: when `UIRM_MNIST_DIR` points at a directory with the
//! four standard MNIST IDX files, the suite runs on real MNIST. Otherwise
//! it deterministically generates a stand-in corpus with the same file
//! shapes — 60000 train / 10000 test 28×28 grayscale images in IDX format,
//! ten visually distinct glyph classes (rings, bars, diagonals, crosses,
//! squares) with translation jitter, intensity variation, and speckle —
//! and runs the identical pipeline on it.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use uirm_core::datasets::{write_idx, IdxData, IdxTensor, IMAGE_SIDE};
use uirm_core::rng::Rng;

const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Renders one glyph class onto a 28×28 canvas. `dr`/`dc` translate the
/// pattern, `fg` is the stroke byte value.
fn render_glyph(class: u8, dr: i32, dc: i32, fg: u8) -> [u8; PIXELS] {
    let mut out = [0u8; PIXELS];
    let stroke = |out: &mut [u8; PIXELS], r: i32, c: i32| {
        let (r, c) = (r + dr, c + dc);
        if (0..IMAGE_SIDE as i32).contains(&r) && (0..IMAGE_SIDE as i32).contains(&c) {
            out[r as usize * IMAGE_SIDE + c as usize] = fg;
        }
    };
    let vbar = |out: &mut [u8; PIXELS], c0: i32| {
        for r in 5..23 {
            for c in c0..c0 + 3 {
                stroke(out, r, c);
            }
        }
    };
    let hbar = |out: &mut [u8; PIXELS], r0: i32| {
        for r in r0..r0 + 3 {
            for c in 5..23 {
                stroke(out, r, c);
            }
        }
    };
    let diag_main = |out: &mut [u8; PIXELS]| {
        for r in 4..24 {
            for w in -1..=1 {
                stroke(out, r, r + w);
            }
        }
    };
    let diag_anti = |out: &mut [u8; PIXELS]| {
        for r in 4..24 {
            for w in -1..=1 {
                stroke(out, r, 27 - r + w);
            }
        }
    };
    match class {
        0 => {
            // Ring of radius 8 with a ~2.2px stroke.
            for r in 0..IMAGE_SIDE as i32 {
                for c in 0..IMAGE_SIDE as i32 {
                    let d = (((r - 14) * (r - 14) + (c - 14) * (c - 14)) as f64).sqrt();
                    if (d - 8.0).abs() <= 1.4 {
                        stroke(&mut out, r, c);
                    }
                }
            }
        }
        1 => vbar(&mut out, 13),
        2 => hbar(&mut out, 13),
        3 => {
            vbar(&mut out, 8);
            vbar(&mut out, 18);
        }
        4 => {
            hbar(&mut out, 8);
            hbar(&mut out, 18);
        }
        5 => diag_main(&mut out),
        6 => diag_anti(&mut out),
        7 => {
            vbar(&mut out, 13);
            hbar(&mut out, 13);
        }
        8 => {
            diag_main(&mut out);
            diag_anti(&mut out);
        }
        _ => {
            for r in 9..20 {
                for c in 9..20 {
                    stroke(&mut out, r, c);
                }
            }
        }
    }
    out
}

/// Generates `n` glyph images with balanced classes, translation jitter in
/// ±3 pixels, stroke intensity in [160, 255], and 2% background speckle.
pub fn generate_corpus(n: usize, seed: u64) -> (IdxTensor, IdxTensor) {
    let mut rng = Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 10) as u8;
        let dr = rng.next_below(7) as i32 - 3;
        let dc = rng.next_below(7) as i32 - 3;
        let fg = 160 + rng.next_below(96) as u8;
        let mut img = render_glyph(class, dr, dc, fg);
        for p in img.iter_mut() {
            if *p == 0 && rng.next_f64() < 0.02 {
                *p = rng.next_below(60) as u8;
            }
        }
        pixels.extend_from_slice(&img);
        labels.push(class);
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

/// Writes a full MNIST-shaped corpus (60000 train / 10000 test) into `dir`
/// with the standard file names.
pub fn write_corpus_dir(dir: &Path, train_n: usize, test_n: usize) {
    std::fs::create_dir_all(dir).expect("create corpus dir");
    let (train_images, train_labels) = generate_corpus(train_n, 0xC0FFEE);
    let (test_images, test_labels) = generate_corpus(test_n, 0xBEEF);
    write_idx(dir.join("train-images-idx3-ubyte"), &train_images).unwrap();
    write_idx(dir.join("train-labels-idx1-ubyte"), &train_labels).unwrap();
    write_idx(dir.join("t10k-images-idx3-ubyte"), &test_images).unwrap();
    write_idx(dir.join("t10k-labels-idx1-ubyte"), &test_labels).unwrap();
}

fn has_mnist_files(dir: &Path) -> bool {
    ["train-images-idx3-ubyte", "train-images.idx3-ubyte"]
        .iter()
        .any(|name| dir.join(name).is_file())
}

/// The directory the suite reads MNIST-format files from: real MNIST when
/// `UIRM_MNIST_DIR` is set and populated, the synthetic stand-in corpus
/// otherwise (generated once per target directory and reused).
pub fn mnist_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        if let Ok(dir) = std::env::var("UIRM_MNIST_DIR") {
            let p = PathBuf::from(&dir);
            if has_mnist_files(&p) {
                eprintln!("[fixture] using real MNIST from {dir}");
                return p;
            }
            eprintln!("[fixture] UIRM_MNIST_DIR={dir} has no IDX files; using the synthetic corpus");
        }
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("uirm-synthetic-mnist");
        let marker = root.join(".complete");
        if !marker.is_file() {
            eprintln!("[fixture] generating the synthetic stand-in corpus under {}", root.display());
            write_corpus_dir(&root, 60_000, 10_000);
            std::fs::write(&marker, "ok").unwrap();
        }
        root
    })
}

/// True when the suite is running on real MNIST rather than the stand-in.
pub fn using_real_mnist() -> bool {
    std::env::var("UIRM_MNIST_DIR")
        .map(|d| has_mnist_files(Path::new(&d)))
        .unwrap_or(false)
}

/// A small in-memory corpus subset for memory-bounded dataset builds:
/// first `train_n` train images and first `test_n` test images.
pub fn corpus_subset(train_n: usize, test_n: usize) -> (IdxTensor, IdxTensor, IdxTensor, IdxTensor) {
    let files = uirm_core::datasets::load_mnist_dir(mnist_dir()).expect("corpus loads");
    (
        slice_images(&files.train_images, train_n),
        slice_labels(&files.train_labels, train_n),
        slice_images(&files.test_images, test_n),
        slice_labels(&files.test_labels, test_n),
    )
}

fn slice_images(t: &IdxTensor, n: usize) -> IdxTensor {
    assert!(t.dims[0] >= n, "corpus too small: {} < {n}", t.dims[0]);
    let data = match &t.data {
        IdxData::U8(v) => IdxData::U8(v[..n * PIXELS].to_vec()),
        IdxData::F32(v) => IdxData::F32(v[..n * PIXELS].to_vec()),
    };
    IdxTensor {
        dims: vec![n, IMAGE_SIDE, IMAGE_SIDE],
        data,
    }
}

fn slice_labels(t: &IdxTensor, n: usize) -> IdxTensor {
    let data = match &t.data {
        IdxData::U8(v) => IdxData::U8(v[..n].to_vec()),
        IdxData::F32(v) => IdxData::F32(v[..n].to_vec()),
    };
    IdxTensor {
        dims: vec![n],
        data,
    }
}

/// Collects check failures for one acceptance criterion and prints exactly
/// one pass/fail line.
pub struct Criterion {
    id: u32,
    name: &'static str,
    failures: Vec<String>,
    notes: Vec<String>,
    start: std::time::Instant,
}

impl Criterion {
    pub fn new(id: u32, name: &'static str) -> Self {
        Criterion {
            id,
            name,
            failures: Vec::new(),
            notes: Vec::new(),
            start: std::time::Instant::now(),
        }
    }

    pub fn check(&mut self, ok: bool, detail: impl Into<String>) {
        let detail = detail.into();
        if ok {
            self.notes.push(detail);
        } else {
            self.failures.push(detail);
        }
    }

    /// Runtime limit, enforced under release builds and reported otherwise.
    pub fn check_runtime(&mut self, elapsed: std::time::Duration, limit_s: f64) {
        let detail = format!("runtime {:.2}s (limit {limit_s}s)", elapsed.as_secs_f64());
        if cfg!(debug_assertions) {
            self.notes.push(format!("{detail} — enforced under --release"));
        } else {
            self.check(elapsed.as_secs_f64() < limit_s, detail);
        }
    }

    pub fn finish(self) {
        let elapsed = self.start.elapsed().as_secs_f64();
        if self.failures.is_empty() {
            println!(
                "criterion {:02} [PASS] {} ({elapsed:.1}s) — {}",
                self.id,
                self.name,
                self.notes.join("; ")
            );
        } else {
            println!(
                "criterion {:02} [FAIL] {} ({elapsed:.1}s) — {}",
                self.id,
                self.name,
                self.failures.join("; ")
            );
            panic!(
                "acceptance criterion {} failed: {}",
                self.id,
                self.failures.join("; ")
            );
        }
    }
}
