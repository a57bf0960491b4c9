//! PGM/PPM export and grid composition for figure-style image dumps.

use std::path::Path;

use crate::error::{Error, Result};

/// An image with pixels in [0, 1], stored channel-planar: index
/// `(c · height + row) · width + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(Error::dim(format!(
                "{channels}x{height}x{width} image needs {} pixels, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.pixels[(c * self.height + r) * self.width + col]
    }

    fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        self.pixels[(c * self.height + r) * self.width + col] = v;
    }
}

/// 8-bit quantization: round(p·255), round-half-up for the in-range values.
fn quantize(p: f64) -> u8 {
    (p * 255.0).round() as u8
}

/// Encodes to binary PGM (P5) for 1-channel images or binary PPM (P6,
/// interleaved RGB) for 3-channel images. Pixels outside [0, 1] are a
/// domain error.
pub fn encode_image(image: &Image) -> Result<Vec<u8>> {
    if let Some(bad) = image.pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::domain(format!(
            "pixel {bad} outside [0,1]; refusing to quantize"
        )));
    }
    let mut out = Vec::new();
    match image.channels {
        1 => {
            out.extend_from_slice(format!("P5\n{} {}\n255\n", image.width, image.height).as_bytes());
            for r in 0..image.height {
                for c in 0..image.width {
                    out.push(quantize(image.get(0, r, c)));
                }
            }
        }
        3 => {
            out.extend_from_slice(format!("P6\n{} {}\n255\n", image.width, image.height).as_bytes());
            for r in 0..image.height {
                for c in 0..image.width {
                    for ch in 0..3 {
                        out.push(quantize(image.get(ch, r, c)));
                    }
                }
            }
        }
        other => {
            return Err(Error::domain(format!(
                "only 1- or 3-channel images can be written, got {other}"
            )));
        }
    }
    Ok(out)
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    std::fs::write(path.as_ref(), encode_image(image)?)?;
    Ok(())
}

/// Gutter width between grid tiles, in pixels.
pub const GRID_GUTTER: usize = 2;

/// Tiles images row-major onto a white canvas with 2-pixel gutters between
/// tiles. All images must share one shape; `cols` fixes the grid width.
pub fn image_grid(images: &[Image], cols: usize) -> Result<Image> {
    if images.is_empty() || cols == 0 {
        return Err(Error::domain("grid needs at least one image and one column"));
    }
    let (ch, h, w) = (images[0].channels, images[0].height, images[0].width);
    for (i, img) in images.iter().enumerate() {
        if img.channels != ch || img.height != h || img.width != w {
            return Err(Error::dim(format!("image {i} has a different shape")));
        }
    }
    let rows = images.len().div_ceil(cols);
    let canvas_h = rows * h + (rows - 1) * GRID_GUTTER;
    let canvas_w = cols * w + (cols - 1) * GRID_GUTTER;
    let mut canvas = Image::new(ch, canvas_h, canvas_w, vec![1.0; ch * canvas_h * canvas_w])?;
    for (i, img) in images.iter().enumerate() {
        let (gr, gc) = (i / cols, i % cols);
        let (r0, c0) = (gr * (h + GRID_GUTTER), gc * (w + GRID_GUTTER));
        for c in 0..ch {
            for r in 0..h {
                for col in 0..w {
                    canvas.set(c, r0 + r, c0 + col, img.get(c, r, col));
                }
            }
        }
    }
    Ok(canvas)
}
