//! Byte-level rendering of binaries as grayscale images.
//!
//! A binary is read as a sequence of bytes, each byte becomes one pixel
//! with intensity `b / 255`, and the 1-D array is wrapped into rows whose
//! width depends on the file size (see [`width_for_size`]). The last row is
//! zero padded. The rectangle is then resized to a square and, for
//! backbones that expect color input, replicated into three channels.

pub mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use store::{ImageRecord, ImageStore};

/// Default square side for the high resolution pipeline.
pub const DEFAULT_SIDE: usize = 224;
/// Side used by the training-from-scratch pipeline.
pub const SMALL_SIDE: usize = 28;

const KB: u64 = 1024;

/// Upper bracket bounds in kilobytes (inclusive) and the row width for each.
const WIDTH_TABLE: [(u64, usize); 8] = [
    (10, 32),
    (30, 64),
    (60, 128),
    (100, 256),
    (200, 384),
    (500, 512),
    (1000, 768),
    (2000, 1024),
];
const WIDTH_ABOVE_TABLE: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteStream {
    pub source_id: String,
    pub bytes: Vec<u8>,
}

impl ByteStream {
    pub fn new(source_id: impl Into<String>, bytes: Vec<u8>) -> Self {
        ByteStream {
            source_id: source_id.into(),
            bytes,
        }
    }
}

/// Row-major grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} image with {} pixels",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }
}

/// Square grayscale image, `side x side`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareImage {
    pub side: usize,
    pub pixels: Vec<f32>,
}

impl SquareImage {
    pub fn new(side: usize, pixels: Vec<f32>) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::ShapeMismatch(format!(
                "square side {side} with {} pixels",
                pixels.len()
            )));
        }
        Ok(SquareImage { side, pixels })
    }

    pub fn filled(side: usize, value: f32) -> Self {
        SquareImage {
            side,
            pixels: vec![value; side * side],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.side + col]
    }

    pub fn as_gray(&self) -> GrayImage {
        GrayImage {
            height: self.side,
            width: self.side,
            pixels: self.pixels.clone(),
        }
    }

    /// Pixels widened to f64, the feature vector used by the pixel classifiers.
    pub fn features(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }
}

/// `side x side x 3`, channel-last. All three planes are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbTensor {
    pub side: usize,
    pub data: Vec<f32>,
}

impl RgbTensor {
    pub fn channel(&self, c: usize) -> SquareImage {
        assert!(c < 3, "channel index {c} out of range");
        SquareImage {
            side: self.side,
            pixels: self.data.iter().skip(c).step_by(3).copied().collect(),
        }
    }
}

/// Row width for a binary of `file_size_bytes` bytes.
///
/// Brackets are half-open `(lo, hi]` in kilobytes of 1024 bytes. Anything
/// above 2000 kb gets width 2048.
pub fn width_for_size(file_size_bytes: u64) -> usize {
    WIDTH_TABLE
        .iter()
        .find(|&&(hi_kb, _)| file_size_bytes <= hi_kb * KB)
        .map(|&(_, w)| w)
        .unwrap_or(WIDTH_ABOVE_TABLE)
}

/// Wrap the normalized bytes into rows of [`width_for_size`] pixels, padding
/// the final row with zeros.
pub fn bytes_to_gray(stream: &ByteStream) -> Result<GrayImage> {
    let len = stream.bytes.len();
    if len == 0 {
        return Err(Error::EmptyInput);
    }
    let width = width_for_size(len as u64);
    let height = len.div_ceil(width);
    let mut pixels = vec![0f32; height * width];
    for (p, &b) in pixels.iter_mut().zip(&stream.bytes) {
        *p = b as f32 / 255.0;
    }
    Ok(GrayImage {
        height,
        width,
        pixels,
    })
}

/// Source coordinate and blend weight for output index `i` under
/// pixel-center alignment.
fn sample_axis(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let scale = n_in as f64 / n_out as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear resize to `out_h x out_w` with half-pixel offsets and edge clamping.
pub fn resize_to(img: &GrayImage, out_h: usize, out_w: usize) -> Vec<f32> {
    let cols: Vec<_> = (0..out_w)
        .map(|x| sample_axis(x, img.width, out_w))
        .collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = sample_axis(y, img.height, out_h);
        let top = &img.pixels[y0 * img.width..(y0 + 1) * img.width];
        let bottom = &img.pixels[y1 * img.width..(y1 + 1) * img.width];
        for &(x0, x1, fx) in &cols {
            let t = (1.0 - fx) * top[x0] as f64 + fx * top[x1] as f64;
            let b = (1.0 - fx) * bottom[x0] as f64 + fx * bottom[x1] as f64;
            out.push(((1.0 - fy) * t + fy * b) as f32);
        }
    }
    out
}

pub fn resize_bilinear(img: &GrayImage, side: usize) -> Result<SquareImage> {
    if side == 0 {
        return Err(Error::InvalidArgument("resize side must be >= 1".into()));
    }
    Ok(SquareImage {
        side,
        pixels: resize_to(img, side, side),
    })
}

pub fn replicate_channels(img: &SquareImage) -> RgbTensor {
    let data = img.pixels.iter().flat_map(|&p| [p, p, p]).collect();
    RgbTensor {
        side: img.side,
        data,
    }
}

pub fn to_small(img: &GrayImage) -> SquareImage {
    SquareImage {
        side: SMALL_SIDE,
        pixels: resize_to(img, SMALL_SIDE, SMALL_SIDE),
    }
}

/// Options for the full bytes-to-square pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub side: usize,
    pub small: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            side: DEFAULT_SIDE,
            small: false,
        }
    }
}

/// Output of [`render`]: the square image and, if requested, its 28x28 twin.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: SquareImage,
    pub small: Option<SquareImage>,
}

/// Bytes -> padded rectangle -> square image(s).
pub fn render(stream: &ByteStream, opts: RenderOptions) -> Result<Rendered> {
    let gray = bytes_to_gray(stream)?;
    Ok(Rendered {
        image: resize_bilinear(&gray, opts.side)?,
        small: opts.small.then(|| to_small(&gray)),
    })
}
