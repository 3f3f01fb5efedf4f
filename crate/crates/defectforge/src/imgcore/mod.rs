//! Image representation, deterministic I/O, and pixel-level utilities shared
//! by every other module.
//!
//! Pixels are stored as 8 bits per channel; operations that need real-valued
//! math work in transient `f64` and quantize once on the way out. PNG is the
//! canonical on-disk format (lossless, diffable by hash); PGM/PPM are accepted
//! as well.

mod rng;

pub use rng::Rng;

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};
use thiserror::Error;

/// Errors raised by image I/O.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported raster format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("corrupt or undecodable image data: {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("i/o failure on {path}: {reason}")]
    IoFailure { path: PathBuf, reason: String },
}

/// 8-bit raster with explicit geometry.
///
/// `data` is row-major with `channels` bytes per pixel; `channels` is 1
/// (grayscale) or 3 (RGB). Buffers are immutable in spirit: every operation
/// in the crate takes them by reference and returns a new buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl ImageBuffer {
    /// Wraps raw pixel data. Panics if the data length does not match
    /// `width * height * channels` or `channels` is not 1 or 3.
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Self {
        assert!(width >= 1 && height >= 1, "empty image");
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert_eq!(
            data.len(),
            width as usize * height as usize * channels as usize,
            "pixel data length does not match geometry"
        );
        Self { width, height, channels, data }
    }

    /// Constant-valued buffer.
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Self {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; len])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    fn index(&self, x: u32, y: u32, c: u8) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize
    }

    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.index(x, y, c)]
    }

    pub fn set(&mut self, x: u32, y: u32, c: u8, value: u8) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    /// True when both buffers have the same geometry and channel count.
    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Binary raster aligned to an [`ImageBuffer`]; 1 marks a defect pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefectMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl DefectMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Number of defect pixels.
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// An empty mask marks the sample as normal.
    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| !b)
    }

    /// True if any defect pixel lies on the outermost pixel ring.
    pub fn touches_border(&self) -> bool {
        let (w, h) = (self.width, self.height);
        (0..w).any(|x| self.get(x, 0) || self.get(x, h - 1))
            || (0..h).any(|y| self.get(0, y) || self.get(w - 1, y))
    }

    /// Renders the mask as a 1-channel image (0 or 255) for persistence.
    pub fn to_image(&self) -> ImageBuffer {
        let data = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        ImageBuffer::new(self.width, self.height, 1, data)
    }

    /// Inverse of [`DefectMask::to_image`]; any nonzero pixel is a defect bit.
    pub fn from_image(img: &ImageBuffer) -> Self {
        assert_eq!(img.channels(), 1, "mask images are single-channel");
        let bits = img.data().iter().map(|&v| v != 0).collect();
        Self { width: img.width(), height: img.height(), bits }
    }
}

/// Loads a PNG (or PGM/PPM) file into an [`ImageBuffer`].
///
/// 8-bit grayscale and RGB files map directly; alpha channels are dropped.
/// Higher bit depths are rejected as unsupported rather than silently
/// truncated.
pub fn load_image(path: &Path) -> Result<ImageBuffer, ImageError> {
    if !path.exists() {
        return Err(ImageError::NotFound(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| ImageError::IoFailure { path: path.to_path_buf(), reason: e.to_string() })?
        .with_guessed_format()
        .map_err(|e| ImageError::IoFailure { path: path.to_path_buf(), reason: e.to_string() })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        _ => return Err(ImageError::UnsupportedFormat(path.to_path_buf())),
    }
    let decoded = reader.decode().map_err(|e| ImageError::CorruptHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let buffer = match decoded {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            ImageBuffer::new(w, h, 1, img.into_raw())
        }
        DynamicImage::ImageRgb8(img) => {
            let (w, h) = img.dimensions();
            ImageBuffer::new(w, h, 3, img.into_raw())
        }
        DynamicImage::ImageLumaA8(img) => {
            let (w, h) = img.dimensions();
            let data = img.into_raw().chunks_exact(2).map(|px| px[0]).collect();
            ImageBuffer::new(w, h, 1, data)
        }
        DynamicImage::ImageRgba8(img) => {
            let (w, h) = img.dimensions();
            let data = img
                .into_raw()
                .chunks_exact(4)
                .flat_map(|px| [px[0], px[1], px[2]])
                .collect();
            ImageBuffer::new(w, h, 3, data)
        }
        _ => return Err(ImageError::UnsupportedFormat(path.to_path_buf())),
    };
    Ok(buffer)
}

/// Saves an [`ImageBuffer`] losslessly; the format comes from the file
/// extension (`.png`, `.pgm`, `.ppm`). A reload yields a bit-identical buffer.
pub fn save_image(img: &ImageBuffer, path: &Path) -> Result<(), ImageError> {
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        _ => image::ExtendedColorType::Rgb8,
    };
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("png") | None => ImageFormat::Png,
        Some("pgm") | Some("ppm") | Some("pnm") => ImageFormat::Pnm,
        Some(_) => return Err(ImageError::UnsupportedFormat(path.to_path_buf())),
    };
    image::save_buffer_with_format(path, img.data(), img.width(), img.height(), color, format)
        .map_err(|e| ImageError::IoFailure { path: path.to_path_buf(), reason: e.to_string() })
}

/// Collapses RGB to luminance with `round(0.299 R + 0.587 G + 0.114 B)`.
/// Single-channel input is returned unchanged.
pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    if img.channels() == 1 {
        return img.clone();
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| {
            let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            y.round() as u8
        })
        .collect();
    ImageBuffer::new(img.width(), img.height(), 1, data)
}
