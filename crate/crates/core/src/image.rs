//! Dense image storage and file I/O.
//!
//! [`Grid`] is an unconstrained row-major `height × width × channels` lattice
//! of reals, used for gradients and signed texture fields. [`Image`] wraps a
//! grid whose entries all lie in `[0, 1]`. Files are 8-bit PNG or PNM
//! (PPM/PGM, binary or ASCII); 16-bit inputs are accepted on load.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageError, ImageFormat, ImageReader};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Degenerate(format!(
                "grid dimensions {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "buffer of {} entries for {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty grid");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty grid");
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Elementwise map producing a new grid of the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        crate::error::ensure_same_dims("zip_map", self.dims(), other.dims())?;
        Ok(Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn dot(&self, other: &Grid) -> Result<f64> {
        crate::error::ensure_same_dims("dot", self.dims(), other.dims())?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Clamps every entry into `[0, 1]`.
    pub fn into_image_clamped(mut self) -> Image {
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Image(self)
    }
}

/// An intensity image: a [`Grid`] with every entry in `[0, 1]` and 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Grid);

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_grid(Grid::new(height, width, channels, data)?)
    }

    pub fn from_grid(grid: Grid) -> Result<Self> {
        if grid.channels != 1 && grid.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {}",
                grid.channels
            )));
        }
        if let Some(v) = grid.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Image(grid))
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        assert!(channels == 1 || channels == 3);
        Image(Grid::filled(height, width, channels, value))
    }

    /// Builds an image from a generator; values are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(channels == 1 || channels == 3);
        Grid::from_fn(height, width, channels, f).into_image_clamped()
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.0.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.0.get(y, x, c)
    }

    pub fn crop(&self, region: PixelRegion) -> Result<Image> {
        if region.height == 0
            || region.width == 0
            || region.top + region.height > self.height()
            || region.left + region.width > self.width()
        {
            return Err(Error::InvalidArgument(format!(
                "region {region:?} outside {}x{} image",
                self.height(),
                self.width()
            )));
        }
        let c = self.channels();
        Ok(Image(Grid::from_fn(region.height, region.width, c, |y, x, k| {
            self.get(region.top + y, region.left + x, k)
        })))
    }
}

impl AsRef<Grid> for Image {
    fn as_ref(&self) -> &Grid {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// ITU-R BT.601 luma of a 3-channel image.
pub fn to_luma(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::InvalidArgument(format!(
            "luma needs 3 channels, got {}",
            img.channels()
        )));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            // Exact for gray pixels: the weights sum to 1 but rounding would not preserve R=G=B.
            if p[0] == p[1] && p[1] == p[2] {
                p[0]
            } else {
                (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0)
            }
        })
        .collect();
    Image::new(img.height(), img.width(), 1, data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("{other:?}"),
            })
        }
        None => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "unrecognized signature".into(),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| match e {
        ImageError::Unsupported(u) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: u.to_string(),
        },
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::CorruptImage {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    from_dynamic(decoded)
}

fn from_dynamic(img: DynamicImage) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = !img.color().has_color();
    let wide = img.color().bytes_per_pixel() / img.color().channel_count() > 1;
    let (channels, data): (usize, Vec<f64>) = match (gray, wide) {
        (true, false) => (
            1,
            img.to_luma8().into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        ),
        (true, true) => (
            1,
            img.to_luma16()
                .into_raw()
                .iter()
                .map(|&v| v as f64 / 65535.0)
                .collect(),
        ),
        (false, false) => (
            3,
            img.to_rgb8().into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        ),
        (false, true) => (
            3,
            img.to_rgb16()
                .into_raw()
                .iter()
                .map(|&v| v as f64 / 65535.0)
                .collect(),
        ),
    };
    Image::new(h, w, channels, data)
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_dynamic(img: &Image) -> DynamicImage {
    let (h, w) = (img.height() as u32, img.width() as u32);
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    if img.channels() == 1 {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("sized buffer"))
    } else {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("sized buffer"))
    }
}

/// Saves as 8-bit PNG, or binary PNM when the extension is `ppm`, `pgm` or `pnm`.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("ppm") | Some("pgm") | Some("pnm") => save_pnm(img, path, false),
        _ => {
            let write_err = |e: ImageError| Error::Write {
                path: path.to_path_buf(),
                reason: e.to_string(),
            };
            to_dynamic(img)
                .save_with_format(path, ImageFormat::Png)
                .map_err(write_err)
        }
    }
}

/// Writes PPM (3 channels) or PGM (1 channel), binary or ASCII.
pub fn save_pnm(img: &Image, path: impl AsRef<Path>, ascii: bool) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let encoding = if ascii {
        SampleEncoding::Ascii
    } else {
        SampleEncoding::Binary
    };
    let subtype = if img.channels() == 1 {
        PnmSubtype::Graymap(encoding)
    } else {
        PnmSubtype::Pixmap(encoding)
    };
    let encoder = PnmEncoder::new(BufWriter::new(file)).with_subtype(subtype);
    to_dynamic(img)
        .write_with_encoder(encoder)
        .map_err(|e| Error::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
