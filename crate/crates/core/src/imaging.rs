//! Raster containers, color conversion and ROI cropping.
//!
//! All rasters are row-major with a top-left origin; `y` grows downward.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit RGB raster, three bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RgbImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch {
                expected: (width, height),
                found: (data.len() / 3, 1),
            });
        }
        Ok(Self { width, height, data })
    }

    /// Solid image filled with one color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width * 3..(y + 1) * self.width * 3]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_dynamic(img)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(
            |e| Error::Image {
                path: "<memory>".into(),
                message: e.to_string(),
            },
        )?;
        Self::from_dynamic(img)
    }

    fn from_dynamic(img: image::DynamicImage) -> Result<Self> {
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        Self::new(w, h, rgb.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        Ok(out.into_inner())
    }
}

/// 8-bit single-channel raster.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Binary raster whose elements are exactly 0 or 255.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub const ON: u8 = 255;
    pub const OFF: u8 = 0;

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: (width, height),
                found: (data.len(), 1),
            });
        }
        if let Some(bad) = data.iter().find(|&&v| v != 0 && v != 255) {
            return Err(Error::NonBinaryMask(*bad));
        }
        Ok(Self { width, height, data })
    }

    /// Builds a mask from per-pixel booleans (`true` → 255).
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(if f(x, y) { 255 } else { 0 });
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_on(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == Self::ON
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = if on { Self::ON } else { Self::OFF };
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|&&v| v == Self::ON).count()
    }
}

/// Axis-aligned rectangle in frame coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.width >= 1
            && self.height >= 1
            && self.x + self.width <= width
            && self.y + self.height <= height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Places `inner` (relative to this ROI) into the parent frame.
    pub fn compose(&self, inner: Roi) -> Roi {
        Roi::new(self.x + inner.x, self.y + inner.y, inner.width, inner.height)
    }
}

/// Hexcone HSV with hue in degrees `[0, 360)` and s, v in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsvPixel {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Inclusive HSV box; the hue interval wraps through 0 when `h_lo > h_hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsvRange {
    pub h_lo: f64,
    pub h_hi: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl HsvRange {
    /// Default backdrop range: saturated mid-to-bright green.
    pub const GREEN_BACKGROUND: HsvRange = HsvRange {
        h_lo: 75.0,
        h_hi: 165.0,
        s_lo: 0.3,
        s_hi: 1.0,
        v_lo: 0.2,
        v_hi: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let hue_ok = (0.0..=360.0).contains(&self.h_lo) && (0.0..=360.0).contains(&self.h_hi);
        if !hue_ok || self.s_lo > self.s_hi || self.v_lo > self.v_hi {
            return Err(Error::InvalidConfig(format!("malformed HSV range {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, p: HsvPixel) -> bool {
        hsv_in_range(p, self)
    }
}

/// Extracts `roi` from `frame`.
pub fn crop_roi(frame: &RgbImage, roi: Roi) -> Result<RgbImage> {
    if !roi.fits(frame.width, frame.height) {
        return Err(Error::RoiOutOfBounds {
            roi,
            width: frame.width,
            height: frame.height,
        });
    }
    let mut data = Vec::with_capacity(roi.area() * 3);
    for y in roi.y..roi.y + roi.height {
        let start = (y * frame.width + roi.x) * 3;
        data.extend_from_slice(&frame.data[start..start + roi.width * 3]);
    }
    Ok(RgbImage {
        width: roi.width,
        height: roi.height,
        data,
    })
}

pub fn rgb_to_hsv(p: [u8; 3]) -> HsvPixel {
    let r = f64::from(p[0]);
    let g = f64::from(p[1]);
    let b = f64::from(p[2]);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max / 255.0;
    if delta == 0.0 {
        return HsvPixel { h: 0.0, s: 0.0, v };
    }
    let s = delta / max;
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = sector * 60.0;
    if h >= 360.0 {
        h -= 360.0;
    }
    HsvPixel { h, s, v }
}

/// Standard hexcone inverse, rounded to the nearest 8-bit value.
pub fn hsv_to_rgb(p: HsvPixel) -> [u8; 3] {
    let c = p.v * p.s;
    let hp = (p.h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = p.v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r1), q(g1), q(b1)]
}

/// BT.601 luma, rounded.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img.pixels().map(luma).collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

#[inline]
pub fn luma(p: [u8; 3]) -> u8 {
    let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
    y.round().clamp(0.0, 255.0) as u8
}

/// Mean squared central-difference gradient of luma over interior pixels.
/// Blur spreads an edge over more columns, so this falls roughly with blur width.
pub fn sharpness(img: &RgbImage) -> f64 {
    let g = to_grayscale(img);
    if g.width < 3 || g.height < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in 1..g.height - 1 {
        for x in 1..g.width - 1 {
            let gx = (f64::from(g.get(x + 1, y)) - f64::from(g.get(x - 1, y))) / 2.0;
            let gy = (f64::from(g.get(x, y + 1)) - f64::from(g.get(x, y - 1))) / 2.0;
            acc += gx * gx + gy * gy;
        }
    }
    acc / ((g.width - 2) * (g.height - 2)) as f64
}

pub fn hsv_in_range(p: HsvPixel, r: &HsvRange) -> bool {
    let hue_ok = if r.h_lo <= r.h_hi {
        p.h >= r.h_lo && p.h <= r.h_hi
    } else {
        p.h >= r.h_lo || p.h <= r.h_hi
    };
    hue_ok && p.s >= r.s_lo && p.s <= r.s_hi && p.v >= r.v_lo && p.v <= r.v_hi
}
