//! Deterministic synthetic harness frames with analytic ground truth.
//!
//! A frame is a green backdrop with a connector body near the top and a row of
//! slanted solid wire bands running down through the wire field. The wire
//! field is also the inspection ROI. All randomness (noise, glyph and glare
//! placement) comes from the spec's seed.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{crop_roi, luma, BinaryMask, RgbImage, Roi};
use crate::segmentation::WireBox;

pub const BLACK: [u8; 3] = [25, 25, 25];
pub const YELLOW: [u8; 3] = [220, 200, 30];
pub const BLUE: [u8; 3] = [30, 60, 200];
pub const WHITE: [u8; 3] = [230, 230, 230];
pub const RED: [u8; 3] = [200, 30, 30];
pub const ORANGE: [u8; 3] = [230, 120, 20];
pub const PURPLE: [u8; 3] = [100, 30, 150];
pub const LIGHT_GRAY: [u8; 3] = [170, 170, 170];
pub const BROWN: [u8; 3] = [120, 70, 30];
pub const PINK: [u8; 3] = [230, 120, 170];
pub const NAVY: [u8; 3] = [20, 20, 100];
pub const DARK_RED: [u8; 3] = [120, 20, 20];

/// Wire colours that stay outside the default green background range.
pub const PALETTE: [[u8; 3]; 12] = [
    BLACK, YELLOW, BLUE, WHITE, RED, ORANGE, PURPLE, LIGHT_GRAY, BROWN, PINK, NAVY, DARK_RED,
];

pub const BACKDROP_GREEN: [u8; 3] = [40, 150, 60];
pub const MARKER_GREEN: [u8; 3] = [30, 200, 40];
const BODY: [u8; 3] = [70, 70, 75];
const CAVITY: [u8; 3] = [150, 150, 150];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectorArt {
    /// Body with a keying notch on one end; reversal moves it to the other end.
    DistinctNotch,
    /// Mirror-symmetric body; orientation is only visible through the marker.
    Symmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerSide {
    Front,
    Back,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessSpec {
    pub frame_width: usize,
    pub frame_height: usize,
    /// Wire field, which is also the inspection ROI.
    pub field: Roi,
    pub connector: Roi,
    pub wire_colors: Vec<[u8; 3]>,
    pub wire_width: usize,
    pub gap: usize,
    /// Horizontal drift of every wire over the field height, in pixels.
    pub slant: i32,
    /// Extra per-wire horizontal displacement; empty means none.
    #[serde(default)]
    pub wire_shifts: Vec<i32>,
    pub background: [u8; 3],
    pub noise_sigma: f64,
    #[serde(default)]
    pub text_artifacts: bool,
    #[serde(default)]
    pub reflection_bands: usize,
    #[serde(default)]
    pub blur_radius: usize,
    pub connector_art: ConnectorArt,
    pub marker_side: MarkerSide,
    #[serde(default)]
    pub reversed: bool,
    pub seed: u64,
}

impl HarnessSpec {
    /// Eight-wire single-row harness on a 400×260 frame.
    pub fn eight_wire() -> Self {
        Self {
            frame_width: 400,
            frame_height: 260,
            field: Roi::new(40, 100, 320, 140),
            connector: Roi::new(50, 24, 300, 56),
            wire_colors: vec![BLACK, YELLOW, BLUE, WHITE, RED, ORANGE, PURPLE, LIGHT_GRAY],
            wire_width: 30,
            gap: 4,
            slant: 2,
            wire_shifts: Vec::new(),
            background: BACKDROP_GREEN,
            noise_sigma: 3.0,
            text_artifacts: false,
            reflection_bands: 0,
            blur_radius: 0,
            connector_art: ConnectorArt::DistinctNotch,
            marker_side: MarkerSide::Front,
            reversed: false,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn wire_count(&self) -> usize {
        self.wire_colors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if self.wire_colors.is_empty() {
            return bad("at least one wire is required".into());
        }
        if self.wire_width < 3 {
            return bad(format!("wire width {} below 3 px", self.wire_width));
        }
        if !self.field.fits(self.frame_width, self.frame_height) || self.field.height < 6 {
            return bad(format!("field {:?} does not fit the frame", self.field));
        }
        if !self.connector.fits(self.frame_width, self.frame_height) {
            return bad(format!("connector {:?} does not fit the frame", self.connector));
        }
        if self.connector.y + self.connector.height > self.field.y {
            return bad("connector must sit above the wire field".into());
        }
        if !self.wire_shifts.is_empty() && self.wire_shifts.len() != self.wire_count() {
            return bad("wire_shifts length must match the wire count".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        Ok(())
    }

    fn span(&self) -> i64 {
        let n = self.wire_count() as i64;
        n * self.wire_width as i64 + (n - 1) * self.gap as i64
    }

    /// Left edge of wire `i` at field row 0, in frame coordinates.
    fn base_x(&self, i: usize) -> i64 {
        let start = self.field.x as i64 + (self.field.width as i64 - self.span()) / 2;
        let shift = self.wire_shifts.get(i).copied().unwrap_or(0);
        start + i as i64 * (self.wire_width + self.gap) as i64 + i64::from(shift)
    }

    /// Slant offset at frame row `y`; rows outside the field extrapolate the line.
    fn slant_at(&self, y: usize) -> i64 {
        let rel = y as f64 - self.field.y as f64;
        let h = (self.field.height - 1) as f64;
        (f64::from(self.slant) * rel / h + 0.5).floor() as i64
    }

    /// Wire `i`'s half-open column span on frame row `y`.
    fn wire_span(&self, i: usize, y: usize) -> (i64, i64) {
        let l = self.base_x(i) + self.slant_at(y);
        (l, l + self.wire_width as i64)
    }

    fn marker_visible(&self) -> bool {
        match self.marker_side {
            MarkerSide::Front => !self.reversed,
            MarkerSide::Back => self.reversed,
            MarkerSide::None => false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Boxes in cropped-field coordinates, via the max/min rule on analytic edges.
    pub boxes: Vec<WireBox>,
    pub background_mask: BinaryMask,
    /// Wire spans on the first and last field rows, cropped coordinates.
    pub top_intervals: Vec<(usize, usize)>,
    pub bottom_intervals: Vec<(usize, usize)>,
    pub reversed: bool,
    /// The field cut straight from the rendered frame.
    pub cropped: RgbImage,
}

impl GroundTruth {
    /// Columns where one wire's left edge meets the previous wire's right edge on row 0.
    pub fn touching_boundaries(&self) -> Vec<usize> {
        self.top_intervals
            .windows(2)
            .filter(|w| w[0].1 == w[1].0)
            .map(|w| w[1].0)
            .collect()
    }
}

const GLYPHS: [[u8; 7]; 3] = [
    // 5-bit rows, MSB left
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b11110, 0b00001, 0b00001, 0b01110, 0b10000, 0b10000, 0b11111],
];

pub fn generate(spec: &HarnessSpec) -> Result<(RgbImage, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (fw, fh) = (spec.frame_width, spec.frame_height);
    let mut img = RgbImage::filled(fw, fh, spec.background);

    let wire_top = spec.connector.y + spec.connector.height;
    for y in wire_top..fh {
        for (i, &color) in spec.wire_colors.iter().enumerate() {
            let (l, r) = spec.wire_span(i, y);
            for x in l.max(0)..r.min(fw as i64) {
                img.set_pixel(x as usize, y, color);
            }
        }
    }

    draw_connector(&mut img, spec);

    if spec.text_artifacts {
        stamp_glyphs(&mut img, spec, &mut rng);
    }
    for _ in 0..spec.reflection_bands {
        let bw = rng.random_range(3..=6);
        let x0 = spec.field.x + rng.random_range(0..spec.field.width.saturating_sub(bw).max(1));
        for y in spec.field.y..spec.field.y + spec.field.height {
            for x in x0..(x0 + bw).min(fw) {
                let p = img.pixel(x, y);
                img.set_pixel(x, y, p.map(|c| c.saturating_add(70)));
            }
        }
    }
    if spec.blur_radius > 0 {
        img = box_blur(&img, spec.blur_radius);
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        let mut data = img.into_bytes();
        for v in &mut data {
            let n: f64 = normal.sample(&mut rng);
            *v = (f64::from(*v) + n).round().clamp(0.0, 255.0) as u8;
        }
        img = RgbImage::new(fw, fh, data)?;
    }

    let truth = ground_truth(spec, &img)?;
    Ok((img, truth))
}

fn ground_truth(spec: &HarnessSpec, img: &RgbImage) -> Result<GroundTruth> {
    let f = spec.field;
    let clip = |(l, r): (i64, i64)| {
        let lo = (l - f.x as i64).clamp(0, f.width as i64) as usize;
        let hi = (r - f.x as i64).clamp(0, f.width as i64) as usize;
        (lo, hi)
    };
    let last = f.y + f.height - 1;
    let top: Vec<_> = (0..spec.wire_count()).map(|i| clip(spec.wire_span(i, f.y))).collect();
    let bottom: Vec<_> = (0..spec.wire_count()).map(|i| clip(spec.wire_span(i, last))).collect();
    let boxes = top
        .iter()
        .zip(&bottom)
        .enumerate()
        .map(|(index, (t, b))| WireBox {
            index,
            x_left: t.0.max(b.0),
            x_right: t.1.min(b.1),
            y_top: 0,
            y_bottom: f.height - 1,
        })
        .collect();
    let background_mask = BinaryMask::from_fn(f.width, f.height, |x, y| {
        let fx = (x + f.x) as i64;
        !(0..spec.wire_count()).any(|i| {
            let (l, r) = spec.wire_span(i, y + f.y);
            fx >= l && fx < r
        })
    });
    Ok(GroundTruth {
        boxes,
        background_mask,
        top_intervals: top,
        bottom_intervals: bottom,
        reversed: spec.reversed,
        cropped: crop_roi(img, f)?,
    })
}

fn fill(img: &mut RgbImage, r: Roi, color: [u8; 3]) {
    for y in r.y..(r.y + r.height).min(img.height()) {
        for x in r.x..(r.x + r.width).min(img.width()) {
            img.set_pixel(x, y, color);
        }
    }
}

fn draw_connector(img: &mut RgbImage, spec: &HarnessSpec) {
    let c = spec.connector;
    fill(img, c, BODY);
    // a row of contact cavities, symmetric about the body centre
    let n = spec.wire_count().max(1);
    let side = (c.height / 5).max(2);
    for i in 0..n {
        let cx = c.x + c.width * (2 * i + 1) / (2 * n);
        fill(img, Roi::new(cx.saturating_sub(side / 2), c.y + c.height * 3 / 5, side, side), CAVITY);
    }
    match spec.connector_art {
        ConnectorArt::DistinctNotch => {
            let (nw, nh) = (c.width / 6, c.height * 2 / 5);
            let x = if spec.reversed { c.x + c.width - nw } else { c.x };
            fill(img, Roi::new(x, c.y, nw, nh), spec.background);
        }
        ConnectorArt::Symmetric => {
            if spec.marker_visible() {
                let s = c.height / 2;
                fill(img, Roi::new(c.x + c.width / 10, c.y + c.height / 8, s, s), MARKER_GREEN);
            }
        }
    }
}

fn stamp_glyphs(img: &mut RgbImage, spec: &HarnessSpec, rng: &mut ChaCha8Rng) {
    if spec.wire_width < 7 || spec.field.height < 12 {
        return;
    }
    for i in 0..spec.wire_count() {
        let glyph = &GLYPHS[rng.random_range(0..GLYPHS.len())];
        let y0 = spec.field.y + rng.random_range(2..spec.field.height - 9);
        let (l, r) = spec.wire_span(i, y0);
        let x0 = (l + r) / 2 - 2;
        for (gy, bits) in glyph.iter().enumerate() {
            for gx in 0..5 {
                if bits & (0b10000 >> gx) != 0 {
                    let (x, y) = (x0 + gx as i64, y0 + gy);
                    if x >= 0 && (x as usize) < img.width() && y < img.height() {
                        img.set_pixel(x as usize, y, [15, 15, 15]);
                    }
                }
            }
        }
    }
}

/// Separable box blur with edge clamping.
pub fn box_blur(img: &RgbImage, radius: usize) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let pass = |src: &[u8], horizontal: bool| -> Vec<u8> {
        let mut out = vec![0u8; src.len()];
        let r = radius as i64;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    let mut acc = 0u32;
                    for k in -r..=r {
                        let (sx, sy) = if horizontal {
                            ((x as i64 + k).clamp(0, w as i64 - 1) as usize, y)
                        } else {
                            (x, (y as i64 + k).clamp(0, h as i64 - 1) as usize)
                        };
                        acc += u32::from(src[(sy * w + sx) * 3 + ch]);
                    }
                    out[(y * w + x) * 3 + ch] = ((acc as f64) / (2 * radius + 1) as f64).round() as u8;
                }
            }
        }
        out
    };
    let tmp = pass(img.as_bytes(), true);
    RgbImage::new(w, h, pass(&tmp, false)).expect("same shape")
}

/// Ranges for drawing random single-row harness specs.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecSampler {
    pub wires: RangeInclusive<usize>,
    pub wire_width: RangeInclusive<usize>,
    pub gap: RangeInclusive<usize>,
    pub slants: Vec<i32>,
    pub field_height: RangeInclusive<usize>,
    pub noise_sigma: f64,
    /// Minimum luma step between neighbouring wires; `None` only forbids equal neighbours.
    pub min_adjacent_luma_diff: Option<u8>,
}

impl Default for SpecSampler {
    fn default() -> Self {
        Self {
            wires: 1..=12,
            wire_width: 12..=36,
            gap: 2..=10,
            slants: (-3..=3).collect(),
            field_height: 60..=160,
            noise_sigma: 0.0,
            min_adjacent_luma_diff: None,
        }
    }
}

impl SpecSampler {
    pub fn sample(&self, seed: u64) -> HarnessSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a3b_1e5b_ec00);
        let n = rng.random_range(self.wires.clone());
        let wire_width = rng.random_range(self.wire_width.clone());
        let gap = rng.random_range(self.gap.clone());
        let slant = self.slants[rng.random_range(0..self.slants.len())];
        let field_h = rng.random_range(self.field_height.clone());
        let span = n * wire_width + (n - 1) * gap;
        let field_w = span + 2 * rng.random_range(10..=30usize);

        let mut wire_colors: Vec<[u8; 3]> = Vec::with_capacity(n);
        while wire_colors.len() < n {
            let c = PALETTE[rng.random_range(0..PALETTE.len())];
            let ok = match wire_colors.last() {
                None => true,
                Some(&prev) => {
                    let d = luma(prev).abs_diff(luma(c));
                    prev != c && self.min_adjacent_luma_diff.is_none_or(|m| d >= m)
                }
            };
            if ok {
                wire_colors.push(c);
            }
        }
        HarnessSpec {
            frame_width: field_w + 40,
            frame_height: field_h + 70,
            field: Roi::new(20, 50, field_w, field_h),
            connector: Roi::new(20, 8, field_w, 36),
            wire_colors,
            wire_width,
            gap,
            slant,
            wire_shifts: Vec::new(),
            background: BACKDROP_GREEN,
            noise_sigma: self.noise_sigma,
            text_artifacts: false,
            reflection_bands: 0,
            blur_radius: 0,
            connector_art: ConnectorArt::DistinctNotch,
            marker_side: MarkerSide::Front,
            reversed: false,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Defect {
    Swap { i: usize, j: usize },
    ReverseConnector,
    ShiftWire { index: usize, dx: i32 },
    DropWire { index: usize },
}

impl std::str::FromStr for Defect {
    type Err = Error;

    /// `swap:2,5`, `reverse`, `shift:3,12`, `drop:4`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unrecognised defect '{s}'"));
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<&str> = if args.is_empty() { Vec::new() } else { args.split(',').collect() };
        let idx = |k: usize| -> Result<usize> { nums.get(k).ok_or_else(bad)?.trim().parse().map_err(|_| bad()) };
        match (kind, nums.len()) {
            ("swap", 2) => Ok(Defect::Swap { i: idx(0)?, j: idx(1)? }),
            ("reverse", 0) => Ok(Defect::ReverseConnector),
            ("shift", 2) => Ok(Defect::ShiftWire {
                index: idx(0)?,
                dx: nums[1].trim().parse().map_err(|_| bad())?,
            }),
            ("drop", 1) => Ok(Defect::DropWire { index: idx(0)? }),
            _ => Err(bad()),
        }
    }
}

/// Returns a new spec carrying the defect; the input is untouched.
pub fn permute_defect(spec: &HarnessSpec, defect: Defect) -> Result<HarnessSpec> {
    let n = spec.wire_count();
    let check = |index: usize| if index < n { Ok(()) } else { Err(Error::IndexOutOfRange { index, len: n }) };
    let mut out = spec.clone();
    match defect {
        Defect::Swap { i, j } => {
            check(i)?;
            check(j)?;
            out.wire_colors.swap(i, j);
        }
        Defect::ReverseConnector => out.reversed = !out.reversed,
        Defect::ShiftWire { index, dx } => {
            check(index)?;
            if out.wire_shifts.is_empty() {
                out.wire_shifts = vec![0; n];
            }
            out.wire_shifts[index] += dx;
        }
        Defect::DropWire { index } => {
            check(index)?;
            if n == 1 {
                return Err(Error::SpecInvalid("cannot drop the only wire".into()));
            }
            out.wire_colors.remove(index);
            if !out.wire_shifts.is_empty() {
                out.wire_shifts.remove(index);
            }
        }
    }
    Ok(out)
}

/// The overall verdict a correct inspector should return for `defect` applied to a good spec.
/// Wires shifted within their own lane still count as correctly placed.
pub fn expected_verdict(spec: &HarnessSpec, defect: Option<Defect>) -> crate::pipeline::Overall {
    use crate::pipeline::Overall;
    match defect {
        None => Overall::Pass,
        Some(Defect::Swap { i, j }) => {
            if spec.wire_colors.get(i) == spec.wire_colors.get(j) {
                Overall::Pass
            } else {
                Overall::Fail
            }
        }
        Some(Defect::ShiftWire { dx, .. }) if (dx.unsigned_abs() as usize) < spec.gap => Overall::Pass,
        Some(_) => Overall::Fail,
    }
}
