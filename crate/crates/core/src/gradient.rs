//! Gradient-based boundary recovery for wires that touch.
//!
//! When neighbouring wires leave no background between them the background
//! mask shows one merged blob. This module finds the boundaries from the
//! horizontal intensity gradient instead:
//!
//! 1. x-gradient of the grayscale crop (`n × (m-1)`),
//! 2. threshold `|g| >= grad_threshold` into a 0/1 map,
//! 3. column sums of that map,
//! 4. runs of columns whose sum exceeds `sum_threshold_frac · n`, filtered by width,
//! 5. binary line templates matched at each run's peak column,
//! 6. accepted templates stamped into a gradient mask,
//! 7. gradient mask merged into the background mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, GrayImage};

/// The template acceptance fraction is fixed; overlap must be strictly greater.
pub const OVERLAP_ACCEPT: f64 = 0.90;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    /// Pointwise OR: template lines become background-valued separators.
    #[default]
    Or,
    /// Pointwise AND, kept for the literal combination rule.
    And,
}

/// One line template: total horizontal drift across the crop height, and line thickness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub drift: i32,
    pub thickness: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientConfig {
    pub grad_threshold: u8,
    pub sum_threshold_frac: f64,
    pub seg_min_width: usize,
    /// `None` resolves to half the nominal wire pitch of the crop.
    pub seg_max_width: Option<usize>,
    pub template_width: usize,
    pub overlap_accept: f64,
    pub combine_mode: CombineMode,
    pub templates: Vec<TemplateSpec>,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 30,
            sum_threshold_frac: 0.3,
            seg_min_width: 1,
            seg_max_width: None,
            template_width: 17,
            overlap_accept: OVERLAP_ACCEPT,
            combine_mode: CombineMode::Or,
            templates: default_template_specs(),
        }
    }
}

/// Drifts `{0, ±2, ±4, ±8}` with unit thickness.
pub fn default_template_specs() -> Vec<TemplateSpec> {
    [0, -2, 2, -4, 4, -8, 8]
        .into_iter()
        .map(|drift| TemplateSpec { drift, thickness: 1 })
        .collect()
}

impl GradientConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.sum_threshold_frac > 0.0 && self.sum_threshold_frac <= 1.0) {
            return bad("sum_threshold_frac must lie in (0, 1]");
        }
        if self.template_width < 3 || self.template_width.is_multiple_of(2) {
            return bad("template_width must be odd and at least 3");
        }
        if self.overlap_accept != OVERLAP_ACCEPT {
            return bad("overlap_accept is fixed at 0.90");
        }
        if self.seg_min_width == 0 {
            return bad("seg_min_width must be at least 1");
        }
        if self.seg_max_width.is_some_and(|w| w < self.seg_min_width) {
            return bad("seg_max_width below seg_min_width");
        }
        if self.templates.is_empty() {
            return bad("at least one line template is required");
        }
        let half = (self.template_width / 2) as i64;
        for t in &self.templates {
            let reach = (i64::from(t.drift.unsigned_abs()) + 1) / 2 + (t.thickness as i64) / 2;
            if t.thickness == 0 || reach > half {
                return bad(&format!("template {t:?} does not fit width {}", self.template_width));
            }
        }
        Ok(())
    }

    pub fn resolved_seg_max_width(&self, crop_width: usize, expected_wires: usize) -> usize {
        self.seg_max_width
            .unwrap_or_else(|| (crop_width / expected_wires.max(1) / 2).max(self.seg_min_width))
    }

    pub fn max_thickness(&self) -> usize {
        self.templates.iter().map(|t| t.thickness).max().unwrap_or(1)
    }
}

/// Signed x-gradient, `n × (m-1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gradient {
    pub width: usize,
    pub height: usize,
    pub data: Vec<i16>,
}

/// Row-major 0/1 map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl BitMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineTemplate {
    pub id: String,
    pub drift: i32,
    pub thickness: usize,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<u8>,
}

impl LineTemplate {
    /// Builds a template whose line crosses the centre column at mid-height.
    pub fn new(spec: TemplateSpec, width: usize, height: usize) -> Self {
        let center = (width / 2) as i64;
        let mut cells = vec![0u8; width * height];
        for y in 0..height {
            let first = center + line_offset(spec.drift, y, height) - (spec.thickness as i64 - 1) / 2;
            for k in 0..spec.thickness as i64 {
                let x = first + k;
                if (0..width as i64).contains(&x) {
                    cells[y * width + x as usize] = 1;
                }
            }
        }
        let id = match (spec.drift, spec.thickness) {
            (0, 1) => "0".to_string(),
            (d, 1) => format!("{d:+}"),
            (d, t) => format!("{d:+}/t{t}"),
        };
        Self {
            id,
            drift: spec.drift,
            thickness: spec.thickness,
            width,
            height,
            cells,
        }
    }

    pub fn ones(&self) -> usize {
        self.cells.iter().map(|&c| usize::from(c)).sum()
    }
}

/// Column offset of a line with total `drift` at row `y`, relative to its mid-height column.
/// Rounds half up from the top row, matching the synthetic renderer, so odd drifts
/// step on the same rows as a rendered edge. Even drifts are symmetric about mid-height.
pub(crate) fn line_offset(drift: i32, y: usize, height: usize) -> i64 {
    if height < 2 {
        return 0;
    }
    let d = f64::from(drift);
    let t = y as f64 / (height - 1) as f64;
    (d * t + 0.5).floor() as i64 - (d / 2.0 + 0.5).floor() as i64
}

pub fn build_templates(cfg: &GradientConfig, height: usize) -> Vec<LineTemplate> {
    cfg.templates
        .iter()
        .map(|&s| LineTemplate::new(s, cfg.template_width, height))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentCandidate {
    /// Inclusive column range in the summed array.
    pub x_start: usize,
    pub x_end: usize,
    pub peak_x: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateMatch {
    pub segment: SegmentCandidate,
    /// Column the template was centred on; inside the segment, the peak when tied.
    pub center_x: usize,
    pub template_id: String,
    pub template_index: usize,
    pub overlap: f64,
}

pub fn x_gradient(gray: &GrayImage) -> Result<Gradient> {
    if gray.width < 2 {
        return Err(Error::ImageTooNarrow);
    }
    let w = gray.width - 1;
    let mut data = Vec::with_capacity(w * gray.height);
    for row in gray.data.chunks_exact(gray.width) {
        data.extend(row.windows(2).map(|p| i16::from(p[1]) - i16::from(p[0])));
    }
    Ok(Gradient {
        width: w,
        height: gray.height,
        data,
    })
}

/// `1` where `|g| >= t`.
pub fn threshold_gradient(grad: &Gradient, t: u8) -> BitMap {
    let t = i16::from(t);
    BitMap {
        width: grad.width,
        height: grad.height,
        data: grad.data.iter().map(|&g| u8::from(g.abs() >= t)).collect(),
    }
}

pub fn vertical_sum(map: &BitMap) -> Vec<u32> {
    let mut sums = vec![0u32; map.width];
    for row in map.data.chunks_exact(map.width.max(1)) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += u32::from(v);
        }
    }
    sums
}

/// Maximal runs with `sum > sum_threshold_frac · height`, kept when their width
/// lies in `[seg_min_width, seg_max_width]`. Peak ties resolve to the leftmost column.
pub fn find_segments(
    sums: &[u32],
    height: usize,
    cfg: &GradientConfig,
    seg_max_width: usize,
) -> Vec<SegmentCandidate> {
    let threshold = cfg.sum_threshold_frac * height as f64;
    let mut out = Vec::new();
    let mut x = 0;
    while x < sums.len() {
        if f64::from(sums[x]) <= threshold {
            x += 1;
            continue;
        }
        let start = x;
        let mut peak = x;
        while x < sums.len() && f64::from(sums[x]) > threshold {
            if sums[x] > sums[peak] {
                peak = x;
            }
            x += 1;
        }
        let end = x - 1;
        let width = end - start + 1;
        if width >= cfg.seg_min_width && width <= seg_max_width {
            out.push(SegmentCandidate {
                x_start: start,
                x_end: end,
                peak_x: peak,
            });
        }
    }
    out
}

/// Counts template cells that are also set in the map crop centred on `center_x`.
/// Columns outside the map read as 0.
fn template_hits(map: &BitMap, template: &LineTemplate, center_x: usize) -> usize {
    let half = (template.width / 2) as i64;
    let mut hits = 0;
    for y in 0..template.height.min(map.height) {
        let trow = &template.cells[y * template.width..(y + 1) * template.width];
        for (tx, &c) in trow.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let x = center_x as i64 - half + tx as i64;
            if x >= 0 && (x as usize) < map.width && map.get(x as usize, y) == 1 {
                hits += 1;
            }
        }
    }
    hits
}

/// Overlap of one template against the crop centred on `center_x`, as `(hits, ones)`.
pub fn template_overlap(map: &BitMap, template: &LineTemplate, center_x: usize) -> (usize, usize) {
    (template_hits(map, template, center_x), template.ones())
}

/// Strictly-greater-than-90% test done in integers so 0.90 exactly is rejected.
#[inline]
pub fn overlap_accepted(hits: usize, ones: usize) -> bool {
    ones > 0 && hits * 10 > ones * 9
}

/// Best template over the segment's columns, or `None` when no template clears 90%.
/// The peak column is tried first so ties stay on the peak.
pub fn match_template(
    map: &BitMap,
    seg: SegmentCandidate,
    templates: &[LineTemplate],
) -> Option<TemplateMatch> {
    let centers = std::iter::once(seg.peak_x).chain((seg.x_start..=seg.x_end).filter(|&x| x != seg.peak_x));
    let mut best: Option<(usize, usize, usize, usize)> = None;
    for center in centers {
        for (i, t) in templates.iter().enumerate() {
            let (hits, ones) = template_overlap(map, t, center);
            if ones == 0 {
                continue;
            }
            let better = match best {
                // hits/ones > bh/bo
                Some((_, _, bh, bo)) => hits * bo > bh * ones,
                None => true,
            };
            if better {
                best = Some((i, center, hits, ones));
            }
        }
    }
    let (i, center_x, hits, ones) = best?;
    overlap_accepted(hits, ones).then(|| TemplateMatch {
        segment: seg,
        center_x,
        template_id: templates[i].id.clone(),
        template_index: i,
        overlap: hits as f64 / ones as f64,
    })
}

/// Zero mask of the crop shape with every matched template stamped at its peak column.
pub fn build_gradient_mask(
    matches: &[TemplateMatch],
    templates: &[LineTemplate],
    width: usize,
    height: usize,
) -> BinaryMask {
    let mut mask = BinaryMask::zeros(width, height);
    for m in matches {
        let t = &templates[m.template_index];
        let half = (t.width / 2) as i64;
        for y in 0..t.height.min(height) {
            for tx in 0..t.width {
                if t.cells[y * t.width + tx] == 0 {
                    continue;
                }
                let x = m.center_x as i64 - half + tx as i64;
                if x >= 0 && (x as usize) < width {
                    mask.set(x as usize, y, true);
                }
            }
        }
    }
    mask
}

pub fn combine_masks(
    background: &BinaryMask,
    gradient: &BinaryMask,
    mode: CombineMode,
) -> Result<BinaryMask> {
    if background.width() != gradient.width() || background.height() != gradient.height() {
        return Err(Error::ShapeMismatch {
            expected: (background.width(), background.height()),
            found: (gradient.width(), gradient.height()),
        });
    }
    let data = background
        .as_bytes()
        .iter()
        .zip(gradient.as_bytes())
        .map(|(&a, &b)| match mode {
            CombineMode::Or => a | b,
            CombineMode::And => a & b,
        })
        .collect();
    BinaryMask::from_raw(background.width(), background.height(), data)
}

/// Everything the gradient path produced for one crop.
#[derive(Clone, Debug)]
pub struct GradientRecovery {
    pub segments: Vec<SegmentCandidate>,
    pub matches: Vec<TemplateMatch>,
    pub mask: BinaryMask,
}

pub fn recover_boundaries(
    gray: &GrayImage,
    cfg: &GradientConfig,
    expected_wires: usize,
) -> Result<GradientRecovery> {
    let grad = x_gradient(gray)?;
    let map = threshold_gradient(&grad, cfg.grad_threshold);
    let sums = vertical_sum(&map);
    let seg_max = cfg.resolved_seg_max_width(gray.width, expected_wires);
    let segments = find_segments(&sums, gray.height, cfg, seg_max);
    let templates = build_templates(cfg, gray.height);
    let matches: Vec<_> = segments
        .iter()
        .filter_map(|&s| match_template(&map, s, &templates))
        .collect();
    let mask = build_gradient_mask(&matches, &templates, gray.width, gray.height);
    Ok(GradientRecovery {
        segments,
        matches,
        mask,
    })
}
