//! Background masking, scan-line endpoint detection and per-wire boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{combine_masks, recover_boundaries, CombineMode, GradientConfig};
use crate::imaging::{rgb_to_hsv, to_grayscale, BinaryMask, HsvRange, RgbImage};

/// The four sampled rows. Fallbacks are read only when the matching primary fails.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanLineConfig {
    pub primary_top: usize,
    pub primary_bottom: usize,
    pub fallback_top: usize,
    pub fallback_bottom: usize,
}

impl ScanLineConfig {
    /// Rows `0`, `y_max`, `round(0.1·y_max)` and `round(0.9·y_max)` with `y_max = height - 1`.
    pub fn for_height(height: usize) -> Self {
        let y_max = height.saturating_sub(1);
        let frac = |f: f64| (f * y_max as f64).round() as usize;
        Self {
            primary_top: 0,
            primary_bottom: y_max,
            fallback_top: frac(0.1),
            fallback_bottom: frac(0.9),
        }
    }

    pub fn validate(&self, height: usize) -> Result<()> {
        let y_max = height.saturating_sub(1);
        let rows = [self.primary_top, self.primary_bottom, self.fallback_top, self.fallback_bottom];
        if rows.iter().any(|&r| r > y_max)
            || self.fallback_top <= self.primary_top
            || self.fallback_bottom >= self.primary_bottom
        {
            return Err(Error::InvalidConfig(format!(
                "scan rows {rows:?} invalid for crop height {height}"
            )));
        }
        Ok(())
    }
}

/// Half-open wire intervals found on one row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointRow {
    pub y: usize,
    pub boundaries: Vec<(usize, usize)>,
}

impl EndpointRow {
    pub fn endpoint_count(&self) -> usize {
        self.boundaries.len() * 2
    }
}

/// Tight box of one wire: columns `x_left..x_right` (half-open), rows `y_top..=y_bottom`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireBox {
    pub index: usize,
    pub x_left: usize,
    pub x_right: usize,
    pub y_top: usize,
    pub y_bottom: usize,
}

impl WireBox {
    pub fn width(&self) -> usize {
        self.x_right - self.x_left
    }

    pub fn height(&self) -> usize {
        self.y_bottom - self.y_top + 1
    }

    pub fn center_x(&self) -> f64 {
        (self.x_left + self.x_right) as f64 / 2.0
    }
}

pub fn background_mask(cropped: &RgbImage, bg: &HsvRange) -> BinaryMask {
    let data = cropped
        .pixels()
        .map(|p| if bg.contains(rgb_to_hsv(p)) { BinaryMask::ON } else { BinaryMask::OFF })
        .collect();
    BinaryMask::from_raw(cropped.width(), cropped.height(), data)
        .expect("mask built from image dimensions")
}

/// Wire intervals of one row from the signed one-pixel difference. A row that
/// starts or ends inside a wire is clipped to `0` or `width`.
pub fn row_intervals(mask: &BinaryMask, y: usize) -> Result<Vec<(usize, usize)>> {
    if y >= mask.height() {
        return Err(Error::RowOutOfRange { y, height: mask.height() });
    }
    let row = mask.row(y);
    let width = row.len();
    let mut out = Vec::new();
    let mut open = (row[0] == BinaryMask::OFF).then_some(0);
    for x in 0..width - 1 {
        let d = i16::from(row[x + 1]) - i16::from(row[x]);
        match d {
            -255 => {
                if open.is_some() {
                    return Err(Error::MalformedAlternation { x: x + 1 });
                }
                open = Some(x + 1);
            }
            255 => {
                let start = open.take().ok_or(Error::MalformedAlternation { x: x + 1 })?;
                out.push((start, x + 1));
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        out.push((start, width));
    }
    Ok(out)
}

/// Like [`row_intervals`] but a background run of at most `max_sep` pixels between
/// two wire runs is a stamped boundary line: the two intervals meet at its centre.
pub fn row_intervals_merged(mask: &BinaryMask, y: usize, max_sep: usize) -> Result<Vec<(usize, usize)>> {
    let mut iv = row_intervals(mask, y)?;
    for i in 1..iv.len() {
        let (gap_start, gap_end) = (iv[i - 1].1, iv[i].0);
        if gap_end - gap_start <= max_sep {
            let mid = (gap_start + gap_end).div_ceil(2);
            iv[i - 1].1 = mid;
            iv[i].0 = mid;
        }
    }
    Ok(iv)
}

pub fn scan_line_endpoints(mask: &BinaryMask, y: usize, expected_wires: usize) -> Result<EndpointRow> {
    check_count(y, row_intervals(mask, y)?, expected_wires)
}

fn check_count(y: usize, boundaries: Vec<(usize, usize)>, expected: usize) -> Result<EndpointRow> {
    if boundaries.len() != expected {
        return Err(Error::EndpointCountMismatch {
            found: boundaries.len(),
            expected,
        });
    }
    Ok(EndpointRow { y, boundaries })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EndpointOutcome {
    Found { top: EndpointRow, bottom: EndpointRow },
    NeedsGradient,
}

pub fn detect_endpoints(mask: &BinaryMask, cfg: &ScanLineConfig, expected_wires: usize) -> EndpointOutcome {
    detect_endpoints_traced(mask, cfg, expected_wires, &mut Vec::new())
}

/// [`detect_endpoints`] that also records every row it reads, in order.
pub fn detect_endpoints_traced(
    mask: &BinaryMask,
    cfg: &ScanLineConfig,
    expected_wires: usize,
    rows_read: &mut Vec<usize>,
) -> EndpointOutcome {
    detect_with(cfg, rows_read, |y| scan_line_endpoints(mask, y, expected_wires))
}

fn detect_with(
    cfg: &ScanLineConfig,
    rows_read: &mut Vec<usize>,
    mut scan: impl FnMut(usize) -> Result<EndpointRow>,
) -> EndpointOutcome {
    let mut side = |primary: usize, fallback: usize| {
        [primary, fallback].into_iter().find_map(|y| {
            rows_read.push(y);
            scan(y).ok()
        })
    };
    let Some(top) = side(cfg.primary_top, cfg.fallback_top) else {
        return EndpointOutcome::NeedsGradient;
    };
    match side(cfg.primary_bottom, cfg.fallback_bottom) {
        Some(bottom) => EndpointOutcome::Found { top, bottom },
        None => EndpointOutcome::NeedsGradient,
    }
}

/// Max of the left pair, min of the right pair; rows come from the lines actually used.
pub fn bounding_boxes(top: &EndpointRow, bottom: &EndpointRow) -> Result<Vec<WireBox>> {
    if top.boundaries.len() != bottom.boundaries.len() {
        return Err(Error::WireCountInconsistent {
            expected: top.boundaries.len(),
            found: bottom.boundaries.len(),
        });
    }
    let (y_top, y_bottom) = (top.y.min(bottom.y), top.y.max(bottom.y));
    top.boundaries
        .iter()
        .zip(&bottom.boundaries)
        .enumerate()
        .map(|(index, (&(ts, te), &(bs, be)))| {
            let x_left = ts.max(bs);
            let x_right = te.min(be);
            if x_left >= x_right || y_top >= y_bottom {
                return Err(Error::DegenerateBox { index, x_left, x_right });
            }
            Ok(WireBox { index, x_left, x_right, y_top, y_bottom })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentationPath {
    Background,
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Segmentation {
    Clear { boxes: Vec<WireBox>, path: SegmentationPath },
    Unclear { reason: String },
}

impl Segmentation {
    pub fn boxes(&self) -> Option<&[WireBox]> {
        match self {
            Segmentation::Clear { boxes, .. } => Some(boxes),
            Segmentation::Unclear { .. } => None,
        }
    }
}

/// Background path first; on failure the gradient path runs once and the
/// scan lines are re-read on the combined mask.
pub fn segment_wires(
    cropped: &RgbImage,
    bg: &HsvRange,
    cfg: &ScanLineConfig,
    expected_wires: usize,
    gradient_cfg: &GradientConfig,
) -> Segmentation {
    let mask = background_mask(cropped, bg);
    if let EndpointOutcome::Found { top, bottom } = detect_endpoints(&mask, cfg, expected_wires) {
        return match bounding_boxes(&top, &bottom) {
            Ok(boxes) => Segmentation::Clear { boxes, path: SegmentationPath::Background },
            Err(e) => Segmentation::Unclear { reason: e.to_string() },
        };
    }

    let recovery = match recover_boundaries(&to_grayscale(cropped), gradient_cfg, expected_wires) {
        Ok(r) => r,
        Err(e) => return Segmentation::Unclear { reason: e.to_string() },
    };
    let combined = match combine_masks(&mask, &recovery.mask, gradient_cfg.combine_mode) {
        Ok(m) => m,
        Err(e) => return Segmentation::Unclear { reason: e.to_string() },
    };
    let max_sep = gradient_cfg.max_thickness();
    let outcome = detect_with(cfg, &mut Vec::new(), |y| {
        let iv = match gradient_cfg.combine_mode {
            CombineMode::Or => row_intervals_merged(&combined, y, max_sep)?,
            CombineMode::And => row_intervals(&combined, y)?,
        };
        check_count(y, iv, expected_wires)
    });
    match outcome {
        EndpointOutcome::Found { top, bottom } => match bounding_boxes(&top, &bottom) {
            Ok(boxes) => Segmentation::Clear { boxes, path: SegmentationPath::Gradient },
            Err(e) => Segmentation::Unclear { reason: e.to_string() },
        },
        EndpointOutcome::NeedsGradient => Segmentation::Unclear {
            reason: format!(
                "wire boundaries not found on any scan line ({} gradient matches for {} wires)",
                recovery.matches.len(),
                expected_wires
            ),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_rows(rows: &[&[u8]]) -> BinaryMask {
        let w = rows[0].len();
        BinaryMask::from_raw(w, rows.len(), rows.concat()).unwrap()
    }

    #[test]
    fn scan_config_defaults() {
        let c = ScanLineConfig::for_height(121);
        assert_eq!(c, ScanLineConfig { primary_top: 0, primary_bottom: 120, fallback_top: 12, fallback_bottom: 108 });
        c.validate(121).unwrap();
        assert!(ScanLineConfig::for_height(3).validate(3).is_err());
    }

    #[test]
    fn single_interval_row() {
        let m = mask_rows(&[&[255, 255, 0, 0, 255]]);
        let row = scan_line_endpoints(&m, 0, 1).unwrap();
        assert_eq!(row.boundaries, vec![(2, 4)]);
    }

    #[test]
    fn virtual_edges() {
        let m = mask_rows(&[&[0, 0, 255, 0]]);
        assert_eq!(row_intervals(&m, 0).unwrap(), vec![(0, 2), (3, 4)]);
        let all_wire = mask_rows(&[&[0, 0, 0]]);
        assert_eq!(row_intervals(&all_wire, 0).unwrap(), vec![(0, 3)]);
        let all_bg = mask_rows(&[&[255, 255]]);
        assert!(row_intervals(&all_bg, 0).unwrap().is_empty());
    }

    #[test]
    fn count_mismatch() {
        let m = mask_rows(&[&[255, 0, 0, 0, 0, 255, 0, 255]]);
        assert!(matches!(
            scan_line_endpoints(&m, 0, 3),
            Err(Error::EndpointCountMismatch { found: 2, expected: 3 })
        ));
        assert!(matches!(scan_line_endpoints(&m, 1, 2), Err(Error::RowOutOfRange { .. })));
    }

    #[test]
    fn merged_separator_splits_at_centre() {
        let m = mask_rows(&[&[255, 0, 0, 0, 255, 0, 0, 0, 255]]);
        assert_eq!(row_intervals_merged(&m, 0, 1).unwrap(), vec![(1, 5), (5, 8)]);
        // wide gaps are real background
        let wide = mask_rows(&[&[255, 0, 0, 255, 255, 0, 0, 255]]);
        assert_eq!(row_intervals_merged(&wide, 0, 1).unwrap(), vec![(1, 3), (5, 7)]);
    }

    fn stripes(width: usize, height: usize, blocked_rows: &[usize]) -> BinaryMask {
        // wires at [2,5) and [7,10)
        BinaryMask::from_fn(width, height, |x, y| {
            if blocked_rows.contains(&y) {
                return false;
            }
            !((2..5).contains(&x) || (7..10).contains(&x))
        })
    }

    #[test]
    fn primaries_only_when_clean() {
        let m = stripes(12, 21, &[]);
        let cfg = ScanLineConfig::for_height(21);
        let mut rows = Vec::new();
        let out = detect_endpoints_traced(&m, &cfg, 2, &mut rows);
        assert_eq!(rows, vec![0, 20]);
        let EndpointOutcome::Found { top, bottom } = out else { panic!() };
        assert_eq!((top.y, bottom.y), (0, 20));
    }

    #[test]
    fn occluded_top_falls_back() {
        let m = stripes(12, 21, &[0]);
        let cfg = ScanLineConfig::for_height(21);
        let mut rows = Vec::new();
        let out = detect_endpoints_traced(&m, &cfg, 2, &mut rows);
        assert_eq!(rows, vec![0, 2, 20]);
        let EndpointOutcome::Found { top, .. } = out else { panic!() };
        assert_eq!(top.y, 2);
    }

    #[test]
    fn both_top_rows_failing_needs_gradient() {
        let m = stripes(12, 21, &[0, 2]);
        let cfg = ScanLineConfig::for_height(21);
        assert_eq!(detect_endpoints(&m, &cfg, 2), EndpointOutcome::NeedsGradient);
    }

    #[test]
    fn max_min_rule() {
        let top = EndpointRow { y: 0, boundaries: vec![(10, 20)] };
        let bottom = EndpointRow { y: 99, boundaries: vec![(12, 22)] };
        let b = bounding_boxes(&top, &bottom).unwrap();
        assert_eq!(b, vec![WireBox { index: 0, x_left: 12, x_right: 20, y_top: 0, y_bottom: 99 }]);
        let same = bounding_boxes(&top, &EndpointRow { y: 99, ..top.clone() }).unwrap();
        assert_eq!((same[0].x_left, same[0].x_right), (10, 20));
        let skew = EndpointRow { y: 99, boundaries: vec![(20, 30)] };
        assert!(matches!(bounding_boxes(&top, &skew), Err(Error::DegenerateBox { .. })));
    }

    #[test]
    fn mask_on_solid_images() {
        let bg = HsvRange::GREEN_BACKGROUND;
        assert_eq!(background_mask(&RgbImage::filled(5, 4, [40, 150, 60]), &bg).count_on(), 20);
        assert_eq!(background_mask(&RgbImage::filled(5, 4, [200, 20, 20]), &bg).count_on(), 0);
    }

    #[test]
    fn noise_frame_is_unclear() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<u8> = (0..200 * 80 * 3).map(|_| rng.random()).collect();
        let img = RgbImage::new(200, 80, data).unwrap();
        let seg = segment_wires(
            &img,
            &HsvRange::GREEN_BACKGROUND,
            &ScanLineConfig::for_height(80),
            8,
            &GradientConfig::default(),
        );
        assert!(matches!(seg, Segmentation::Unclear { .. }));
    }

    proptest! {
        #[test]
        fn mask_is_binary(data in proptest::collection::vec(any::<u8>(), 8 * 6 * 3)) {
            let img = RgbImage::new(8, 6, data).unwrap();
            let m = background_mask(&img, &HsvRange::GREEN_BACKGROUND);
            prop_assert!(m.as_bytes().iter().all(|&v| v == 0 || v == 255));
        }

        #[test]
        fn intervals_tile_zero_runs(row in proptest::collection::vec(any::<bool>(), 1..64)) {
            let m = BinaryMask::from_fn(row.len(), 1, |x, _| row[x]);
            // direct run-length oracle over the 0-valued runs
            let mut runs = Vec::new();
            let mut x = 0;
            while x < row.len() {
                if row[x] { x += 1; continue; }
                let s = x;
                while x < row.len() && !row[x] { x += 1; }
                runs.push((s, x));
            }
            prop_assert_eq!(row_intervals(&m, 0).unwrap(), runs);
        }
    }
}
