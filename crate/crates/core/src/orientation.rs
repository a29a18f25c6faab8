//! Connector orientation checks.
//!
//! Connectors whose two faces look different are compared to a reference
//! embedding by cosine similarity. Symmetric connectors carry a coloured
//! marker on the correct face; its presence inside the marker ROI is the check.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{crop_roi, luma, rgb_to_hsv, sharpness, HsvRange, RgbImage, Roi};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.85;
pub const DEFAULT_MIN_AREA_FRAC: f64 = 0.02;
pub const DEFAULT_MIN_SHARPNESS_RATIO: f64 = 0.3;

fn default_min_sharpness_ratio() -> f64 {
    DEFAULT_MIN_SHARPNESS_RATIO
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    l2_norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("embedding has non-finite values".into()));
        }
        let l2_norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { values, l2_norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Descriptor length; never zero for a validated descriptor.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * k).collect())
    }

    /// Component-wise mean, used to pool several training views of one connector.
    pub fn mean(vectors: &[EmbeddingVector]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::EmptyPatch)?;
        let mut acc = vec![0.0; first.len()];
        for v in vectors {
            if v.len() != first.len() {
                return Err(Error::EmbeddingLength(first.len(), v.len()));
            }
            for (a, x) in acc.iter_mut().zip(&v.values) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        Self::new(acc.into_iter().map(|a| a / n).collect())
    }
}

/// Something that turns a connector patch into a fixed-length descriptor.
///
/// The version string is stored in trained profiles; a profile built with a
/// different extractor version is refused at inspection time.
pub trait EmbeddingExtractor: Send + Sync {
    fn version(&self) -> &str;
    fn extract(&self, patch: &RgbImage) -> Result<EmbeddingVector>;
}

/// Hand-built descriptor: a 4×4 grid of saturation-weighted 8-bin hue histograms
/// followed by a 4×4 grid of magnitude-weighted 8-bin gradient-orientation
/// histograms. Each half is L2-normalised separately, so colour and shape
/// carry equal weight; length 256.
#[derive(Clone, Debug)]
pub struct GridDescriptor {
    pub grid: usize,
    pub bins: usize,
    /// Pixels below this saturation or value have no reliable hue.
    pub min_saturation: f64,
    pub min_value: f64,
    /// Central-difference magnitudes below this are treated as sensor noise.
    pub min_gradient: f64,
}

impl Default for GridDescriptor {
    fn default() -> Self {
        Self {
            grid: 4,
            bins: 8,
            min_saturation: 0.2,
            min_value: 0.15,
            min_gradient: 20.0,
        }
    }
}

pub const GRID_DESCRIPTOR_VERSION: &str = "grid-hue-grad-4x4x8-v1";

impl GridDescriptor {
    /// Descriptor length; never zero for a validated descriptor.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        2 * self.grid * self.grid * self.bins
    }

    fn cell_of(&self, x: usize, y: usize, w: usize, h: usize) -> usize {
        let cx = (x * self.grid / w).min(self.grid - 1);
        let cy = (y * self.grid / h).min(self.grid - 1);
        cy * self.grid + cx
    }
}

fn l2_normalise(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl EmbeddingExtractor for GridDescriptor {
    fn version(&self) -> &str {
        GRID_DESCRIPTOR_VERSION
    }

    fn extract(&self, patch: &RgbImage) -> Result<EmbeddingVector> {
        let (w, h) = (patch.width(), patch.height());
        if w == 0 || h == 0 {
            return Err(Error::EmptyPatch);
        }
        let half = self.grid * self.grid * self.bins;
        let mut hue = vec![0.0; half];
        let mut grad = vec![0.0; half];
        let bins = self.bins as f64;

        for y in 0..h {
            for x in 0..w {
                let cell = self.cell_of(x, y, w, h);
                let p = rgb_to_hsv(patch.pixel(x, y));
                if p.s >= self.min_saturation && p.v >= self.min_value {
                    let bin = ((p.h / 360.0 * bins) as usize).min(self.bins - 1);
                    hue[cell * self.bins + bin] += p.s;
                }
            }
        }

        let gray: Vec<f64> = patch.pixels().map(|p| f64::from(luma(p))).collect();
        let at = |x: usize, y: usize| gray[y * w + x];
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let gx = at(x + 1, y) - at(x - 1, y);
                let gy = at(x, y + 1) - at(x, y - 1);
                let mag = gx.hypot(gy);
                if mag < self.min_gradient {
                    continue;
                }
                let angle = gy.atan2(gx).rem_euclid(TAU);
                let bin = ((angle / TAU * bins) as usize).min(self.bins - 1);
                grad[self.cell_of(x, y, w, h) * self.bins + bin] += mag;
            }
        }

        l2_normalise(&mut hue);
        l2_normalise(&mut grad);
        let mut values = hue;
        values.extend(grad);
        l2_normalise(&mut values);
        EmbeddingVector::new(values)
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::EmbeddingLength(a.len(), b.len()));
    }
    if a.l2_norm == 0.0 || b.l2_norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (a.l2_norm * b.l2_norm)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrientationSpec {
    /// `reference` is filled in by training.
    Distinct {
        reference: Option<EmbeddingVector>,
        similarity_threshold: f64,
        connector_roi: Roi,
        /// Mean training sharpness of the connector patch, filled in by training.
        #[serde(default)]
        reference_sharpness: Option<f64>,
        /// Patches softer than this fraction of the reference cannot be judged.
        #[serde(default = "default_min_sharpness_ratio")]
        min_sharpness_ratio: f64,
    },
    Symmetric {
        marker_range: HsvRange,
        marker_roi: Roi,
        min_area_frac: f64,
    },
}

impl OrientationSpec {
    pub fn distinct(connector_roi: Roi) -> Self {
        Self::Distinct {
            reference: None,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            connector_roi,
            reference_sharpness: None,
            min_sharpness_ratio: DEFAULT_MIN_SHARPNESS_RATIO,
        }
    }

    /// Green marker with the default minimum area.
    pub fn symmetric(marker_roi: Roi) -> Self {
        Self::Symmetric {
            marker_range: HsvRange::GREEN_BACKGROUND,
            marker_roi,
            min_area_frac: DEFAULT_MIN_AREA_FRAC,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Distinct { similarity_threshold: t, .. } if !(*t > 0.0 && *t <= 1.0) => {
                Err(Error::InvalidConfig(format!("similarity threshold {t} outside (0, 1]")))
            }
            Self::Distinct { min_sharpness_ratio: r, .. } if !(*r >= 0.0 && *r < 1.0) => {
                Err(Error::InvalidConfig(format!("min_sharpness_ratio {r} outside [0, 1)")))
            }
            Self::Symmetric { min_area_frac: f, marker_range, .. } => {
                if !(*f > 0.0 && *f < 1.0) {
                    return Err(Error::InvalidConfig(format!("min_area_frac {f} outside (0, 1)")));
                }
                marker_range.validate()
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrientationVerdict {
    Correct,
    Reversed,
    Unclear,
}

/// Fraction of `roi` pixels whose HSV falls in `range`.
pub fn marker_fraction(frame: &RgbImage, roi: Roi, range: &HsvRange) -> Result<f64> {
    let patch = crop_roi(frame, roi)?;
    let hits = patch.pixels().filter(|&p| range.contains(rgb_to_hsv(p))).count();
    Ok(hits as f64 / roi.area() as f64)
}

pub fn detect_marker(frame: &RgbImage, marker_range: &HsvRange, marker_roi: Roi, min_area_frac: f64) -> Result<bool> {
    Ok(marker_fraction(frame, marker_roi, marker_range)? >= min_area_frac)
}

/// Distinct connectors are similarity-checked, symmetric ones marker-checked.
/// Anything that cannot be measured is `Unclear`.
pub fn verify_orientation(frame: &RgbImage, spec: &OrientationSpec, extractor: &dyn EmbeddingExtractor) -> OrientationVerdict {
    match spec {
        OrientationSpec::Distinct {
            reference,
            similarity_threshold,
            connector_roi,
            reference_sharpness,
            min_sharpness_ratio,
        } => {
            let Some(reference) = reference else {
                return OrientationVerdict::Unclear;
            };
            let Ok(patch) = crop_roi(frame, *connector_roi) else {
                return OrientationVerdict::Unclear;
            };
            // a soft patch loses the edges the descriptor relies on; similarity then says nothing
            if let Some(r) = reference_sharpness {
                if sharpness(&patch) < min_sharpness_ratio * r {
                    return OrientationVerdict::Unclear;
                }
            }
            match extractor.extract(&patch).and_then(|e| cosine_similarity(&e, reference)) {
                Ok(s) if s >= *similarity_threshold => OrientationVerdict::Correct,
                Ok(_) => OrientationVerdict::Reversed,
                Err(_) => OrientationVerdict::Unclear,
            }
        }
        OrientationSpec::Symmetric { marker_range, marker_roi, min_area_frac } => {
            match detect_marker(frame, marker_range, *marker_roi, *min_area_frac) {
                Ok(true) => OrientationVerdict::Correct,
                Ok(false) => OrientationVerdict::Reversed,
                Err(_) => OrientationVerdict::Unclear,
            }
        }
    }
}

/// Midpoint between the mean correct-vs-reference and reversed-vs-reference
/// similarities, clamped to `[0.6, 0.95]`.
pub fn calibrate_similarity_threshold(correct: &[f64], reversed: &[f64]) -> Option<f64> {
    if correct.is_empty() || reversed.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Some(((mean(correct) + mean(reversed)) / 2.0).clamp(0.6, 0.95))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = ev(&[1.0, 2.0, 3.0]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine_similarity(&v, &v.scaled(2.0).unwrap()).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&v, &ev(&[0.0; 3])), Err(Error::ZeroVector)));
        assert!(cosine_similarity(&v, &ev(&[1.0])).is_err());
    }

    #[test]
    fn descriptor_is_deterministic_with_fixed_length() {
        let d = GridDescriptor::default();
        let mut img = RgbImage::filled(40, 24, [60, 60, 60]);
        for y in 4..12 {
            for x in 3..15 {
                img.set_pixel(x, y, [40, 150, 60]);
            }
        }
        let a = d.extract(&img).unwrap();
        assert_eq!(a.len(), 256);
        assert_eq!(a, d.extract(&img).unwrap());
    }

    #[test]
    fn red_and_blue_are_dissimilar() {
        let d = GridDescriptor::default();
        let red = d.extract(&RgbImage::filled(32, 32, [220, 20, 20])).unwrap();
        let blue = d.extract(&RgbImage::filled(32, 32, [20, 20, 220])).unwrap();
        assert!(cosine_similarity(&red, &blue).unwrap() < 0.85);
    }

    #[test]
    fn marker_area_rule() {
        let mut frame = RgbImage::filled(100, 40, [60, 60, 60]);
        let roi = Roi::new(0, 0, 100, 40);
        assert!(!detect_marker(&frame, &HsvRange::GREEN_BACKGROUND, roi, 0.02).unwrap());
        // 200 of 4000 pixels = 5%
        for y in 0..10 {
            for x in 0..20 {
                frame.set_pixel(x, y, [30, 200, 40]);
            }
        }
        assert!(detect_marker(&frame, &HsvRange::GREEN_BACKGROUND, roi, 0.02).unwrap());
        assert!(detect_marker(&frame, &HsvRange::GREEN_BACKGROUND, Roi::new(90, 0, 20, 5), 0.02).is_err());
    }

    struct Fixed(f64);
    impl EmbeddingExtractor for Fixed {
        fn version(&self) -> &str {
            "fixed"
        }
        fn extract(&self, _: &RgbImage) -> Result<EmbeddingVector> {
            let a = self.0.acos();
            EmbeddingVector::new(vec![a.cos(), a.sin()])
        }
    }

    #[test]
    fn verdict_rules() {
        let frame = RgbImage::filled(50, 50, [60, 60, 60]);
        let spec = |roi| OrientationSpec::Distinct {
            reference: Some(ev(&[1.0, 0.0])),
            similarity_threshold: 0.85,
            connector_roi: roi,
            reference_sharpness: None,
            min_sharpness_ratio: 0.3,
        };
        let inside = Roi::new(0, 0, 10, 10);
        assert_eq!(verify_orientation(&frame, &spec(inside), &Fixed(0.95)), OrientationVerdict::Correct);
        assert_eq!(verify_orientation(&frame, &spec(inside), &Fixed(0.80)), OrientationVerdict::Reversed);
        assert_eq!(verify_orientation(&frame, &spec(Roi::new(45, 45, 10, 10)), &Fixed(0.95)), OrientationVerdict::Unclear);
        let untrained = OrientationSpec::distinct(inside);
        assert_eq!(verify_orientation(&frame, &untrained, &Fixed(0.95)), OrientationVerdict::Unclear);
        let sym = OrientationSpec::symmetric(inside);
        assert_eq!(verify_orientation(&frame, &sym, &GridDescriptor::default()), OrientationVerdict::Reversed);
    }

    #[test]
    fn soft_patch_is_unclear() {
        // a flat patch has zero sharpness against any positive reference
        let frame = RgbImage::filled(20, 20, [60, 60, 60]);
        let mut spec = OrientationSpec::Distinct {
            reference: Some(ev(&[1.0, 0.0])),
            similarity_threshold: 0.85,
            connector_roi: Roi::new(0, 0, 10, 10),
            reference_sharpness: Some(50.0),
            min_sharpness_ratio: 0.3,
        };
        assert_eq!(verify_orientation(&frame, &spec, &Fixed(0.99)), OrientationVerdict::Unclear);
        if let OrientationSpec::Distinct { reference_sharpness, .. } = &mut spec {
            *reference_sharpness = None;
        }
        assert_eq!(verify_orientation(&frame, &spec, &Fixed(0.99)), OrientationVerdict::Correct);
    }

    #[test]
    fn threshold_calibration_clamps() {
        assert_eq!(calibrate_similarity_threshold(&[0.99], &[0.41]), Some(0.7));
        assert_eq!(calibrate_similarity_threshold(&[0.99], &[0.0]), Some(0.6));
        assert_eq!(calibrate_similarity_threshold(&[1.0], &[0.98]), Some(0.95));
        assert_eq!(calibrate_similarity_threshold(&[], &[0.5]), None);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_free(a in proptest::collection::vec(-1.0f64..1.0, 8), b in proptest::collection::vec(-1.0f64..1.0, 8), k in 0.01f64..100.0) {
            let (a, b) = (ev(&a), ev(&b));
            prop_assume!(a.l2_norm() > 1e-6 && b.l2_norm() > 1e-6);
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert!((ab - cosine_similarity(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((ab - cosine_similarity(&a.scaled(k).unwrap(), &b).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn marker_detection_monotone_in_area(w1 in 0usize..40, w2 in 0usize..40) {
            let (small, large) = (w1.min(w2), w1.max(w2));
            let paint = |w: usize| {
                let mut f = RgbImage::filled(40, 20, [60, 60, 60]);
                for y in 0..20 { for x in 0..w { f.set_pixel(x, y, [30, 200, 40]); } }
                f
            };
            let roi = Roi::new(0, 0, 40, 20);
            let s = detect_marker(&paint(small), &HsvRange::GREEN_BACKGROUND, roi, 0.1).unwrap();
            let l = detect_marker(&paint(large), &HsvRange::GREEN_BACKGROUND, roi, 0.1).unwrap();
            prop_assert!(!s || l);
        }
    }
}
