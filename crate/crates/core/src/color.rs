//! Reference patch statistics, dual-space MSE and per-wire verdicts.
//!
//! Every wire box is resampled to a canonical patch so samples with slightly
//! different boxes can be averaged pixel by pixel. HSV values are kept on a
//! normalised scale (`h/360`, `s`, `v`), and hue is treated as circular both
//! when averaging and when differencing.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{rgb_to_hsv, RgbImage};
use crate::segmentation::WireBox;

pub const PATCH_WIDTH: usize = 16;
pub const PATCH_HEIGHT: usize = 64;
pub const MIN_SAMPLES: usize = 5;
pub const RGB_FLOOR: f64 = 25.0;
pub const HSV_FLOOR: f64 = 0.0025;

/// Per-pixel RGB and normalised HSV of one canonical patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorPatch {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    pub hsv: Vec<f64>,
}

impl ColorPatch {
    pub fn from_image(img: &RgbImage) -> Self {
        let mut rgb = Vec::with_capacity(img.width() * img.height() * 3);
        let mut hsv = Vec::with_capacity(img.width() * img.height() * 3);
        for p in img.pixels() {
            rgb.extend(p.iter().map(|&c| f64::from(c)));
            let q = rgb_to_hsv(p);
            hsv.extend([q.h / 360.0, q.s, q.v]);
        }
        Self {
            width: img.width(),
            height: img.height(),
            rgb,
            hsv,
        }
    }

    fn check_shape(&self, other: &ColorPatch) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::ShapeMismatch {
                expected: (other.width, other.height),
                found: (self.width, self.height),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePatch {
    pub wire_index: usize,
    pub mean: ColorPatch,
    /// Set when some pixel's sample hues cancel out; widens the HSV match threshold.
    pub hue_low_confidence: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorScore {
    pub wire_index: usize,
    pub mse_rgb: f64,
    pub mse_hsv: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t_match_rgb: f64,
    pub t_mismatch_rgb: f64,
    pub t_match_hsv: f64,
    pub t_mismatch_hsv: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_match_rgb < self.t_mismatch_rgb && self.t_match_hsv < self.t_mismatch_hsv) {
            return Err(Error::InvalidConfig(format!("thresholds out of order: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireVerdict {
    Match,
    Mismatch,
    Unclear,
}

/// Nearest-neighbour resample of `bx` to `width × height`.
pub fn resample_patch(cropped: &RgbImage, bx: &WireBox, width: usize, height: usize) -> Result<RgbImage> {
    if bx.x_left >= bx.x_right || bx.y_top > bx.y_bottom {
        return Err(Error::DegenerateBox {
            index: bx.index,
            x_left: bx.x_left,
            x_right: bx.x_right,
        });
    }
    if bx.x_right > cropped.width() || bx.y_bottom >= cropped.height() {
        return Err(Error::ShapeMismatch {
            expected: (cropped.width(), cropped.height()),
            found: (bx.x_right, bx.y_bottom + 1),
        });
    }
    let (bw, bh) = (bx.width() as f64, bx.height() as f64);
    let mut out = RgbImage::filled(width, height, [0, 0, 0]);
    for j in 0..height {
        let sy = bx.y_top + ((j as f64 + 0.5) * bh / height as f64) as usize;
        for i in 0..width {
            let sx = bx.x_left + ((i as f64 + 0.5) * bw / width as f64) as usize;
            out.set_pixel(i, j, cropped.pixel(sx, sy));
        }
    }
    Ok(out)
}

/// Arithmetic RGB/S/V mean and circular hue mean. Returns the mean and whether
/// any pixel's hue vectors cancelled to zero.
pub fn mean_color_patch(patches: &[&ColorPatch]) -> Result<(ColorPatch, bool)> {
    let first = patches.first().ok_or(Error::SampleCountTooLow(0))?;
    for p in patches {
        p.check_shape(first)?;
    }
    let n = patches.len() as f64;
    let len = first.rgb.len();
    let mut rgb = vec![0.0; len];
    let mut hsv = vec![0.0; len];
    let mut degenerate = false;
    for p in patches {
        for (acc, v) in rgb.iter_mut().zip(&p.rgb) {
            *acc += v;
        }
    }
    rgb.iter_mut().for_each(|v| *v /= n);
    for px in 0..len / 3 {
        let (mut c, mut s) = (0.0, 0.0);
        let (mut sat, mut val) = (0.0, 0.0);
        for p in patches {
            let a = p.hsv[px * 3] * TAU;
            c += a.cos();
            s += a.sin();
            sat += p.hsv[px * 3 + 1];
            val += p.hsv[px * 3 + 2];
        }
        let h = if c.hypot(s) < 1e-9 * n {
            degenerate = true;
            0.0
        } else {
            let h = s.atan2(c).rem_euclid(TAU) / TAU;
            if h >= 1.0 { 0.0 } else { h }
        };
        hsv[px * 3] = h;
        hsv[px * 3 + 1] = sat / n;
        hsv[px * 3 + 2] = val / n;
    }
    Ok((
        ColorPatch {
            width: first.width,
            height: first.height,
            rgb,
            hsv,
        },
        degenerate,
    ))
}

/// Canonical patches of every wire in every sample, indexed `[wire][sample]`.
pub fn sample_patches(samples: &[(RgbImage, Vec<WireBox>)], width: usize, height: usize) -> Result<Vec<Vec<ColorPatch>>> {
    let wires = samples.first().map(|s| s.1.len()).unwrap_or(0);
    let mut per_wire = vec![Vec::with_capacity(samples.len()); wires];
    for (img, boxes) in samples {
        if boxes.len() != wires {
            return Err(Error::WireCountInconsistent {
                expected: wires,
                found: boxes.len(),
            });
        }
        for (w, bx) in boxes.iter().enumerate() {
            per_wire[w].push(ColorPatch::from_image(&resample_patch(img, bx, width, height)?));
        }
    }
    Ok(per_wire)
}

pub fn mean_patches(samples: &[(RgbImage, Vec<WireBox>)], width: usize, height: usize) -> Result<Vec<ReferencePatch>> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::SampleCountTooLow(samples.len()));
    }
    references_from(&sample_patches(samples, width, height)?)
}

pub fn references_from(per_wire: &[Vec<ColorPatch>]) -> Result<Vec<ReferencePatch>> {
    per_wire
        .iter()
        .enumerate()
        .map(|(wire_index, patches)| {
            let refs: Vec<&ColorPatch> = patches.iter().collect();
            let (mean, hue_low_confidence) = mean_color_patch(&refs)?;
            Ok(ReferencePatch {
                wire_index,
                mean,
                hue_low_confidence,
            })
        })
        .collect()
}

pub fn mse_rgb(test: &ColorPatch, reference: &ColorPatch) -> Result<f64> {
    test.check_shape(reference)?;
    let sum: f64 = test
        .rgb
        .iter()
        .zip(&reference.rgb)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / test.rgb.len() as f64)
}

#[inline]
fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

pub fn mse_hsv(test: &ColorPatch, reference: &ColorPatch) -> Result<f64> {
    test.check_shape(reference)?;
    let mut sum = 0.0;
    for (t, r) in test.hsv.chunks_exact(3).zip(reference.hsv.chunks_exact(3)) {
        let dh = hue_distance(t[0], r[0]);
        let ds = t[1] - r[1];
        let dv = t[2] - r[2];
        sum += dh * dh + ds * ds + dv * dv;
    }
    Ok(sum / test.hsv.len() as f64)
}

pub fn score_patch(test: &ColorPatch, reference: &ReferencePatch) -> Result<ColorScore> {
    Ok(ColorScore {
        wire_index: reference.wire_index,
        mse_rgb: mse_rgb(test, &reference.mean)?,
        mse_hsv: mse_hsv(test, &reference.mean)?,
    })
}

fn space_verdict(mse: f64, t_match: f64, t_mismatch: f64) -> WireVerdict {
    if mse <= t_match {
        WireVerdict::Match
    } else if mse >= t_mismatch {
        WireVerdict::Mismatch
    } else {
        WireVerdict::Unclear
    }
}

/// Both spaces must match; a mismatch in either space wins.
pub fn classify_wire(score: &ColorScore, th: &Thresholds) -> WireVerdict {
    let rgb = space_verdict(score.mse_rgb, th.t_match_rgb, th.t_mismatch_rgb);
    let hsv = space_verdict(score.mse_hsv, th.t_match_hsv, th.t_mismatch_hsv);
    match (rgb, hsv) {
        (WireVerdict::Mismatch, _) | (_, WireVerdict::Mismatch) => WireVerdict::Mismatch,
        (WireVerdict::Match, WireVerdict::Match) => WireVerdict::Match,
        _ => WireVerdict::Unclear,
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Leave-one-out match thresholds per wire, with mismatch thresholds pushed out
/// to half the distance to the nearest differently-coloured wire.
///
/// `per_wire[w]` holds wire `w`'s canonical patch from every training sample.
pub fn calibrate_thresholds(per_wire: &[Vec<ColorPatch>], references: &[ReferencePatch]) -> Result<Vec<Thresholds>> {
    let mut matches = Vec::with_capacity(per_wire.len());
    for (w, patches) in per_wire.iter().enumerate() {
        if patches.len() < MIN_SAMPLES {
            return Err(Error::SampleCountTooLow(patches.len()));
        }
        let mut loo_rgb = Vec::with_capacity(patches.len());
        let mut loo_hsv = Vec::with_capacity(patches.len());
        for k in 0..patches.len() {
            let others: Vec<&ColorPatch> = patches
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, p)| p)
                .collect();
            let (held_out_mean, _) = mean_color_patch(&others)?;
            loo_rgb.push(mse_rgb(&patches[k], &held_out_mean)?);
            loo_hsv.push(mse_hsv(&patches[k], &held_out_mean)?);
        }
        let (mr, sr) = mean_std(&loo_rgb);
        let (mh, sh) = mean_std(&loo_hsv);
        let mut t_hsv = mh + 3.0 * sh + HSV_FLOOR;
        if references.get(w).is_some_and(|r| r.hue_low_confidence) {
            t_hsv *= 2.0;
        }
        matches.push((mr + 3.0 * sr + RGB_FLOOR, t_hsv));
    }

    let mut out = Vec::with_capacity(references.len());
    for (i, ri) in references.iter().enumerate() {
        let (t_rgb, t_hsv) = matches[i];
        let (mut near_rgb, mut near_hsv) = (f64::INFINITY, f64::INFINITY);
        for (j, rj) in references.iter().enumerate() {
            if i == j {
                continue;
            }
            let d_rgb = mse_rgb(&rj.mean, &ri.mean)?;
            let d_hsv = mse_hsv(&rj.mean, &ri.mean)?;
            // same-colour wires are indistinguishable and excluded
            if d_rgb <= t_rgb && d_hsv <= t_hsv {
                continue;
            }
            near_rgb = near_rgb.min(d_rgb);
            near_hsv = near_hsv.min(d_hsv);
        }
        let pushed = |t: f64, near: f64| if near.is_finite() { (4.0 * t).max(0.5 * near) } else { 4.0 * t };
        out.push(Thresholds {
            t_match_rgb: t_rgb,
            t_mismatch_rgb: pushed(t_rgb, near_rgb),
            t_match_hsv: t_hsv,
            t_mismatch_hsv: pushed(t_hsv, near_hsv),
        });
    }
    Ok(out)
}
