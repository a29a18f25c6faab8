//! Independent re-derivations checked against the library.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wirecheck_core::color::{mse_hsv, mse_rgb, ColorPatch};
use wirecheck_core::imaging::HsvRange;
use wirecheck_core::segmentation::{background_mask, scan_line_endpoints, ScanLineConfig};
use wirecheck_core::synth::{generate, SpecSampler};
use wirecheck_core::RgbImage;

/// Textbook piecewise HSV, hue in degrees.
fn hsv_textbook(p: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = p.map(|c| f64::from(c) / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let h = if c == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / c) % 6.0)
    } else if max == g {
        60.0 * ((b - r) / c + 2.0)
    } else {
        60.0 * ((r - g) / c + 4.0)
    };
    let h = if h < 0.0 { h + 360.0 } else { h };
    let s = if max == 0.0 { 0.0 } else { c / max };
    (h, s, max)
}

fn brute_rgb(a: &RgbImage, b: &RgbImage) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            for ch in 0..3 {
                let d = f64::from(a.pixel(x, y)[ch]) - f64::from(b.pixel(x, y)[ch]);
                total += d * d;
                count += 1;
            }
        }
    }
    total / count as f64
}

fn brute_hsv(a: &RgbImage, b: &RgbImage) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (h1, s1, v1) = hsv_textbook(a.pixel(x, y));
            let (h2, s2, v2) = hsv_textbook(b.pixel(x, y));
            let raw = (h1 - h2).abs();
            let dh = raw.min(360.0 - raw) / 360.0;
            total += dh * dh + (s1 - s2) * (s1 - s2) + (v1 - v2) * (v1 - v2);
            count += 3;
        }
    }
    total / count as f64
}

fn random_patch(rng: &mut ChaCha8Rng) -> RgbImage {
    let data = (0..16 * 64 * 3).map(|_| rng.random()).collect();
    RgbImage::new(16, 64, data).unwrap()
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn mse_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0105);
    for _ in 0..1000 {
        let (a, b) = (random_patch(&mut rng), random_patch(&mut rng));
        let (pa, pb) = (ColorPatch::from_image(&a), ColorPatch::from_image(&b));
        assert!(rel_close(mse_rgb(&pa, &pb).unwrap(), brute_rgb(&a, &b)));
        assert!(rel_close(mse_hsv(&pa, &pb).unwrap(), brute_hsv(&a, &b)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn primary_rows_give_two_endpoints_per_wire(seed in any::<u64>(), n in 1usize..=16) {
        let sampler = SpecSampler { wires: n..=n, wire_width: 8..=20, noise_sigma: 2.0, ..SpecSampler::default() };
        let spec = sampler.sample(seed);
        let (_, gt) = generate(&spec).unwrap();
        let mask = background_mask(&gt.cropped, &HsvRange::GREEN_BACKGROUND);
        let cfg = ScanLineConfig::for_height(spec.field.height);
        for y in [cfg.primary_top, cfg.primary_bottom] {
            prop_assert_eq!(scan_line_endpoints(&mask, y, n).unwrap().endpoint_count(), 2 * n);
        }
    }
}
