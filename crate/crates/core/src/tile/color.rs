//! Reinhard colour transfer in the lαβ opponent space.

use serde::{Deserialize, Serialize};

use super::RasterImage;
use crate::error::{PrlError, Result};

/// Linear RGB -> LMS cone response.
pub const RGB_TO_LMS: [[f64; 3]; 3] = [
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
];

const FRAC_1_SQRT_3: f64 = 0.577_350_269_189_625_8;
const FRAC_1_SQRT_6: f64 = 0.408_248_290_463_863;

/// Smallest intensity fed to the logarithm (one 8-bit step).
const FLOOR: f64 = 1.0 / 255.0;

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            *v = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    inv
}

fn mul(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let v = rgb.map(|c| (c as f64 / 255.0).max(FLOOR));
    let lms = mul(&RGB_TO_LMS, v).map(f64::log10);
    [
        FRAC_1_SQRT_3 * (lms[0] + lms[1] + lms[2]),
        FRAC_1_SQRT_6 * (lms[0] + lms[1] - 2.0 * lms[2]),
        std::f64::consts::FRAC_1_SQRT_2 * (lms[0] - lms[1]),
    ]
}

/// Inverse of [`rgb_to_lab`]; uses the exact inverse of [`RGB_TO_LMS`] so the
/// round trip is lossless before quantization.
pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let a = lab[0] * FRAC_1_SQRT_3;
    let b = lab[1] * FRAC_1_SQRT_6;
    let c = lab[2] * std::f64::consts::FRAC_1_SQRT_2;
    let log_lms = [a + b + c, a + b - c, a - 2.0 * b];
    let lms = log_lms.map(|x| 10f64.powf(x));
    let rgb = mul(&invert3(&RGB_TO_LMS), lms);
    rgb.map(|x| x * 255.0)
}

fn quantize(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Target per-channel statistics in lαβ space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainReference {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Weighted palette of haematoxylin/eosin-like colours used for the default reference.
const HE_PALETTE: [([u8; 3], u32); 7] = [
    ([240, 160, 200], 25),
    ([220, 110, 170], 20),
    ([150, 80, 170], 15),
    ([90, 60, 150], 12),
    ([245, 215, 230], 13),
    ([230, 120, 140], 10),
    ([200, 150, 210], 5),
];

impl StainReference {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(PrlError::Validation(format!("invalid stain reference std {std:?}")));
        }
        Ok(StainReference { mean, std })
    }

    /// Statistics of the bundled H&E-like palette.
    pub fn default_he() -> Self {
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut n = 0.0;
        for (rgb, w) in HE_PALETTE {
            let lab = rgb_to_lab(rgb);
            for k in 0..3 {
                sum[k] += w as f64 * lab[k];
                sq[k] += w as f64 * lab[k] * lab[k];
            }
            n += w as f64;
        }
        let mean = sum.map(|s| s / n);
        let std = [0, 1, 2].map(|k| (sq[k] / n - mean[k] * mean[k]).max(0.0).sqrt());
        StainReference { mean, std }
    }

    /// Reference taken from the statistics of an existing tile.
    pub fn from_image(img: &RasterImage) -> Result<Self> {
        let (mean, std) = lab_stats(img);
        StainReference::new(mean, std)
    }
}

impl Default for StainReference {
    fn default() -> Self {
        StainReference::default_he()
    }
}

/// Per-channel mean and population standard deviation in lαβ.
pub fn lab_stats(img: &RasterImage) -> ([f64; 3], [f64; 3]) {
    let labs: Vec<[f64; 3]> = img.pixels().map(rgb_to_lab).collect();
    let n = labs.len().max(1) as f64;
    let mut mean = [0.0; 3];
    for l in &labs {
        for k in 0..3 {
            mean[k] += l[k];
        }
    }
    mean = mean.map(|m| m / n);
    let mut var = [0.0; 3];
    for l in &labs {
        for k in 0..3 {
            var[k] += (l[k] - mean[k]).powi(2);
        }
    }
    (mean, var.map(|v| (v / n).sqrt()))
}

/// Matches the tile's lαβ channel statistics to `reference`. A channel with no
/// variance is shifted onto the reference mean.
pub fn reinhard_normalize(tile: &RasterImage, reference: &StainReference) -> RasterImage {
    let labs: Vec<[f64; 3]> = tile.pixels().map(rgb_to_lab).collect();
    let (mean, std) = lab_stats(tile);
    let mut out = Vec::with_capacity(labs.len() * 3);
    for l in labs {
        let mut t = [0.0; 3];
        for k in 0..3 {
            t[k] = if std[k] < 1e-9 {
                reference.mean[k]
            } else {
                (l[k] - mean[k]) / std[k] * reference.std[k] + reference.mean[k]
            };
        }
        out.extend(lab_to_rgb(t).map(quantize));
    }
    RasterImage::from_raw(tile.width(), tile.height(), out, tile.mpp()).expect("same geometry as input")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tile(seed: u64, lo: u8, hi: u8) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..64 * 64 * 3).map(|_| rng.random_range(lo..=hi)).collect();
        RasterImage::from_raw(64, 64, px, 2.016).unwrap()
    }

    /// Stained-looking tile: palette colours with per-pixel jitter.
    fn he_like_tile(seed: u64, jitter: i16) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut px = Vec::with_capacity(64 * 64 * 3);
        for _ in 0..64 * 64 {
            let (base, _) = HE_PALETTE[rng.random_range(0..HE_PALETTE.len())];
            for c in base {
                px.push((c as i16 + rng.random_range(-jitter..=jitter)).clamp(0, 255) as u8);
            }
        }
        RasterImage::from_raw(64, 64, px, 2.016).unwrap()
    }

    fn max_dev(a: &RasterImage, b: &RasterImage) -> u8 {
        a.raw().iter().zip(b.raw()).map(|(x, y)| x.abs_diff(*y)).max().unwrap()
    }

    #[test]
    fn round_trip_is_lossless_before_quantization() {
        for rgb in [[12u8, 200, 90], [255, 255, 255], [1, 1, 1], [230, 150, 200]] {
            let back = lab_to_rgb(rgb_to_lab(rgb));
            for k in 0..3 {
                assert!((back[k] - rgb[k] as f64).abs() < 1e-9, "{rgb:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn matching_tile_is_fixed_point() {
        let tile = random_tile(1, 120, 240);
        let r = StainReference::from_image(&tile).unwrap();
        let out = reinhard_normalize(&tile, &r);
        assert!(max_dev(&tile, &out) <= 2);
    }

    #[test]
    fn constant_tile_goes_to_reference_mean() {
        let tile = RasterImage::from_raw(8, 8, [90u8, 40, 60].repeat(64), 2.016).unwrap();
        let r = StainReference::default_he();
        let out = reinhard_normalize(&tile, &r);
        let expect = lab_to_rgb(r.mean).map(quantize);
        assert!(out.pixels().all(|p| p == expect));
    }

    #[test]
    fn random_tile_matches_reference_means() {
        let r = StainReference::default_he();
        for seed in 0..5 {
            let out = reinhard_normalize(&he_like_tile(seed, 25), &r);
            let (mean, _) = lab_stats(&out);
            for k in 0..3 {
                assert!(
                    (mean[k] - r.mean[k]).abs() <= 0.01 * r.mean[k].abs(),
                    "channel {k}: {} vs {}",
                    mean[k],
                    r.mean[k]
                );
            }
        }
    }

    #[test]
    fn idempotent_up_to_quantization() {
        let r = StainReference::default_he();
        let once = reinhard_normalize(&he_like_tile(9, 25), &r);
        let twice = reinhard_normalize(&once, &r);
        assert!(max_dev(&once, &twice) <= 2);
    }
}
