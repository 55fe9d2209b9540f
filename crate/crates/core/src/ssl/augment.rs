//! Random view generation for tiles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PrlError, Result};
use crate::tile::{crop_resize_bilinear, RasterImage};

/// Ranges for each distortion. Factors are drawn uniformly from
/// `[1 - x, 1 + x]`; hue shifts from `[-hue, hue]` (fraction of a turn).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub zoom: (f64, f64),
    /// Maximum crop-centre offset as a fraction of the tile side.
    pub crop_jitter: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub out_px: u32,
    pub seed: u64,
}

impl Default for DistortionSpec {
    fn default() -> Self {
        DistortionSpec {
            zoom: (0.9, 1.1),
            crop_jitter: 0.05,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
            hflip_p: 0.5,
            vflip_p: 0.5,
            out_px: 224,
            seed: 0,
        }
    }
}

impl DistortionSpec {
    /// Every distortion collapsed to the identity.
    pub fn identity(out_px: u32) -> Self {
        DistortionSpec {
            zoom: (1.0, 1.0),
            crop_jitter: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            hflip_p: 0.0,
            vflip_p: 0.0,
            out_px,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs_ok = [self.hflip_p, self.vflip_p].iter().all(|p| (0.0..=1.0).contains(p));
        let zoom_ok = self.zoom.0 > 0.0 && self.zoom.0 <= 1.0 && self.zoom.1 >= 1.0;
        let ranges_ok = [self.crop_jitter, self.brightness, self.contrast, self.saturation, self.hue]
            .iter()
            .all(|x| (0.0..1.0).contains(x));
        if !probs_ok || !zoom_ok || !ranges_ok || self.out_px == 0 {
            return Err(PrlError::Validation(format!("invalid distortion spec {self:?}")));
        }
        Ok(())
    }
}

fn factor<R: Rng>(rng: &mut R, spread: f64) -> f64 {
    if spread == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - spread..=1.0 + spread)
    }
}

fn rgb_to_hsv(p: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb(p: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = p;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn one_view<R: Rng>(tile: &RasterImage, spec: &DistortionSpec, rng: &mut R) -> RasterImage {
    let (w, h) = (tile.width() as f64, tile.height() as f64);
    let zoom = if spec.zoom.0 == spec.zoom.1 {
        spec.zoom.0
    } else {
        rng.random_range(spec.zoom.0..=spec.zoom.1)
    };
    let (sw, sh) = (w / zoom, h / zoom);
    let (dx, dy) = if spec.crop_jitter == 0.0 {
        (0.0, 0.0)
    } else {
        (
            rng.random_range(-spec.crop_jitter..=spec.crop_jitter) * w,
            rng.random_range(-spec.crop_jitter..=spec.crop_jitter) * h,
        )
    };
    let x0 = (w - sw) / 2.0 + dx;
    let y0 = (h - sh) / 2.0 + dy;
    let mut view = crop_resize_bilinear(tile, x0, y0, sw, sh, spec.out_px, spec.out_px);
    if rng.random_bool(spec.hflip_p) {
        view = view.flip_horizontal();
    }
    if rng.random_bool(spec.vflip_p) {
        view = view.flip_vertical();
    }

    let b = factor(rng, spec.brightness);
    let c = factor(rng, spec.contrast);
    let s = factor(rng, spec.saturation);
    let hue = if spec.hue == 0.0 { 0.0 } else { rng.random_range(-spec.hue..=spec.hue) };
    if b == 1.0 && c == 1.0 && s == 1.0 && hue == 0.0 {
        return view;
    }
    let mean_lum = view
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .sum::<f64>()
        / (view.width() as f64 * view.height() as f64);
    let mut out = view.clone();
    for y in 0..view.height() {
        for x in 0..view.width() {
            let p = view.pixel(x, y).map(|v| v as f64);
            let mut q = p.map(|v| v * b);
            q = q.map(|v| (v - mean_lum) * c + mean_lum);
            if s != 1.0 || hue != 0.0 {
                let mut hsv = rgb_to_hsv(q.map(|v| v.clamp(0.0, 255.0) / 255.0));
                hsv[0] += hue;
                hsv[1] = (hsv[1] * s).clamp(0.0, 1.0);
                q = hsv_to_rgb(hsv).map(|v| v * 255.0);
            }
            out.set_pixel(x, y, q.map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    out
}

/// Two independently distorted views of `tile`, each `out_px` square.
pub fn apply_distortions<R: Rng>(tile: &RasterImage, spec: &DistortionSpec, rng: &mut R) -> (RasterImage, RasterImage) {
    let a = one_view(tile, spec, rng);
    let b = one_view(tile, spec, rng);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tile() -> RasterImage {
        let mut t = RasterImage::filled(224, 224, [0, 0, 0], 2.016);
        for y in 0..224 {
            for x in 0..224 {
                t.set_pixel(x, y, [x as u8, y as u8, ((x * y) % 251) as u8]);
            }
        }
        t
    }

    #[test]
    fn identity_spec_returns_tile() {
        let t = tile();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = apply_distortions(&t, &DistortionSpec::identity(224), &mut rng);
        assert_eq!(a, t);
        assert_eq!(b, t);
    }

    #[test]
    fn seeded_views_are_reproducible_and_sized() {
        let t = tile();
        let spec = DistortionSpec::default();
        spec.validate().unwrap();
        let run = |seed| apply_distortions(&t, &spec, &mut ChaCha8Rng::seed_from_u64(seed));
        let (a1, b1) = run(11);
        let (a2, b2) = run(11);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_ne!(a1, b1);
        assert_eq!((a1.width(), a1.height()), (224, 224));
    }

    #[test]
    fn hsv_round_trip() {
        for p in [[0.2, 0.5, 0.9], [1.0, 0.0, 0.0], [0.3, 0.3, 0.3], [0.9, 0.8, 0.1]] {
            let q = hsv_to_rgb(rgb_to_hsv(p));
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_spec() {
        let mut s = DistortionSpec::default();
        s.zoom = (1.05, 1.2);
        assert!(s.validate().is_err());
        let mut s = DistortionSpec::default();
        s.hflip_p = 1.5;
        assert!(s.validate().is_err());
    }
}
