//! Slide tiling at a fixed physical resolution, tissue detection and stain
//! normalization.

pub mod color;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use color::{reinhard_normalize, StainReference};

use crate::error::{PrlError, Result};
use crate::ingest::TileRecord;

pub const DEFAULT_TILE_PX: u32 = 224;
pub const DEFAULT_TARGET_MPP: f64 = 2.016;
pub const DEFAULT_MIN_TISSUE: f64 = 0.6;

/// Largest upsampling ratio accepted (bilinear) when the source is slightly
/// coarser than the target resolution.
pub const MAX_UPSAMPLE: f64 = 1.1;

/// 8-bit RGB raster with its physical pixel size.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
    mpp: f64,
}

impl RasterImage {
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>, mpp: f64) -> Result<Self> {
        if !(mpp > 0.0 && mpp.is_finite()) {
            return Err(PrlError::Validation(format!("microns per pixel must be positive, got {mpp}")));
        }
        let expect = width as usize * height as usize * 3;
        if data.len() != expect {
            return Err(PrlError::Dimension(format!(
                "{width}x{height} RGB image needs {expect} bytes, got {}",
                data.len()
            )));
        }
        Ok(RasterImage { width, height, data, mpp })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3], mpp: f64) -> Self {
        RasterImage::from_raw(width, height, rgb.repeat(width as usize * height as usize), mpp)
            .expect("consistent geometry")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn mpp(&self) -> f64 {
        self.mpp
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Loads an 8-bit RGB PNG. Images with other channel layouts are rejected.
    pub fn load_png(path: &Path, mpp: f64) -> Result<Self> {
        let img = image::open(path)?;
        match img {
            image::DynamicImage::ImageRgb8(rgb) => {
                let (w, h) = rgb.dimensions();
                RasterImage::from_raw(w, h, rgb.into_raw(), mpp)
            }
            other => Err(PrlError::Validation(format!(
                "{}: unsupported pixel layout {:?}, expected 8-bit RGB",
                path.display(),
                other.color()
            ))),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| PrlError::io(parent, e))?;
        }
        let buf = image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer matches geometry");
        buf.save(path)?;
        Ok(())
    }

    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> RasterImage {
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for y in y0..y0 + h {
            let start = (y as usize * self.width as usize + x0 as usize) * 3;
            data.extend_from_slice(&self.data[start..start + w as usize * 3]);
        }
        RasterImage {
            width: w,
            height: h,
            data,
            mpp: self.mpp,
        }
    }

    pub fn flip_horizontal(&self) -> RasterImage {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> RasterImage {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(x, self.height - 1 - y, self.pixel(x, y));
            }
        }
        out
    }

    /// Rotation by 90° clockwise.
    pub fn rotate90(&self) -> RasterImage {
        let mut out = RasterImage::filled(self.height, self.width, [0, 0, 0], self.mpp);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.height - 1 - y, x, self.pixel(x, y));
            }
        }
        out
    }
}

/// Source-pixel weights for each output pixel along one axis when shrinking
/// `src` samples onto `dst` samples by exact area coverage.
fn area_weights(src: u32, dst: u32) -> Vec<Vec<(u32, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let start = o as f64 * scale;
            let end = (o as f64 + 1.0) * scale;
            let mut w = Vec::new();
            let mut i = start.floor() as u32;
            while (i as f64) < end && i < src {
                let lo = start.max(i as f64);
                let hi = end.min(i as f64 + 1.0);
                if hi > lo {
                    w.push((i, (hi - lo) / scale));
                }
                i += 1;
            }
            w
        })
        .collect()
}

/// Area-averaging downsample to `w`×`h`.
pub fn resize_area(img: &RasterImage, w: u32, h: u32, mpp: f64) -> RasterImage {
    let wx = area_weights(img.width, w);
    let wy = area_weights(img.height, h);
    // horizontal pass into f64 rows
    let mut tmp = vec![0.0f64; img.height as usize * w as usize * 3];
    for y in 0..img.height {
        for (ox, ws) in wx.iter().enumerate() {
            let mut acc = [0.0; 3];
            for &(sx, wt) in ws {
                let p = img.pixel(sx, y);
                for k in 0..3 {
                    acc[k] += wt * p[k] as f64;
                }
            }
            let base = (y as usize * w as usize + ox) * 3;
            tmp[base..base + 3].copy_from_slice(&acc);
        }
    }
    let mut out = Vec::with_capacity(w as usize * h as usize * 3);
    for ws in &wy {
        for ox in 0..w as usize {
            let mut acc = [0.0; 3];
            for &(sy, wt) in ws {
                let base = (sy as usize * w as usize + ox) * 3;
                for k in 0..3 {
                    acc[k] += wt * tmp[base + k];
                }
            }
            out.extend(acc.map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    RasterImage {
        width: w,
        height: h,
        data: out,
        mpp,
    }
}

/// Bilinear sample of the region starting at (`x0`,`y0`) with size `sw`×`sh`
/// (source pixels, fractional allowed) onto a `w`×`h` grid.
pub fn crop_resize_bilinear(img: &RasterImage, x0: f64, y0: f64, sw: f64, sh: f64, w: u32, h: u32) -> RasterImage {
    let sx = sw / w as f64;
    let sy = sh / h as f64;
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    let mut out = Vec::with_capacity(w as usize * h as usize * 3);
    for oy in 0..h {
        // pixel-centre mapping
        let fy = (y0 + (oy as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let y_lo = fy.floor();
        let ty = fy - y_lo;
        let y_hi = (y_lo + 1.0).min(max_y);
        for ox in 0..w {
            let fx = (x0 + (ox as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let x_lo = fx.floor();
            let tx = fx - x_lo;
            let x_hi = (x_lo + 1.0).min(max_x);
            let p00 = img.pixel(x_lo as u32, y_lo as u32);
            let p10 = img.pixel(x_hi as u32, y_lo as u32);
            let p01 = img.pixel(x_lo as u32, y_hi as u32);
            let p11 = img.pixel(x_hi as u32, y_hi as u32);
            for k in 0..3 {
                let top = p00[k] as f64 * (1.0 - tx) + p10[k] as f64 * tx;
                let bot = p01[k] as f64 * (1.0 - tx) + p11[k] as f64 * tx;
                out.push((top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage {
        width: w,
        height: h,
        data: out,
        mpp: img.mpp * sx,
    }
}

/// Resamples `img` so that one pixel spans `target_mpp` microns.
pub fn resample_to_mpp(img: &RasterImage, target_mpp: f64) -> Result<RasterImage> {
    if !(target_mpp > 0.0) {
        return Err(PrlError::Validation(format!("target mpp must be positive, got {target_mpp}")));
    }
    let ratio = img.mpp / target_mpp;
    let w = (img.width as f64 * ratio).round() as u32;
    let h = (img.height as f64 * ratio).round() as u32;
    if (ratio - 1.0).abs() < 1e-12 {
        return Ok(img.clone());
    }
    if ratio < 1.0 {
        Ok(resize_area(img, w.max(1), h.max(1), target_mpp))
    } else if ratio <= MAX_UPSAMPLE {
        let mut out = crop_resize_bilinear(img, 0.0, 0.0, img.width as f64, img.height as f64, w, h);
        out.mpp = target_mpp;
        Ok(out)
    } else {
        Err(PrlError::Precondition(format!(
            "image at {} mpp is coarser than target {target_mpp} mpp",
            img.mpp
        )))
    }
}

/// Cuts `img` into non-overlapping `tile_px` squares at `target_mpp`; partial
/// border tiles are dropped. Tile ids are `{slide_id}_{row}_{col}`.
pub fn tile_image(
    img: &RasterImage,
    slide_id: &str,
    tile_px: u32,
    target_mpp: f64,
    rule: &TissueRule,
) -> Result<Vec<(TileRecord, RasterImage)>> {
    if tile_px == 0 {
        return Err(PrlError::Validation("tile size must be positive".into()));
    }
    let img = resample_to_mpp(img, target_mpp)?;
    let cols = img.width / tile_px;
    let rows = img.height / tile_px;
    if cols == 0 || rows == 0 {
        return Err(PrlError::Precondition(format!(
            "{}x{} image at {target_mpp} mpp is smaller than one {tile_px}px tile",
            img.width, img.height
        )));
    }
    let mut out = Vec::with_capacity((rows * cols) as usize);
    for r in 0..rows {
        for c in 0..cols {
            let tile = img.crop(c * tile_px, r * tile_px, tile_px, tile_px);
            let rec = TileRecord {
                tile_id: format!("{slide_id}_{r}_{c}"),
                slide_id: slide_id.to_string(),
                row: r,
                col: c,
                tissue_fraction: tissue_fraction(&tile, rule),
                path: None,
            };
            out.push((rec, tile));
        }
    }
    Ok(out)
}

/// Background pixel rule: bright and unsaturated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueRule {
    pub max_background_saturation: f64,
    pub min_background_luminance: f64,
}

impl Default for TissueRule {
    fn default() -> Self {
        TissueRule {
            max_background_saturation: 0.08,
            min_background_luminance: 0.86,
        }
    }
}

impl TissueRule {
    pub fn is_background(&self, rgb: [u8; 3]) -> bool {
        let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
        let lum = 0.2126 * r + 0.7152 * g + 0.0722 * b;
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let sat = if max > 0.0 { (max - min) / max } else { 0.0 };
        lum > self.min_background_luminance && sat < self.max_background_saturation
    }
}

/// Fraction of pixels that are not background under `rule`.
pub fn tissue_fraction(tile: &RasterImage, rule: &TissueRule) -> f64 {
    let n = (tile.width as usize * tile.height as usize).max(1);
    let tissue = tile.pixels().filter(|p| !rule.is_background(*p)).count();
    tissue as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    const WHITE: [u8; 3] = [250, 250, 250];
    const PINK: [u8; 3] = [230, 150, 200];

    #[test]
    fn exact_grid_and_border_drop() {
        let r = TissueRule::default();
        let t = tile_image(&RasterImage::filled(448, 448, PINK, 2.016), "s", 224, 2.016, &r).unwrap();
        assert_eq!(t.len(), 4);
        let t = tile_image(&RasterImage::filled(500, 500, PINK, 2.016), "s", 224, 2.016, &r).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|(_, img)| img.width() == 224 && img.height() == 224));
    }

    #[test]
    fn half_resolution_source_yields_one_tile() {
        let r = TissueRule::default();
        let t = tile_image(&RasterImage::filled(448, 448, PINK, 1.008), "s", 224, 2.016, &r).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].1.pixel(10, 10), PINK);
    }

    #[test]
    fn too_small_and_too_coarse() {
        let r = TissueRule::default();
        assert!(tile_image(&RasterImage::filled(100, 300, PINK, 2.016), "s", 224, 2.016, &r).is_err());
        assert!(tile_image(&RasterImage::filled(900, 900, PINK, 4.0), "s", 224, 2.016, &r).is_err());
    }

    #[test]
    fn area_downsample_averages_blocks() {
        let mut img = RasterImage::filled(4, 2, [0, 0, 0], 1.0);
        img.set_pixel(0, 0, [200, 100, 40]);
        let out = resize_area(&img, 2, 1, 2.0);
        assert_eq!(out.pixel(0, 0), [50, 25, 10]);
        assert_eq!(out.pixel(1, 0), [0, 0, 0]);
    }

    #[test]
    fn tiles_partition_the_resampled_image() {
        let mut img = RasterImage::filled(470, 230, WHITE, 2.016);
        for x in 0..470 {
            for y in 0..230 {
                img.set_pixel(x, y, [(x % 256) as u8, (y % 256) as u8, 7]);
            }
        }
        let t = tile_image(&img, "s", 224, 2.016, &TissueRule::default()).unwrap();
        let mut covered = std::collections::HashSet::new();
        for (rec, tile) in &t {
            for y in 0..224 {
                for x in 0..224 {
                    let gx = rec.col * 224 + x;
                    let gy = rec.row * 224 + y;
                    assert!(covered.insert((gx, gy)));
                    assert_eq!(tile.pixel(x, y), img.pixel(gx, gy));
                }
            }
        }
    }

    #[test]
    fn tissue_fraction_cases() {
        let r = TissueRule::default();
        assert_eq!(tissue_fraction(&RasterImage::filled(32, 32, [255, 255, 255], 2.0), &r), 0.0);
        assert_eq!(tissue_fraction(&RasterImage::filled(32, 32, PINK, 2.0), &r), 1.0);
        let mut half = RasterImage::filled(32, 32, WHITE, 2.0);
        for y in 0..32 {
            for x in 0..16 {
                half.set_pixel(x, y, PINK);
            }
        }
        let f = tissue_fraction(&half, &r);
        assert!((f - 0.5).abs() <= 0.02);
        for img in [half.rotate90(), half.flip_horizontal(), half.flip_vertical(), half.rotate90().rotate90()] {
            assert_eq!(tissue_fraction(&img, &r), f);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        let mut img = RasterImage::filled(5, 3, PINK, 2.016);
        img.set_pixel(4, 2, [1, 2, 3]);
        img.save_png(&p).unwrap();
        assert_eq!(RasterImage::load_png(&p, 2.016).unwrap(), img);
    }
}
