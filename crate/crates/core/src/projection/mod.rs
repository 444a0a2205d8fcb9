//! Cylindrical projection of LiDAR scans into aligned depth and reflectance
//! panoramas, plus the bilinear resampler that brings them to network size.
//!
//! Row 0 is the highest-elevation channel. Column `j` covers azimuths
//! `[j, j + 1) · 2π / width`. A pixel value of 0 in a depth image means no
//! return.

mod io;

use std::f64::consts::TAU;

pub use io::{
    decode_pano, encode_pano, format_cloud_csv, parse_cloud_csv, read_cloud_csv, read_pano,
    write_cloud_csv, write_pano,
};

use crate::error::{ensure, Error, Result};

/// Sensor constants; the defaults describe a 32-channel spinning LiDAR with a
/// 100 m range limit and 2166 returns per revolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorMeta {
    pub max_range: f32,
    pub n_channels: u32,
    pub points_per_rev: u32,
}

impl Default for SensorMeta {
    fn default() -> Self {
        SensorMeta {
            max_range: 100.0,
            n_channels: 32,
            points_per_rev: 2166,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarPoint {
    /// Radians; normalized into `[0, 2π)` on projection.
    pub azimuth: f64,
    /// Elevation channel, 0 = highest.
    pub row: u32,
    /// Meters, > 0.
    pub range: f32,
    /// Unitless in `[0, 1]`.
    pub reflectance: f32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub meta: SensorMeta,
}

impl PointCloud {
    /// Rotate every point in yaw by `theta` radians.
    pub fn rotate_azimuth(&self, theta: f64) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| LidarPoint {
                    azimuth: (p.azimuth + theta).rem_euclid(TAU),
                    ..*p
                })
                .collect(),
            meta: self.meta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Depth = 0,
    Reflectance = 1,
    /// Class activation map rendered as a panorama.
    Cam = 2,
}

impl Modality {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Depth),
            1 => Some(Modality::Reflectance),
            2 => Some(Modality::Cam),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Depth => "depth",
            Modality::Reflectance => "reflectance",
            Modality::Cam => "cam",
        }
    }
}

/// A `height × width` raster with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PanoramicImage {
    pub width: usize,
    pub height: usize,
    pub modality: Modality,
    /// Row-major `[height, width]`.
    pub pixels: Vec<f64>,
    pub max_range: f32,
}

impl PanoramicImage {
    pub fn new(
        width: usize,
        height: usize,
        modality: Modality,
        pixels: Vec<f64>,
        max_range: f32,
    ) -> Result<Self> {
        ensure!(width > 0 && height > 0, "image dimensions must be positive");
        ensure!(
            pixels.len() == width * height,
            "{}x{} image needs {} pixels, got {}",
            height,
            width,
            width * height,
            pixels.len()
        );
        Ok(PanoramicImage {
            width,
            height,
            modality,
            pixels,
            max_range,
        })
    }

    pub fn blank(width: usize, height: usize, modality: Modality, max_range: f32) -> Self {
        PanoramicImage {
            width,
            height,
            modality,
            pixels: vec![0.0; width * height],
            max_range,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Range in meters behind a depth pixel.
    pub fn range_at(&self, row: usize, col: usize) -> f32 {
        (self.get(row, col) * self.max_range as f64) as f32
    }

    /// Mask of pixels holding a value (non-zero).
    pub fn nonzero_mask(&self) -> Vec<bool> {
        self.pixels.iter().map(|&v| v != 0.0).collect()
    }

    /// Fraction of zero pixels, i.e. no-return fraction for depth images.
    pub fn empty_fraction(&self) -> f64 {
        self.pixels.iter().filter(|&&v| v == 0.0).count() as f64 / self.pixels.len() as f64
    }
}

/// Project a scan onto `width` azimuth columns and one row per channel.
///
/// When several points land on one pixel the nearest one wins for both
/// modalities, keeping the depth and reflectance images aligned.
pub fn project_scan(cloud: &PointCloud, width: usize) -> Result<(PanoramicImage, PanoramicImage)> {
    if cloud.points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    ensure!(width >= 1, "panorama width must be at least 1");
    let meta = cloud.meta;
    ensure!(
        meta.max_range > 0.0 && meta.n_channels > 0,
        "sensor metadata must have positive max_range and channel count"
    );
    let height = meta.n_channels as usize;
    let max_range = meta.max_range as f64;

    // nearest range seen per pixel, as (range, reflectance)
    let mut best: Vec<Option<(f32, f32)>> = vec![None; width * height];
    for p in &cloud.points {
        ensure!(
            (p.row as usize) < height,
            "channel {} out of range for {} channels",
            p.row,
            height
        );
        ensure!(
            p.range > 0.0 && p.range.is_finite(),
            "point range must be positive, got {}",
            p.range
        );
        let col = column_of(p.azimuth, width);
        let range = p.range.min(meta.max_range);
        let slot = &mut best[p.row as usize * width + col];
        if slot.is_none_or(|(r, _)| range < r) {
            *slot = Some((range, p.reflectance.clamp(0.0, 1.0)));
        }
    }

    let depth = best
        .iter()
        .map(|b| b.map_or(0.0, |(r, _)| r as f64 / max_range))
        .collect();
    let refl = best
        .iter()
        .map(|b| b.map_or(0.0, |(_, f)| f as f64))
        .collect();
    Ok((
        PanoramicImage::new(width, height, Modality::Depth, depth, meta.max_range)?,
        PanoramicImage::new(width, height, Modality::Reflectance, refl, meta.max_range)?,
    ))
}

/// Column index of an azimuth on a `width`-column panorama.
pub fn column_of(azimuth: f64, width: usize) -> usize {
    let az = azimuth.rem_euclid(TAU);
    ((az / TAU * width as f64).floor() as usize).min(width - 1)
}

/// Bilinear downsampling with horizontally periodic sampling.
pub fn downsample_bilinear(img: &PanoramicImage, out_w: usize, out_h: usize) -> Result<PanoramicImage> {
    ensure!(
        out_w >= 1 && out_h >= 1 && out_w <= img.width && out_h <= img.height,
        "downsampling {}x{} to {}x{} is not a reduction",
        img.width,
        img.height,
        out_w,
        out_h
    );
    let mut pixels = resample_bilinear(&img.pixels, img.height, img.width, out_h, out_w);
    pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    PanoramicImage::new(out_w, out_h, img.modality, pixels, img.max_range)
}

/// Half-pixel-centred bilinear resampling of a row-major `h × w` grid.
/// Columns wrap around; rows clamp at the edges. Works in both directions.
pub fn resample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let cols: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|ox| {
            let x = (ox as f64 + 0.5) * sx - 0.5;
            let x0 = x.floor();
            let t = x - x0;
            let x0 = (x0 as i64).rem_euclid(w as i64) as usize;
            (x0, (x0 + 1) % w, t)
        })
        .collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let y = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = y - y0 as f64;
        let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
        for &(x0, x1, tx) in &cols {
            let top = lerp(r0[x0], r0[x1], tx);
            let bottom = lerp(r1[x0], r1[x1], tx);
            out.push(lerp(top, bottom, ty));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn point(azimuth: f64, row: u32, range: f32, reflectance: f32) -> LidarPoint {
        LidarPoint {
            azimuth,
            row,
            range,
            reflectance,
        }
    }

    fn cloud(points: Vec<LidarPoint>) -> PointCloud {
        PointCloud {
            points,
            meta: SensorMeta::default(),
        }
    }

    #[test]
    fn single_point_at_max_range() {
        let (d, r) = project_scan(&cloud(vec![point(0.0, 0, 100.0, 0.5)]), 384).unwrap();
        assert_eq!(d.get(0, 0), 1.0);
        assert_eq!(d.pixels.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(r.get(0, 0), 0.5f32 as f64);
        assert_eq!((d.height, d.width), (32, 384));
    }

    #[test]
    fn half_revolution_column() {
        assert_eq!(column_of(PI, 384), 192);
        assert_eq!(column_of(-0.001, 384), 383);
        assert_eq!(column_of(TAU, 384), 0);
    }

    #[test]
    fn nearest_point_wins_both_modalities() {
        let c = cloud(vec![point(0.1, 3, 20.0, 0.1), point(0.1, 3, 10.0, 0.9)]);
        let (d, r) = project_scan(&c, 384).unwrap();
        let col = column_of(0.1, 384);
        assert!((d.get(3, col) - 0.10).abs() < 1e-12);
        assert_eq!(r.get(3, col), 0.9f32 as f64);
    }

    #[test]
    fn errors() {
        assert!(matches!(project_scan(&cloud(vec![]), 384), Err(Error::EmptyCloud)));
        assert!(project_scan(&cloud(vec![point(0.0, 32, 1.0, 0.0)]), 384).is_err());
        assert!(project_scan(&cloud(vec![point(0.0, 0, 0.0, 0.0)]), 384).is_err());
    }

    #[test]
    fn far_points_clamp_to_one() {
        let (d, _) = project_scan(&cloud(vec![point(1.0, 5, 250.0, 0.2)]), 64).unwrap();
        assert_eq!(d.get(5, column_of(1.0, 64)), 1.0);
    }

    #[test]
    fn downsample_shapes_and_constants() {
        let img = PanoramicImage::new(2166, 32, Modality::Depth, vec![0.375; 2166 * 32], 100.0).unwrap();
        let small = downsample_bilinear(&img, 384, 32).unwrap();
        assert_eq!((small.width, small.height), (384, 32));
        assert!(small.pixels.iter().all(|&v| v == 0.375));
        assert!(downsample_bilinear(&small, 385, 32).is_err());
    }

    #[test]
    fn identity_resample_is_exact() {
        let px: Vec<f64> = (0..8 * 12).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let img = PanoramicImage::new(12, 8, Modality::Reflectance, px, 100.0).unwrap();
        assert_eq!(downsample_bilinear(&img, 12, 8).unwrap(), img);
    }

    #[test]
    fn resample_wraps_horizontally() {
        // 1x4 -> 1x2: each output averages two neighbours; output column 0
        // sits at x = 0.5 between source columns 0 and 1
        let out = resample_bilinear(&[0.0, 1.0, 0.0, 1.0], 1, 4, 1, 2);
        assert_eq!(out, vec![0.5, 0.5]);
        // upsample 1x2 -> 1x4: first output sits at x = -0.25, between the
        // last and first columns
        let out = resample_bilinear(&[0.0, 1.0], 1, 2, 1, 4);
        assert_eq!(out, vec![0.25, 0.25, 0.75, 0.75]);
    }

    #[test]
    fn rotation_by_whole_columns_shifts_image() {
        let w = 64;
        let step = TAU / w as f64;
        let pts: Vec<LidarPoint> = (0..40)
            .map(|i| point((((i * 7) % w) as f64 + 0.5) * step, (i % 32) as u32, 1.0 + i as f32, 0.3))
            .collect();
        let c = cloud(pts);
        let (d0, _) = project_scan(&c, w).unwrap();
        let k = 5;
        let (d1, _) = project_scan(&c.rotate_azimuth(k as f64 * step), w).unwrap();
        for row in 0..32 {
            for col in 0..w {
                assert_eq!(d1.get(row, (col + k) % w), d0.get(row, col));
            }
        }
    }
}
