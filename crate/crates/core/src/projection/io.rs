//! Point-cloud CSV and PANO raster codecs.
//!
//! Cloud CSV: an optional `#meta max_range=… n_channels=… points_per_rev=…`
//! line, the header `azimuth_rad,row,range_m,reflectance`, then one point per
//! line.
//!
//! PANO (little-endian): `"PANO"`, `u8` modality (0 depth, 1 reflectance,
//! 2 cam), `u32` height, `u32` width, `f32` max_range, then `f32` pixels in
//! row-major order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{LidarPoint, Modality, PanoramicImage, PointCloud, SensorMeta};
use crate::error::{Error, Result};

const HEADER: &str = "azimuth_rad,row,range_m,reflectance";
const PANO_MAGIC: &[u8; 4] = b"PANO";

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_meta(line_no: usize, rest: &str, meta: &mut SensorMeta) -> Result<()> {
    for kv in rest.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("bad meta entry {kv:?}")))?;
        fn value<V: std::str::FromStr>(line_no: usize, k: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| parse_err(line_no, format!("bad value for {k}: {v:?}")))
        }
        match k {
            "max_range" => meta.max_range = value(line_no, k, v)?,
            "n_channels" => meta.n_channels = value(line_no, k, v)?,
            "points_per_rev" => meta.points_per_rev = value(line_no, k, v)?,
            _ => return Err(parse_err(line_no, format!("unknown meta key {k:?}"))),
        }
    }
    Ok(())
}

/// Parse a cloud CSV document. Line numbers in errors are 1-based.
pub fn parse_cloud_csv(text: &str) -> Result<PointCloud> {
    let mut meta = SensorMeta::default();
    let mut points = Vec::new();
    let mut seen_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#meta") {
            parse_meta(line_no, rest, &mut meta)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != HEADER {
                return Err(parse_err(line_no, format!("expected header {HEADER:?}")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(line_no, format!("expected 4 fields, got {}", fields.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("bad {name}: {:?}", fields[i])))
        };
        let azimuth = num(0, "azimuth")?;
        let row: u32 = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad row: {:?}", fields[1])))?;
        let range: f32 = fields[2]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad range: {:?}", fields[2])))?;
        if !(range > 0.0 && range.is_finite()) {
            return Err(parse_err(line_no, format!("range must be positive, got {range}")));
        }
        let reflectance = num(3, "reflectance")? as f32;
        if !(0.0..=1.0).contains(&reflectance) {
            return Err(parse_err(line_no, format!("reflectance outside [0, 1]: {reflectance}")));
        }
        if row >= meta.n_channels {
            return Err(parse_err(line_no, format!("row {row} exceeds {} channels", meta.n_channels)));
        }
        points.push(LidarPoint {
            azimuth,
            row,
            range,
            reflectance,
        });
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(PointCloud { points, meta })
}

pub fn read_cloud_csv(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_cloud_csv(&fs::read_to_string(path)?)
}

pub fn format_cloud_csv(cloud: &PointCloud) -> String {
    let m = cloud.meta;
    let mut s = String::with_capacity(32 * cloud.points.len() + 128);
    let _ = writeln!(
        s,
        "#meta max_range={} n_channels={} points_per_rev={}",
        m.max_range, m.n_channels, m.points_per_rev
    );
    s.push_str(HEADER);
    s.push('\n');
    for p in &cloud.points {
        let _ = writeln!(s, "{},{},{},{}", p.azimuth, p.row, p.range, p.reflectance);
    }
    s
}

pub fn write_cloud_csv(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, format_cloud_csv(cloud))?;
    Ok(())
}

pub fn encode_pano(img: &PanoramicImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + 4 * img.pixels.len());
    out.extend_from_slice(PANO_MAGIC);
    out.push(img.modality as u8);
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&img.max_range.to_le_bytes());
    for &v in &img.pixels {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_pano(bytes: &[u8]) -> Result<PanoramicImage> {
    if bytes.len() < 17 || &bytes[..4] != PANO_MAGIC {
        return Err(Error::Format("not a PANO file".into()));
    }
    let modality = Modality::from_code(bytes[4])
        .ok_or_else(|| Error::Format(format!("unknown modality code {}", bytes[4])))?;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let height = u32_at(5) as usize;
    let width = u32_at(9) as usize;
    let max_range = f32::from_le_bytes(bytes[13..17].try_into().expect("4 bytes"));
    let body = &bytes[17..];
    if body.len() != 4 * width * height {
        return Err(Error::Format(format!(
            "PANO body has {} bytes, expected {}",
            body.len(),
            4 * width * height
        )));
    }
    let pixels = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    PanoramicImage::new(width, height, modality, pixels, max_range)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_pano(path: impl AsRef<Path>, img: &PanoramicImage) -> Result<()> {
    fs::write(path, encode_pano(img))?;
    Ok(())
}

pub fn read_pano(path: impl AsRef<Path>) -> Result<PanoramicImage> {
    decode_pano(&fs::read(path)?)
}
