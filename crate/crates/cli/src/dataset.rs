//! On-disk dataset layout: `index.csv` plus one PANO pair per scan.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ppc_core::projection::{read_pano, write_pano};
use ppc_core::training::LabeledScan;
use ppc_core::Category;

pub const INDEX: &str = "index.csv";
const HEADER: &str = "path,category,location_set";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    /// Scan stem relative to the dataset root, e.g. `coast/coast_0003`.
    pub path: String,
    pub category: Category,
    pub location_set: usize,
}

pub fn depth_file(stem: &str) -> String {
    format!("{stem}.depth.pano")
}

pub fn reflectance_file(stem: &str) -> String {
    format!("{stem}.reflectance.pano")
}

/// Stems for `scans`, numbered per category in order.
pub fn stems(scans: &[LabeledScan]) -> Vec<String> {
    let mut counts = [0usize; Category::COUNT];
    scans
        .iter()
        .map(|s| {
            let n = &mut counts[s.label.index()];
            *n += 1;
            format!("{0}/{0}_{1:04}", s.label.name(), *n - 1)
        })
        .collect()
}

pub fn write_dataset(dir: &Path, scans: &[LabeledScan]) -> Result<Vec<IndexEntry>> {
    let mut index = String::from(HEADER);
    index.push('\n');
    let mut entries = Vec::with_capacity(scans.len());
    for (scan, stem) in scans.iter().zip(stems(scans)) {
        fs::create_dir_all(dir.join(scan.label.name()))
            .with_context(|| format!("cannot create {}", dir.display()))?;
        write_pano(dir.join(depth_file(&stem)), &scan.depth)?;
        write_pano(dir.join(reflectance_file(&stem)), &scan.reflectance)?;
        index.push_str(&format!("{stem},{},{}\n", scan.label, scan.location_set));
        entries.push(IndexEntry {
            path: stem,
            category: scan.label,
            location_set: scan.location_set,
        });
    }
    fs::write(dir.join(INDEX), index).with_context(|| format!("cannot write index in {}", dir.display()))?;
    Ok(entries)
}

pub fn parse_index(text: &str) -> Result<Vec<IndexEntry>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => bail!("index must start with the header {HEADER:?}"),
    }
    lines
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [path, category, set] = fields[..] else {
                bail!("line {}: expected 3 fields, got {}", i + 1, fields.len());
            };
            Ok(IndexEntry {
                path: path.to_string(),
                category: category.parse().with_context(|| format!("line {}", i + 1))?,
                location_set: set.parse().with_context(|| format!("line {}: bad location set {set:?}", i + 1))?,
            })
        })
        .collect()
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexEntry>> {
    let path = dir.join(INDEX);
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_index(&text).with_context(|| format!("in {}", path.display()))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledScan>> {
    read_index(dir)?
        .into_iter()
        .map(|e| {
            let depth = read_pano(dir.join(depth_file(&e.path)))
                .with_context(|| format!("scan {}", e.path))?;
            let reflectance = read_pano(dir.join(reflectance_file(&e.path)))
                .with_context(|| format!("scan {}", e.path))?;
            if (depth.width, depth.height) != (reflectance.width, reflectance.height) {
                bail!("scan {}: depth and reflectance sizes differ", e.path);
            }
            Ok(LabeledScan {
                depth,
                reflectance,
                label: e.category,
                location_set: e.location_set,
            })
        })
        .collect()
}
