//! Procedural LiDAR scenes for the six place categories.
//!
//! Each scene is a handful of ray-cast primitives (ground, ceiling, boxes,
//! vertical cylinders, spheres) seen by a 32-channel spinning sensor 1.8 m
//! above the ground. Layouts follow per-category recipes, and every location
//! set perturbs the recipe in a fixed way so sets differ systematically.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::Result;
use crate::projection::{downsample_bilinear, project_scan, LidarPoint, PointCloud, SensorMeta};
use crate::training::{derive_seed, Category, LabeledScan};

/// Bumped whenever a recipe or the scene layout code changes output.
pub const RECIPE_VERSION: u32 = 2;

pub const SENSOR_HEIGHT: f64 = 1.8;
/// Largest platform tilt (pitch and roll combined) of a scan.
pub const MAX_TILT_DEG: f64 = 4.0;
const TOP_ELEVATION_DEG: f64 = 10.67;
const BOTTOM_ELEVATION_DEG: f64 = -30.67;

/// Elevation of channel `row` in radians; row 0 is the highest.
pub fn elevation(row: usize, channels: usize) -> f64 {
    let step = (TOP_ELEVATION_DEG - BOTTOM_ELEVATION_DEG) / (channels - 1) as f64;
    (TOP_ELEVATION_DEG - step * row as f64).to_radians()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Materials {
    pub ground: f64,
    pub structure: f64,
    pub clutter: f64,
    pub jitter: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneRecipe {
    pub category: Category,
    /// Height range of buildings, walls or canopy tops, meters.
    pub building_height: (f64, f64),
    /// Radius around the sensor where the ground returns.
    pub ground_extent: f64,
    /// Clutter objects (trees, cars, pillars) per 100 m² of nearby ground.
    pub clutter_density: f64,
    /// Width of the azimuth sector without ground beyond the shoreline.
    pub no_return_sector: f64,
    pub ceiling_height: Option<f64>,
    pub materials: Materials,
    /// Range noise standard deviation as a fraction of range.
    pub range_sigma: f64,
}

pub fn recipe(category: Category) -> SceneRecipe {
    let base = SceneRecipe {
        category,
        building_height: (0.0, 0.0),
        ground_extent: 100.0,
        clutter_density: 0.0,
        no_return_sector: 0.0,
        ceiling_height: None,
        materials: Materials {
            ground: 0.15,
            structure: 0.5,
            clutter: 0.2,
            jitter: 0.05,
        },
        range_sigma: 0.02,
    };
    match category {
        Category::Coast => SceneRecipe {
            building_height: (2.0, 3.0),
            clutter_density: 0.6,
            no_return_sector: PI,
            materials: Materials { ground: 0.45, structure: 0.6, clutter: 0.2, ..base.materials },
            ..base
        },
        Category::Forest => SceneRecipe {
            building_height: (12.0, 20.0),
            ground_extent: 100.0,
            clutter_density: 4.0,
            materials: Materials { ground: 0.1, structure: 0.3, clutter: 0.18, ..base.materials },
            ..base
        },
        Category::ParkingIn => SceneRecipe {
            building_height: (2.6, 3.2),
            clutter_density: 0.6,
            ceiling_height: Some(2.9),
            materials: Materials { ground: 0.35, structure: 0.5, clutter: 0.75, ..base.materials },
            ..base
        },
        Category::ParkingOut => SceneRecipe {
            building_height: (5.0, 10.0),
            clutter_density: 0.5,
            materials: Materials { ground: 0.12, structure: 0.45, clutter: 0.75, ..base.materials },
            ..base
        },
        Category::Residential => SceneRecipe {
            building_height: (5.0, 9.0),
            clutter_density: 0.3,
            materials: Materials { ground: 0.15, structure: 0.6, clutter: 0.22, ..base.materials },
            ..base
        },
        Category::Urban => SceneRecipe {
            building_height: (20.0, 45.0),
            clutter_density: 0.2,
            materials: Materials { ground: 0.13, structure: 0.42, clutter: 0.7, ..base.materials },
            ..base
        },
    }
}

/// Systematic per-location-set perturbation of a recipe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetVariation {
    pub distance_scale: f64,
    pub height_scale: f64,
    pub density_scale: f64,
    pub reflectance_offset: f64,
}

impl SetVariation {
    pub const NEUTRAL: SetVariation = SetVariation {
        distance_scale: 1.0,
        height_scale: 1.0,
        density_scale: 1.0,
        reflectance_offset: 0.0,
    };

    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SetVariation {
            distance_scale: rng.random_range(0.85..1.15),
            height_scale: rng.random_range(0.85..1.15),
            density_scale: rng.random_range(0.8..1.2),
            reflectance_offset: rng.random_range(-0.04..0.04),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    /// Horizontal plane at height `z` (sensor frame).
    Plane { z: f64 },
    Aabb { lo: [f64; 3], hi: [f64; 3] },
    /// Vertical cylinder between heights `z0` and `z1`.
    Cylinder { c: [f64; 2], r: f64, z0: f64, z1: f64 },
    Sphere { c: [f64; 3], r: f64 },
}

#[derive(Clone, Copy, Debug)]
struct Object {
    shape: Shape,
    reflectance: f64,
}

const EPS: f64 = 1e-9;

impl Shape {
    /// Distance along the unit ray `d` from the origin to the first hit.
    fn hit(&self, d: [f64; 3]) -> Option<f64> {
        match *self {
            Shape::Plane { z } => {
                let t = z / d[2];
                (d[2].abs() > EPS && t > 0.0).then_some(t)
            }
            Shape::Aabb { lo, hi } => {
                let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
                for a in 0..3 {
                    if d[a].abs() < EPS {
                        if 0.0 < lo[a] || 0.0 > hi[a] {
                            return None;
                        }
                    } else {
                        let (mut n, mut f) = (lo[a] / d[a], hi[a] / d[a]);
                        if n > f {
                            std::mem::swap(&mut n, &mut f);
                        }
                        t0 = t0.max(n);
                        t1 = t1.min(f);
                    }
                }
                (t0 <= t1 && t0 > 0.0).then_some(t0)
            }
            Shape::Cylinder { c, r, z0, z1 } => {
                let a = d[0] * d[0] + d[1] * d[1];
                if a < EPS {
                    return None;
                }
                let b = -2.0 * (d[0] * c[0] + d[1] * c[1]);
                let cc = c[0] * c[0] + c[1] * c[1] - r * r;
                let disc = b * b - 4.0 * a * cc;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / (2.0 * a);
                let z = t * d[2];
                (t > 0.0 && z >= z0 && z <= z1).then_some(t)
            }
            Shape::Sphere { c, r } => {
                let b = d[0] * c[0] + d[1] * c[1] + d[2] * c[2];
                let cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2] - r * r;
                let disc = b * b - cc;
                if disc < 0.0 {
                    return None;
                }
                let t = b - disc.sqrt();
                (t > 0.0).then_some(t)
            }
        }
    }
}

/// Ground with an optional azimuth sector that only returns within the
/// shoreline distance.
#[derive(Clone, Copy, Debug)]
struct Ground {
    reflectance: f64,
    extent: f64,
    sea: Option<(f64, f64, f64)>,
}

impl Ground {
    fn hit(&self, d: [f64; 3]) -> Option<f64> {
        let t = Shape::Plane { z: -SENSOR_HEIGHT }.hit(d)?;
        let (x, y) = (t * d[0], t * d[1]);
        let dist = x.hypot(y);
        if dist > self.extent {
            return None;
        }
        if let Some((center, width, shore)) = self.sea {
            let off = (y.atan2(x) - center + PI).rem_euclid(TAU) - PI;
            if off.abs() < width / 2.0 && dist > shore {
                return None;
            }
        }
        Some(t)
    }
}

struct Scene {
    ground: Option<Ground>,
    objects: Vec<Object>,
}

impl Scene {
    fn cast(&self, d: [f64; 3]) -> Option<(f64, f64)> {
        let mut best = self.ground.and_then(|g| g.hit(d).map(|t| (t, g.reflectance)));
        for o in &self.objects {
            if let Some(t) = o.shape.hit(d) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, o.reflectance));
                }
            }
        }
        best
    }
}

fn polar(r: f64, a: f64) -> [f64; 2] {
    [r * a.cos(), r * a.sin()]
}

fn block(center: [f64; 2], half: [f64; 2], z0: f64, z1: f64, reflectance: f64) -> Object {
    Object {
        shape: Shape::Aabb {
            lo: [center[0] - half[0], center[1] - half[1], z0],
            hi: [center[0] + half[0], center[1] + half[1], z1],
        },
        reflectance,
    }
}

fn count(density: f64, area: f64, v: &SetVariation, rng: &mut ChaCha8Rng) -> usize {
    let mean = density * v.density_scale * area / 100.0;
    (mean * rng.random_range(0.8..1.2)).round() as usize
}

/// A point in the annulus `[r0, r1]`, uniform by area.
fn scatter(rng: &mut ChaCha8Rng, r0: f64, r1: f64) -> [f64; 2] {
    let r = (rng.random_range(r0 * r0..r1 * r1)).sqrt();
    polar(r, rng.random_range(0.0..TAU))
}

fn build_scene(rc: &SceneRecipe, v: &SetVariation, rng: &mut ChaCha8Rng) -> Scene {
    let m = rc.materials;
    let off = v.reflectance_offset;
    let (ground_r, struct_r, clutter_r) = (m.ground + off, m.structure + off, m.clutter + off);
    let ds = v.distance_scale;
    let floor = -SENSOR_HEIGHT;
    let height = |rng: &mut ChaCha8Rng| rng.random_range(rc.building_height.0..rc.building_height.1) * v.height_scale;
    let mut ground = Ground {
        reflectance: ground_r,
        extent: rc.ground_extent,
        sea: None,
    };
    let mut objects = Vec::new();

    match rc.category {
        Category::Coast => {
            let center = rng.random_range(0.0..TAU);
            let width = rc.no_return_sector * rng.random_range(0.9..1.1);
            let shore = rng.random_range(4.0..10.0) * ds;
            ground.sea = Some((center, width, shore));
            // treeline and huts on the landward side
            let trees = count(rc.clutter_density, 600.0, v, rng);
            for _ in 0..trees {
                let a = center + PI + rng.random_range(-1.2..1.2);
                let r = rng.random_range(12.0..30.0) * ds;
                let c = polar(r, a);
                let top = rng.random_range(2.0..6.0);
                objects.push(Object {
                    shape: Shape::Sphere { c: [c[0], c[1], top], r: rng.random_range(2.0..4.0) },
                    reflectance: clutter_r,
                });
                objects.push(Object {
                    shape: Shape::Cylinder { c, r: 0.25, z0: floor, z1: top },
                    reflectance: clutter_r + 0.08,
                });
            }
            for _ in 0..rng.random_range(2..6) {
                let a = center + PI + rng.random_range(-1.5..1.5);
                let c = polar(rng.random_range(5.0..15.0) * ds, a);
                objects.push(block(c, [1.0, 1.0], floor, floor + height(rng), struct_r));
            }
        }
        Category::Forest => {
            let trunks = count(rc.clutter_density, PI * 900.0, v, rng);
            for _ in 0..trunks {
                let c = scatter(rng, 1.5, 30.0 * ds);
                let top = floor + height(rng);
                objects.push(Object {
                    shape: Shape::Cylinder { c, r: rng.random_range(0.1..0.35), z0: floor, z1: top },
                    reflectance: struct_r,
                });
                if rng.random_bool(0.5) {
                    objects.push(Object {
                        shape: Shape::Sphere {
                            c: [c[0], c[1], rng.random_range(3.0..9.0)],
                            r: rng.random_range(1.5..3.5),
                        },
                        reflectance: clutter_r,
                    });
                }
            }
            for _ in 0..count(rc.clutter_density / 2.0, PI * 400.0, v, rng) {
                let c = scatter(rng, 2.0, 20.0);
                objects.push(Object {
                    shape: Shape::Sphere { c: [c[0], c[1], floor + 0.3], r: rng.random_range(0.4..1.0) },
                    reflectance: clutter_r,
                });
            }
        }
        Category::ParkingIn => {
            let ceiling = rc.ceiling_height.unwrap_or(2.9) * rng.random_range(0.9..1.1);
            let z_top = floor + ceiling;
            objects.push(Object { shape: Shape::Plane { z: z_top }, reflectance: struct_r - 0.05 });
            let (lx, ly) = (rng.random_range(12.0..35.0) * ds, rng.random_range(12.0..35.0) * ds);
            let (sx, sy) = (rng.random_range(-0.6..0.6) * lx, rng.random_range(-0.6..0.6) * ly);
            for (c, h) in [
                ([sx + lx, sy], [0.3, ly + 0.3]),
                ([sx - lx, sy], [0.3, ly + 0.3]),
                ([sx, sy + ly], [lx + 0.3, 0.3]),
                ([sx, sy - ly], [lx + 0.3, 0.3]),
            ] {
                objects.push(block(c, h, floor, z_top, struct_r));
            }
            let spacing = rng.random_range(6.5..8.5);
            let (ox, oy) = (rng.random_range(0.0..spacing), rng.random_range(0.0..spacing));
            let mut x = sx - lx + ox;
            while x < sx + lx {
                let mut y = sy - ly + oy;
                while y < sy + ly {
                    if x.hypot(y) > 1.0 {
                        objects.push(block([x, y], [0.3, 0.3], floor, z_top, struct_r + 0.15));
                    }
                    y += spacing;
                }
                x += spacing;
            }
            for _ in 0..count(rc.clutter_density, 4.0 * lx * ly, v, rng) {
                let c = [rng.random_range(sx - lx..sx + lx), rng.random_range(sy - ly..sy + ly)];
                if c[0].hypot(c[1]) > 3.0 {
                    objects.push(block(c, [2.25, 0.9], floor, floor + 1.5, clutter_r));
                }
            }
        }
        Category::ParkingOut => {
            for _ in 0..count(rc.clutter_density, PI * 1600.0, v, rng) {
                let c = scatter(rng, 5.0, 40.0 * ds);
                let half = if rng.random_bool(0.5) { [2.25, 0.9] } else { [0.9, 2.25] };
                objects.push(block(c, half, floor, floor + rng.random_range(1.4..1.9), clutter_r));
            }
            for _ in 0..rng.random_range(3..7) {
                let c = scatter(rng, 6.0, 35.0);
                objects.push(Object {
                    shape: Shape::Cylinder { c, r: 0.15, z0: floor, z1: floor + 8.0 },
                    reflectance: struct_r,
                });
            }
            for _ in 0..rng.random_range(2..6) {
                let c = scatter(rng, 50.0 * ds, 90.0);
                let half = [rng.random_range(5.0..15.0), rng.random_range(5.0..15.0)];
                objects.push(block(c, half, floor, floor + height(rng), struct_r));
            }
        }
        Category::Residential => {
            for side in [-1.0, 1.0] {
                let setback = rng.random_range(8.0..14.0) * ds;
                let mut x = -90.0 + rng.random_range(0.0..8.0);
                while x < 90.0 {
                    let len = rng.random_range(8.0..14.0);
                    let depth = rng.random_range(8.0..12.0);
                    objects.push(block(
                        [x + len / 2.0, side * (setback + depth / 2.0)],
                        [len / 2.0, depth / 2.0],
                        floor,
                        floor + height(rng),
                        struct_r + rng.random_range(-0.08..0.08),
                    ));
                    // hedge in front of the plot
                    if rng.random_bool(0.6) {
                        objects.push(block(
                            [x + len / 2.0, side * (setback - 2.0)],
                            [len / 2.0, 0.4],
                            floor,
                            floor + 1.2,
                            clutter_r,
                        ));
                    }
                    x += len + rng.random_range(3.0..8.0);
                }
            }
            for _ in 0..count(rc.clutter_density, 1200.0, v, rng) {
                let c = [rng.random_range(-40.0..40.0), if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(5.0..7.0) * ds];
                objects.push(Object {
                    shape: Shape::Sphere { c: [c[0], c[1], rng.random_range(3.0..5.0)], r: rng.random_range(1.5..2.5) },
                    reflectance: clutter_r,
                });
            }
        }
        Category::Urban => {
            for side in [-1.0, 1.0] {
                let setback = rng.random_range(7.0..12.0) * ds;
                let mut x = -150.0;
                while x < 150.0 {
                    let len = rng.random_range(15.0..40.0);
                    objects.push(block(
                        [x + len / 2.0, side * (setback + 10.0)],
                        [len / 2.0, 10.0],
                        floor,
                        floor + height(rng),
                        struct_r + rng.random_range(-0.1..0.1),
                    ));
                    x += len + if rng.random_bool(0.2) { rng.random_range(0.5..2.0) } else { 0.0 };
                }
            }
            for end in [-1.0, 1.0] {
                let x = end * rng.random_range(70.0..95.0);
                objects.push(block([x, 0.0], [5.0, 30.0], floor, floor + height(rng), struct_r));
            }
            for _ in 0..count(rc.clutter_density, 1600.0, v, rng) {
                let c = [rng.random_range(-50.0..50.0), rng.random_range(-4.0..4.0) * ds];
                if c[0].hypot(c[1]) > 4.0 {
                    objects.push(block(c, [2.25, 0.9], floor, floor + 1.6, clutter_r));
                }
            }
        }
    }
    Scene {
        ground: Some(ground),
        objects,
    }
}

/// Rotation of the sensor frame by `angle` about a horizontal axis.
struct Tilt {
    axis: [f64; 2],
    cos: f64,
    sin: f64,
}

impl Tilt {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let angle = rng.random_range(0.0..MAX_TILT_DEG).to_radians();
        let dir = rng.random_range(0.0..TAU);
        Tilt {
            axis: [dir.cos(), dir.sin()],
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    /// Rodrigues rotation of `d` about the unit axis `(ax, ay, 0)`.
    fn apply(&self, d: [f64; 3]) -> [f64; 3] {
        let [ax, ay] = self.axis;
        let cross = [ay * d[2], -ax * d[2], ax * d[1] - ay * d[0]];
        let dot = (ax * d[0] + ay * d[1]) * (1.0 - self.cos);
        [
            d[0] * self.cos + cross[0] * self.sin + ax * dot,
            d[1] * self.cos + cross[1] * self.sin + ay * dot,
            d[2] * self.cos + cross[2] * self.sin,
        ]
    }
}

/// Ray-cast one revolution of the scene described by `rc` and `v`.
pub fn generate_scene_with(rc: &SceneRecipe, v: &SetVariation, seed: u64) -> PointCloud {
    let meta = SensorMeta::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = build_scene(rc, v, &mut rng);
    let yaw = rng.random_range(0.0..TAU);
    let tilt = Tilt::sample(&mut rng);
    let channels = meta.n_channels as usize;
    let steps = meta.points_per_rev as usize;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let jitter = rc.materials.jitter;
    let max_range = meta.max_range as f64;
    let mut points = Vec::with_capacity(channels * steps);
    for row in 0..channels {
        let e = elevation(row, channels);
        let (ce, se) = (e.cos(), e.sin());
        for j in 0..steps {
            let a = TAU * (j as f64 + 0.5) / steps as f64;
            let d = tilt.apply([ce * a.cos(), ce * a.sin(), se]);
            let Some((t, refl)) = scene.cast(d) else {
                continue;
            };
            if t > max_range {
                continue;
            }
            let range = (t * (1.0 + rc.range_sigma * noise.sample(&mut rng))).clamp(0.05, max_range);
            let reflectance = (refl + rng.random_range(-jitter..jitter)).clamp(0.0, 1.0);
            points.push(LidarPoint {
                azimuth: (a + yaw).rem_euclid(TAU),
                row: row as u32,
                range: range as f32,
                reflectance: reflectance as f32,
            });
        }
    }
    PointCloud { points, meta }
}

/// A scan of `category` with the unperturbed recipe.
pub fn generate_scene(category: Category, seed: u64) -> (PointCloud, Category) {
    (
        generate_scene_with(&recipe(category), &SetVariation::NEUTRAL, seed),
        category,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetConfig {
    pub n_per_category: usize,
    pub n_location_sets: usize,
    pub seed: u64,
    /// Panorama size after downsampling.
    pub width: usize,
    pub height: usize,
}

impl DatasetConfig {
    pub fn new(n_per_category: usize, n_location_sets: usize, seed: u64) -> Self {
        DatasetConfig {
            n_per_category,
            n_location_sets,
            seed,
            width: 384,
            height: 32,
        }
    }
}

/// Identity of scan `index` of `category` in a generated dataset:
/// `(location_set, scene seed, set variation)`.
pub fn scan_plan(cfg: &DatasetConfig, category: Category, index: usize) -> (usize, u64, SetVariation) {
    let set = index % cfg.n_location_sets;
    let cat_seed = derive_seed(cfg.seed, category.index() as u64);
    let variation = SetVariation::sample(derive_seed(cat_seed, 1_000_000 + set as u64));
    (set, derive_seed(cat_seed, index as u64), variation)
}

pub fn generate_cloud(cfg: &DatasetConfig, category: Category, index: usize) -> (PointCloud, usize) {
    let (set, seed, variation) = scan_plan(cfg, category, index);
    (generate_scene_with(&recipe(category), &variation, seed), set)
}

/// Project a cloud at native resolution and downsample to `width × height`.
pub fn scan_from_cloud(cloud: &PointCloud, label: Category, location_set: usize, width: usize, height: usize) -> Result<LabeledScan> {
    let (d, r) = project_scan(cloud, cloud.meta.points_per_rev as usize)?;
    Ok(LabeledScan {
        depth: downsample_bilinear(&d, width, height)?,
        reflectance: downsample_bilinear(&r, width, height)?,
        label,
        location_set,
    })
}

/// `n_per_category` scans of every category, assigned round-robin to
/// location sets, ordered by category then index.
pub fn generate_dataset_with(cfg: &DatasetConfig) -> Result<Vec<LabeledScan>> {
    crate::error::ensure!(cfg.n_location_sets >= 2, "need at least two location sets");
    let jobs: Vec<(Category, usize)> = Category::ALL
        .iter()
        .flat_map(|&c| (0..cfg.n_per_category).map(move |i| (c, i)))
        .collect();
    jobs.par_iter()
        .map(|&(c, i)| {
            let (cloud, set) = generate_cloud(cfg, c, i);
            scan_from_cloud(&cloud, c, set, cfg.width, cfg.height)
        })
        .collect()
}

pub fn generate_dataset(n_per_category: usize, n_location_sets: usize, seed: u64) -> Result<Vec<LabeledScan>> {
    generate_dataset_with(&DatasetConfig::new(n_per_category, n_location_sets, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elevations_span_sensor_fov() {
        assert!((elevation(0, 32).to_degrees() - 10.67).abs() < 1e-12);
        assert!((elevation(31, 32).to_degrees() + 30.67).abs() < 1e-12);
    }

    #[test]
    fn primitives_hit_where_expected() {
        let x = [1.0, 0.0, 0.0];
        let b = Shape::Aabb { lo: [5.0, -1.0, -1.0], hi: [6.0, 1.0, 1.0] };
        assert!((b.hit(x).unwrap() - 5.0).abs() < 1e-12);
        let s = Shape::Sphere { c: [10.0, 0.0, 0.0], r: 2.0 };
        assert!((s.hit(x).unwrap() - 8.0).abs() < 1e-12);
        let c = Shape::Cylinder { c: [0.0, 4.0], r: 1.0, z0: -1.0, z1: 1.0 };
        assert!((c.hit([0.0, 1.0, 0.0]).unwrap() - 3.0).abs() < 1e-12);
        assert!(c.hit(x).is_none());
        let down = [0.0, (0.5f64).sqrt(), -(0.5f64).sqrt()];
        let g = Shape::Plane { z: -SENSOR_HEIGHT };
        assert!((g.hit(down).unwrap() - SENSOR_HEIGHT * 2f64.sqrt()).abs() < 1e-12);
        assert!(g.hit(x).is_none());
    }

    #[test]
    fn deterministic_scenes() {
        for c in Category::ALL {
            let (a, _) = generate_scene(c, 3);
            let (b, _) = generate_scene(c, 3);
            assert_eq!(a, b);
            assert!(!a.points.is_empty());
            assert!(a.points.iter().all(|p| p.range > 0.0 && p.range <= a.meta.max_range && p.row < 32));
        }
    }

    fn no_return(c: Category, seed: u64) -> f64 {
        let (cloud, _) = generate_scene(c, seed);
        project_scan(&cloud, 2166).unwrap().0.empty_fraction()
    }

    #[test]
    fn no_return_bands() {
        for seed in 0..3 {
            assert!(no_return(Category::Coast, seed) > 0.25);
            assert!(no_return(Category::Urban, seed) < 0.05);
            assert!(no_return(Category::ParkingIn, seed) < 0.05);
        }
    }

    #[test]
    fn mean_range_bands() {
        let bands = [(6.0, 13.0), (8.0, 15.0), (5.0, 12.5), (8.5, 16.0), (8.5, 15.5), (8.5, 16.5)];
        for (c, (lo, hi)) in Category::ALL.into_iter().zip(bands) {
            for seed in 0..2 {
                let (cloud, _) = generate_scene(c, seed);
                let mean = cloud.points.iter().map(|p| p.range as f64).sum::<f64>() / cloud.points.len() as f64;
                assert!(mean > lo && mean < hi, "{c}: {mean}");
            }
        }
    }

    #[test]
    fn dataset_layout() {
        let cfg = DatasetConfig { width: 96, height: 16, ..DatasetConfig::new(4, 2, 9) };
        let scans = generate_dataset_with(&cfg).unwrap();
        assert_eq!(scans.len(), 24);
        for (i, s) in scans.iter().enumerate() {
            assert_eq!(s.label, Category::ALL[i / 4]);
            assert_eq!(s.location_set, (i % 4) % 2);
            assert_eq!((s.depth.width, s.depth.height), (96, 16));
            assert!(s.depth.pixels.iter().chain(&s.reflectance.pixels).all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(scans, generate_dataset_with(&cfg).unwrap());
        assert!(generate_dataset(1, 1, 0).is_err());
    }

    #[test]
    fn sets_differ_systematically() {
        let cfg = DatasetConfig::new(4, 2, 1);
        let (_, _, a) = scan_plan(&cfg, Category::Urban, 0);
        let (_, _, b) = scan_plan(&cfg, Category::Urban, 2);
        let (_, _, c) = scan_plan(&cfg, Category::Urban, 1);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
