//! Python bindings: projection, synthetic data, models, fusion, folds and Grad-CAM.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ppc_core::gradcam::grad_cam as core_grad_cam;
use ppc_core::models::{fuse_softmax_average, fuse_weighted, FusionWeights};
use ppc_core::models::{Model as CoreModel, ModelKind, ModelSpec};
use ppc_core::projection::{
    self as proj, LidarPoint, Modality, PanoramicImage, PointCloud, SensorMeta,
};
use ppc_core::synthetic;
use ppc_core::tensor::Tensor;
use ppc_core::training::{self, Category, InputMode, LabeledScan, Trained};

fn err(e: ppc_core::Error) -> PyErr {
    match e {
        ppc_core::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn category(name: &str) -> PyResult<Category> {
    name.parse().map_err(err)
}

/// A `height × width` panorama with values in `[0, 1]`.
#[pyclass(name = "Panorama", module = "ppc", frozen, from_py_object)]
#[derive(Clone)]
struct Panorama {
    inner: PanoramicImage,
}

#[pymethods]
impl Panorama {
    #[new]
    #[pyo3(signature = (width, height, pixels, modality = "depth", max_range = 100.0))]
    fn new(width: usize, height: usize, pixels: Vec<f64>, modality: &str, max_range: f32) -> PyResult<Self> {
        let modality = match modality {
            "depth" => Modality::Depth,
            "reflectance" => Modality::Reflectance,
            other => return Err(PyValueError::new_err(format!("unknown modality {other:?}"))),
        };
        let inner = PanoramicImage::new(width, height, modality, pixels, max_range).map_err(err)?;
        Ok(Panorama { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Panorama { inner: proj::read_pano(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        proj::write_pano(path, &self.inner).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn modality(&self) -> &'static str {
        self.inner.modality.name()
    }

    #[getter]
    fn max_range(&self) -> f32 {
        self.inner.max_range
    }

    /// Row-major pixel values.
    #[getter]
    fn pixels(&self) -> Vec<f64> {
        self.inner.pixels.clone()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        self.check(row, col)?;
        Ok(self.inner.get(row, col))
    }

    /// Range in meters for depth panoramas.
    fn range_at(&self, row: usize, col: usize) -> PyResult<f32> {
        self.check(row, col)?;
        Ok(self.inner.range_at(row, col))
    }

    fn empty_fraction(&self) -> f64 {
        self.inner.empty_fraction()
    }

    fn downsample(&self, width: usize, height: usize) -> PyResult<Self> {
        Ok(Panorama { inner: proj::downsample_bilinear(&self.inner, width, height).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Panorama({}, {}x{})", self.inner.modality.name(), self.inner.height, self.inner.width)
    }
}

impl Panorama {
    fn check(&self, row: usize, col: usize) -> PyResult<()> {
        if row >= self.inner.height || col >= self.inner.width {
            return Err(PyValueError::new_err(format!("pixel ({row}, {col}) out of range")));
        }
        Ok(())
    }
}

/// A labeled scan with aligned depth and reflectance panoramas.
#[pyclass(name = "Scan", module = "ppc", frozen, from_py_object)]
#[derive(Clone)]
struct Scan {
    inner: LabeledScan,
}

#[pymethods]
impl Scan {
    #[new]
    fn new(depth: Panorama, reflectance: Panorama, label: &str, location_set: usize) -> PyResult<Self> {
        Ok(Scan {
            inner: LabeledScan {
                depth: depth.inner,
                reflectance: reflectance.inner,
                label: category(label)?,
                location_set,
            },
        })
    }

    #[getter]
    fn depth(&self) -> Panorama {
        Panorama { inner: self.inner.depth.clone() }
    }

    #[getter]
    fn reflectance(&self) -> Panorama {
        Panorama { inner: self.inner.reflectance.clone() }
    }

    #[getter]
    fn label(&self) -> &'static str {
        self.inner.label.name()
    }

    #[getter]
    fn location_set(&self) -> usize {
        self.inner.location_set
    }

    fn __repr__(&self) -> String {
        format!("Scan({}, set {})", self.inner.label.name(), self.inner.location_set)
    }
}

type Point = (f64, u32, f32, f32);

fn cloud_from(points: Vec<Point>, max_range: f32, n_channels: u32, points_per_rev: u32) -> PointCloud {
    PointCloud {
        points: points
            .into_iter()
            .map(|(azimuth, row, range, reflectance)| LidarPoint { azimuth, row, range, reflectance })
            .collect(),
        meta: SensorMeta { max_range, n_channels, points_per_rev },
    }
}

fn points_of(cloud: &PointCloud) -> Vec<Point> {
    cloud.points.iter().map(|p| (p.azimuth, p.row, p.range, p.reflectance)).collect()
}

/// Category names in class-index order.
#[pyfunction]
fn categories() -> Vec<&'static str> {
    Category::ALL.iter().map(|c| c.name()).collect()
}

/// Project `(azimuth, row, range, reflectance)` points to depth and reflectance panoramas.
#[pyfunction]
#[pyo3(signature = (points, width = 2166, max_range = 100.0, n_channels = 32, points_per_rev = 2166))]
fn project_scan(
    points: Vec<Point>,
    width: usize,
    max_range: f32,
    n_channels: u32,
    points_per_rev: u32,
) -> PyResult<(Panorama, Panorama)> {
    let cloud = cloud_from(points, max_range, n_channels, points_per_rev);
    let (d, r) = proj::project_scan(&cloud, width).map_err(err)?;
    Ok((Panorama { inner: d }, Panorama { inner: r }))
}

/// Read a point-cloud CSV file as a list of points plus its sensor metadata.
#[pyfunction]
fn read_cloud_csv(path: &str) -> PyResult<(Vec<Point>, f32, u32, u32)> {
    let cloud = proj::read_cloud_csv(path).map_err(err)?;
    let m = cloud.meta;
    Ok((points_of(&cloud), m.max_range, m.n_channels, m.points_per_rev))
}

/// One synthetic scan of `category` as a list of points.
#[pyfunction]
fn generate_scene(category_name: &str, seed: u64) -> PyResult<Vec<Point>> {
    let (cloud, _) = synthetic::generate_scene(category(category_name)?, seed);
    Ok(points_of(&cloud))
}

/// A labeled synthetic dataset grouped into location sets.
#[pyfunction]
#[pyo3(signature = (n_per_category, n_location_sets, seed, width = 384, height = 32))]
fn generate_dataset(
    py: Python<'_>,
    n_per_category: usize,
    n_location_sets: usize,
    seed: u64,
    width: usize,
    height: usize,
) -> PyResult<Vec<Scan>> {
    let mut cfg = synthetic::DatasetConfig::new(n_per_category, n_location_sets, seed);
    cfg.width = width;
    cfg.height = height;
    let scans = py.detach(|| synthetic::generate_dataset_with(&cfg)).map_err(err)?;
    Ok(scans.into_iter().map(|inner| Scan { inner }).collect())
}

/// Average two probability vectors; returns the fused vector and its argmax.
#[pyfunction]
fn fuse_average(p_depth: Vec<f64>, p_reflectance: Vec<f64>) -> PyResult<(Vec<f64>, usize)> {
    fuse_softmax_average(&p_depth, &p_reflectance).map_err(err)
}

/// Weighted sum `w_d·p_d + w_r·p_r` with `w_d + w_r = 1`.
#[pyfunction]
fn fuse_with_weights(p_depth: Vec<f64>, p_reflectance: Vec<f64>, w_depth: f64) -> PyResult<(Vec<f64>, usize)> {
    let w = FusionWeights { w_d: w_depth, w_r: 1.0 - w_depth };
    fuse_weighted(&p_depth, &p_reflectance, w).map_err(err)
}

/// Grouped k-fold plan over scans; each fold is a dict of index lists.
#[pyfunction]
fn make_folds(py: Python<'_>, scans: Vec<Scan>, k: usize) -> PyResult<Vec<Py<PyAny>>> {
    let scans: Vec<LabeledScan> = scans.into_iter().map(|s| s.inner).collect();
    let plan = training::make_folds(&scans, k).map_err(err)?;
    plan.folds
        .into_iter()
        .map(|f| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("train", f.train)?;
            d.set_item("validation", f.validation)?;
            d.set_item("test", f.test)?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

fn input_mode(name: &str) -> PyResult<InputMode> {
    name.parse().map_err(err)
}

fn batch(scans: &[Scan], mode: InputMode) -> PyResult<Tensor<f32>> {
    let refs: Vec<&LabeledScan> = scans.iter().map(|s| &s.inner).collect();
    let ex = training::examples_from_scans::<f32>(&refs, mode);
    training::stack(&ex.iter().collect::<Vec<_>>()).map_err(err)
}

/// A single-stream or late-fusion classifier.
#[pyclass(name = "Model", module = "ppc", frozen)]
struct Model {
    inner: CoreModel<f32>,
    mode: InputMode,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (modality = "depth", hcc = true, rwmp = true, divisor = 1, height = 32, width = 384, seed = 0, late_fusion = false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        modality: &str,
        hcc: bool,
        rwmp: bool,
        divisor: usize,
        height: usize,
        width: usize,
        seed: u64,
        late_fusion: bool,
    ) -> PyResult<Self> {
        let mode = input_mode(modality)?;
        let spec = ModelSpec::new(mode.channels(), hcc, rwmp)
            .with_divisor(divisor)
            .with_input_size(height, width);
        let kind = if late_fusion { ModelKind::Late } else { ModelKind::Single };
        let inner = CoreModel::build_kind(kind, spec, seed).map_err(err)?;
        Ok(Model { inner, mode })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn modality(&self) -> &'static str {
        self.mode.name()
    }

    /// Class probabilities for each scan.
    fn predict(&self, py: Python<'_>, scans: Vec<Scan>) -> PyResult<Vec<Vec<f64>>> {
        let x = batch(&scans, self.mode)?;
        let p = py.detach(|| self.inner.predict(&x)).map_err(err)?;
        let c = self.inner.num_classes();
        Ok(p.data().chunks(c).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
    }

    /// Grad-CAM map of `target` for one scan, upsampled to the input size.
    #[pyo3(signature = (scan, target = None))]
    fn grad_cam(&self, py: Python<'_>, scan: Scan, target: Option<&str>) -> PyResult<Panorama> {
        let target = match target {
            Some(name) => category(name)?,
            None => scan.inner.label,
        };
        let x = training::Example::<f32>::from_scan(&scan.inner, self.mode).input;
        let cam = py.detach(|| core_grad_cam(&self.inner, &x, target.index())).map_err(err)?;
        Ok(Panorama { inner: cam.to_panorama() })
    }

    /// Save under `dir` in the layout `ppc train` writes.
    fn save(&self, dir: &str) -> PyResult<()> {
        let t = Trained::Single { mode: self.mode, model: self.inner.clone() };
        t.save(dir).map_err(err)
    }
}

/// Networks saved by `ppc train` or `Model.save`, of any fusion method.
#[pyclass(name = "Trained", module = "ppc", frozen)]
struct TrainedModel {
    inner: Trained,
}

#[pymethods]
impl TrainedModel {
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(TrainedModel { inner: Trained::load(dir).map_err(err)? })
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method_name()
    }

    /// Predicted category name for each scan.
    fn predict(&self, py: Python<'_>, scans: Vec<Scan>) -> PyResult<Vec<&'static str>> {
        let refs: Vec<&LabeledScan> = scans.iter().map(|s| &s.inner).collect();
        let idx = py.detach(|| self.inner.predict(&refs)).map_err(err)?;
        Ok(idx.into_iter().map(|i| Category::ALL[i].name()).collect())
    }

    /// Fraction of scans classified correctly.
    fn accuracy(&self, py: Python<'_>, scans: Vec<Scan>) -> PyResult<f64> {
        let refs: Vec<&LabeledScan> = scans.iter().map(|s| &s.inner).collect();
        let ev = py.detach(|| self.inner.evaluate(&refs)).map_err(err)?;
        Ok(ev.total)
    }
}

#[pymodule]
fn ppc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Panorama>()?;
    m.add_class::<Scan>()?;
    m.add_class::<Model>()?;
    m.add_class::<TrainedModel>()?;
    m.add_function(wrap_pyfunction!(categories, m)?)?;
    m.add_function(wrap_pyfunction!(project_scan, m)?)?;
    m.add_function(wrap_pyfunction!(read_cloud_csv, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_average, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_with_weights, m)?)?;
    m.add_function(wrap_pyfunction!(make_folds, m)?)?;
    Ok(())
}
