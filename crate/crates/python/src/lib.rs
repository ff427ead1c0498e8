//! Python bindings for `svolight`.
//!
//! Images cross the boundary as `(width, height, channels, data)` tuples
//! with `data` a flat row-major list of floats.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use svolight::camera::{panorama_cones, CameraPose};
use svolight::fitter::{fit as fit_octree, FitConfig};
use svolight::image::ImageHdr;
use svolight::octree::{build_octree, normalize_cloud, BuildConfig, CloudPoint, LightingOctree, PointCloud};
use svolight::renderer::{render_image, MarchConfig, WeightMode};
use svolight::scenes::SceneKind;
use svolight::{io, metrics, Error};

type PyImage = (usize, usize, usize, Vec<f32>);

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        3 => PyIOError::new_err(e.to_string()),
        2 => PyValueError::new_err(e.to_string()),
        _ => match e {
            Error::DivergenceDetected { .. } => PyRuntimeError::new_err(e.to_string()),
            other => PyValueError::new_err(other.to_string()),
        },
    }
}

fn image_to_py(img: ImageHdr) -> PyImage {
    (img.width, img.height, img.channels, img.data)
}

fn image_from_py(img: PyImage) -> PyResult<ImageHdr> {
    ImageHdr::from_data(img.0, img.1, img.2, img.3).map_err(to_py)
}

/// Sparse lighting octree with per-node radiance and density.
#[pyclass(name = "Octree", module = "pysvolight", frozen)]
struct PyOctree {
    inner: LightingOctree,
}

#[pymethods]
impl PyOctree {
    /// Reads a LOC1 file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_octree(path).map_err(to_py)?,
        })
    }

    /// Builds from world-space points and RGB colors; the bounding cube is
    /// fitted to the points.
    #[staticmethod]
    fn from_points(positions: Vec<[f64; 3]>, colors: Vec<[f64; 3]>, max_depth: u8) -> PyResult<Self> {
        if positions.len() != colors.len() {
            return Err(PyValueError::new_err(format!(
                "{} positions with {} colors",
                positions.len(),
                colors.len()
            )));
        }
        let cloud = PointCloud::new(
            positions
                .into_iter()
                .zip(colors)
                .map(|(position, color)| CloudPoint { position, color })
                .collect(),
        );
        let (unit, bbox) = normalize_cloud(&cloud).map_err(to_py)?;
        let inner = build_octree(&unit, bbox, &BuildConfig::new(max_depth)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Synthetic scene: "plane", "box" or "shell".
    #[staticmethod]
    fn scene(kind: &str, depth: u8) -> PyResult<Self> {
        let kind: SceneKind = kind.parse().map_err(to_py)?;
        Ok(Self {
            inner: kind.octree(depth).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_octree(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn max_depth(&self) -> u8 {
        self.inner.max_depth()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    /// World-space bounding cube as `(min, side)`.
    #[getter]
    fn bbox(&self) -> ([f64; 3], f64) {
        let b = self.inner.bbox();
        (b.min, b.side)
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.stats();
        let d = PyDict::new(py);
        d.set_item("max_depth", s.max_depth)?;
        d.set_item("nodes_per_level", s.nodes_per_level)?;
        d.set_item("total_nodes", s.total_nodes)?;
        d.set_item("leaf_count", s.leaf_count)?;
        d.set_item("memory_bytes", s.memory_bytes)?;
        d.set_item("serialized_bytes", s.serialized_bytes)?;
        Ok(d)
    }

    /// Copy with all colors zeroed.
    fn without_radiance(&self) -> Self {
        Self {
            inner: self.inner.without_radiance(),
        }
    }

    /// Equirectangular radiance and depth (world units) seen from a world
    /// position.
    #[pyo3(signature = (position, width=256, height=128, cone_angle=None, growth=2.0, weight_mode="paper"))]
    fn render_panorama(
        &self,
        py: Python<'_>,
        position: [f64; 3],
        width: usize,
        height: usize,
        cone_angle: Option<f64>,
        growth: f64,
        weight_mode: &str,
    ) -> PyResult<(PyImage, PyImage)> {
        let weight_mode: WeightMode = weight_mode.parse().map_err(to_py)?;
        let cfg = MarchConfig {
            growth,
            weight_mode,
            ..MarchConfig::default()
        };
        let bbox = self.inner.bbox();
        let pose = CameraPose::at(position).to_unit(&bbox);
        let out = py
            .detach(|| {
                let cones = panorama_cones(width, height, &pose, cone_angle)?;
                render_image(&self.inner, &cones, width, height, &cfg)
            })
            .map_err(to_py)?;
        let depth = out.depth.map(|d| (d as f64 * bbox.side) as f32);
        Ok((image_to_py(out.radiance), image_to_py(depth)))
    }

    fn __repr__(&self) -> String {
        format!(
            "Octree(max_depth={}, nodes={})",
            self.inner.max_depth(),
            self.inner.node_count()
        )
    }
}

#[pyfunction]
fn read_pfm(path: &str) -> PyResult<PyImage> {
    io::read_pfm(path).map(image_to_py).map_err(to_py)
}

#[pyfunction]
fn write_pfm(path: &str, image: PyImage) -> PyResult<()> {
    io::write_pfm(path, &image_from_py(image)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (path, image, exposure=1.0, gamma=2.2))]
fn write_png(path: &str, image: PyImage, exposure: f64, gamma: f64) -> PyResult<()> {
    io::write_png(path, &image_from_py(image)?, exposure, gamma).map_err(to_py)
}

#[pyfunction]
fn log_l2(pred: PyImage, gt: PyImage) -> PyResult<f64> {
    metrics::log_l2(&image_from_py(pred)?, &image_from_py(gt)?).map_err(to_py)
}

#[pyfunction]
fn scale_invariant_l2(pred: Vec<f64>, gt: Vec<f64>, mask: Vec<bool>) -> PyResult<f64> {
    metrics::scale_invariant_l2(&pred, &gt, &mask).map_err(to_py)
}

/// Fits `init` to the views in `views_dir`. `config` is the JSON fit
/// configuration; missing fields take their defaults. Returns the fitted
/// octree and the loss history.
#[pyfunction]
#[pyo3(signature = (init, views_dir, config=None))]
fn fit(py: Python<'_>, init: &PyOctree, views_dir: &str, config: Option<&str>) -> PyResult<(PyOctree, Vec<f64>)> {
    let cfg: FitConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => FitConfig::default(),
    };
    let views = io::read_views(views_dir).map_err(to_py)?;
    let (inner, history) = py
        .detach(|| fit_octree(&init.inner, &views, &cfg))
        .map_err(to_py)?;
    Ok((PyOctree { inner }, history))
}

/// Default fit configuration as a JSON string.
#[pyfunction]
fn default_fit_config() -> PyResult<String> {
    serde_json::to_string_pretty(&FitConfig::default()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
pub fn pysvolight(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOctree>()?;
    m.add_function(wrap_pyfunction!(read_pfm, m)?)?;
    m.add_function(wrap_pyfunction!(write_pfm, m)?)?;
    m.add_function(wrap_pyfunction!(write_png, m)?)?;
    m.add_function(wrap_pyfunction!(log_l2, m)?)?;
    m.add_function(wrap_pyfunction!(scale_invariant_l2, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(default_fit_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
