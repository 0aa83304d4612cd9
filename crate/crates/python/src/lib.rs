//! Python bindings for the `pillartrack` crate.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use pillartrack::backbone::{BackboneConfig, STAGES};
use pillartrack::eval;
use pillartrack::flops::{self, CountingConvention};
use pillartrack::geometry::{Box7, Point, PointCloud, crop_to_region};
use pillartrack::harness::{TrackerSpec, encode_pseudo_image, make_tracker, run_tracker};
use pillartrack::pepfe::{self, PyramidCode, PyramidSpec};
use pillartrack::pillar::{GridSpec, pillarize as pillarize_cloud};
use pillartrack::synth::{SynthParams, car_like_cloud, synth_sequence};

fn err(e: pillartrack::Error) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn cloud_from(points: Vec<[f64; 4]>) -> PointCloud {
    PointCloud::new(points.into_iter().map(|[x, y, z, r]| Point::new(x, y, z, r)).collect(), 0)
}

/// Oriented 3D box `(cx, cy, cz, h, w, l, theta)`.
#[pyclass(name = "Box", module = "pillartrack", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBox(Box7);

#[pymethods]
impl PyBox {
    #[new]
    fn new(cx: f64, cy: f64, cz: f64, h: f64, w: f64, l: f64, theta: f64) -> PyResult<Self> {
        Box7::new(cx, cy, cz, h, w, l, theta).map(Self).map_err(err)
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.0.center()
    }

    #[getter]
    fn size(&self) -> [f64; 3] {
        [self.0.h, self.0.w, self.0.l]
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    fn volume(&self) -> f64 {
        self.0.volume()
    }

    fn to_list(&self) -> [f64; 7] {
        self.0.to_array()
    }

    fn contains(&self, point: [f64; 3]) -> bool {
        self.0.contains(point, 1.0)
    }

    fn __repr__(&self) -> String {
        let [cx, cy, cz, h, w, l, t] = self.0.to_array();
        format!("Box({cx}, {cy}, {cz}, {h}, {w}, {l}, {t})")
    }
}

#[pyfunction]
fn iou3d(a: PyRef<'_, PyBox>, b: PyRef<'_, PyBox>) -> f64 {
    eval::iou3d(&a.0, &b.0)
}

#[pyfunction]
fn center_distance(a: PyRef<'_, PyBox>, b: PyRef<'_, PyBox>) -> f64 {
    eval::center_distance(&a.0, &b.0)
}

#[pyfunction]
fn success_score(ious: Vec<f64>) -> PyResult<f64> {
    eval::success_score(&ious).map_err(err)
}

#[pyfunction]
fn precision_score(distances: Vec<f64>) -> PyResult<f64> {
    eval::precision_score(&distances).map_err(err)
}

fn pyramid(levels: usize, base_scale: f64, ratio: f64, normalize: bool) -> PyResult<PyramidSpec> {
    PyramidSpec::new(levels, base_scale, ratio, normalize).map_err(err)
}

/// Pyramid code of a scalar as `(digits, residual)`.
#[pyfunction]
#[pyo3(signature = (value, levels = 3, base_scale = 0.8, ratio = 0.125, normalize = true))]
fn encode_value(value: f64, levels: usize, base_scale: f64, ratio: f64, normalize: bool) -> PyResult<(Vec<i64>, f64)> {
    let code = pepfe::encode_value(value, &pyramid(levels, base_scale, ratio, normalize)?).map_err(err)?;
    Ok((code.digits, code.residual))
}

#[pyfunction]
#[pyo3(signature = (digits, residual, levels = 3, base_scale = 0.8, ratio = 0.125, normalize = true))]
fn decode_value(
    digits: Vec<i64>,
    residual: f64,
    levels: usize,
    base_scale: f64,
    ratio: f64,
    normalize: bool,
) -> PyResult<f64> {
    let code = PyramidCode { digits, residual };
    pepfe::decode_value(&code, &pyramid(levels, base_scale, ratio, normalize)?).map_err(err)
}

/// Occupied pillars of the default search grid as `(row, col, points)`.
#[pyfunction]
fn pillarize(points: Vec<[f64; 4]>) -> PyResult<Vec<(usize, usize, usize)>> {
    let set = pillarize_cloud(&cloud_from(points), &GridSpec::search_default()).map_err(err)?;
    Ok(set.pillars.iter().map(|p| (p.row, p.col, p.points.len())).collect())
}

/// Pyramid-encoded pseudo-image of a local cloud: `((c, h, w), data)`.
#[pyfunction]
fn pseudo_image(points: Vec<[f64; 4]>) -> PyResult<((usize, usize, usize), Vec<f32>)> {
    let img = encode_pseudo_image(&cloud_from(points), &GridSpec::search_default(), &PyramidSpec::default())
        .map_err(err)?;
    Ok((img.shape(), img.data))
}

/// Search-region crop of a global cloud in the frame of `prior`.
#[pyfunction]
fn crop_search(points: Vec<[f64; 4]>, prior: PyRef<'_, PyBox>) -> PyResult<Vec<[f64; 4]>> {
    let local = crop_to_region(&cloud_from(points), &GridSpec::search_default().region(), Some(&prior.0)).map_err(err)?;
    Ok(local.points.iter().map(|p| [p.x, p.y, p.z, p.r]).collect())
}

/// Mean 1-D Wasserstein shift per perturbation for both encoders.
#[pyfunction]
#[pyo3(signature = (points = 4000, seed = 2024))]
fn robustness_study(points: usize, seed: u64) -> PyResult<Vec<(String, f64, f64)>> {
    let rows = pepfe::robustness_study(&car_like_cloud(points, seed), &GridSpec::search_default(), &PyramidSpec::default())
        .map_err(err)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.perturbation.name().to_string(), r.pfe.mean, r.pepfe.mean))
        .collect())
}

fn preset(name: &str) -> PyResult<BackboneConfig> {
    match name {
        "default" => Ok(BackboneConfig::default()),
        "pvt_v2_b2" => Ok(BackboneConfig::pvt_v2_b2()),
        other => Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
    }
}

#[pyfunction]
#[pyo3(signature = (depths, preset = "pvt_v2_b2", resolution = 128))]
fn model_flops(depths: [usize; STAGES], preset: &str, resolution: usize) -> PyResult<f64> {
    let conv = CountingConvention {
        resolution,
        ..Default::default()
    };
    let cfg = self::preset(preset)?.with_depths(depths);
    Ok(flops::model_flops(&cfg, &conv).map_err(err)?.gflops)
}

/// Depth ablation rows as `(depths, reported, computed)` GFLOPs.
#[pyfunction]
#[pyo3(signature = (preset = "pvt_v2_b2"))]
fn ablation(preset: &str) -> PyResult<Vec<([usize; STAGES], f64, f64)>> {
    let base = self::preset(preset)?;
    let rows = flops::ablation(&base, &CountingConvention::default(), base.depths).map_err(err)?;
    Ok(rows.into_iter().map(|r| (r.depths, r.reported, r.report.gflops)).collect())
}

/// `(frame, box, confidence, iou, center distance)`.
type TrackedFrame = (usize, PyBox, f64, f64, f64);

/// Tracks a synthetic constant-velocity sequence; one row per frame after the first.
#[pyfunction]
#[pyo3(signature = (frames = 10, motion = [0.2, 0.0, 0.0], seed = 0, clutter_points = 200, tracker = "centroid", weights_seed = 0))]
fn track_synthetic(
    py: Python<'_>,
    frames: usize,
    motion: [f64; 3],
    seed: u64,
    clutter_points: usize,
    tracker: &str,
    weights_seed: u64,
) -> PyResult<Vec<TrackedFrame>> {
    let params = SynthParams {
        frames,
        motion,
        seed,
        clutter_points,
        ..Default::default()
    };
    let spec = match tracker {
        "centroid" => TrackerSpec::default(),
        "network" => TrackerSpec::network(weights_seed),
        other => return Err(PyValueError::new_err(format!("unknown tracker {other:?}"))),
    };
    let run = py
        .detach(|| -> pillartrack::Result<_> {
            let seq = synth_sequence(&params)?;
            let mut t = make_tracker(&spec)?;
            run_tracker(&seq, &spec, t.as_mut())
        })
        .map_err(err)?;
    Ok(run
        .rows
        .iter()
        .map(|r| (r.frame, PyBox(run.predictions[r.frame]), r.confidence, r.iou, r.center_dist))
        .collect())
}

#[pymodule(name = "pillartrack")]
fn pillartrack_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox>()?;
    m.add_function(wrap_pyfunction!(iou3d, m)?)?;
    m.add_function(wrap_pyfunction!(center_distance, m)?)?;
    m.add_function(wrap_pyfunction!(success_score, m)?)?;
    m.add_function(wrap_pyfunction!(precision_score, m)?)?;
    m.add_function(wrap_pyfunction!(encode_value, m)?)?;
    m.add_function(wrap_pyfunction!(decode_value, m)?)?;
    m.add_function(wrap_pyfunction!(pillarize, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_image, m)?)?;
    m.add_function(wrap_pyfunction!(crop_search, m)?)?;
    m.add_function(wrap_pyfunction!(robustness_study, m)?)?;
    m.add_function(wrap_pyfunction!(model_flops, m)?)?;
    m.add_function(wrap_pyfunction!(ablation, m)?)?;
    m.add_function(wrap_pyfunction!(track_synthetic, m)?)?;
    Ok(())
}
