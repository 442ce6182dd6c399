use std::path::PathBuf;

use invnav::bench::{self, NoiseSource};
use invnav::dataio::{self, ColumnMapping, FilterKind, RunConfig, TestNoise};
use invnav::geo::{Vec3, Vec9};
use invnav::neural::{self, LossKind, TrainConfig};
use invnav::simgen::{self, TrajectoryFamily, WindowInput, WINDOW};
use invnav::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(pyinvnav, FilterDiverged, PyRuntimeError);

fn err(e: Error) -> PyErr {
    match e {
        Error::NonFiniteInput(_) | Error::CovarianceBlowup(_) | Error::SingularInnovationCov(_) => {
            FilterDiverged::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// One navigation segment: IMU, DVL and ground-truth streams.
#[pyclass(module = "pyinvnav")]
struct Segment {
    inner: dataio::Segment,
}

#[pymethods]
impl Segment {
    /// Noise-free simulated segment of the given trajectory family.
    #[staticmethod]
    #[pyo3(signature = (family, seed, id = 1))]
    fn simulated(family: &str, seed: u64, id: usize) -> PyResult<Self> {
        let f: TrajectoryFamily = family.parse().map_err(err)?;
        Ok(Segment { inner: dataio::Segment::simulated(id, f, seed).map_err(err)? })
    }

    /// Load segment `id` from a dataset directory, optionally with a TOML column mapping.
    #[staticmethod]
    #[pyo3(signature = (dir, id, mapping = None))]
    fn load(dir: PathBuf, id: usize, mapping: Option<PathBuf>) -> PyResult<Self> {
        let m = match mapping {
            Some(p) => ColumnMapping::load(&p).map_err(err)?,
            None => ColumnMapping::default(),
        };
        Ok(Segment { inner: dataio::load_segment(&dir, id, &m).map_err(err)? })
    }

    /// Copy with test noise injected (accel and gyro std, DVL std).
    #[pyo3(signature = (seed, accel = 0.4, gyro = 1e-4, dvl = 0.05))]
    fn with_test_noise(&self, seed: u64, accel: f64, gyro: f64, dvl: f64) -> Self {
        let noise = TestNoise { accel, gyro, dvl };
        Segment { inner: dataio::inject_test_noise(&self.inner, &noise, seed) }
    }

    #[getter]
    fn id(&self) -> usize {
        self.inner.id
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration()
    }

    #[getter]
    fn imu_rate(&self) -> f64 {
        self.inner.imu_rate()
    }

    #[getter]
    fn dvl_rate(&self) -> f64 {
        self.inner.dvl_rate()
    }

    /// Rows of (t, gx, gy, gz, ax, ay, az).
    fn imu(&self) -> Vec<[f64; 7]> {
        self.inner
            .imu
            .iter()
            .map(|s| [s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z])
            .collect()
    }

    /// Rows of (t, u, v, w) in the body frame.
    fn dvl(&self) -> Vec<[f64; 4]> {
        self.inner.dvl.iter().map(|s| [s.t, s.vel_body.x, s.vel_body.y, s.vel_body.z]).collect()
    }

    /// Rows of (t, x, y, z) ECEF positions.
    fn positions(&self) -> Vec<[f64; 4]> {
        self.inner.gt.iter().map(|s| [s.t, s.pos.x, s.pos.y, s.pos.z]).collect()
    }

    /// Export in the default CSV layout.
    fn export(&self, dir: PathBuf) -> PyResult<()> {
        dataio::export_segment(&dir, &self.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.imu.len()
    }

    fn __repr__(&self) -> String {
        format!("Segment(id={}, duration={:.1}s, imu={}, dvl={})", self.inner.id, self.inner.duration(), self.inner.imu.len(), self.inner.dvl.len())
    }
}

/// Trained noise-regression network.
#[pyclass(module = "pyinvnav")]
struct NoiseModel {
    inner: neural::NoiseModel,
}

#[pymethods]
impl NoiseModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(NoiseModel { inner: neural::load_model(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        neural::save_model(&self.inner, &path).map_err(err)
    }

    /// Train on the simulated dataset generated from `data_seed`; returns (model, per-epoch loss).
    #[staticmethod]
    #[pyo3(signature = (data_seed = 1, epochs = 40, step = 10, loss = "mse", huber_delta = 1.0, lr = 1e-3, seed = 0))]
    fn train(
        py: Python<'_>,
        data_seed: u64,
        epochs: usize,
        step: usize,
        loss: &str,
        huber_delta: f64,
        lr: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let loss = match loss {
            "mse" => LossKind::Mse,
            "huber" => LossKind::Huber { delta: huber_delta },
            _ => return Err(PyValueError::new_err(format!("loss must be mse or huber, got `{loss}`"))),
        };
        let cfg = TrainConfig { loss, epochs, lr, seed, step, ..TrainConfig::default() };
        let (model, report) = py
            .detach(|| {
                let reals = simgen::gen_realizations(data_seed)?;
                let set = simgen::build_training_set(&reals, step);
                neural::NoiseModel::train(&set, &cfg, &mut |_, _| {})
            })
            .map_err(err)?;
        Ok((NoiseModel { inner: model }, report.epoch_loss))
    }

    /// Predicted (gyro xyz, accel xyz) variances for a 6 x 100 window.
    fn predict(&self, window: Vec<Vec<f64>>) -> PyResult<[f64; 6]> {
        if window.len() != 6 || window.iter().any(|r| r.len() != WINDOW) {
            return Err(PyValueError::new_err(format!("window must be 6 x {WINDOW}")));
        }
        let mut w: WindowInput = [[0.0; WINDOW]; 6];
        for (dst, src) in w.iter_mut().zip(&window) {
            dst.copy_from_slice(src);
        }
        self.inner.predict_one(&w).map_err(err)
    }
}

/// Output of a single filter run.
#[pyclass(module = "pyinvnav", get_all)]
struct RunResult {
    rmse_position: f64,
    times: Vec<f64>,
    pos_err: Vec<f64>,
    vel_err: Vec<f64>,
    cov_trace: Vec<f64>,
}

/// Run one filter ("AEKF", "AR-IKF", "NN-AEKF", "NN-AR-IKF") over a segment.
#[pyfunction]
#[pyo3(signature = (segment, filter = "AR-IKF", model = None, lam = 0.6, innovation_window = 25))]
fn run_filter(
    py: Python<'_>,
    segment: &Segment,
    filter: &str,
    model: Option<&NoiseModel>,
    lam: f64,
    innovation_window: usize,
) -> PyResult<RunResult> {
    let kind: FilterKind = filter.parse().map_err(err)?;
    let mut cfg = RunConfig::for_filter(kind);
    cfg.lambda = lam;
    cfg.innovation_window = innovation_window;
    cfg.validate().map_err(err)?;
    let nn = model.map(|m| &m.inner);
    if kind.uses_network() && nn.is_none() {
        return Err(PyValueError::new_err(format!("{filter} needs a NoiseModel")));
    }
    let seg = &segment.inner;
    let r = py.detach(|| bench::run_filter(seg, &cfg, nn.map(|m| m as &dyn NoiseSource))).map_err(err)?;
    Ok(RunResult { rmse_position: r.rmse_position, times: r.times, pos_err: r.pos_err, vel_err: r.vel_err, cov_trace: r.cov_trace })
}

/// Samples of a heading/position Gaussian in the Lie algebra, mapped through the
/// group exponential and additively. Rows of (group x, y, linear x, y).
#[pyfunction]
#[pyo3(signature = (n, sigma_heading = 0.3, sigma_pos = 0.5, distance = 10.0, seed = 0))]
fn banana(n: usize, sigma_heading: f64, sigma_pos: f64, distance: f64, seed: u64) -> Vec<[f64; 4]> {
    let mut sigma = Vec9::zeros();
    sigma[2] = sigma_heading;
    sigma[6] = sigma_pos;
    sigma[7] = sigma_pos;
    bench::banana_samples(n, &sigma, &Vec3::new(distance, 0.0, 0.0), seed)
        .iter()
        .map(|s| [s.group_pos.x, s.group_pos.y, s.linear_pos.x, s.linear_pos.y])
        .collect()
}

/// Names of the simulated trajectory families.
#[pyfunction]
fn families() -> Vec<&'static str> {
    TrajectoryFamily::ALL.iter().map(|f| f.name()).collect()
}

#[pymodule]
fn pyinvnav(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Segment>()?;
    m.add_class::<NoiseModel>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(run_filter, m)?)?;
    m.add_function(wrap_pyfunction!(banana, m)?)?;
    m.add_function(wrap_pyfunction!(families, m)?)?;
    m.add("FilterDiverged", m.py().get_type::<FilterDiverged>())?;
    Ok(())
}
