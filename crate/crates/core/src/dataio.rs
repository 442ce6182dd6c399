//! Real-data segments, column-mapped CSV loading, test-noise injection, the
//! rolling inference window and the run configuration.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveLaw;
use crate::bench::InnovScaling;
use crate::dynamics::earth::{geodetic_to_ecef, ned_to_ecef};
use crate::dynamics::{DvlSample, ImuSample};
use crate::error::{Error, Result};
use crate::geo::{Mat3, Rot3, Vec3};
use crate::simgen::{
    add_noise, derive_seed, gen_dvl, gen_ground_truth, synthesize_imu, GtSample, NoiseLevels, TrajectoryFamily,
    TrajectorySpec, WindowInput, WINDOW,
};

/// Number of segments in the real-data benchmark.
pub const SEGMENT_COUNT: usize = 12;

/// One recorded segment with segment-relative timestamps in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub id: usize,
    pub imu: Vec<ImuSample>,
    pub dvl: Vec<DvlSample>,
    pub gt: Vec<GtSample>,
}

impl Segment {
    /// Noise-free simulated segment: exact IMU and DVL from a generated trajectory.
    pub fn simulated(id: usize, family: TrajectoryFamily, seed: u64) -> Result<Self> {
        let gt = gen_ground_truth(&TrajectorySpec::new(family, seed));
        let imu = synthesize_imu(&gt)?;
        let dvl = gen_dvl(&gt, 0.0, 1.0, 0);
        Ok(Segment { id, imu, dvl, gt })
    }

    pub fn duration(&self) -> f64 {
        match (self.imu.first(), self.imu.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Median sample rate of the IMU stream [Hz].
    pub fn imu_rate(&self) -> f64 {
        median_rate(self.imu.iter().map(|s| s.t))
    }

    /// Median sample rate of the DVL stream [Hz].
    pub fn dvl_rate(&self) -> f64 {
        median_rate(self.dvl.iter().map(|s| s.t))
    }

    /// Shifts all timestamps so that the earliest sample is at zero.
    pub fn normalize_time(&mut self) {
        let t0 = self
            .imu
            .iter()
            .map(|s| s.t)
            .chain(self.dvl.iter().map(|s| s.t))
            .chain(self.gt.iter().map(|s| s.t))
            .fold(f64::INFINITY, f64::min);
        if !t0.is_finite() || t0 == 0.0 {
            return;
        }
        self.imu.iter_mut().for_each(|s| s.t -= t0);
        self.dvl.iter_mut().for_each(|s| s.t -= t0);
        self.gt.iter_mut().for_each(|s| s.t -= t0);
    }
}

fn median_rate(t: impl Iterator<Item = f64>) -> f64 {
    let t: Vec<f64> = t.collect();
    let mut d: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    1.0 / d[d.len() / 2]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Rad,
    Deg,
}

impl AngleUnit {
    fn factor(self) -> f64 {
        match self {
            AngleUnit::Rad => 1.0,
            AngleUnit::Deg => std::f64::consts::PI / 180.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PositionKind {
    /// ECEF x, y, z [m].
    #[default]
    Ecef,
    /// Latitude, longitude (in `angle_unit`), ellipsoidal height [m].
    Llh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VelocityFrame {
    #[default]
    Ecef,
    Ned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttitudeKind {
    /// Row-major body-to-ECEF rotation matrix, 9 columns.
    #[default]
    RotmatEcef,
    /// Body-to-ECEF unit quaternion `w, x, y, z`.
    QuatEcef,
    /// Roll, pitch, yaw of the body relative to local NED (z-y-x order).
    EulerNed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuColumns {
    pub time: String,
    pub gyro: [String; 3],
    pub accel: [String; 3],
    #[serde(default)]
    pub gyro_unit: AngleUnit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvlColumns {
    pub time: String,
    pub velocity: [String; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtColumns {
    pub time: String,
    #[serde(default)]
    pub position_kind: PositionKind,
    pub position: [String; 3],
    #[serde(default)]
    pub velocity_frame: VelocityFrame,
    pub velocity: [String; 3],
    #[serde(default)]
    pub attitude_kind: AttitudeKind,
    pub attitude: Vec<String>,
    #[serde(default)]
    pub angle_unit: AngleUnit,
}

/// Maps dataset files and columns to the loader's fields. `{id}` in a file
/// pattern is replaced by the segment number, zero-padded to `id_width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub segments: usize,
    pub id_width: usize,
    pub imu_file: String,
    pub dvl_file: String,
    pub gt_file: String,
    /// Multiplier taking file timestamps to seconds.
    pub time_scale: f64,
    pub imu: ImuColumns,
    pub dvl: DvlColumns,
    pub gt: GtColumns,
}

fn cols3(prefix: &str) -> [String; 3] {
    ["x", "y", "z"].map(|a| format!("{prefix}_{a}"))
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            segments: SEGMENT_COUNT,
            id_width: 2,
            imu_file: "segment_{id}/imu.csv".into(),
            dvl_file: "segment_{id}/dvl.csv".into(),
            gt_file: "segment_{id}/gt.csv".into(),
            time_scale: 1.0,
            imu: ImuColumns { time: "t".into(), gyro: cols3("gyro"), accel: cols3("accel"), gyro_unit: AngleUnit::Rad },
            dvl: DvlColumns { time: "t".into(), velocity: cols3("v") },
            gt: GtColumns {
                time: "t".into(),
                position_kind: PositionKind::Ecef,
                position: cols3("p"),
                velocity_frame: VelocityFrame::Ecef,
                velocity: cols3("v"),
                attitude_kind: AttitudeKind::RotmatEcef,
                attitude: (1..=3).flat_map(|i| (1..=3).map(move |j| format!("r{i}{j}"))).collect(),
                angle_unit: AngleUnit::Rad,
            },
        }
    }
}

impl ColumnMapping {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("mapping serializes")
    }

    fn file(&self, pattern: &str, id: usize) -> String {
        pattern.replace("{id}", &format!("{id:0width$}", width = self.id_width))
    }

    pub fn imu_path(&self, dir: &Path, id: usize) -> PathBuf {
        dir.join(self.file(&self.imu_file, id))
    }

    pub fn dvl_path(&self, dir: &Path, id: usize) -> PathBuf {
        dir.join(self.file(&self.dvl_file, id))
    }

    pub fn gt_path(&self, dir: &Path, id: usize) -> PathBuf {
        dir.join(self.file(&self.gt_file, id))
    }
}

/// Reads selected named columns of a CSV file as `f64` rows.
fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            headers.iter().position(|h| h == *n).ok_or_else(|| {
                Error::Schema(format!("{}: no column `{n}` (have: {})", path.display(), headers.iter().collect::<Vec<_>>().join(", ")))
            })
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let row = idx
            .iter()
            .map(|&i| {
                let s = rec.get(i).unwrap_or("");
                s.parse::<f64>().map_err(|_| {
                    Error::Format(format!("{}: record {}: `{s}` is not a number", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn euler_ned(roll: f64, pitch: f64, yaw: f64) -> Mat3 {
    let rx = Rot3::exp(&Vec3::new(roll, 0.0, 0.0));
    let ry = Rot3::exp(&Vec3::new(0.0, pitch, 0.0));
    let rz = Rot3::exp(&Vec3::new(0.0, 0.0, yaw));
    rz.matrix() * ry.matrix() * rx.matrix()
}

fn gt_row(m: &GtColumns, r: &[f64], time_scale: f64) -> Result<GtSample> {
    let ang = m.angle_unit.factor();
    let (pos, c_en) = match m.position_kind {
        PositionKind::Ecef => {
            let p = Vec3::new(r[1], r[2], r[3]);
            let (lat, lon, _) = crate::dynamics::earth::ecef_to_geodetic(&p);
            (p, ned_to_ecef(lat, lon))
        }
        PositionKind::Llh => {
            let (lat, lon) = (r[1] * ang, r[2] * ang);
            (geodetic_to_ecef(lat, lon, r[3]), ned_to_ecef(lat, lon))
        }
    };
    let v = Vec3::new(r[4], r[5], r[6]);
    let vel = match m.velocity_frame {
        VelocityFrame::Ecef => v,
        VelocityFrame::Ned => c_en * v,
    };
    let a = &r[7..];
    let rot = match m.attitude_kind {
        AttitudeKind::RotmatEcef => Rot3::from_matrix_unchecked(Mat3::from_row_slice(a)),
        AttitudeKind::QuatEcef => {
            let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(a[0], a[1], a[2], a[3]));
            Rot3::from_matrix_unchecked(*q.to_rotation_matrix().matrix())
        }
        AttitudeKind::EulerNed => Rot3::from_matrix_unchecked(c_en * euler_ned(a[0] * ang, a[1] * ang, a[2] * ang)),
    };
    Ok(GtSample { t: r[0] * time_scale, pos, vel, rot })
}

fn attitude_width(kind: AttitudeKind) -> usize {
    match kind {
        AttitudeKind::RotmatEcef => 9,
        AttitudeKind::QuatEcef => 4,
        AttitudeKind::EulerNed => 3,
    }
}

/// Loads segment `id` through `mapping`.
pub fn load_segment(dir: &Path, id: usize, mapping: &ColumnMapping) -> Result<Segment> {
    let paths = [mapping.imu_path(dir, id), mapping.dvl_path(dir, id), mapping.gt_path(dir, id)];
    for p in &paths {
        if !p.is_file() {
            return Err(Error::MissingSegment { id, dir: p.clone() });
        }
    }
    let ts = mapping.time_scale;
    let m = &mapping.imu;
    let gyro_f = m.gyro_unit.factor();
    let mut names = vec![m.time.as_str()];
    names.extend(m.gyro.iter().map(String::as_str));
    names.extend(m.accel.iter().map(String::as_str));
    let imu = read_columns(&paths[0], &names)?
        .into_iter()
        .map(|r| ImuSample {
            t: r[0] * ts,
            gyro: Vec3::new(r[1], r[2], r[3]) * gyro_f,
            accel: Vec3::new(r[4], r[5], r[6]),
        })
        .collect();
    let d = &mapping.dvl;
    let mut names = vec![d.time.as_str()];
    names.extend(d.velocity.iter().map(String::as_str));
    let dvl = read_columns(&paths[1], &names)?
        .into_iter()
        .map(|r| DvlSample { t: r[0] * ts, vel_body: Vec3::new(r[1], r[2], r[3]) })
        .collect();
    let g = &mapping.gt;
    let width = attitude_width(g.attitude_kind);
    if g.attitude.len() != width {
        return Err(Error::Schema(format!(
            "attitude kind {:?} needs {width} columns, mapping lists {}",
            g.attitude_kind,
            g.attitude.len()
        )));
    }
    let mut names = vec![g.time.as_str()];
    names.extend(g.position.iter().map(String::as_str));
    names.extend(g.velocity.iter().map(String::as_str));
    names.extend(g.attitude.iter().map(String::as_str));
    let gt = read_columns(&paths[2], &names)?
        .iter()
        .map(|r| gt_row(g, r, ts))
        .collect::<Result<_>>()?;
    let mut seg = Segment { id, imu, dvl, gt };
    seg.normalize_time();
    Ok(seg)
}

/// Loads all segments `1..=mapping.segments`.
pub fn load_akit(dir: &Path, mapping: &ColumnMapping) -> Result<Vec<Segment>> {
    (1..=mapping.segments).map(|id| load_segment(dir, id, mapping)).collect()
}

/// Whether the dataset appears to be present under `dir` for `mapping`.
pub fn dataset_present(dir: &Path, mapping: &ColumnMapping) -> bool {
    (1..=mapping.segments).all(|id| {
        mapping.imu_path(dir, id).is_file() && mapping.dvl_path(dir, id).is_file() && mapping.gt_path(dir, id).is_file()
    })
}

/// Writes a segment in the default mapping's layout, losslessly.
pub fn export_segment(dir: &Path, seg: &Segment) -> Result<()> {
    let mapping = ColumnMapping::default();
    let paths = [mapping.imu_path(dir, seg.id), mapping.dvl_path(dir, seg.id), mapping.gt_path(dir, seg.id)];
    for p in &paths {
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
    }
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_path(&paths[0]).map_err(csv_err)?;
    w.write_record(["t", "gyro_x", "gyro_y", "gyro_z", "accel_x", "accel_y", "accel_z"]).map_err(csv_err)?;
    for s in &seg.imu {
        w.write_record([s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z].map(|v| format!("{v:?}")))
            .map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(&paths[1]).map_err(csv_err)?;
    w.write_record(["t", "v_x", "v_y", "v_z"]).map_err(csv_err)?;
    for s in &seg.dvl {
        w.write_record([s.t, s.vel_body.x, s.vel_body.y, s.vel_body.z].map(|v| format!("{v:?}"))).map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(&paths[2]).map_err(csv_err)?;
    let mut head = vec!["t".to_string()];
    head.extend(mapping.gt.position.iter().cloned());
    head.extend(mapping.gt.velocity.iter().cloned());
    head.extend(mapping.gt.attitude.iter().cloned());
    w.write_record(&head).map_err(csv_err)?;
    for s in &seg.gt {
        let m = s.rot.matrix();
        let mut row = vec![s.t, s.pos.x, s.pos.y, s.pos.z, s.vel.x, s.vel.y, s.vel.z];
        for i in 0..3 {
            for j in 0..3 {
                row.push(m[(i, j)]);
            }
        }
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the default column mapping next to an exported dataset.
pub fn write_mapping(path: &Path, mapping: &ColumnMapping) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(mapping.to_toml_string().as_bytes())?;
    Ok(())
}

/// White-noise levels added to recorded data before filtering. IMU values are
/// densities (per-sample std `sigma / sqrt(dt)`); the DVL value is a per-sample std [m/s].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestNoise {
    pub accel: f64,
    pub gyro: f64,
    pub dvl: f64,
}

impl TestNoise {
    pub const ZERO: TestNoise = TestNoise { accel: 0.0, gyro: 0.0, dvl: 0.0 };

    pub fn is_zero(&self) -> bool {
        self.accel == 0.0 && self.gyro == 0.0 && self.dvl == 0.0
    }
}

impl Default for TestNoise {
    fn default() -> Self {
        TestNoise { accel: 0.4, gyro: 1e-4, dvl: 0.05 }
    }
}

/// Adds test noise to a segment; the stream seeds depend only on `(seed, seg.id)`.
pub fn inject_test_noise(seg: &Segment, noise: &TestNoise, seed: u64) -> Segment {
    if noise.is_zero() {
        return seg.clone();
    }
    let sub = derive_seed(seed, seg.id as u64);
    let imu = add_noise(&seg.imu, &NoiseLevels { sigma_gyro: noise.gyro, sigma_accel: noise.accel }, derive_seed(sub, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sub, 1));
    let dvl = seg
        .dvl
        .iter()
        .map(|s| {
            let mut n = || -> f64 { let z: f64 = StandardNormal.sample(&mut rng);
                noise.dvl * z
            };
            let d = Vec3::new(n(), n(), n());
            DvlSample { t: s.t, vel_body: s.vel_body + d }
        })
        .collect();
    Segment { id: seg.id, imu, dvl, gt: seg.gt.clone() }
}

/// Fixed-length FIFO of the most recent IMU samples.
#[derive(Clone, Debug, Default)]
pub struct WindowStream {
    buf: VecDeque<ImuSample>,
}

impl WindowStream {
    pub fn new() -> Self {
        WindowStream { buf: VecDeque::with_capacity(WINDOW) }
    }

    pub fn push(&mut self, s: ImuSample) {
        if self.buf.len() == WINDOW {
            self.buf.pop_front();
        }
        self.buf.push_back(s);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn is_ready(&self) -> bool {
        self.buf.len() == WINDOW
    }

    /// Channel-major window of the latest samples, or `None` before warm-up.
    pub fn window(&self) -> Option<WindowInput> {
        if !self.is_ready() {
            return None;
        }
        let mut w = [[0.0; WINDOW]; 6];
        for (t, s) in self.buf.iter().enumerate() {
            for a in 0..3 {
                w[a][t] = s.gyro[a];
                w[3 + a][t] = s.accel[a];
            }
        }
        Some(w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterKind {
    #[serde(rename = "AEKF")]
    Aekf,
    #[serde(rename = "AR-IKF")]
    ArIkf,
    #[serde(rename = "NN-AEKF")]
    NnAekf,
    #[serde(rename = "NN-AR-IKF")]
    NnArIkf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [FilterKind::Aekf, FilterKind::ArIkf, FilterKind::NnAekf, FilterKind::NnArIkf];

    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Aekf => "AEKF",
            FilterKind::ArIkf => "AR-IKF",
            FilterKind::NnAekf => "NN-AEKF",
            FilterKind::NnArIkf => "NN-AR-IKF",
        }
    }

    pub fn uses_network(&self) -> bool {
        matches!(self, FilterKind::NnAekf | FilterKind::NnArIkf)
    }

    pub fn is_invariant(&self) -> bool {
        matches!(self, FilterKind::ArIkf | FilterKind::NnArIkf)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown filter `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnVariant {
    S1Mse,
    S10Mse,
    S10Huber,
    None,
}

impl NnVariant {
    pub const TRAINED: [NnVariant; 3] = [NnVariant::S1Mse, NnVariant::S10Mse, NnVariant::S10Huber];

    pub fn name(&self) -> &'static str {
        match self {
            NnVariant::S1Mse => "s1_mse",
            NnVariant::S10Mse => "s10_mse",
            NnVariant::S10Huber => "s10_huber",
            NnVariant::None => "none",
        }
    }

    /// Training window stride.
    pub fn step(&self) -> Option<usize> {
        match self {
            NnVariant::S1Mse => Some(1),
            NnVariant::S10Mse | NnVariant::S10Huber => Some(10),
            NnVariant::None => None,
        }
    }

    /// Weight file name inside a weights directory.
    pub fn file_name(&self) -> String {
        format!("{}.txt", self.name())
    }
}

impl fmt::Display for NnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NnVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [NnVariant::S1Mse, NnVariant::S10Mse, NnVariant::S10Huber, NnVariant::None]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown network variant `{s}`")))
    }
}

/// Diagonal initial covariance per error block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCov {
    pub attitude: f64,
    pub velocity: f64,
    pub position: f64,
    pub bias_gyro: f64,
    pub bias_accel: f64,
}

impl Default for InitialCov {
    fn default() -> Self {
        InitialCov { attitude: 1e-4, velocity: 1e-2, position: 1.0, bias_gyro: 1e-10, bias_accel: 1e-6 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub dataset: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub weights_dir: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Everything needed to run one filter configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub filter: FilterKind,
    pub nn_variant: NnVariant,
    pub lambda: f64,
    pub adaptive_law: AdaptiveLaw,
    /// IMU samples per network window.
    pub imu_window: usize,
    /// DVL updates in the innovation buffer.
    pub innovation_window: usize,
    pub innov_scaling: InnovScaling,
    pub seeds: Vec<u64>,
    pub noise: TestNoise,
    pub p0: InitialCov,
    /// Gyro and accelerometer bias random-walk densities.
    pub q_bias_gyro: f64,
    pub q_bias_accel: f64,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            filter: FilterKind::NnArIkf,
            nn_variant: NnVariant::S1Mse,
            lambda: 0.6,
            adaptive_law: AdaptiveLaw::Simplified,
            imu_window: WINDOW,
            innovation_window: 25,
            innov_scaling: InnovScaling::default(),
            seeds: vec![0, 1, 2, 3, 4],
            noise: TestNoise::default(),
            p0: InitialCov::default(),
            q_bias_gyro: 1e-14,
            q_bias_accel: 1e-8,
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    /// Default settings for a filter kind, with a matching network variant.
    pub fn for_filter(filter: FilterKind) -> Self {
        let nn_variant = if filter.uses_network() { NnVariant::S1Mse } else { NnVariant::None };
        RunConfig { filter, nn_variant, ..RunConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter.uses_network() == (self.nn_variant == NnVariant::None) {
            return Err(Error::Config(format!(
                "filter {} cannot be combined with network variant {}",
                self.filter, self.nn_variant
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.imu_window != WINDOW {
            return Err(Error::Config(format!("imu_window must be {WINDOW}")));
        }
        if self.innovation_window == 0 {
            return Err(Error::Config("innovation_window must be positive".into()));
        }
        let p = &self.p0;
        let q = [p.attitude, p.velocity, p.position, p.bias_gyro, p.bias_accel, self.q_bias_gyro, self.q_bias_accel];
        if q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("covariances must be finite and non-negative".into()));
        }
        let n = [self.noise.accel, self.noise.gyro, self.noise.dvl];
        if n.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("noise levels must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, k: f64) -> ImuSample {
        ImuSample { t, gyro: Vec3::new(k, k, k), accel: Vec3::new(-k, -k, -k) }
    }

    #[test]
    fn window_stream_fifo() {
        let mut w = WindowStream::new();
        for i in 0..99 {
            w.push(sample(i as f64, i as f64));
        }
        assert!(w.window().is_none());
        w.push(sample(99.0, 99.0));
        let win = w.window().unwrap();
        assert_eq!(win[0][0], 0.0);
        assert_eq!(win[0][99], 99.0);
        w.push(sample(100.0, 100.0));
        let win = w.window().unwrap();
        assert_eq!(win[0][0], 1.0);
        assert_eq!(win[3][99], -100.0);
    }

    #[test]
    fn config_invariant() {
        for f in FilterKind::ALL {
            assert!(RunConfig::for_filter(f).validate().is_ok());
        }
        let bad = RunConfig { filter: FilterKind::Aekf, nn_variant: NnVariant::S10Mse, ..RunConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = RunConfig { filter: FilterKind::NnArIkf, nn_variant: NnVariant::None, ..RunConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = RunConfig { lambda: 0.25, seeds: vec![7, 8], ..RunConfig::for_filter(FilterKind::NnAekf) };
        let s = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&s).unwrap(), cfg);
        let partial = "filter = \"AR-IKF\"\nnn_variant = \"none\"\nlambda = 0.5\n";
        let c = RunConfig::from_toml_str(partial).unwrap();
        assert_eq!(c.filter, FilterKind::ArIkf);
        assert_eq!(c.innovation_window, 25);
    }

    #[test]
    fn names_parse() {
        for f in FilterKind::ALL {
            assert_eq!(f.name().parse::<FilterKind>().unwrap(), f);
        }
        assert_eq!("s10_huber".parse::<NnVariant>().unwrap(), NnVariant::S10Huber);
        assert!("s2".parse::<NnVariant>().is_err());
    }

    #[test]
    fn euler_zero_is_identity_and_yaw_turns_north_to_east() {
        assert_eq!(euler_ned(0.0, 0.0, 0.0), Mat3::identity());
        let r = euler_ned(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let v = r * Vec3::new(1.0, 0.0, 0.0);
        assert!((v - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }
}
