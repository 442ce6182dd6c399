//! Synthetic trajectories, inverse IMU synthesis and training-window generation.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sha2::{Digest, Sha256};

use crate::dynamics::{earth_rate_skew, gravity_ecef, DvlSample, ImuSample};
use crate::error::{Error, Result};
use crate::geo::{so3_exp, so3_log, Mat3, Rot3, Vec3};

pub const DEFAULT_DURATION: f64 = 60.0;
pub const DEFAULT_DT: f64 = 0.01;
pub const NOMINAL_SPEED: f64 = 5.0;
pub const DEFAULT_P0: [f64; 3] = [4_399_229.20, 3_068_308.93, 3_439_906.25];
pub const WINDOW: usize = 100;

/// Six channels (gyro xyz, accel xyz) by `WINDOW` samples.
pub type WindowInput = [[f64; WINDOW]; 6];

const STRAIGHT_ACCEL: f64 = 0.1;
const BACK_AND_FORTH_PERIOD: f64 = 10.0;
const VERTICAL_AMPLITUDE: f64 = 2.0;
const RANDOM_WALK_STEP: f64 = 0.05;
const RANDOM_WALK_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrajectoryFamily {
    Stationary,
    StraightConst,
    StraightAccel,
    StraightDecel,
    OscillatorySpeed,
    BackAndForth,
    VerticalOsc,
    SpiralDrift,
    VelocityRandomWalk,
    Lissajous,
    Circular,
    SinusoidalPath,
}

impl TrajectoryFamily {
    pub const ALL: [TrajectoryFamily; 12] = [
        TrajectoryFamily::Stationary,
        TrajectoryFamily::StraightConst,
        TrajectoryFamily::StraightAccel,
        TrajectoryFamily::StraightDecel,
        TrajectoryFamily::OscillatorySpeed,
        TrajectoryFamily::BackAndForth,
        TrajectoryFamily::VerticalOsc,
        TrajectoryFamily::SpiralDrift,
        TrajectoryFamily::VelocityRandomWalk,
        TrajectoryFamily::Lissajous,
        TrajectoryFamily::Circular,
        TrajectoryFamily::SinusoidalPath,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryFamily::Stationary => "stationary",
            TrajectoryFamily::StraightConst => "straight_const",
            TrajectoryFamily::StraightAccel => "straight_accel",
            TrajectoryFamily::StraightDecel => "straight_decel",
            TrajectoryFamily::OscillatorySpeed => "oscillatory_speed",
            TrajectoryFamily::BackAndForth => "back_and_forth",
            TrajectoryFamily::VerticalOsc => "vertical_osc",
            TrajectoryFamily::SpiralDrift => "spiral_drift",
            TrajectoryFamily::VelocityRandomWalk => "velocity_random_walk",
            TrajectoryFamily::Lissajous => "lissajous",
            TrajectoryFamily::Circular => "circular",
            TrajectoryFamily::SinusoidalPath => "sinusoidal_path",
        }
    }
}

impl fmt::Display for TrajectoryFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrajectoryFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TrajectoryFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

/// Paired IMU noise densities (per square-root hertz).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseLevels {
    pub sigma_gyro: f64,
    pub sigma_accel: f64,
}

impl NoiseLevels {
    pub const ZERO: NoiseLevels = NoiseLevels { sigma_gyro: 0.0, sigma_accel: 0.0 };

    /// Target vector `(sigma_w^2 x3, sigma_a^2 x3)`.
    pub fn variances(&self) -> [f64; 6] {
        let g = self.sigma_gyro * self.sigma_gyro;
        let a = self.sigma_accel * self.sigma_accel;
        [g, g, g, a, a, a]
    }
}

/// One of the four training noise regimes, indexed 0 (noisiest) to 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NoiseRegime(usize);

impl NoiseRegime {
    pub const SIGMA_ACCEL: [f64; 4] = [5e-1, 1e-1, 5e-2, 1e-2];
    pub const SIGMA_GYRO: [f64; 4] = [1e-4, 1e-5, 1e-6, 1e-7];

    pub fn new(index: usize) -> Result<Self> {
        if index < 4 {
            Ok(NoiseRegime(index))
        } else {
            Err(Error::Config(format!("noise regime {index} outside 0..4")))
        }
    }

    pub fn all() -> [NoiseRegime; 4] {
        [NoiseRegime(0), NoiseRegime(1), NoiseRegime(2), NoiseRegime(3)]
    }

    pub fn index(&self) -> usize {
        self.0
    }

    pub fn levels(&self) -> NoiseLevels {
        NoiseLevels {
            sigma_gyro: Self::SIGMA_GYRO[self.0],
            sigma_accel: Self::SIGMA_ACCEL[self.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub family: TrajectoryFamily,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub nominal_speed: f64,
    pub p0: Vec3,
}

impl TrajectorySpec {
    pub fn new(family: TrajectoryFamily, seed: u64) -> Self {
        TrajectorySpec {
            family,
            duration: DEFAULT_DURATION,
            dt: DEFAULT_DT,
            seed,
            nominal_speed: NOMINAL_SPEED,
            p0: Vec3::from(DEFAULT_P0),
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// One ground-truth epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtSample {
    pub t: f64,
    pub pos: Vec3,
    pub vel: Vec3,
    pub rot: Rot3,
}

pub type GroundTruth = Vec<GtSample>;

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rot3 {
    let q = nalgebra::Vector4::<f64>::from_fn(|_, _| StandardNormal.sample(rng)).normalize();
    let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    Rot3::from_matrix_unchecked(*uq.to_rotation_matrix().matrix())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Seed-dependent draws shared by all families of a realization.
#[derive(Clone, Debug)]
pub struct ProfileParams {
    pub v0: Vec3,
    pub dir: Vec3,
    pub perp: Vec3,
    pub spiral_axis: Vec3,
    pub rot: Rot3,
}

impl ProfileParams {
    pub fn draw(spec: &TrajectorySpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let dir = unit_vector(&mut rng);
        let speed = rng.random_range(0.0..=spec.nominal_speed);
        let v0 = dir * speed;
        let other = unit_vector(&mut rng);
        let mut perp = other - dir * dir.dot(&other);
        if perp.norm() < 1e-6 {
            perp = dir.cross(&Vec3::x());
        }
        let perp = perp.normalize();
        let spiral_axis = unit_vector(&mut rng);
        let rot = random_rotation(&mut rng);
        ProfileParams { v0, dir, perp, spiral_axis, rot }
    }
}

/// Closed-form velocity at time `t`; `None` for the random-walk family.
pub fn velocity_at(spec: &TrajectorySpec, params: &ProfileParams, t: f64) -> Option<Vec3> {
    let vb = spec.nominal_speed;
    let tt = spec.duration;
    let d = params.dir;
    let w = 2.0 * PI / tt;
    Some(match spec.family {
        TrajectoryFamily::Stationary => Vec3::zeros(),
        TrajectoryFamily::StraightConst => d * vb,
        TrajectoryFamily::StraightAccel => d * (vb + STRAIGHT_ACCEL * t),
        TrajectoryFamily::StraightDecel => d * (vb * (1.0 - t / tt)),
        TrajectoryFamily::OscillatorySpeed => d * (vb * (1.0 + 0.5 * (w * t).sin())),
        TrajectoryFamily::BackAndForth => {
            d * (vb * sign((2.0 * PI * t / BACK_AND_FORTH_PERIOD).sin()))
        }
        TrajectoryFamily::VerticalOsc => spec.p0.normalize() * (VERTICAL_AMPLITUDE * (w * t).sin()),
        TrajectoryFamily::SpiralDrift => params.v0 + params.spiral_axis * (2.0 * w * t).sin(),
        TrajectoryFamily::VelocityRandomWalk => return None,
        TrajectoryFamily::Lissajous => {
            Vec3::new(vb * (w * t).sin(), vb * (2.0 * w * t).sin(), (3.0 * w * t).sin())
        }
        TrajectoryFamily::Circular => (d * (w * t).cos() + params.perp * (w * t).sin()) * vb,
        TrajectoryFamily::SinusoidalPath => d * vb + params.perp * (0.5 * vb * (w * t).sin()),
    })
}

/// Velocity samples `v(t_k)` for `k = 0..N`.
pub fn gen_velocity_profile(spec: &TrajectorySpec) -> Vec<Vec3> {
    let params = ProfileParams::draw(spec);
    let n = spec.steps();
    if spec.family == TrajectoryFamily::VelocityRandomWalk {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_7a1c);
        let step = Normal::new(0.0, RANDOM_WALK_STEP).unwrap();
        let mut v = params.v0;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(v);
            v += Vec3::new(step.sample(&mut rng), step.sample(&mut rng), step.sample(&mut rng));
            let norm = v.norm();
            if norm > RANDOM_WALK_MAX {
                v *= RANDOM_WALK_MAX / norm;
            }
        }
        return out;
    }
    (0..n)
        .map(|k| velocity_at(spec, &params, k as f64 * spec.dt).unwrap())
        .collect()
}

/// Ground truth with `p_{k+1} = p_k + v_k dt` and constant attitude.
pub fn gen_ground_truth(spec: &TrajectorySpec) -> GroundTruth {
    let params = ProfileParams::draw(spec);
    let vel = gen_velocity_profile(spec);
    let mut pos = spec.p0;
    let mut out = Vec::with_capacity(vel.len());
    for (k, v) in vel.iter().enumerate() {
        out.push(GtSample { t: k as f64 * spec.dt, pos, vel: *v, rot: params.rot });
        pos += v * spec.dt;
    }
    out
}

/// Noise-free IMU readings that reproduce `gt` under the strapdown step.
pub fn synthesize_imu(gt: &[GtSample]) -> Result<Vec<ImuSample>> {
    let n = gt.len();
    if n < 2 {
        return Err(Error::EmptyDataset);
    }
    let w = earth_rate_skew();
    let mut out = Vec::with_capacity(n);
    let mut last = (Vec3::zeros(), Vec3::zeros());
    for k in 0..n - 1 {
        let (a, b) = (&gt[k], &gt[k + 1]);
        let dt = b.t - a.t;
        let r = a.rot.matrix();
        let vdot = (b.vel - a.vel) / dt;
        let g = gravity_ecef(&a.pos)?;
        let accel = r.transpose() * (vdot - g + 2.0 * w * a.vel);
        // Exact inverse of R_{k+1} = exp(-Omega dt) R_k exp(w dt).
        let earth_step = so3_exp(&(crate::dynamics::earth_rate_vector() * dt));
        let rel = a.rot.inverse() * earth_step * b.rot;
        let gyro = so3_log(&rel)? / dt;
        last = (gyro, accel);
        out.push(ImuSample { t: a.t, gyro, accel });
    }
    out.push(ImuSample { t: gt[n - 1].t, gyro: last.0, accel: last.1 });
    Ok(out)
}

fn sample_dt(imu: &[ImuSample]) -> f64 {
    if imu.len() >= 2 {
        (imu[imu.len() - 1].t - imu[0].t) / (imu.len() - 1) as f64
    } else {
        DEFAULT_DT
    }
}

/// Adds white noise with discrete standard deviation `sigma / sqrt(dt)` per axis.
pub fn add_noise(imu: &[ImuSample], levels: &NoiseLevels, seed: u64) -> Vec<ImuSample> {
    let dt = sample_dt(imu);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sg = levels.sigma_gyro / dt.sqrt();
    let sa = levels.sigma_accel / dt.sqrt();
    imu.iter()
        .map(|u| {
            let mut draw = |s: f64| {
                let n: f64 = StandardNormal.sample(&mut rng);
                s * n
            };
            let ng = Vec3::new(draw(sg), draw(sg), draw(sg));
            let na = Vec3::new(draw(sa), draw(sa), draw(sa));
            ImuSample { t: u.t, gyro: u.gyro + ng, accel: u.accel + na }
        })
        .collect()
}

/// Body-frame velocity samples at `rate` Hz with per-sample standard deviation `sigma`.
pub fn gen_dvl(gt: &[GtSample], sigma: f64, rate: f64, seed: u64) -> Vec<DvlSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if gt.is_empty() {
        return Vec::new();
    }
    let period = 1.0 / rate;
    let t0 = gt[0].t;
    let mut next = t0;
    let mut out = Vec::new();
    for s in gt {
        if s.t + 1e-9 >= next {
            let mut draw = || -> f64 {
                let n: f64 = StandardNormal.sample(&mut rng);
                sigma * n
            };
            let noise = Vec3::new(draw(), draw(), draw());
            out.push(DvlSample { t: s.t, vel_body: s.rot.matrix().transpose() * s.vel + noise });
            next += period;
        }
    }
    out
}

/// Derives an independent sub-seed from a master seed and an index (SplitMix64).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// DVL noise used when simulating training realizations.
pub const SIM_DVL_SIGMA: f64 = 0.05;

/// A simulated segment: trajectory, noisy IMU and DVL.
#[derive(Clone, Debug)]
pub struct Realization {
    pub family: TrajectoryFamily,
    pub regime: NoiseRegime,
    pub seed: u64,
    pub dt: f64,
    pub gt: GroundTruth,
    pub imu: Vec<ImuSample>,
    pub dvl: Vec<DvlSample>,
}

impl Realization {
    pub fn generate(family: TrajectoryFamily, regime: NoiseRegime, seed: u64) -> Result<Self> {
        let spec = TrajectorySpec::new(family, derive_seed(seed, 0));
        let gt = gen_ground_truth(&spec);
        let clean = synthesize_imu(&gt)?;
        let imu = add_noise(&clean, &regime.levels(), derive_seed(seed, 1));
        let dvl = gen_dvl(&gt, SIM_DVL_SIGMA, 1.0, derive_seed(seed, 2));
        Ok(Realization { family, regime, seed, dt: spec.dt, gt, imu, dvl })
    }

    pub fn targets(&self) -> [f64; 6] {
        self.regime.levels().variances()
    }
}

/// All 12 x 4 realizations for a master seed.
pub fn gen_realizations(master_seed: u64) -> Result<Vec<Realization>> {
    let mut out = Vec::with_capacity(48);
    for (fi, family) in TrajectoryFamily::ALL.iter().enumerate() {
        for regime in NoiseRegime::all() {
            let idx = (fi * 4 + regime.index()) as u64;
            out.push(Realization::generate(*family, regime, derive_seed(master_seed, idx))?);
        }
    }
    Ok(out)
}

/// Reference into a realization's IMU stream: window start index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef {
    pub realization: usize,
    pub start: usize,
}

/// Windowed training set backed by realization streams.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub streams: Vec<Vec<ImuSample>>,
    pub targets: Vec<[f64; 6]>,
    pub windows: Vec<WindowRef>,
    pub step: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Window as `(channel, time)` rows: gyro xyz then accel xyz.
    pub fn window(&self, i: usize) -> WindowInput {
        let w = self.windows[i];
        window_from(&self.streams[w.realization][w.start..w.start + WINDOW])
    }

    pub fn target(&self, i: usize) -> [f64; 6] {
        self.targets[self.windows[i].realization]
    }
}

pub fn window_from(samples: &[ImuSample]) -> WindowInput {
    let mut out = [[0.0; WINDOW]; 6];
    for (t, s) in samples.iter().take(WINDOW).enumerate() {
        for c in 0..3 {
            out[c][t] = s.gyro[c];
            out[3 + c][t] = s.accel[c];
        }
    }
    out
}

/// Window start indices for a stream of `n` samples.
pub fn window_starts(n: usize, step: usize) -> Vec<usize> {
    if n < WINDOW {
        return Vec::new();
    }
    (0..=n - WINDOW).step_by(step.max(1)).collect()
}

pub fn build_training_set(realizations: &[Realization], step: usize) -> TrainingSet {
    let mut windows = Vec::new();
    for (ri, r) in realizations.iter().enumerate() {
        for start in window_starts(r.imu.len(), step) {
            windows.push(WindowRef { realization: ri, start });
        }
    }
    TrainingSet {
        streams: realizations.iter().map(|r| r.imu.clone()).collect(),
        targets: realizations.iter().map(|r| r.targets()).collect(),
        windows,
        step,
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn header(r: &Realization) -> String {
    let lv = r.regime.levels();
    format!(
        "# family={} regime={} seed={} dt={:?} sigma_gyro={:?} sigma_accel={:?}\n",
        r.family,
        r.regime.index(),
        r.seed,
        r.dt,
        lv.sigma_gyro,
        lv.sigma_accel
    )
}

/// Writes one CSV triple per realization plus `manifest.csv` with SHA-256 checksums.
pub fn write_dataset(dir: &Path, realizations: &[Realization]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("name,family,regime,seed,imu_sha256,gt_sha256,dvl_sha256\n");
    for (i, r) in realizations.iter().enumerate() {
        let name = format!("real_{i:02}");
        let imu_path = dir.join(format!("{name}_imu.csv"));
        let gt_path = dir.join(format!("{name}_gt.csv"));
        let dvl_path = dir.join(format!("{name}_dvl.csv"));
        let mut f = BufWriter::new(fs::File::create(&imu_path)?);
        f.write_all(header(r).as_bytes())?;
        writeln!(f, "t,gyro_x,gyro_y,gyro_z,accel_x,accel_y,accel_z")?;
        for s in &r.imu {
            writeln!(
                f,
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z
            )?;
        }
        f.flush()?;
        let mut f = BufWriter::new(fs::File::create(&gt_path)?);
        f.write_all(header(r).as_bytes())?;
        writeln!(f, "t,p_x,p_y,p_z,v_x,v_y,v_z,r11,r12,r13,r21,r22,r23,r31,r32,r33")?;
        for s in &r.gt {
            let m = s.rot.matrix();
            let mut row = format!(
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                s.t, s.pos.x, s.pos.y, s.pos.z, s.vel.x, s.vel.y, s.vel.z
            );
            for i in 0..3 {
                for j in 0..3 {
                    row.push_str(&format!(",{:?}", m[(i, j)]));
                }
            }
            writeln!(f, "{row}")?;
        }
        f.flush()?;
        let mut f = BufWriter::new(fs::File::create(&dvl_path)?);
        f.write_all(header(r).as_bytes())?;
        writeln!(f, "t,v_x,v_y,v_z")?;
        for s in &r.dvl {
            writeln!(f, "{:?},{:?},{:?},{:?}", s.t, s.vel_body.x, s.vel_body.y, s.vel_body.z)?;
        }
        f.flush()?;
        manifest.push_str(&format!(
            "{name},{},{},{},{},{},{}\n",
            r.family,
            r.regime.index(),
            r.seed,
            sha256_file(&imu_path)?,
            sha256_file(&gt_path)?,
            sha256_file(&dvl_path)?
        ));
    }
    fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}

fn parse_header(line: &str) -> Result<std::collections::HashMap<String, String>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Format("missing realization header".into()))?;
    Ok(body
        .split_whitespace()
        .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect())
}

fn parse_rows(path: &Path, cols: usize) -> Result<(std::collections::HashMap<String, String>, Vec<Vec<f64>>)> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut lines = f.lines();
    let head = parse_header(&lines.next().ok_or_else(|| Error::Format("empty file".into()))??)?;
    lines.next();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|x| x.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if vals.len() != cols {
            return Err(Error::Format(format!(
                "{}: expected {cols} columns, found {}",
                path.display(),
                vals.len()
            )));
        }
        rows.push(vals);
    }
    Ok((head, rows))
}

/// Reads the dataset written by [`write_dataset`], verifying checksums.
pub fn read_dataset(dir: &Path) -> Result<Vec<Realization>> {
    let manifest = fs::read_to_string(dir.join("manifest.csv"))?;
    let mut out = Vec::new();
    for line in manifest.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Format(format!("bad manifest line `{line}`")));
        }
        let name = fields[0];
        let paths = ["imu", "gt", "dvl"].map(|k| dir.join(format!("{name}_{k}.csv")));
        for (p, expected) in paths.iter().zip(&fields[4..7]) {
            if sha256_file(p)? != *expected {
                return Err(Error::Format(format!("checksum mismatch for {}", p.display())));
            }
        }
        let (head, imu_rows) = parse_rows(&paths[0], 7)?;
        let (_, gt_rows) = parse_rows(&paths[1], 16)?;
        let (_, dvl_rows) = parse_rows(&paths[2], 4)?;
        let get = |k: &str| {
            head.get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("header lacks `{k}`")))
        };
        let family: TrajectoryFamily = get("family")?.parse()?;
        let regime = NoiseRegime::new(get("regime")?.parse().map_err(|_| Error::Format("regime".into()))?)?;
        let seed: u64 = get("seed")?.parse().map_err(|_| Error::Format("seed".into()))?;
        let dt: f64 = get("dt")?.parse().map_err(|_| Error::Format("dt".into()))?;
        let imu = imu_rows
            .iter()
            .map(|r| ImuSample {
                t: r[0],
                gyro: Vec3::new(r[1], r[2], r[3]),
                accel: Vec3::new(r[4], r[5], r[6]),
            })
            .collect();
        let gt = gt_rows
            .iter()
            .map(|r| GtSample {
                t: r[0],
                pos: Vec3::new(r[1], r[2], r[3]),
                vel: Vec3::new(r[4], r[5], r[6]),
                rot: Rot3::from_matrix_unchecked(Mat3::from_row_slice(&r[7..16])),
            })
            .collect();
        let dvl = dvl_rows
            .iter()
            .map(|r| DvlSample { t: r[0], vel_body: Vec3::new(r[1], r[2], r[3]) })
            .collect();
        out.push(Realization { family, regime, seed, dt, gt, imu, dvl });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn family_names_round_trip() {
        for f in TrajectoryFamily::ALL {
            assert_eq!(f.name().parse::<TrajectoryFamily>().unwrap(), f);
        }
        assert!(matches!("zigzag".parse::<TrajectoryFamily>(), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn profile_endpoints() {
        let spec = TrajectorySpec::new(TrajectoryFamily::StraightDecel, 3);
        let p = ProfileParams::draw(&spec);
        assert_eq!(velocity_at(&spec, &p, spec.duration).unwrap(), Vec3::zeros());
        let spec = TrajectorySpec::new(TrajectoryFamily::Circular, 3);
        let v0 = velocity_at(&spec, &p, 0.0).unwrap();
        let vt = velocity_at(&spec, &p, spec.duration).unwrap();
        assert_relative_eq!(v0, vt, epsilon = 1e-9);
        let spec = TrajectorySpec::new(TrajectoryFamily::StraightConst, 3);
        let v = gen_velocity_profile(&spec);
        assert_eq!(v.len(), 6000);
        assert!(v.iter().all(|x| (x.norm() - 5.0).abs() < 1e-12));
        let spec = TrajectorySpec::new(TrajectoryFamily::Stationary, 3);
        assert!(gen_velocity_profile(&spec).iter().all(|x| *x == Vec3::zeros()));
    }

    #[test]
    fn random_walk_is_bounded() {
        let spec = TrajectorySpec::new(TrajectoryFamily::VelocityRandomWalk, 9);
        assert!(gen_velocity_profile(&spec).iter().all(|v| v.norm() <= RANDOM_WALK_MAX + 1e-12));
    }

    #[test]
    fn stationary_imu_feels_gravity() {
        let gt = gen_ground_truth(&TrajectorySpec::new(TrajectoryFamily::Stationary, 1));
        let imu = synthesize_imu(&gt).unwrap();
        for u in &imu {
            assert!((9.7..9.9).contains(&u.accel.norm()));
            assert_relative_eq!(u.gyro.norm(), crate::dynamics::EARTH_RATE, max_relative = 1e-9);
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(6000, 1).len(), 5901);
        assert_eq!(window_starts(6000, 10).len(), 591);
        assert_eq!(window_starts(99, 1).len(), 0);
    }

    #[test]
    fn dvl_cadence_and_exactness() {
        let gt = gen_ground_truth(&TrajectorySpec::new(TrajectoryFamily::Circular, 5));
        let dvl = gen_dvl(&gt, 0.0, 1.0, 0);
        assert_eq!(dvl.len(), 60);
        for z in &dvl {
            let k = (z.t / 0.01).round() as usize;
            assert_eq!(z.vel_body, gt[k].rot.matrix().transpose() * gt[k].vel);
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let gt = gen_ground_truth(&TrajectorySpec::new(TrajectoryFamily::Lissajous, 2));
        let imu = synthesize_imu(&gt).unwrap();
        assert_eq!(add_noise(&imu, &NoiseLevels::ZERO, 4), imu);
    }
}
