//! End-to-end filter runs, position RMSE, benchmark tables and group-noise samples.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adaptive::{
    clamp_psd, hybrid_q, q_innov_euclidean, q_innov_full, q_innov_invariant, AdaptiveLaw, BlendConfig, InnovBuffer,
};
use crate::dataio::{inject_test_noise, FilterKind, NnVariant, RunConfig, Segment, WindowStream};
use crate::dynamics::{
    build_f, build_f_euclidean, build_g, build_g_euclidean, diag12, discretize_noise, euclidean_to_invariant, expm15,
    DvlSample, ImuSample, Mat15, Mat15x12, NavState, Vec12, MAX_STEP,
};
use crate::error::{Error, Result};
use crate::filter::{ekf_update, ikf_update, propagate_with_transition, Belief};
use crate::geo::{GroupElement, Mat3, Vec3, Vec9};
use crate::neural::NoiseModel;
use crate::simgen::{derive_seed, GtSample, TrajectoryFamily, WindowInput};

/// Anything that maps IMU windows to the six sensor noise variances.
pub trait NoiseSource {
    fn predict(&self, windows: &[WindowInput]) -> Result<Vec<[f64; 6]>>;
}

impl NoiseSource for NoiseModel {
    fn predict(&self, windows: &[WindowInput]) -> Result<Vec<[f64; 6]>> {
        NoiseModel::predict(self, windows)
    }
}

/// Returns the same variances for every window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantNoise(pub [f64; 6]);

impl NoiseSource for ConstantNoise {
    fn predict(&self, windows: &[WindowInput]) -> Result<Vec<[f64; 6]>> {
        Ok(vec![self.0; windows.len()])
    }
}

/// How the innovation-based estimate enters each IMU propagation step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnovScaling {
    /// Spread over the IMU steps of one DVL interval (`dt_imu / dt_dvl`).
    #[default]
    PerStep,
    /// Added unscaled at every IMU step.
    PerUpdate,
}

/// Smallest DVL standard deviation assumed by the filter [m/s]; keeps the
/// innovation covariance well conditioned for noise-free inputs.
pub const MIN_DVL_SIGMA: f64 = 0.01;

/// IMU windows evaluated per network batch.
const NN_BLOCK: usize = 1024;

/// Low-level switches of one filter run.
pub struct FilterOptions<'a> {
    pub invariant: bool,
    /// Network (or oracle) noise source; `None` disables the learned term.
    pub nn: Option<&'a dyn NoiseSource>,
    /// Innovation-based adaptation on/off.
    pub adaptive: bool,
    pub lambda: f64,
    pub law: AdaptiveLaw,
    pub innov_window: usize,
    pub innov_scaling: InnovScaling,
    /// Continuous noise densities used before adaptation is available.
    pub q_base: Vec12,
    pub p0: [f64; 5],
    pub dvl_sigma: f64,
}

impl<'a> FilterOptions<'a> {
    pub fn from_config(cfg: &RunConfig, nn: Option<&'a dyn NoiseSource>) -> Result<Self> {
        cfg.validate()?;
        if cfg.filter.uses_network() && nn.is_none() {
            return Err(Error::MissingWeights(cfg.nn_variant.to_string()));
        }
        let n = &cfg.noise;
        let mut q = Vec12::zeros();
        for i in 0..3 {
            q[i] = n.gyro * n.gyro;
            q[3 + i] = n.accel * n.accel;
            q[6 + i] = cfg.q_bias_gyro;
            q[9 + i] = cfg.q_bias_accel;
        }
        let p = &cfg.p0;
        Ok(FilterOptions {
            invariant: cfg.filter.is_invariant(),
            nn: if cfg.filter.uses_network() { nn } else { None },
            adaptive: true,
            lambda: cfg.lambda,
            law: cfg.adaptive_law,
            innov_window: cfg.innovation_window,
            innov_scaling: cfg.innov_scaling,
            q_base: q,
            p0: [p.attitude, p.velocity, p.position, p.bias_gyro, p.bias_accel],
            dvl_sigma: n.dvl,
        })
    }
}

/// Per-run outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub segment_id: usize,
    pub rmse_position: f64,
    pub times: Vec<f64>,
    pub pos_err: Vec<f64>,
    pub vel_err: Vec<f64>,
    pub cov_trace: Vec<f64>,
    /// `(t, innovation)` at each DVL update.
    pub innovations: Vec<(f64, Vec3)>,
    pub final_state: NavState,
}

/// `sqrt(mean |p_hat - p|^2)` over paired samples.
pub fn rmse_position(est: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} estimates vs {} truth samples", est.len(), truth.len())));
    }
    let s: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((s / est.len() as f64).sqrt())
}

/// Linear interpolation of ground truth at increasing query times.
struct GtCursor<'a> {
    gt: &'a [GtSample],
    i: usize,
}

impl<'a> GtCursor<'a> {
    fn at(&mut self, t: f64) -> (Vec3, Vec3) {
        let gt = self.gt;
        while self.i + 1 < gt.len() && gt[self.i + 1].t <= t {
            self.i += 1;
        }
        let a = &gt[self.i];
        if self.i + 1 >= gt.len() || t <= a.t {
            return (a.pos, a.vel);
        }
        let b = &gt[self.i + 1];
        let w = (t - a.t) / (b.t - a.t);
        (a.pos + (b.pos - a.pos) * w, a.vel + (b.vel - a.vel) * w)
    }
}

fn initial_belief(seg: &Segment, opts: &FilterOptions) -> Result<Belief> {
    let t0 = seg.imu[0].t;
    let g0 = seg.gt.iter().take_while(|g| g.t <= t0 + 1e-9).last().unwrap_or(&seg.gt[0]);
    let state = NavState::new(GroupElement::new(g0.rot, g0.vel, g0.pos), Vec3::zeros(), Vec3::zeros());
    let mut d = [0.0; 15];
    for b in 0..5 {
        d[3 * b..3 * b + 3].fill(opts.p0[b]);
    }
    let p_e = Mat15::from_diagonal(&nalgebra::SVector::<f64, 15>::from_row_slice(&d));
    let cov = if opts.invariant {
        let t = euclidean_to_invariant(&state);
        t * p_e * t.transpose()
    } else {
        p_e
    };
    Ok(Belief::new(state, cov))
}

/// Runs one filter over a segment following the adaptive event loop: per IMU
/// sample choose the process noise (network/innovation blend, innovation only,
/// or base) and propagate; per DVL sample update and refresh the innovation estimate.
pub fn run_with(seg: &Segment, opts: &FilterOptions) -> Result<RunResult> {
    if seg.imu.len() < 2 || seg.gt.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let blend = BlendConfig::new(
        opts.lambda,
        Vec3::from_row_slice(&opts.q_base.as_slice()[6..9]),
        Vec3::from_row_slice(&opts.q_base.as_slice()[9..12]),
    )?;
    let sigma = opts.dvl_sigma.max(MIN_DVL_SIGMA);
    let r_dvl = Mat3::identity() * sigma * sigma;
    let imu_rate = seg.imu_rate();
    let dvl_rate = seg.dvl_rate();
    let innov_scale = match opts.innov_scaling {
        InnovScaling::PerStep if imu_rate > 0.0 && dvl_rate > 0.0 => dvl_rate / imu_rate,
        _ => 1.0,
    };
    let q_base_cont = diag12(&opts.q_base);

    let mut belief = initial_belief(seg, opts)?;
    let mut buffer = InnovBuffer::new(opts.innov_window);
    let mut q_innov: Option<Mat15> = None;
    let mut window = WindowStream::new();
    let mut nn_block: Vec<Option<[f64; 6]>> = Vec::new();
    let mut nn_block_start = 0usize;
    // Transition over the current DVL interval and the posterior it started from.
    let mut phi_interval = Mat15::identity();
    let mut p_prev_post = belief.cov;

    let mut cursor = GtCursor { gt: &seg.gt, i: 0 };
    let n = seg.imu.len();
    let mut dvl_iter = seg.dvl.iter().peekable();
    let mut out = RunResult {
        segment_id: seg.id,
        rmse_position: 0.0,
        times: Vec::with_capacity(n),
        pos_err: Vec::with_capacity(n),
        vel_err: Vec::with_capacity(n),
        cov_trace: Vec::with_capacity(n),
        innovations: Vec::new(),
        final_state: belief.state,
    };
    let mut est_p = Vec::with_capacity(n);
    let mut true_p = Vec::with_capacity(n);

    let dvl_update = |belief: &mut Belief,
                          z: &DvlSample,
                          buffer: &mut InnovBuffer,
                          q_innov: &mut Option<Mat15>,
                          phi_interval: &mut Mat15,
                          p_prev_post: &mut Mat15,
                          log: &mut Vec<(f64, Vec3)>|
     -> Result<()> {
        let (post, rec) = if opts.invariant { ikf_update(belief, z, &r_dvl)? } else { ekf_update(belief, z, &r_dvl)? };
        buffer.push(rec.correction, rec.innovation);
        log.push((z.t, rec.innovation));
        if opts.adaptive && buffer.is_full() {
            let q = match (opts.law, opts.invariant) {
                (AdaptiveLaw::Simplified, true) => q_innov_invariant(buffer)?,
                (AdaptiveLaw::Simplified, false) => q_innov_euclidean(buffer)?,
                (AdaptiveLaw::Full, _) => clamp_psd(&q_innov_full(buffer, &post.cov, phi_interval, p_prev_post)?),
            };
            *q_innov = Some(q * innov_scale);
        }
        *phi_interval = Mat15::identity();
        *p_prev_post = post.cov;
        *belief = post;
        Ok(())
    };

    while let Some(z) = dvl_iter.next_if(|z| z.t <= seg.imu[0].t + 1e-9) {
        dvl_update(&mut belief, z, &mut buffer, &mut q_innov, &mut phi_interval, &mut p_prev_post, &mut out.innovations)?;
    }

    for k in 0..n - 1 {
        let u: &ImuSample = &seg.imu[k];
        let dt = seg.imu[k + 1].t - u.t;
        if !(dt > 0.0 && dt <= MAX_STEP) {
            return Err(Error::InvalidTimeStep(dt));
        }
        let alpha = match opts.nn {
            Some(src) => {
                if k >= nn_block_start + nn_block.len() {
                    nn_block_start = k;
                    let end = (k + NN_BLOCK).min(n - 1);
                    let mut ready = Vec::new();
                    let mut wins = Vec::new();
                    for s in &seg.imu[k..end] {
                        window.push(*s);
                        match window.window() {
                            Some(w) => {
                                ready.push(true);
                                wins.push(w);
                            }
                            None => ready.push(false),
                        }
                    }
                    let mut preds = src.predict(&wins)?.into_iter();
                    nn_block = ready.into_iter().map(|r| if r { preds.next() } else { None }).collect();
                }
                nn_block[k - nn_block_start]
            }
            None => None,
        };

        let (phi, g): (Mat15, Mat15x12) = if opts.invariant {
            (expm15(&(build_f(&belief.state)? * dt)), build_g(&belief.state))
        } else {
            (expm15(&(build_f_euclidean(&belief.state, u)? * dt)), build_g_euclidean(&belief.state))
        };
        let qd_base = || discretize_noise(&phi, &(g * q_base_cont * g.transpose()), dt);
        let qd = match (alpha, q_innov.as_ref()) {
            (Some(a), Some(qi)) => hybrid_q(&a, qi, &g, &phi, dt, &blend),
            (Some(a), None) => hybrid_q(&a, &qd_base(), &g, &phi, dt, &blend),
            (None, Some(qi)) if opts.nn.is_none() => *qi,
            _ => qd_base(),
        };
        belief = propagate_with_transition(&belief, u, dt, &phi, &qd)?;
        phi_interval = phi * phi_interval;

        let t = seg.imu[k + 1].t;
        while let Some(z) = dvl_iter.next_if(|z| z.t <= t + 1e-9) {
            dvl_update(&mut belief, z, &mut buffer, &mut q_innov, &mut phi_interval, &mut p_prev_post, &mut out.innovations)?;
        }
        if !belief.state.is_finite() {
            return Err(Error::NonFiniteInput("state estimate"));
        }
        let (p, v) = cursor.at(t);
        out.times.push(t);
        out.pos_err.push((belief.state.pos() - p).norm());
        out.vel_err.push((belief.state.vel() - v).norm());
        out.cov_trace.push(belief.cov.trace());
        est_p.push(belief.state.pos());
        true_p.push(p);
    }
    out.rmse_position = rmse_position(&est_p, &true_p)?;
    out.final_state = belief.state;
    Ok(out)
}

/// Runs the filter named in `cfg` on a segment (test noise is not injected here).
pub fn run_filter(seg: &Segment, cfg: &RunConfig, nn: Option<&dyn NoiseSource>) -> Result<RunResult> {
    run_with(seg, &FilterOptions::from_config(cfg, nn)?)
}

/// One benchmark column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub filter: FilterKind,
    pub nn: NnVariant,
}

impl Variant {
    pub fn new(filter: FilterKind, nn: NnVariant) -> Result<Self> {
        if filter.uses_network() == (nn == NnVariant::None) {
            return Err(Error::Config(format!("filter {filter} cannot use network variant {nn}")));
        }
        Ok(Variant { filter, nn })
    }

    pub fn label(&self) -> String {
        match self.nn {
            NnVariant::None => self.filter.to_string(),
            nn => format!("{} {}", self.filter, nn),
        }
    }

    /// The eight columns of the real-data comparison.
    pub fn full_grid() -> Vec<Variant> {
        let mut v = vec![
            Variant { filter: FilterKind::Aekf, nn: NnVariant::None },
            Variant { filter: FilterKind::ArIkf, nn: NnVariant::None },
        ];
        for filter in [FilterKind::NnAekf, FilterKind::NnArIkf] {
            for nn in NnVariant::TRAINED {
                v.push(Variant { filter, nn });
            }
        }
        v
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    /// `AEKF`, `AR-IKF`, `NN-AEKF:s1_mse`, `NN-AR-IKF:s10_huber`, ...
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((f, n)) => Variant::new(f.parse()?, n.parse()?),
            None => {
                let f: FilterKind = s.parse()?;
                let nn = if f.uses_network() { NnVariant::S1Mse } else { NnVariant::None };
                Variant::new(f, nn)
            }
        }
    }
}

/// Position RMSE per segment, variant and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchTable {
    pub variants: Vec<Variant>,
    pub segment_ids: Vec<usize>,
    pub seeds: Vec<u64>,
    /// `cells[segment][variant][seed]`; NaN marks a diverged run.
    pub cells: Vec<Vec<Vec<f64>>>,
    pub failures: Vec<String>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

impl BenchTable {
    pub fn diverged(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Mean and seed-to-seed std of one cell.
    pub fn cell(&self, segment: usize, variant: usize) -> (f64, f64) {
        mean_std(&self.cells[segment][variant])
    }

    /// Per-seed mean over segments, then mean and std over seeds.
    pub fn mean(&self, variant: usize) -> (f64, f64) {
        let per_seed: Vec<f64> = (0..self.seeds.len())
            .map(|s| self.cells.iter().map(|row| row[variant][s]).sum::<f64>() / self.cells.len() as f64)
            .collect();
        mean_std(&per_seed)
    }

    /// Per-seed segment means for one variant.
    pub fn seed_means(&self, variant: usize) -> Vec<f64> {
        (0..self.seeds.len())
            .map(|s| self.cells.iter().map(|row| row[variant][s]).sum::<f64>() / self.cells.len() as f64)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("segment");
        for v in &self.variants {
            let l = v.label().replace(' ', "_");
            write!(s, ",{l}_mean,{l}_std").unwrap();
        }
        s.push('\n');
        for (i, id) in self.segment_ids.iter().enumerate() {
            write!(s, "{id}").unwrap();
            for j in 0..self.variants.len() {
                let (m, d) = self.cell(i, j);
                write!(s, ",{m:.6},{d:.6}").unwrap();
            }
            s.push('\n');
        }
        s.push_str("mean");
        for j in 0..self.variants.len() {
            let (m, d) = self.mean(j);
            write!(s, ",{m:.6},{d:.6}").unwrap();
        }
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut head = vec!["segment".to_string()];
        head.extend(self.variants.iter().map(|v| v.label()));
        rows.push(head);
        let fmt = |(m, d): (f64, f64)| {
            if self.seeds.len() > 1 {
                format!("{m:.2} ± {d:.2}")
            } else {
                format!("{m:.2}")
            }
        };
        for (i, id) in self.segment_ids.iter().enumerate() {
            let mut r = vec![id.to_string()];
            r.extend((0..self.variants.len()).map(|j| fmt(self.cell(i, j))));
            rows.push(r);
        }
        let mut r = vec!["mean".to_string()];
        r.extend((0..self.variants.len()).map(|j| fmt(self.mean(j))));
        rows.push(r);
        let widths: Vec<usize> =
            (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut s = String::new();
        for r in &rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(x, w)| format!("{x:>w$}")).collect();
            s.push_str(line.join("  ").trim_end());
            s.push('\n');
        }
        s
    }
}

/// Runs every variant on every segment for every seed. Each seed injects test
/// noise once per segment and all variants see the same noisy data.
pub fn benchmark(
    segments: &[Segment],
    variants: &[Variant],
    seeds: &[u64],
    base: &RunConfig,
    models: &HashMap<NnVariant, NoiseModel>,
    progress: &mut dyn FnMut(&str),
) -> Result<BenchTable> {
    if variants.is_empty() {
        return Err(Error::Config("no filter variants selected".into()));
    }
    if segments.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if seeds.is_empty() {
        return Err(Error::Config("no seeds selected".into()));
    }
    for v in variants {
        if v.nn != NnVariant::None && !models.contains_key(&v.nn) {
            return Err(Error::MissingWeights(v.nn.to_string()));
        }
    }
    let mut cells = vec![vec![vec![f64::NAN; seeds.len()]; variants.len()]; segments.len()];
    let mut failures = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        for (s, &seed) in seeds.iter().enumerate() {
            let noisy = inject_test_noise(seg, &base.noise, seed);
            for (j, v) in variants.iter().enumerate() {
                let cfg = RunConfig { filter: v.filter, nn_variant: v.nn, ..base.clone() };
                let nn = models.get(&v.nn).map(|m| m as &dyn NoiseSource);
                match run_filter(&noisy, &cfg, nn) {
                    Ok(r) => cells[i][j][s] = r.rmse_position,
                    Err(e) => failures.push(format!("segment {} seed {seed} {}: {e}", seg.id, v.label())),
                }
                progress(&format!("segment {} seed {seed} {}: {:.3}", seg.id, v.label(), cells[i][j][s]));
            }
        }
    }
    Ok(BenchTable {
        variants: variants.to_vec(),
        segment_ids: segments.iter().map(|s| s.id).collect(),
        seeds: seeds.to_vec(),
        cells,
        failures,
    })
}

/// Noise-free simulated test segments cycling through the trajectory families,
/// with trajectory seeds derived from `master` (disjoint from training when the
/// training master seed differs).
pub fn simulated_segments(count: usize, master: u64) -> Result<Vec<Segment>> {
    (0..count)
        .map(|i| {
            let family = TrajectoryFamily::ALL[(2 * i + 1) % TrajectoryFamily::ALL.len()];
            Segment::simulated(i + 1, family, derive_seed(master, i as u64))
        })
        .collect()
}

/// One sample of a Gaussian in the Lie algebra pushed through the group exponential.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BananaSample {
    pub xi: Vec9,
    /// Position of `exp(xi) * X_mean` (the algebra-space position is `J^-1` of this only for small xi).
    pub group_pos: Vec3,
    /// Position of the same perturbation applied additively, `p_mean + xi_p`.
    pub linear_pos: Vec3,
}

/// Samples `xi ~ N(0, diag(sigma))` (ordered attitude, velocity, position) and maps
/// each through `exp(xi) * X_mean` with `X_mean` at `mean_pos`, identity attitude and zero velocity.
pub fn banana_samples(n: usize, sigma: &Vec9, mean_pos: &Vec3, seed: u64) -> Vec<BananaSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = GroupElement::new(crate::geo::Rot3::identity(), Vec3::zeros(), *mean_pos);
    (0..n)
        .map(|_| {
            let xi = Vec9::from_fn(|i, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma[i] * z
            });
            let x = GroupElement::exp(&xi) * mean;
            BananaSample { xi, group_pos: x.pos, linear_pos: mean_pos + crate::geo::vec9_pos(&xi) }
        })
        .collect()
}

pub fn banana_csv(samples: &[BananaSample]) -> String {
    let mut s = String::from("xi_rx,xi_ry,xi_rz,xi_vx,xi_vy,xi_vz,xi_px,xi_py,xi_pz,group_x,group_y,group_z,linear_x,linear_y,linear_z\n");
    for b in samples {
        let vals: Vec<String> = b
            .xi
            .iter()
            .chain(b.group_pos.iter())
            .chain(b.linear_pos.iter())
            .map(|v| format!("{v:.9e}"))
            .collect();
        s.push_str(&vals.join(","));
        s.push('\n');
    }
    s
}
