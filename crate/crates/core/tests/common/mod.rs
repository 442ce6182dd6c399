//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use invnav::adaptive::{q_innov_invariant, InnovBuffer};
use invnav::dynamics::{
    build_f, build_g, continuous_derivative, earth::geodetic_to_ecef, gravity_ecef, earth_rate_skew, strapdown_step,
    Mat15, Mat15x12, NavState, Vec12, Vec15,
};
use invnav::geo::{so3_wedge, vec9_wedge, GroupElement, Mat3, Mat5, Rot3, Vec3, Vec9};
use invnav::neural::{DropoutMasks, Mode, NetworkConfig, NetworkWeights};
use invnav::simgen::{gen_ground_truth, synthesize_imu, TrajectoryFamily, TrajectorySpec};
use nalgebra::{Matrix5, SMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Continuous truth derivative of the 5x5 group matrix for true body inputs.
pub fn group_rate(x: &GroupElement, omega: &Vec3, force: &Vec3) -> Mat5 {
    let w = earth_rate_skew();
    let r = *x.rot.matrix();
    let mut d = Matrix5::zeros();
    d.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r * so3_wedge(omega) - w * r));
    let dv = r * force - 2.0 * w * x.vel + gravity_ecef(&x.pos).unwrap();
    d.fixed_view_mut::<3, 1>(0, 3).copy_from(&dv);
    d.fixed_view_mut::<3, 1>(0, 4).copy_from(&x.vel);
    d
}

/// Right-trivialised rate of the invariant error for estimate `s`, error `xi` and
/// noise `n = (n_gyro, n_accel, w_bg, w_ba)`, given raw IMU readings.
pub fn error_rate(s: &NavState, xi: &Vec15, n: &Vec12, gyro_m: &Vec3, accel_m: &Vec3) -> Vec15 {
    let xi9: Vec9 = xi.fixed_rows::<9>(0).into_owned();
    let eta = GroupElement::exp(&xi9);
    let truth = eta.inverse() * s.x;
    let bg = s.bias_gyro + xi.fixed_rows::<3>(9);
    let ba = s.bias_accel + xi.fixed_rows::<3>(12);
    let ng: Vec3 = n.fixed_rows::<3>(0).into_owned();
    let na: Vec3 = n.fixed_rows::<3>(3).into_owned();
    let est_rate = group_rate(&s.x, &(gyro_m - s.bias_gyro), &(accel_m - s.bias_accel));
    let true_rate = group_rate(&truth, &(gyro_m - bg - ng), &(accel_m - ba - na));
    let xh = s.x.to_matrix();
    let xinv = truth.inverse().to_matrix();
    let eta_dot = est_rate * xinv - xh * xinv * true_rate * xinv;
    let m = eta_dot * eta.inverse().to_matrix();
    let v = invnav::geo::vec9_vee(&m);
    let mut out = Vec15::zeros();
    out.fixed_rows_mut::<9>(0).copy_from(&v);
    out.fixed_rows_mut::<3>(9).copy_from(&n.fixed_rows::<3>(6));
    out.fixed_rows_mut::<3>(12).copy_from(&n.fixed_rows::<3>(9));
    out
}

/// Per-component perturbation sizes: radians, m/s, m, rad/s, m/s^2.
pub fn fd_steps() -> Vec15 {
    let mut h = Vec15::zeros();
    for i in 0..3 {
        h[i] = 1e-6;
        h[3 + i] = 1e-4;
        h[6 + i] = 1.0;
        h[9 + i] = 1e-7;
        h[12 + i] = 1e-5;
    }
    h
}

pub fn fd_jacobians(s: &NavState, gyro_m: &Vec3, accel_m: &Vec3) -> (Mat15, Mat15x12) {
    let h = fd_steps();
    let mut f = Mat15::zeros();
    let n0 = Vec12::zeros();
    for j in 0..15 {
        let mut d = Vec15::zeros();
        d[j] = h[j];
        let col = (error_rate(s, &d, &n0, gyro_m, accel_m) - error_rate(s, &-d, &n0, gyro_m, accel_m))
            / (2.0 * h[j]);
        f.set_column(j, &col);
    }
    let mut g = Mat15x12::zeros();
    let x0 = Vec15::zeros();
    for j in 0..12 {
        let mut d = Vec12::zeros();
        d[j] = 1e-5;
        let col = (error_rate(s, &x0, &d, gyro_m, accel_m) - error_rate(s, &x0, &-d, gyro_m, accel_m))
            / 2e-5;
        g.set_column(j, &col);
    }
    (f, g)
}

/// Relative Frobenius error per 3x3 block; blocks that vanish in both are compared absolutely.
pub fn worst_block_error<const C: usize>(
    a: &nalgebra::SMatrix<f64, 15, C>,
    b: &nalgebra::SMatrix<f64, 15, C>,
) -> (f64, (usize, usize)) {
    let mut worst = (0.0, (0, 0));
    for i in 0..5 {
        for j in 0..C / 3 {
            let ba: Mat3 = a.fixed_view::<3, 3>(3 * i, 3 * j).into_owned();
            let bb: Mat3 = b.fixed_view::<3, 3>(3 * i, 3 * j).into_owned();
            let scale = ba.norm().max(bb.norm());
            let err = if scale > 1e-9 { (ba - bb).norm() / scale } else { 0.0 };
            if err > worst.0 {
                worst = (err, (i, j));
            }
        }
    }
    worst
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec3(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::from_fn(|_, _| rng.random_range(-r..r))
}

/// Generic navigation state: any attitude, a few m/s, anywhere on Earth within 200 m of the ellipsoid.
pub fn random_state(rng: &mut ChaCha8Rng) -> NavState {
    let rot = Rot3::exp(&random_vec3(rng, 3.0));
    let pos = geodetic_to_ecef(rng.random_range(-1.4..1.4), rng.random_range(-3.1..3.1), rng.random_range(-200.0..0.0));
    NavState::new(GroupElement::new(rot, random_vec3(rng, 3.0), pos), random_vec3(rng, 1e-4), random_vec3(rng, 0.05))
}

/// Body inputs near equilibrium: small rates, specific force close to `-g` in the body.
pub fn random_inputs(rng: &mut ChaCha8Rng, s: &NavState) -> (Vec3, Vec3) {
    let gyro = random_vec3(rng, 0.2);
    let accel = -(s.rot().transpose() * gravity_ecef(&s.pos()).unwrap()) + random_vec3(rng, 0.5);
    (gyro, accel)
}

/// Truncated power series of the 5x5 matrix exponential.
pub fn series_exp(xi: &Vec9, terms: usize) -> Mat5 {
    let a = vec9_wedge(xi);
    let mut out = Mat5::identity();
    let mut term = Mat5::identity();
    for k in 1..terms {
        term = term * a / k as f64;
        out += term;
    }
    out
}

/// Worst errors of SO(3) and group exp/log round trips and of exp against the series.
pub fn lie_conformance(seed: u64, n: usize) -> (f64, f64, f64) {
    let mut rng = rng(seed);
    let (mut so3, mut group, mut series) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let dir = random_vec3(&mut rng, 1.0).normalize();
        let w = dir * rng.random_range(0.0..3.0);
        let back = Rot3::exp(&w).log().unwrap();
        so3 = so3.max((back - w).norm());
        let mut xi = Vec9::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&w);
        xi.fixed_rows_mut::<6>(3).copy_from(&nalgebra::Vector6::from_fn(|_, _| rng.random_range(-5.0..5.0)));
        group = group.max((GroupElement::exp(&xi).log().unwrap() - xi).norm());
        let mut small = Vec9::from_fn(|_, _| rng.random_range(-1.0..1.0));
        small *= rng.random_range(0.0..2.0) / small.norm();
        series = series.max((GroupElement::exp(&small).to_matrix() - series_exp(&small, 30)).norm());
    }
    (so3, group, series)
}

/// Worst relative block errors of the analytic F and G against finite differences.
pub fn fg_check(seed: u64, n: usize) -> (f64, f64) {
    let mut rng = rng(seed);
    let (mut wf, mut wg) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let s = random_state(&mut rng);
        let (gyro, accel) = random_inputs(&mut rng, &s);
        let (f_fd, g_fd) = fd_jacobians(&s, &gyro, &accel);
        wf = wf.max(worst_block_error(&build_f(&s).unwrap(), &f_fd).0);
        wg = wg.max(worst_block_error(&build_g(&s), &g_fd).0);
    }
    (wf, wg)
}

type Nav = (Mat3, Vec3, Vec3);

fn nav_add(s: &Nav, d: &Nav, h: f64) -> Nav {
    (s.0 + d.0 * h, s.1 + d.1 * h, s.2 + d.2 * h)
}

fn nav_rate(s: &Nav, gyro: &Vec3, accel: &Vec3) -> Nav {
    continuous_derivative(&s.0, &s.1, &s.2, gyro, accel).unwrap()
}

fn nav_state(s: &Nav) -> NavState {
    NavState::new(GroupElement::new(Rot3::from_matrix_unchecked(s.0), s.1, s.2), Vec3::zeros(), Vec3::zeros())
}

/// Relative deviation `|log(X_hat X^-1)(T) - Phi xi0| / |Phi xi0|` after integrating the
/// continuous mechanisation of both trajectories and `dPhi/dt = F Phi` with RK4.
pub fn log_linear_residual(rng: &mut ChaCha8Rng, norm: f64, horizon: f64, dt: f64) -> f64 {
    let est = random_state(rng);
    let est = NavState::new(est.x, Vec3::zeros(), Vec3::zeros());
    let (gyro, accel) = random_inputs(rng, &est);
    let mut xi = Vec9::from_fn(|_, _| rng.random_range(-1.0..1.0));
    xi *= norm / xi.norm();
    let truth = GroupElement::exp(&-xi) * est.x;
    let mut a: Nav = (*est.rot(), est.vel(), est.pos());
    let mut b: Nav = (*truth.rot.matrix(), truth.vel, truth.pos);
    let mut phi = Mat15::identity();
    let f = |s: &Nav| build_f(&nav_state(s)).unwrap();
    let rk4 = |s: &Nav| {
        let k1 = nav_rate(s, &gyro, &accel);
        let k2 = nav_rate(&nav_add(s, &k1, dt / 2.0), &gyro, &accel);
        let k3 = nav_rate(&nav_add(s, &k2, dt / 2.0), &gyro, &accel);
        let k4 = nav_rate(&nav_add(s, &k3, dt), &gyro, &accel);
        let mut out = *s;
        for (k, w) in [(k1, 1.0), (k2, 2.0), (k3, 2.0), (k4, 1.0)] {
            out = nav_add(&out, &k, w * dt / 6.0);
        }
        out.0 = *Rot3::from_matrix_unchecked(out.0).renormalized().matrix();
        out
    };
    for _ in 0..(horizon / dt).round() as usize {
        let mid = nav_add(&a, &nav_rate(&a, &gyro, &accel), dt / 2.0);
        let next = rk4(&a);
        let k1 = f(&a) * phi;
        let k2 = f(&mid) * (phi + k1 * (dt / 2.0));
        let k3 = f(&mid) * (phi + k2 * (dt / 2.0));
        let k4 = f(&next) * (phi + k3 * dt);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        a = next;
        b = rk4(&b);
    }
    let got = (nav_state(&a).x * nav_state(&b).x.inverse()).log().unwrap();
    let mut x0 = Vec15::zeros();
    x0.fixed_rows_mut::<9>(0).copy_from(&xi);
    let pred: Vec9 = (phi * x0).fixed_rows::<9>(0).into_owned();
    (got - pred).norm() / pred.norm()
}

/// Largest deviation of the buffer estimate from the explicit `(1/N) sum K r r^T K^T`.
pub fn adaptive_oracle(seed: u64, trials: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.random_range(1..40);
        let mut buf = InnovBuffer::new(n);
        let mut brute = Mat15::zeros();
        for _ in 0..n {
            let k = SMatrix::<f64, 15, 3>::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let r = random_vec3(&mut rng, 1.0);
            buf.push(k * r, r);
            brute += k * r * r.transpose() * k.transpose();
        }
        brute /= n as f64;
        worst = worst.max((q_innov_invariant(&buf).unwrap() - brute).abs().max());
    }
    worst
}

/// Terminal position error after re-integrating each family's noise-free IMU
/// through the strapdown step, worst over the 12 families.
pub fn simulator_round_trip(seed: u64) -> (f64, f64) {
    let mut worst = 0.0f64;
    let mut duration = f64::INFINITY;
    for (i, family) in TrajectoryFamily::ALL.iter().enumerate() {
        let spec = TrajectorySpec::new(*family, seed + i as u64);
        let gt = gen_ground_truth(&spec);
        let imu = synthesize_imu(&gt).unwrap();
        let g0 = &gt[0];
        let mut s = NavState::new(GroupElement::new(g0.rot, g0.vel, g0.pos), Vec3::zeros(), Vec3::zeros());
        for k in 0..gt.len() - 1 {
            s = strapdown_step(&s, &imu[k], gt[k + 1].t - gt[k].t).unwrap();
        }
        let last = gt.last().unwrap();
        worst = worst.max((s.pos() - last.pos).norm());
        duration = duration.min(last.t - g0.t);
    }
    (worst, duration)
}

fn grad_objective(w: &NetworkWeights<f64>, x: &[f64], batch: usize, masks: &DropoutMasks<f64>, r: &[f64]) -> f64 {
    let pass = w.forward(x, batch, Mode::Train(masks)).unwrap();
    pass.output.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Per-tensor relative error `|an - fd| / max(|an|, |fd|, floor)` of the analytic
/// gradient of `sum(out * r)` in train mode with fixed dropout masks, batch of 2.
/// `per_tensor` samples that many entries per tensor; `None` checks all of them.
pub fn gradient_check(config: &NetworkConfig, seed: u64, per_tensor: Option<usize>, h: f64, floor: f64) -> Vec<(String, f64)> {
    let batch = 2;
    let mut rng = rng(seed);
    let w = NetworkWeights::<f64>::init(config, seed);
    let x: Vec<f64> = (0..config.in_channels * batch * 100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let masks = DropoutMasks::sample(config, batch, &mut rng);
    let r: Vec<f64> = (0..batch * config.outputs).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pass = w.forward(&x, batch, Mode::Train(&masks)).unwrap();
    let grads = w.backward(&pass, &r).unwrap();
    let mut out = Vec::new();
    for t in 0..w.trainable().len() {
        let n = w.tensors[t].data.len();
        let idx: Vec<usize> = match per_tensor {
            Some(k) if k < n => (0..k).map(|_| rng.random_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        let (mut diff, mut na, mut nf) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &idx {
            let mut wp = w.clone();
            wp.tensors[t].data[i] += h;
            let mut wm = w.clone();
            wm.tensors[t].data[i] -= h;
            let fd = (grad_objective(&wp, &x, batch, &masks, &r) - grad_objective(&wm, &x, batch, &masks, &r)) / (2.0 * h);
            let an = grads.tensors[t].data[i];
            diff += (an - fd).powi(2);
            na += an * an;
            nf += fd * fd;
        }
        out.push((w.tensors[t].name.clone(), diff.sqrt() / na.sqrt().max(nf.sqrt()).max(floor)));
    }
    out
}
