//! Strapdown mechanisation in ECEF and the linearised error systems.

pub mod earth;

use nalgebra::{SMatrix, SVector, Vector5};

use crate::error::{Error, Result};
use crate::geo::{so3_exp, so3_wedge, GroupElement, Mat3, Mat5, Rot3, Vec3};

pub use earth::{
    earth_rate_skew, earth_rate_vector, gravitation_ecef, gravity_ecef, gravity_gradient,
    EARTH_RATE,
};

pub type Vec12 = SVector<f64, 12>;
pub type Vec15 = SVector<f64, 15>;
pub type Mat15 = SMatrix<f64, 15, 15>;
pub type Mat15x12 = SMatrix<f64, 15, 12>;
pub type Mat3x15 = SMatrix<f64, 3, 15>;
pub type Mat3x5 = SMatrix<f64, 3, 5>;
pub type Mat15x3 = SMatrix<f64, 15, 3>;

pub const MAX_STEP: f64 = 0.1;

/// Navigation state: the group element plus gyro and accelerometer biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavState {
    pub x: GroupElement,
    pub bias_gyro: Vec3,
    pub bias_accel: Vec3,
}

impl NavState {
    pub fn new(x: GroupElement, bias_gyro: Vec3, bias_accel: Vec3) -> Self {
        NavState { x, bias_gyro, bias_accel }
    }

    pub fn rot(&self) -> &Mat3 {
        self.x.rot.matrix()
    }

    pub fn vel(&self) -> Vec3 {
        self.x.vel
    }

    pub fn pos(&self) -> Vec3 {
        self.x.pos
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.bias_gyro.iter().all(|x| x.is_finite())
            && self.bias_accel.iter().all(|x| x.is_finite())
    }
}

/// One IMU sample: body angular rate (rad/s) and specific force (m/s^2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vec3,
    pub accel: Vec3,
}

/// One DVL sample: velocity in the body frame (m/s).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DvlSample {
    pub t: f64,
    pub vel_body: Vec3,
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(Error::InvalidTimeStep(dt));
    }
    Ok(())
}

/// First-order strapdown step with bias-compensated inputs:
/// `R <- exp(-Omega dt) R exp(w dt)`, `v <- v + dt (R f - 2 Omega v + g(p))`, `p <- p + dt v`.
pub fn strapdown_step(s: &NavState, u: &ImuSample, dt: f64) -> Result<NavState> {
    check_step(dt)?;
    if !(u.gyro.iter().chain(u.accel.iter()).all(|x| x.is_finite())) {
        return Err(Error::NonFiniteInput("IMU sample"));
    }
    let w_ie = earth_rate_vector();
    let r = *s.rot();
    let gyro = u.gyro - s.bias_gyro;
    let accel = u.accel - s.bias_accel;
    let g = gravity_ecef(&s.pos())?;
    let rot = so3_exp(&(-w_ie * dt)) * s.x.rot * so3_exp(&(gyro * dt));
    let vel = s.vel() + (r * accel - 2.0 * w_ie.cross(&s.vel()) + g) * dt;
    let pos = s.pos() + s.vel() * dt;
    Ok(NavState::new(
        GroupElement::new(rot, vel, pos),
        s.bias_gyro,
        s.bias_accel,
    ))
}

/// Continuous-time derivative of `(R, v, p)` for constant bias-compensated inputs.
pub fn continuous_derivative(
    rot: &Mat3,
    vel: &Vec3,
    pos: &Vec3,
    gyro: &Vec3,
    accel: &Vec3,
) -> Result<(Mat3, Vec3, Vec3)> {
    let w = earth_rate_skew();
    let dr = rot * so3_wedge(gyro) - w * rot;
    let dv = rot * accel - 2.0 * w * vel + gravity_ecef(pos)?;
    Ok((dr, dv, *vel))
}

fn block(m: &mut Mat15, i: usize, j: usize, b: &Mat3) {
    m.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(b);
}

/// Right-invariant error dynamics matrix (15x15).
///
/// Error ordering is `(theta, v, p, b_gyro, b_accel)` with `eta = X_hat X^-1` and
/// `db = b - b_hat`. Built from a first-order expansion of the ECEF mechanisation,
/// including the gravity gradient `Gamma` which couples position error into velocity.
pub fn build_f(s: &NavState) -> Result<Mat15> {
    let c = *s.rot();
    let w = earth_rate_skew();
    let vx = so3_wedge(&s.vel());
    let px = so3_wedge(&s.pos());
    let g = gravity_ecef(&s.pos())?;
    let gamma = gravity_gradient(&s.pos())?;
    let mut f = Mat15::zeros();
    block(&mut f, 0, 0, &-w);
    block(&mut f, 0, 3, &c);
    block(&mut f, 1, 0, &(vx * w + so3_wedge(&g) - gamma * px));
    block(&mut f, 1, 1, &(-2.0 * w));
    block(&mut f, 1, 2, &gamma);
    block(&mut f, 1, 3, &(vx * c));
    block(&mut f, 1, 4, &c);
    block(&mut f, 2, 0, &(-px * w));
    block(&mut f, 2, 1, &Mat3::identity());
    block(&mut f, 2, 3, &(px * c));
    Ok(f)
}

/// Noise input matrix (15x12) for noise ordered `(gyro, accel, gyro bias walk, accel bias walk)`.
pub fn build_g(s: &NavState) -> Mat15x12 {
    let c = *s.rot();
    let mut g = Mat15x12::zeros();
    let mut put = |i: usize, j: usize, b: &Mat3| {
        g.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(b);
    };
    put(0, 0, &c);
    put(1, 0, &(so3_wedge(&s.vel()) * c));
    put(1, 1, &c);
    put(2, 0, &(so3_wedge(&s.pos()) * c));
    put(3, 2, &Mat3::identity());
    put(4, 3, &Mat3::identity());
    g
}

/// Euclidean error-state dynamics (15x15) for errors
/// `R_hat = exp(dtheta) R`, `dv = v_hat - v`, `dp = p_hat - p`, `db = b - b_hat`.
pub fn build_f_euclidean(s: &NavState, u: &ImuSample) -> Result<Mat15> {
    let c = *s.rot();
    let w = earth_rate_skew();
    let force = c * (u.accel - s.bias_accel);
    let gamma = gravity_gradient(&s.pos())?;
    let mut f = Mat15::zeros();
    block(&mut f, 0, 0, &-w);
    block(&mut f, 0, 3, &c);
    block(&mut f, 1, 0, &-so3_wedge(&force));
    block(&mut f, 1, 1, &(-2.0 * w));
    block(&mut f, 1, 2, &gamma);
    block(&mut f, 1, 4, &c);
    block(&mut f, 2, 1, &Mat3::identity());
    Ok(f)
}

pub fn build_g_euclidean(s: &NavState) -> Mat15x12 {
    let c = *s.rot();
    let mut g = Mat15x12::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&c);
    g.fixed_view_mut::<3, 3>(3, 3).copy_from(&c);
    g.fixed_view_mut::<3, 3>(9, 6).copy_from(&Mat3::identity());
    g.fixed_view_mut::<3, 3>(12, 9).copy_from(&Mat3::identity());
    g
}

/// Linear map from Euclidean errors to right-invariant errors, valid to first order:
/// `theta = dtheta`, `eta_v = dv + v^ dtheta`, `eta_p = dp + p^ dtheta`.
pub fn euclidean_to_invariant(s: &NavState) -> Mat15 {
    let mut t = Mat15::identity();
    block(&mut t, 1, 0, &so3_wedge(&s.vel()));
    block(&mut t, 2, 0, &so3_wedge(&s.pos()));
    t
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
pub fn expm15(a: &Mat15) -> Mat15 {
    let norm = a.abs().row_sum().max();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings as i32);
    let mut sum = Mat15::identity();
    let mut term = Mat15::identity();
    for k in 1..=14 {
        term = term * scaled / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Diagonal continuous noise density as a 12x12 matrix.
pub fn diag12(q: &Vec12) -> SMatrix<f64, 12, 12> {
    SMatrix::<f64, 12, 12>::from_diagonal(q)
}

/// Trapezoidal discrete noise: `Qd = dt/2 (Phi Q Phi^T + Q)` with `Q = G Qc G^T`.
pub fn discretize_noise(phi: &Mat15, q_cont: &Mat15, dt: f64) -> Mat15 {
    let qd = (phi * q_cont * phi.transpose() + q_cont) * (0.5 * dt);
    symmetrize(&qd)
}

/// Transition matrix and discrete process noise for a step of length `dt`.
pub fn discretize(f: &Mat15, g: &Mat15x12, q_cont: &Vec12, dt: f64) -> Result<(Mat15, Mat15)> {
    check_step(dt)?;
    let phi = expm15(&(f * dt));
    let q = g * diag12(q_cont) * g.transpose();
    Ok((phi, discretize_noise(&phi, &q, dt)))
}

pub fn symmetrize(m: &Mat15) -> Mat15 {
    (m + m.transpose()) * 0.5
}

/// DVL measurement embedded in homogeneous form `(v_b, -1, 0)`.
pub fn dvl_embed(v_body: &Vec3) -> Vector5<f64> {
    Vector5::new(v_body.x, v_body.y, v_body.z, -1.0, 0.0)
}

/// Measurement noise lifted to the 5-dimensional embedding.
pub fn augment_noise(r: &Mat3) -> Mat5 {
    let mut m = Mat5::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m
}

/// Selects the first three rows of a 5-vector.
pub fn projection() -> Mat3x5 {
    Mat3x5::identity()
}

/// Observation matrix of the invariant DVL innovation, `[0 -I 0 0 0]`.
pub fn measurement_matrix() -> Mat3x15 {
    let mut h = Mat3x15::zeros();
    h.fixed_view_mut::<3, 3>(0, 3).copy_from(&-Mat3::identity());
    h
}

/// State used by the tests: a deterministic but generic point near the Earth surface.
#[doc(hidden)]
pub fn sample_state(rot: Vec3, vel: Vec3, lat: f64, lon: f64, h: f64) -> NavState {
    NavState::new(
        GroupElement::new(Rot3::exp(&rot), vel, earth::geodetic_to_ecef(lat, lon, h)),
        Vec3::zeros(),
        Vec3::zeros(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn state() -> NavState {
        sample_state(Vec3::new(0.1, -0.4, 1.2), Vec3::new(3.0, -1.0, 0.5), 0.57, 0.61, 10.0)
    }

    #[test]
    fn f_structure() {
        let s = state();
        let f = build_f(&s).unwrap();
        assert_eq!(f.fixed_view::<3, 3>(0, 9).into_owned(), *s.rot());
        assert_eq!(f.fixed_view::<3, 3>(6, 3).into_owned(), Mat3::identity());
        assert!(f.rows(9, 6).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn stationary_velocity_stays_put() {
        // A body at rest in ECEF feels -g and turns with the Earth.
        let s = state();
        let g = gravity_ecef(&s.pos()).unwrap();
        let c = *s.rot();
        let u = ImuSample {
            t: 0.0,
            gyro: c.transpose() * earth_rate_vector(),
            accel: -(c.transpose() * g),
        };
        let s0 = NavState { x: GroupElement::new(s.x.rot, Vec3::zeros(), s.pos()), ..s };
        let mut x = s0;
        for _ in 0..1000 {
            x = strapdown_step(&x, &u, 0.01).unwrap();
        }
        assert!(x.vel().norm() < 1e-9);
        assert!((x.pos() - s0.pos()).norm() < 1e-9);
        assert_relative_eq!(*x.rot(), *s0.rot(), epsilon = 1e-12);
    }

    #[test]
    fn step_rejects_bad_dt() {
        let s = state();
        let u = ImuSample { t: 0.0, gyro: Vec3::zeros(), accel: Vec3::zeros() };
        assert!(matches!(strapdown_step(&s, &u, 0.0), Err(Error::InvalidTimeStep(_))));
        assert!(matches!(strapdown_step(&s, &u, 0.2), Err(Error::InvalidTimeStep(_))));
        let bad = ImuSample { gyro: Vec3::new(f64::NAN, 0.0, 0.0), ..u };
        assert!(matches!(strapdown_step(&s, &bad, 0.01), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn expm_matches_series_and_inverse() {
        let s = state();
        let f = build_f(&s).unwrap();
        let phi = expm15(&(f * 0.01));
        let back = expm15(&(f * -0.01));
        let defect = (phi * back - Mat15::identity()).norm();
        assert!(defect < 1e-14 * phi.norm() * back.norm(), "defect {defect:e}");
        // Direct series at a tiny step.
        let a = f * 1e-4;
        let series = Mat15::identity() + a + a * a / 2.0 + a * a * a / 6.0;
        assert_relative_eq!(expm15(&a), series, epsilon = 1e-11);
    }

    #[test]
    fn discretize_is_symmetric_psd() {
        let s = state();
        let q = Vec12::from_iterator((0..12).map(|i| 1e-6 * (i as f64 + 1.0)));
        let (_, qd) = discretize(&build_f(&s).unwrap(), &build_g(&s), &q, 0.01).unwrap();
        assert_eq!(qd, qd.transpose());
        let eig = qd.symmetric_eigenvalues();
        assert!(eig.min() > -1e-12 * eig.max());
    }

    #[test]
    fn embedding() {
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(dvl_embed(&v), Vector5::new(1.0, 2.0, 3.0, -1.0, 0.0));
        assert_eq!(projection() * dvl_embed(&v), v);
        let h = measurement_matrix();
        assert_eq!(h.fixed_view::<3, 3>(0, 3).into_owned(), -Mat3::identity());
    }
}
