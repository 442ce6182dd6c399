//! Right-invariant Kalman filter and the Euclidean error-state EKF baseline.

use crate::dynamics::{
    build_f, build_f_euclidean, dvl_embed, expm15, measurement_matrix, projection,
    strapdown_step, symmetrize, DvlSample, ImuSample, Mat15, Mat15x3, Mat3x15, NavState, Vec15,
};
use crate::error::{Error, Result};
use crate::geo::{so3_exp, so3_wedge, GroupElement, Mat3, Vec3, Vec9};
use nalgebra::Vector5;

/// Covariance traces above this are treated as divergence.
pub const BLOWUP_TRACE: f64 = 1e12;
/// Innovation covariances with a larger condition number are rejected.
pub const MAX_INNOVATION_COND: f64 = 1e12;

/// State estimate with its 15x15 error covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub state: NavState,
    pub cov: Mat15,
}

impl Belief {
    pub fn new(state: NavState, cov: Mat15) -> Self {
        Belief { state, cov }
    }
}

/// Quantities produced by a measurement update.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRecord {
    pub innovation: Vec3,
    pub s: Mat3,
    pub gain: Mat15x3,
    /// `K r`, the correction applied to the state.
    pub correction: Vec15,
}

fn check_cov(p: &Mat15) -> Result<()> {
    let tr = p.trace();
    if !tr.is_finite() {
        return Err(Error::NonFiniteInput("covariance"));
    }
    if tr > BLOWUP_TRACE {
        return Err(Error::CovarianceBlowup(tr));
    }
    Ok(())
}

/// Propagates the state and covariance with a known transition matrix.
pub fn propagate_with_transition(
    b: &Belief,
    u: &ImuSample,
    dt: f64,
    phi: &Mat15,
    qd: &Mat15,
) -> Result<Belief> {
    let state = strapdown_step(&b.state, u, dt)?;
    let cov = symmetrize(&(phi * b.cov * phi.transpose() + qd));
    check_cov(&cov)?;
    Ok(Belief::new(state, cov))
}

/// Invariant-filter transition matrix at the current estimate.
pub fn ikf_transition(s: &NavState, dt: f64) -> Result<Mat15> {
    Ok(expm15(&(build_f(s)? * dt)))
}

pub fn ikf_propagate(b: &Belief, u: &ImuSample, dt: f64, qd: &Mat15) -> Result<Belief> {
    let phi = ikf_transition(&b.state, dt)?;
    propagate_with_transition(b, u, dt, &phi, qd)
}

/// Right-invariant DVL innovation `Pi(X_hat Y - b) = C_hat v_body - v_hat`.
pub fn ikf_innovation(b: &Belief, z: &DvlSample) -> Vec3 {
    let y = dvl_embed(&z.vel_body);
    let bvec = Vector5::new(0.0, 0.0, 0.0, -1.0, 0.0);
    projection() * (b.state.x.to_matrix() * y - bvec)
}

fn inverse_checked(s: &Mat3) -> Result<Mat3> {
    if !s.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteInput("innovation covariance"));
    }
    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > MAX_INNOVATION_COND {
        return Err(Error::SingularInnovationCov(cond));
    }
    s.try_inverse().ok_or(Error::SingularInnovationCov(cond))
}

/// Generic Kalman correction for a linear observation `r ~ H xi + noise(rn)`.
fn kalman_gain(p: &Mat15, h: &Mat3x15, rn: &Mat3) -> Result<(Mat3, Mat15x3, Mat15)> {
    let s = h * p * h.transpose() + rn;
    let s = (s + s.transpose()) * 0.5;
    let sinv = inverse_checked(&s)?;
    let k = p * h.transpose() * sinv;
    let ikh = Mat15::identity() - k * h;
    // Joseph form: algebraically (I - KH) P, numerically PSD.
    let cov = symmetrize(&(ikh * p * ikh.transpose() + k * rn * k.transpose()));
    Ok((s, k, cov))
}

/// Invariant update with DVL noise covariance `r` (body frame).
pub fn ikf_update(b: &Belief, z: &DvlSample, r: &Mat3) -> Result<(Belief, UpdateRecord)> {
    if !z.vel_body.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteInput("DVL sample"));
    }
    let c = b.state.rot();
    let h = measurement_matrix();
    let rn = c * r * c.transpose();
    let (s, k, cov) = kalman_gain(&b.cov, &h, &rn)?;
    let innovation = ikf_innovation(b, z);
    let zeta = k * innovation;
    let xi: Vec9 = zeta.fixed_rows::<9>(0).into_owned();
    let x = GroupElement::exp(&-xi) * b.state.x;
    let state = NavState::new(
        x,
        b.state.bias_gyro + zeta.fixed_rows::<3>(9),
        b.state.bias_accel + zeta.fixed_rows::<3>(12),
    );
    check_cov(&cov)?;
    Ok((
        Belief::new(state, cov),
        UpdateRecord { innovation, s, gain: k, correction: zeta },
    ))
}

pub fn ekf_transition(s: &NavState, u: &ImuSample, dt: f64) -> Result<Mat15> {
    Ok(expm15(&(build_f_euclidean(s, u)? * dt)))
}

pub fn ekf_propagate(b: &Belief, u: &ImuSample, dt: f64, qd: &Mat15) -> Result<Belief> {
    let phi = ekf_transition(&b.state, u, dt)?;
    propagate_with_transition(b, u, dt, &phi, qd)
}

/// Euclidean innovation `y - C_hat^T v_hat` in the body frame.
pub fn ekf_innovation(b: &Belief, z: &DvlSample) -> Vec3 {
    z.vel_body - b.state.rot().transpose() * b.state.vel()
}

/// Jacobian of `C^T v` with respect to `(dtheta, dv)` for errors `C_hat = exp(dtheta) C`, `dv = v_hat - v`.
pub fn ekf_measurement_matrix(s: &NavState) -> Mat3x15 {
    let ct = s.rot().transpose();
    let mut h = Mat3x15::zeros();
    h.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-ct * so3_wedge(&s.vel())));
    h.fixed_view_mut::<3, 3>(0, 3).copy_from(&-ct);
    h
}

pub fn ekf_update(b: &Belief, z: &DvlSample, r: &Mat3) -> Result<(Belief, UpdateRecord)> {
    if !z.vel_body.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteInput("DVL sample"));
    }
    let h = ekf_measurement_matrix(&b.state);
    let (s, k, cov) = kalman_gain(&b.cov, &h, r)?;
    let innovation = ekf_innovation(b, z);
    let dx = k * innovation;
    let dtheta: Vec3 = dx.fixed_rows::<3>(0).into_owned();
    let rot = so3_exp(&-dtheta) * b.state.x.rot;
    let x = GroupElement::new(
        rot,
        b.state.vel() - dx.fixed_rows::<3>(3),
        b.state.pos() - dx.fixed_rows::<3>(6),
    );
    let state = NavState::new(
        x,
        b.state.bias_gyro + dx.fixed_rows::<3>(9),
        b.state.bias_accel + dx.fixed_rows::<3>(12),
    );
    check_cov(&cov)?;
    Ok((
        Belief::new(state, cov),
        UpdateRecord { innovation, s, gain: k, correction: dx },
    ))
}

/// Right-invariant error `(log(X_hat X^-1), b - b_hat)` of an estimate against the truth.
pub fn invariant_error(est: &NavState, truth: &NavState) -> Result<Vec15> {
    let eta = est.x * truth.x.inverse();
    let xi = eta.log()?;
    let mut e = Vec15::zeros();
    e.fixed_rows_mut::<9>(0).copy_from(&xi);
    e.fixed_rows_mut::<3>(9)
        .copy_from(&(truth.bias_gyro - est.bias_gyro));
    e.fixed_rows_mut::<3>(12)
        .copy_from(&(truth.bias_accel - est.bias_accel));
    Ok(e)
}

/// Euclidean error `(log(C_hat C^T), v_hat - v, p_hat - p, b - b_hat)`.
pub fn euclidean_error(est: &NavState, truth: &NavState) -> Result<Vec15> {
    let dtheta = (est.x.rot * truth.x.rot.inverse()).log()?;
    let mut e = Vec15::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&dtheta);
    e.fixed_rows_mut::<3>(3).copy_from(&(est.vel() - truth.vel()));
    e.fixed_rows_mut::<3>(6).copy_from(&(est.pos() - truth.pos()));
    e.fixed_rows_mut::<3>(9)
        .copy_from(&(truth.bias_gyro - est.bias_gyro));
    e.fixed_rows_mut::<3>(12)
        .copy_from(&(truth.bias_accel - est.bias_accel));
    Ok(e)
}
