//! WGS-84 Earth model in the Earth-centred Earth-fixed frame.

use crate::error::{Error, Result};
use crate::geo::{so3_wedge, Mat3, Vec3};

/// Earth rotation rate about the ECEF z axis (rad/s).
pub const EARTH_RATE: f64 = 7.292115e-5;
pub const WGS84_A: f64 = 6_378_137.0;
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
pub const WGS84_GM: f64 = 3.986_004_418e14;
/// Normal gravity at the equator and at the poles (m/s^2).
pub const GAMMA_EQUATOR: f64 = 9.780_325_335_9;
pub const GAMMA_POLE: f64 = 9.832_184_937_8;
/// Positions closer to the Earth centre than this are rejected.
pub const MIN_RADIUS: f64 = 6.2e6;

const GRADIENT_STEP: f64 = 10.0;

pub fn earth_rate_vector() -> Vec3 {
    Vec3::new(0.0, 0.0, EARTH_RATE)
}

/// Skew matrix of the Earth rate, the `Omega` in `Omega x v`.
pub fn earth_rate_skew() -> Mat3 {
    so3_wedge(&earth_rate_vector())
}

fn b_axis() -> f64 {
    WGS84_A * (1.0 - WGS84_F)
}

fn e2() -> f64 {
    WGS84_F * (2.0 - WGS84_F)
}

/// Geodetic latitude, longitude (rad) and ellipsoidal height (m), closed form.
pub fn ecef_to_geodetic(p: &Vec3) -> (f64, f64, f64) {
    let a = WGS84_A;
    let b = b_axis();
    let e2 = e2();
    let ep2 = (a * a - b * b) / (b * b);
    let (x, y, z) = (p.x, p.y, p.z);
    let r = x.hypot(y);
    let f = 54.0 * b * b * z * z;
    let g = r * r + (1.0 - e2) * z * z - e2 * (a * a - b * b);
    let c = e2 * e2 * f * r * r / (g * g * g);
    let s = (1.0 + c + (c * c + 2.0 * c).sqrt()).cbrt();
    let k = s + 1.0 / s + 1.0;
    let pp = f / (3.0 * k * k * g * g);
    let q = (1.0 + 2.0 * e2 * e2 * pp).sqrt();
    let r0 = -pp * e2 * r / (1.0 + q)
        + (0.5 * a * a * (1.0 + 1.0 / q) - pp * (1.0 - e2) * z * z / (q * (1.0 + q))
            - 0.5 * pp * r * r)
            .sqrt();
    let t = r - e2 * r0;
    let u = (t * t + z * z).sqrt();
    let v = (t * t + (1.0 - e2) * z * z).sqrt();
    let z0 = b * b * z / (a * v);
    let h = u * (1.0 - b * b / (a * v));
    let lat = (z + ep2 * z0).atan2(r);
    let lon = y.atan2(x);
    (lat, lon, h)
}

pub fn geodetic_to_ecef(lat: f64, lon: f64, h: f64) -> Vec3 {
    let e2 = e2();
    let (sl, cl) = lat.sin_cos();
    let n = WGS84_A / (1.0 - e2 * sl * sl).sqrt();
    Vec3::new(
        (n + h) * cl * lon.cos(),
        (n + h) * cl * lon.sin(),
        (n * (1.0 - e2) + h) * sl,
    )
}

/// Rotation from local north-east-down axes to ECEF at the given latitude/longitude.
pub fn ned_to_ecef(lat: f64, lon: f64) -> Mat3 {
    let (sl, cl) = lat.sin_cos();
    let (so, co) = lon.sin_cos();
    Mat3::new(
        -sl * co, -so, -cl * co, //
        -sl * so, co, -cl * so, //
        cl, 0.0, -sl,
    )
}

fn normal_gravity(p: &Vec3) -> Vec3 {
    let (lat, lon, h) = ecef_to_geodetic(p);
    let s2 = lat.sin().powi(2);
    let e2 = e2();
    let k = b_axis() * GAMMA_POLE / (WGS84_A * GAMMA_EQUATOR) - 1.0;
    let m = EARTH_RATE * EARTH_RATE * WGS84_A * WGS84_A * b_axis() / WGS84_GM;
    let gamma0 = GAMMA_EQUATOR * (1.0 + k * s2) / (1.0 - e2 * s2).sqrt();
    let gamma = gamma0
        * (1.0 - 2.0 / WGS84_A * (1.0 + WGS84_F + m - 2.0 * WGS84_F * s2) * h
            + 3.0 * h * h / (WGS84_A * WGS84_A));
    let (sl, cl) = lat.sin_cos();
    let up = Vec3::new(cl * lon.cos(), cl * lon.sin(), sl);
    -up * gamma
}

fn check_radius(p: &Vec3) -> Result<()> {
    if !p.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteInput("position"));
    }
    let r = p.norm();
    if r <= MIN_RADIUS {
        return Err(Error::BelowEarthSurface(r));
    }
    Ok(())
}

/// Effective (plumb-bob) gravity: mass attraction plus the centrifugal term,
/// WGS-84 normal gravity with the second-order height correction.
pub fn gravity_ecef(p: &Vec3) -> Result<Vec3> {
    check_radius(p)?;
    Ok(normal_gravity(p))
}

/// Mass attraction only: effective gravity with the centrifugal term removed.
pub fn gravitation_ecef(p: &Vec3) -> Result<Vec3> {
    let w = earth_rate_skew();
    Ok(gravity_ecef(p)? + w * (w * p))
}

/// Jacobian of [`gravity_ecef`] with respect to position, by central differences.
pub fn gravity_gradient(p: &Vec3) -> Result<Mat3> {
    check_radius(p)?;
    let mut grad = Mat3::zeros();
    for j in 0..3 {
        let mut d = Vec3::zeros();
        d[j] = GRADIENT_STEP;
        let col = (normal_gravity(&(p + d)) - normal_gravity(&(p - d))) / (2.0 * GRADIENT_STEP);
        grad.set_column(j, &col);
    }
    Ok(grad)
}
