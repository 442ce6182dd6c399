//! SO(3) and the extended pose group SE2(3).
//!
//! Group elements are 5x5 matrices `[[R, v, p], [0, 1, 0], [0, 0, 1]]`. Tangent
//! vectors are ordered `(theta, v, p)`.

use nalgebra::{Matrix3, Matrix5, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat5 = Matrix5<f64>;
pub type Vec9 = SVector<f64, 9>;
pub type Mat9 = SMatrix<f64, 9, 9>;

/// Below this angle the trigonometric coefficients switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-6;
/// `so3_log` refuses rotations whose trace is within this margin of -1.
const NEAR_PI_TRACE: f64 = 1e-6;

pub fn so3_wedge(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn so3_vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// A rotation matrix. Construction through [`Rot3::from_matrix`] validates
/// orthonormality; the group operations keep it within rounding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot3(Mat3);

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Mat3::identity())
    }

    pub fn from_matrix(m: Mat3) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteInput("rotation matrix"));
        }
        let orth = (m.transpose() * m - Mat3::identity()).norm();
        if orth > 1e-6 || m.determinant() < 0.0 {
            return Err(Error::NotInGroup(format!(
                "rotation with orthogonality defect {orth:e}"
            )));
        }
        Ok(Rot3(m))
    }

    /// Wraps a matrix without checking it; for callers that built it from group operations.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rot3(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rot3(self.0.transpose())
    }

    pub fn exp(w: &Vec3) -> Self {
        so3_exp(w)
    }

    pub fn log(&self) -> Result<Vec3> {
        so3_log(self)
    }

    /// Projects back onto SO(3) via SVD to remove accumulated drift.
    pub fn renormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Rot3(r)
    }
}

impl std::ops::Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: Rot3) -> Rot3 {
        Rot3(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vec3> for Rot3 {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Coefficients `(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)`.
fn trig_coeffs(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let s = theta.sin();
        let t2 = theta * theta;
        let half = (0.5 * theta).sin();
        (s / theta, 2.0 * half * half / t2, (theta - s) / (t2 * theta))
    }
}

pub fn so3_exp(w: &Vec3) -> Rot3 {
    let (a, b, _) = trig_coeffs(w.norm());
    let k = so3_wedge(w);
    Rot3(Mat3::identity() + k * a + k * k * b)
}

/// Principal logarithm. Fails when the angle is within `~1e-3` rad of pi.
pub fn so3_log(r: &Rot3) -> Result<Vec3> {
    let m = r.matrix();
    let tr = m.trace();
    if !tr.is_finite() {
        return Err(Error::NonFiniteInput("rotation matrix"));
    }
    if tr <= -1.0 + NEAR_PI_TRACE {
        return Err(Error::AngleNearPi);
    }
    let skew = (m - m.transpose()) * 0.5;
    let axis = so3_vee(&skew);
    let theta = axis.norm().atan2((tr - 1.0) / 2.0);
    let scale = if theta < SMALL_ANGLE {
        1.0 + theta * theta / 6.0
    } else {
        theta / theta.sin()
    };
    Ok(axis * scale)
}

/// Left Jacobian `J_l(phi) = I + (1 - cos)/t^2 phi^ + (t - sin)/t^3 (phi^)^2`.
pub fn so3_left_jacobian(phi: &Vec3) -> Mat3 {
    let (_, b, c) = trig_coeffs(phi.norm());
    let k = so3_wedge(phi);
    Mat3::identity() + k * b + k * k * c
}

/// Right Jacobian, `J_r(phi) = J_l(-phi)`.
pub fn so3_right_jacobian(phi: &Vec3) -> Mat3 {
    so3_left_jacobian(&-phi)
}

pub fn so3_left_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = so3_wedge(phi);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let (s, co) = theta.sin_cos();
        1.0 / (theta * theta) - (1.0 + co) / (2.0 * theta * s)
    };
    Mat3::identity() - k * 0.5 + k * k * c
}

pub fn so3_right_jacobian_inv(phi: &Vec3) -> Mat3 {
    so3_left_jacobian_inv(&-phi)
}

pub fn vec9_theta(xi: &Vec9) -> Vec3 {
    xi.fixed_rows::<3>(0).into_owned()
}

pub fn vec9_vel(xi: &Vec9) -> Vec3 {
    xi.fixed_rows::<3>(3).into_owned()
}

pub fn vec9_pos(xi: &Vec9) -> Vec3 {
    xi.fixed_rows::<3>(6).into_owned()
}

pub fn vec9_from_parts(theta: &Vec3, vel: &Vec3, pos: &Vec3) -> Vec9 {
    let mut xi = Vec9::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(theta);
    xi.fixed_rows_mut::<3>(3).copy_from(vel);
    xi.fixed_rows_mut::<3>(6).copy_from(pos);
    xi
}

/// Maps a tangent vector to its 5x5 Lie algebra matrix.
pub fn vec9_wedge(xi: &Vec9) -> Mat5 {
    let mut m = Mat5::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&so3_wedge(&vec9_theta(xi)));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&vec9_vel(xi));
    m.fixed_view_mut::<3, 1>(0, 4).copy_from(&vec9_pos(xi));
    m
}

pub fn vec9_vee(m: &Mat5) -> Vec9 {
    let theta = so3_vee(&m.fixed_view::<3, 3>(0, 0).into_owned());
    let vel = m.fixed_view::<3, 1>(0, 3).into_owned();
    let pos = m.fixed_view::<3, 1>(0, 4).into_owned();
    vec9_from_parts(&theta, &vel, &pos)
}

/// An element of SE2(3): attitude, velocity and position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupElement {
    pub rot: Rot3,
    pub vel: Vec3,
    pub pos: Vec3,
}

impl GroupElement {
    pub fn new(rot: Rot3, vel: Vec3, pos: Vec3) -> Self {
        GroupElement { rot, vel, pos }
    }

    pub fn identity() -> Self {
        GroupElement::new(Rot3::identity(), Vec3::zeros(), Vec3::zeros())
    }

    pub fn to_matrix(&self) -> Mat5 {
        let mut m = Mat5::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rot.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.vel);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.pos);
        m
    }

    pub fn from_matrix(m: &Mat5) -> Result<Self> {
        let bottom = m.fixed_view::<2, 5>(3, 0);
        let expected = Mat5::identity().fixed_view::<2, 5>(3, 0).into_owned();
        if (bottom - expected).norm() > 1e-9 {
            return Err(Error::NotInGroup("bottom rows differ from [0 I]".into()));
        }
        let rot = Rot3::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(GroupElement::new(
            rot,
            m.fixed_view::<3, 1>(0, 3).into_owned(),
            m.fixed_view::<3, 1>(0, 4).into_owned(),
        ))
    }

    /// Closed-form exponential: `R = exp(theta)`, `v = J_l xi_v`, `p = J_l xi_p`.
    pub fn exp(xi: &Vec9) -> Self {
        let theta = vec9_theta(xi);
        let jl = so3_left_jacobian(&theta);
        GroupElement::new(so3_exp(&theta), jl * vec9_vel(xi), jl * vec9_pos(xi))
    }

    pub fn log(&self) -> Result<Vec9> {
        let theta = so3_log(&self.rot)?;
        let jinv = so3_left_jacobian_inv(&theta);
        Ok(vec9_from_parts(&theta, &(jinv * self.vel), &(jinv * self.pos)))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.inverse();
        GroupElement::new(rt, -(rt * self.vel), -(rt * self.pos))
    }

    pub fn compose(&self, rhs: &GroupElement) -> Self {
        GroupElement::new(
            self.rot * rhs.rot,
            self.rot * rhs.vel + self.vel,
            self.rot * rhs.pos + self.pos,
        )
    }

    /// Adjoint `Ad_X` so that `X exp(xi) X^-1 = exp(Ad_X xi)`.
    pub fn adjoint(&self) -> Mat9 {
        let r = self.rot.matrix();
        let mut a = Mat9::zeros();
        for i in 0..3 {
            a.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(r);
        }
        a.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(so3_wedge(&self.vel) * r));
        a.fixed_view_mut::<3, 3>(6, 0)
            .copy_from(&(so3_wedge(&self.pos) * r));
        a
    }

    pub fn is_finite(&self) -> bool {
        self.rot.matrix().iter().all(|x| x.is_finite())
            && self.vel.iter().all(|x| x.is_finite())
            && self.pos.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Mul for GroupElement {
    type Output = GroupElement;
    fn mul(self, rhs: GroupElement) -> GroupElement {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Truncated power series of the matrix exponential, independent of the closed form.
    fn expm_series(m: &Mat5, terms: usize) -> Mat5 {
        let mut sum = Mat5::identity();
        let mut term = Mat5::identity();
        for k in 1..terms {
            term = term * m / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn wedge_layout() {
        let xi = Vec9::from_iterator((1..=9).map(|i| i as f64));
        let m = vec9_wedge(&xi);
        let expected = Mat5::from_row_slice(&[
            0.0, -3.0, 2.0, 4.0, 7.0, //
            3.0, 0.0, -1.0, 5.0, 8.0, //
            -2.0, 1.0, 0.0, 6.0, 9.0, //
            0.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, 0.0,
        ]);
        assert_eq!(m, expected);
        assert_eq!(vec9_vee(&m), xi);
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = so3_exp(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(*r.matrix(), expected, epsilon = 1e-15);
    }

    #[test]
    fn group_exp_pure_translation() {
        let xi = vec9_from_parts(
            &Vec3::zeros(),
            &Vec3::new(1.0, 2.0, 3.0),
            &Vec3::new(4.0, 5.0, 6.0),
        );
        let g = GroupElement::exp(&xi);
        assert_eq!(*g.rot.matrix(), Mat3::identity());
        assert_eq!(g.vel, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(g.pos, Vec3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn right_jacobian_oracle() {
        // J_r(phi) = I - (1 - cos)/t^2 phi^ + (t - sin)/t^3 (phi^)^2, written out directly.
        let phi = Vec3::new(0.3, -0.2, 0.5);
        let t = phi.norm();
        let k = so3_wedge(&phi);
        let oracle = Mat3::identity() - k * ((1.0 - t.cos()) / (t * t))
            + k * k * ((t - t.sin()) / (t * t * t));
        assert_relative_eq!(so3_right_jacobian(&phi), oracle, epsilon = 1e-15);
    }

    #[test]
    fn right_jacobian_is_derivative_of_exp() {
        // exp(phi + d) ~= exp(phi) exp(J_r(phi) d)
        let phi = Vec3::new(0.4, 0.1, -0.7);
        let jr = so3_right_jacobian(&phi);
        let h = 1e-6;
        for i in 0..3 {
            let mut d = Vec3::zeros();
            d[i] = h;
            let plus = so3_exp(&(phi + d));
            let minus = so3_exp(&(phi - d));
            let diff = so3_log(&(so3_exp(&phi).inverse() * plus)).unwrap()
                - so3_log(&(so3_exp(&phi).inverse() * minus)).unwrap();
            assert_relative_eq!(diff / (2.0 * h), jr.column(i).into_owned(), epsilon = 1e-8);
        }
    }

    #[test]
    fn log_near_pi_fails() {
        let r = so3_exp(&Vec3::new(std::f64::consts::PI - 1e-5, 0.0, 0.0));
        assert!(matches!(so3_log(&r), Err(Error::AngleNearPi)));
        let r = so3_exp(&Vec3::new(0.0, std::f64::consts::PI, 0.0));
        assert!(matches!(so3_log(&r), Err(Error::AngleNearPi)));
    }

    #[test]
    fn small_angle_branches_are_continuous() {
        for &t in &[1e-12, 1e-9, 1e-7, 0.99e-6, 1.01e-6, 1e-5] {
            let phi = Vec3::new(t, -0.5 * t, 0.25 * t);
            let r = so3_exp(&phi);
            let series = expm_series(&vec9_wedge(&vec9_from_parts(&phi, &Vec3::zeros(), &Vec3::zeros())), 10);
            assert_relative_eq!(
                *r.matrix(),
                series.fixed_view::<3, 3>(0, 0).into_owned(),
                epsilon = 1e-16
            );
            assert_relative_eq!(so3_log(&r).unwrap(), phi, max_relative = 1e-9);
            let jl = so3_left_jacobian(&phi);
            assert_relative_eq!(so3_left_jacobian_inv(&phi) * jl, Mat3::identity(), epsilon = 1e-14);
        }
    }

    #[test]
    fn compose_inverse_is_identity() {
        let xi = Vec9::from_iterator((0..9).map(|i| 0.1 * i as f64 - 0.3));
        let g = GroupElement::exp(&xi);
        let e = g.compose(&g.inverse());
        assert_relative_eq!(e.to_matrix(), Mat5::identity(), epsilon = 1e-14);
    }

    #[test]
    fn adjoint_matches_conjugation() {
        let x = GroupElement::exp(&Vec9::from_iterator((0..9).map(|i| 0.2 * i as f64 - 0.5)));
        let xi = Vec9::from_iterator((0..9).map(|i| 0.01 * (i as f64 + 1.0)));
        let lhs = (x * GroupElement::exp(&xi) * x.inverse()).log().unwrap();
        assert_relative_eq!(lhs, x.adjoint() * xi, epsilon = 1e-12);
    }

    #[test]
    fn from_matrix_rejects_bad_rows() {
        let mut m = Mat5::identity();
        m[(3, 0)] = 0.5;
        assert!(GroupElement::from_matrix(&m).is_err());
        let mut m = Mat5::identity();
        m[(0, 0)] = 2.0;
        assert!(GroupElement::from_matrix(&m).is_err());
    }
}
