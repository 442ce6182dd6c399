//! Innovation-based process-noise estimation and the network/innovation blend.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{discretize_noise, Mat15, Mat15x12, Vec12, Vec15};
use crate::error::{Error, Result};
use crate::geo::Vec3;

/// Fixed-capacity FIFO of recent filter corrections `K r` and raw innovations.
#[derive(Clone, Debug)]
pub struct InnovBuffer {
    capacity: usize,
    corrections: VecDeque<Vec15>,
    innovations: VecDeque<Vec3>,
}

impl InnovBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        InnovBuffer {
            capacity,
            corrections: VecDeque::with_capacity(capacity),
            innovations: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, correction: Vec15, innovation: Vec3) {
        if self.corrections.len() == self.capacity {
            self.corrections.pop_front();
            self.innovations.pop_front();
        }
        self.corrections.push_back(correction);
        self.innovations.push_back(innovation);
    }

    pub fn len(&self) -> usize {
        self.corrections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corrections.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity
    }

    pub fn corrections(&self) -> impl Iterator<Item = &Vec15> {
        self.corrections.iter()
    }

    pub fn innovations(&self) -> impl Iterator<Item = &Vec3> {
        self.innovations.iter()
    }
}

fn outer_product_mean(buf: &InnovBuffer) -> Result<Mat15> {
    if !buf.is_full() {
        return Err(Error::BufferNotFull { have: buf.len(), need: buf.capacity() });
    }
    let mut q = Mat15::zeros();
    for nu in buf.corrections() {
        q += nu * nu.transpose();
    }
    Ok(q / buf.len() as f64)
}

/// `(1/N) sum nu nu^T` over the invariant-filter corrections.
pub fn q_innov_invariant(buf: &InnovBuffer) -> Result<Mat15> {
    outer_product_mean(buf)
}

/// Innovation estimate with the covariance-difference terms; may be indefinite,
/// see [`clamp_psd`].
pub fn q_innov_full(buf: &InnovBuffer, p_post: &Mat15, phi: &Mat15, p_prev: &Mat15) -> Result<Mat15> {
    Ok(outer_product_mean(buf)? + p_post - phi * p_prev * phi.transpose())
}

/// Same outer-product mean for the Euclidean filter's corrections `K dy`.
pub fn q_innov_euclidean(buf: &InnovBuffer) -> Result<Mat15> {
    outer_product_mean(buf)
}

/// Symmetrises and sets negative eigenvalues to zero.
pub fn clamp_psd(m: &Mat15) -> Mat15 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|x| x.max(0.0));
    let out = eig.eigenvectors * Mat15::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (out + out.transpose()) * 0.5
}

/// Which innovation-based law refreshes the adaptive estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AdaptiveLaw {
    #[default]
    Simplified,
    Full,
}

impl fmt::Display for AdaptiveLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptiveLaw::Simplified => "simplified",
            AdaptiveLaw::Full => "full",
        })
    }
}

impl FromStr for AdaptiveLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplified" => Ok(AdaptiveLaw::Simplified),
            "full" => Ok(AdaptiveLaw::Full),
            other => Err(Error::Config(format!("unknown adaptive law `{other}`"))),
        }
    }
}

/// Blend weight and the fixed bias random-walk densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendConfig {
    pub lambda: f64,
    pub q_bias_gyro: Vec3,
    pub q_bias_accel: Vec3,
}

impl BlendConfig {
    pub fn new(lambda: f64, q_bias_gyro: Vec3, q_bias_accel: Vec3) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
        }
        Ok(BlendConfig { lambda, q_bias_gyro, q_bias_accel })
    }
}

/// Continuous noise densities `(gyro, accel, gyro bias, accel bias)` from sensor variances.
pub fn noise_densities(sensor: &[f64; 6], q_bias_gyro: &Vec3, q_bias_accel: &Vec3) -> Vec12 {
    let mut q = Vec12::zeros();
    for i in 0..6 {
        q[i] = sensor[i];
    }
    q.fixed_rows_mut::<3>(6).copy_from(q_bias_gyro);
    q.fixed_rows_mut::<3>(9).copy_from(q_bias_accel);
    q
}

/// `lambda * Qd(G diag(q_nn, q_b) G^T) + (1 - lambda) * q_innov`, with the network
/// term discretised by the same trapezoid as the base noise.
pub fn hybrid_q(
    nn_q: &[f64; 6],
    q_innov: &Mat15,
    g: &Mat15x12,
    phi: &Mat15,
    dt: f64,
    cfg: &BlendConfig,
) -> Mat15 {
    let lambda = cfg.lambda;
    let nn_term = if lambda > 0.0 {
        let q = noise_densities(nn_q, &cfg.q_bias_gyro, &cfg.q_bias_accel);
        let cont = g * crate::dynamics::diag12(&q) * g.transpose();
        discretize_noise(phi, &cont, dt) * lambda
    } else {
        Mat15::zeros()
    };
    if lambda < 1.0 {
        nn_term + q_innov * (1.0 - lambda)
    } else {
        nn_term
    }
}
