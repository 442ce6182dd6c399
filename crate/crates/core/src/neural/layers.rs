//! Layer kernels over channel-major activations: a batch of `B` sequences of
//! width `W` with `C` channels is stored as a `C x (B*W)` row-major matrix.

use super::Real;
use crate::error::{Error, Result};

/// Expands a padded convolution input into a `(cin*k) x (b*w)` matrix.
pub(crate) fn im2col<T: Real>(x: &[T], cin: usize, b: usize, w: usize, k: usize, col: &mut [T]) {
    let bw = b * w;
    let pad = (k - 1) / 2;
    col.fill(T::zero());
    for ci in 0..cin {
        for j in 0..k {
            let row = &mut col[(ci * k + j) * bw..(ci * k + j + 1) * bw];
            let shift = j as isize - pad as isize;
            let lo = (-shift).max(0) as usize;
            let hi = (w as isize - shift).min(w as isize).max(0) as usize;
            for s in 0..b {
                let src = &x[ci * bw + s * w..ci * bw + (s + 1) * w];
                let dst = &mut row[s * w..(s + 1) * w];
                for t in lo..hi {
                    dst[t] = src[(t as isize + shift) as usize];
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients into the input gradient.
pub(crate) fn col2im_add<T: Real>(dcol: &[T], cin: usize, b: usize, w: usize, k: usize, dx: &mut [T]) {
    let bw = b * w;
    let pad = (k - 1) / 2;
    for ci in 0..cin {
        for j in 0..k {
            let row = &dcol[(ci * k + j) * bw..(ci * k + j + 1) * bw];
            let shift = j as isize - pad as isize;
            let lo = (-shift).max(0) as usize;
            let hi = (w as isize - shift).min(w as isize).max(0) as usize;
            for s in 0..b {
                let src = &row[s * w..(s + 1) * w];
                let dst = &mut dx[ci * bw + s * w..ci * bw + (s + 1) * w];
                for t in lo..hi {
                    dst[(t as isize + shift) as usize] += src[t];
                }
            }
        }
    }
}

/// Batched convolution; returns the output and the im2col matrix for backward.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    cin: usize,
    cout: usize,
    k: usize,
    b: usize,
    w: usize,
) -> (Vec<T>, Vec<T>) {
    let bw = b * w;
    let ck = cin * k;
    let mut col = vec![T::zero(); ck * bw];
    im2col(x, cin, b, w, k, &mut col);
    let mut out = vec![T::zero(); cout * bw];
    for (co, row) in out.chunks_mut(bw).enumerate() {
        row.fill(bias[co]);
    }
    T::gemm(cout, ck, bw, T::one(), weight, (ck, 1), &col, (bw, 1), T::one(), &mut out, (bw, 1));
    (out, col)
}

/// Gradients of a convolution: `(d weight, d bias, d input)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    dout: &[T],
    col: &[T],
    weight: &[T],
    cin: usize,
    cout: usize,
    k: usize,
    b: usize,
    w: usize,
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let bw = b * w;
    let ck = cin * k;
    let mut dw = vec![T::zero(); cout * ck];
    T::gemm(cout, bw, ck, T::one(), dout, (bw, 1), col, (1, bw), T::zero(), &mut dw, (ck, 1));
    let db = dout.chunks(bw).map(|r| r.iter().copied().sum()).collect();
    let dx = need_dx.then(|| {
        let mut dcol = vec![T::zero(); ck * bw];
        T::gemm(ck, cout, bw, T::one(), weight, (1, ck), dout, (bw, 1), T::zero(), &mut dcol, (bw, 1));
        let mut dx = vec![T::zero(); cin * bw];
        col2im_add(&dcol, cin, b, w, k, &mut dx);
        dx
    });
    (dw, db, dx)
}

/// Single-sequence convolution with zero padding `(k-1)/2` and stride 1.
/// `x` is `cin x w`, `weight` is `cout x cin x k`; returns `cout x w`.
pub fn conv1d_forward<T: Real>(
    x: &[T],
    cin: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
    k: usize,
) -> Result<Vec<T>> {
    if cin == 0 || x.len() % cin != 0 {
        return Err(Error::ShapeMismatch(format!("input of {} values for {cin} channels", x.len())));
    }
    if k % 2 == 0 || weight.len() != cout * cin * k || bias.len() != cout {
        return Err(Error::ShapeMismatch(format!(
            "kernel of {} values, bias of {} for {cout}x{cin}x{k}",
            weight.len(),
            bias.len()
        )));
    }
    let w = x.len() / cin;
    Ok(conv_forward(x, weight, bias, cin, cout, k, 1, w).0)
}

/// Per-row statistics of a `c x n` matrix, accumulated in double precision.
fn row_mean_var<T: Real>(row: &[T]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / n;
    let var = row
        .iter()
        .map(|v| {
            let d = v.to_f64().unwrap() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var)
}

pub(crate) struct BnTrainOut<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Training-mode batch normalisation over each channel row.
pub(crate) fn bn_train_forward<T: Real>(x: &[T], c: usize, gamma: &[T], beta: &[T], eps: f64) -> BnTrainOut<T> {
    let n = x.len() / c;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(c);
    let mut means = Vec::with_capacity(c);
    let mut vars = Vec::with_capacity(c);
    for ch in 0..c {
        let row = &x[ch * n..(ch + 1) * n];
        let (mean, var) = row_mean_var(row);
        let istd = T::of(1.0 / (var + eps).sqrt());
        let m = T::of(mean);
        let xr = &mut xhat[ch * n..(ch + 1) * n];
        let yr = &mut y[ch * n..(ch + 1) * n];
        for i in 0..n {
            let h = (row[i] - m) * istd;
            xr[i] = h;
            yr[i] = gamma[ch] * h + beta[ch];
        }
        inv_std.push(istd);
        means.push(m);
        vars.push(T::of(var));
    }
    BnTrainOut { y, xhat, inv_std, mean: means, var: vars }
}

pub(crate) fn bn_eval_forward<T: Real>(
    x: &[T],
    c: usize,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: f64,
) -> Vec<T> {
    let n = x.len() / c;
    let mut y = vec![T::zero(); x.len()];
    for ch in 0..c {
        let scale = gamma[ch] / (var[ch] + T::of(eps)).sqrt();
        let shift = beta[ch] - mean[ch] * scale;
        for (o, &v) in y[ch * n..(ch + 1) * n].iter_mut().zip(&x[ch * n..(ch + 1) * n]) {
            *o = v * scale + shift;
        }
    }
    y
}

/// Backward of training-mode batch normalisation: `(dx, dgamma, dbeta)`.
pub(crate) fn bn_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    c: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = dy.len() / c;
    let nf = n as f64;
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = Vec::with_capacity(c);
    let mut dbeta = Vec::with_capacity(c);
    for ch in 0..c {
        let dyr = &dy[ch * n..(ch + 1) * n];
        let xr = &xhat[ch * n..(ch + 1) * n];
        let mut sum_dy = 0.0f64;
        let mut sum_dy_x = 0.0f64;
        for i in 0..n {
            let d = dyr[i].to_f64().unwrap();
            sum_dy += d;
            sum_dy_x += d * xr[i].to_f64().unwrap();
        }
        dgamma.push(T::of(sum_dy_x));
        dbeta.push(T::of(sum_dy));
        let g = gamma[ch];
        let a = T::of(sum_dy / nf);
        let bcoef = T::of(sum_dy_x / nf);
        let scale = g * inv_std[ch];
        for (o, (&d, &h)) in dx[ch * n..(ch + 1) * n].iter_mut().zip(dyr.iter().zip(xr)) {
            *o = scale * (d - a - h * bcoef);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn leaky<T: Real>(x: &[T], slope: T) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect()
}

/// Multiplies `grad` in place by the LeakyReLU derivative at the pre-activation `z`.
pub(crate) fn leaky_backward<T: Real>(grad: &mut [T], z: &[T], slope: T) {
    for (g, &v) in grad.iter_mut().zip(z) {
        if v <= T::zero() {
            *g *= slope;
        }
    }
}

pub(crate) fn softplus<T: Real>(z: T) -> T {
    let zero = T::zero();
    z.max(zero) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `y = x W^T + b` for `x` of shape `b x n_in` and `W` of shape `n_out x n_in`.
pub(crate) fn linear_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], b: usize, n_in: usize, n_out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); b * n_out];
    for row in y.chunks_mut(n_out) {
        row.copy_from_slice(bias);
    }
    T::gemm(b, n_in, n_out, T::one(), x, (n_in, 1), weight, (1, n_in), T::one(), &mut y, (n_out, 1));
    y
}

/// Gradients of [`linear_forward`]: `(d weight, d bias, d input)`.
pub(crate) fn linear_backward<T: Real>(
    dy: &[T],
    x: &[T],
    weight: &[T],
    b: usize,
    n_in: usize,
    n_out: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); n_out * n_in];
    T::gemm(n_out, b, n_in, T::one(), dy, (1, n_out), x, (n_in, 1), T::zero(), &mut dw, (n_in, 1));
    let mut db = vec![T::zero(); n_out];
    for row in dy.chunks(n_out) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    let mut dx = vec![T::zero(); b * n_in];
    T::gemm(b, n_out, n_in, T::one(), dy, (n_out, 1), weight, (n_in, 1), T::zero(), &mut dx, (n_in, 1));
    (dw, db, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct triple-loop cross-correlation with zero padding.
    fn naive(x: &[f64], cin: usize, w: usize, k: &[f64], bias: &[f64], cout: usize, ks: usize) -> Vec<f64> {
        let pad = (ks / 2) as isize;
        let mut out = vec![0.0; cout * w];
        for co in 0..cout {
            for t in 0..w {
                let mut acc = bias[co];
                for ci in 0..cin {
                    for j in 0..ks {
                        let src = t as isize + j as isize - pad;
                        if src >= 0 && (src as usize) < w {
                            acc += k[(co * cin + ci) * ks + j] * x[ci * w + src as usize];
                        }
                    }
                }
                out[co * w + t] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_kernel_copies_channel() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let out = conv1d_forward(&x, 2, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[0.0], 1, 5).unwrap();
        assert_eq!(out, x[10..].to_vec());
    }

    #[test]
    fn ones_kernel_edges() {
        let x = vec![1.0f64; 8];
        let out = conv1d_forward(&x, 1, &[1.0; 5], &[0.0], 1, 5).unwrap();
        assert_eq!(out, vec![3.0, 4.0, 5.0, 5.0, 5.0, 5.0, 4.0, 3.0]);
    }

    #[test]
    fn matches_naive_loops() {
        let (cin, cout, w, ks) = (3, 4, 17, 5);
        let x: Vec<f64> = (0..cin * w).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let k: Vec<f64> = (0..cout * cin * ks).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
        let bias = vec![0.1, -0.2, 0.3, 0.0];
        let fast = conv1d_forward(&x, cin, &k, &bias, cout, ks).unwrap();
        for (a, b) in fast.iter().zip(naive(&x, cin, w, &k, &bias, cout, ks)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        assert!(conv1d_forward(&[1.0f64; 7], 2, &[0.0; 10], &[0.0], 1, 5).is_err());
        assert!(conv1d_forward(&[1.0f64; 8], 2, &[0.0; 9], &[0.0], 1, 5).is_err());
    }

    #[test]
    fn batchnorm_statistics() {
        let x: Vec<f64> = (0..2 * 50).map(|i| ((i * 7919) % 101) as f64 * 0.3 - 4.0).collect();
        let out = bn_train_forward(&x, 2, &[1.0, 1.0], &[0.0, 0.0], 1e-5);
        for ch in 0..2 {
            let row = &out.y[ch * 50..(ch + 1) * 50];
            let (m, v) = row_mean_var(row);
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4);
        }
        let constant = bn_train_forward(&[2.5f64; 10], 1, &[1.0], &[0.5], 1e-5);
        assert!(constant.y.iter().all(|&v| v == 0.5));
        let ident = bn_eval_forward(&x, 2, &[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 0.0);
        assert_eq!(ident, x);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
