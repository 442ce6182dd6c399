//! Input/target conditioning, the training loop, and batched inference.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::loss::{loss_huber, loss_mse};
use super::network::{DropoutMasks, Mode, NetworkConfig, NetworkWeights};
use super::Real;
use crate::error::{Error, Result};
use crate::simgen::{TrainingSet, WindowInput, WINDOW};

/// Indexed access to `(window, target variances)` pairs.
pub trait WindowSource {
    fn len(&self) -> usize;
    fn window(&self, i: usize) -> WindowInput;
    fn target(&self, i: usize) -> [f64; 6];
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl WindowSource for TrainingSet {
    fn len(&self) -> usize {
        TrainingSet::len(self)
    }
    fn window(&self, i: usize) -> WindowInput {
        TrainingSet::window(self, i)
    }
    fn target(&self, i: usize) -> [f64; 6] {
        TrainingSet::target(self, i)
    }
}

impl WindowSource for Vec<(WindowInput, [f64; 6])> {
    fn len(&self) -> usize {
        Vec::len(self)
    }
    fn window(&self, i: usize) -> WindowInput {
        self[i].0
    }
    fn target(&self, i: usize) -> [f64; 6] {
        self[i].1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    Mse,
    Huber { delta: f64 },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Huber { .. } => "huber",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Window stride used to build the training set (recorded in the weight file).
    pub step: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Mse,
            epochs: 40,
            lr: 1e-3,
            dropout: 0.2,
            batch_size: 32,
            seed: 0,
            step: 10,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fixed input conditioning: each window channel has its mean removed, is divided
/// by a per-channel constant (dataset median of the window standard deviation) and
/// passed through `asinh`, which keeps the four decades of noise amplitude in range.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub scale: [f64; 6],
}

impl InputNorm {
    pub fn identity() -> Self {
        InputNorm { scale: [1.0; 6] }
    }

    pub fn fit(src: &dyn WindowSource) -> Result<Self> {
        if src.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut stds: [Vec<f64>; 6] = Default::default();
        for i in 0..src.len() {
            let w = src.window(i);
            for c in 0..6 {
                let mean = w[c].iter().sum::<f64>() / WINDOW as f64;
                let var = w[c].iter().map(|x| (x - mean).powi(2)).sum::<f64>() / WINDOW as f64;
                stds[c].push(var.sqrt());
            }
        }
        let mut scale = [1.0; 6];
        for c in 0..6 {
            let m = median(std::mem::take(&mut stds[c]));
            scale[c] = if m > 0.0 && m.is_finite() { m } else { 1.0 };
        }
        Ok(InputNorm { scale })
    }

    /// Writes sample `b` of a channel-major batch buffer of `batch` windows.
    pub fn write<T: Real>(&self, w: &WindowInput, b: usize, batch: usize, out: &mut [T]) {
        let bw = batch * WINDOW;
        for c in 0..6 {
            let mean = w[c].iter().sum::<f64>() / WINDOW as f64;
            let inv = 1.0 / self.scale[c];
            let dst = &mut out[c * bw + b * WINDOW..c * bw + (b + 1) * WINDOW];
            for (d, &x) in dst.iter_mut().zip(&w[c]) {
                *d = T::of(((x - mean) * inv).asinh());
            }
        }
    }
}

/// Per-channel median of the targets, used to bring all outputs to order one.
pub fn fit_target_scale(src: &dyn WindowSource) -> Result<[f64; 6]> {
    if src.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cols: [Vec<f64>; 6] = Default::default();
    for i in 0..src.len() {
        let t = src.target(i);
        for c in 0..6 {
            cols[c].push(t[c]);
        }
    }
    let mut scale = [1.0; 6];
    for c in 0..6 {
        let m = median(std::mem::take(&mut cols[c]));
        scale[c] = if m > 0.0 && m.is_finite() { m } else { 1.0 };
    }
    Ok(scale)
}

/// Per-epoch mean training loss and wall time.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub seconds: f64,
}

/// Mini-batch training of raw network weights on conditioned windows and scaled targets.
pub fn train_network<T: Real>(
    src: &dyn WindowSource,
    cfg: &TrainConfig,
    net: &NetworkConfig,
    norm: &InputNorm,
    target_scale: &[f64; 6],
    progress: &mut dyn FnMut(usize, f64),
) -> Result<(NetworkWeights<T>, TrainReport)> {
    let n = src.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size < 2 {
        return Err(Error::DegenerateBatch(cfg.batch_size));
    }
    if let LossKind::Huber { delta } = cfg.loss {
        if !(delta > 0.0) {
            return Err(Error::Config(format!("Huber threshold {delta} must be positive")));
        }
    }
    let start = Instant::now();
    let net = NetworkConfig { dropout: cfg.dropout, ..net.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = NetworkWeights::<T>::init(&net, cfg.seed);
    // Start the softplus head at the median scaled target of 1.
    if let Some(t) = weights.tensors.iter_mut().find(|t| t.name == "fc2.bias") {
        t.data.fill(T::of((std::f64::consts::E - 1.0).ln()));
    }
    let mut adam = Adam::new(&weights, cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let outputs = net.outputs;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let b = chunk.len();
            let mut x = vec![T::zero(); 6 * b * WINDOW];
            let mut target = vec![T::zero(); b * outputs];
            for (j, &i) in chunk.iter().enumerate() {
                norm.write(&src.window(i), j, b, &mut x);
                let t = src.target(i);
                for c in 0..outputs {
                    target[j * outputs + c] = T::of(t[c] / target_scale[c]);
                }
            }
            let masks = DropoutMasks::sample(&net, b, &mut rng);
            let pass = weights.forward(&x, b, Mode::Train(&masks))?;
            let (loss, grad) = match cfg.loss {
                LossKind::Mse => loss_mse(&pass.output, &target, outputs)?,
                LossKind::Huber { delta } => loss_huber(&pass.output, &target, outputs, delta)?,
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteInput("training loss"));
            }
            let grads = weights.backward(&pass, &grad)?;
            adam.step(&mut weights, &grads);
            weights.update_running_stats(pass.stats.as_ref().unwrap());
            total += loss * b as f64;
            count += b;
        }
        let mean = total / count.max(1) as f64;
        epoch_loss.push(mean);
        progress(epoch + 1, mean);
    }
    Ok((weights, TrainReport { epoch_loss, seconds: start.elapsed().as_secs_f64() }))
}

/// Trained regressor with its conditioning constants.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub weights: NetworkWeights<f32>,
    pub input_norm: InputNorm,
    pub target_scale: [f64; 6],
    pub train_config: TrainConfig,
}

impl NoiseModel {
    pub fn train(
        src: &dyn WindowSource,
        cfg: &TrainConfig,
        progress: &mut dyn FnMut(usize, f64),
    ) -> Result<(Self, TrainReport)> {
        let input_norm = InputNorm::fit(src)?;
        let target_scale = fit_target_scale(src)?;
        let net = NetworkConfig { dropout: cfg.dropout, ..NetworkConfig::default() };
        let (weights, report) = train_network::<f32>(src, cfg, &net, &input_norm, &target_scale, progress)?;
        Ok((NoiseModel { weights, input_norm, target_scale, train_config: cfg.clone() }, report))
    }

    /// Predicted sensor variances `(gyro xyz, accel xyz)` for each window.
    pub fn predict(&self, windows: &[WindowInput]) -> Result<Vec<[f64; 6]>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let b = chunk.len();
            let mut x = vec![0f32; 6 * b * WINDOW];
            for (j, w) in chunk.iter().enumerate() {
                self.input_norm.write(w, j, b, &mut x);
            }
            let pass = self.weights.forward(&x, b, Mode::Eval)?;
            for j in 0..b {
                let row = pass.row(j);
                let mut q = [0.0; 6];
                for c in 0..6 {
                    q[c] = row[c] as f64 * self.target_scale[c];
                }
                out.push(q);
            }
        }
        Ok(out)
    }

    pub fn predict_one(&self, window: &WindowInput) -> Result<[f64; 6]> {
        Ok(self.predict(std::slice::from_ref(window))?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn constant_target_is_learned() {
        let w = [[0.25; WINDOW]; 6];
        let data: Vec<(WindowInput, [f64; 6])> = (0..64).map(|_| (w, [0.7; 6])).collect();
        let cfg = TrainConfig { epochs: 60, batch_size: 16, dropout: 0.0, lr: 1e-2, seed: 5, ..TrainConfig::default() };
        let net = NetworkConfig { conv_channels: [4, 4, 4], hidden: [8, 8], ..NetworkConfig::default() };
        let (_, report) = train_network::<f64>(
            &data,
            &cfg,
            &net,
            &InputNorm::identity(),
            &[1.0; 6],
            &mut |_, _| {},
        )
        .unwrap();
        let first = report.epoch_loss[0];
        let last = *report.epoch_loss.last().unwrap();
        assert!(last < 1e-4 * first, "first {first} last {last}");
    }

    #[test]
    fn empty_dataset_rejected() {
        let data: Vec<(WindowInput, [f64; 6])> = Vec::new();
        let r = train_network::<f32>(
            &data,
            &TrainConfig::default(),
            &NetworkConfig::default(),
            &InputNorm::identity(),
            &[1.0; 6],
            &mut |_, _| {},
        );
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }
}
