//! Network definition, forward pass with cache, and backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    bn_backward, bn_eval_forward, bn_train_forward, conv_backward, conv_forward, leaky,
    leaky_backward, linear_backward, linear_forward, sigmoid, softplus,
};
use super::Real;
use crate::error::{Error, Result};

/// Layer sizes and fixed hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub conv_channels: [usize; 3],
    pub hidden: [usize; 2],
    pub outputs: usize,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub dropout: f64,
    pub eps_min: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 6,
            conv_channels: [32, 64, 128],
            hidden: [64, 64],
            outputs: 6,
            kernel: 5,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            dropout: 0.2,
            eps_min: 1e-12,
        }
    }
}

/// A named parameter or statistics tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { name, shape, data: vec![T::zero(); n] }
    }

    fn filled(name: String, shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Tensor { name, shape, data: vec![v; n] }
    }
}

/// All network tensors in a fixed order. Trainable tensors come first; the
/// batch-norm running statistics follow.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights<T> {
    pub config: NetworkConfig,
    pub tensors: Vec<Tensor<T>>,
}

// Tensor slot layout: per conv layer i (weight, bias, gamma, beta), then per fc
// layer (weight, bias), then per conv layer (running_mean, running_var).
fn conv_slot(i: usize) -> usize {
    4 * i
}
fn fc_slot(i: usize) -> usize {
    12 + 2 * i
}
fn stat_slot(i: usize) -> usize {
    18 + 2 * i
}
const TRAINABLE: usize = 18;

impl<T: Real> NetworkWeights<T> {
    /// Tensors with zero values in the layout implied by `config`.
    pub fn zeros(config: &NetworkConfig) -> Self {
        let mut tensors = Vec::new();
        let mut cin = config.in_channels;
        for (i, &c) in config.conv_channels.iter().enumerate() {
            let l = i + 1;
            tensors.push(Tensor::zeros(format!("conv{l}.weight"), vec![c, cin, config.kernel]));
            tensors.push(Tensor::zeros(format!("conv{l}.bias"), vec![c]));
            tensors.push(Tensor::zeros(format!("bn{l}.weight"), vec![c]));
            tensors.push(Tensor::zeros(format!("bn{l}.bias"), vec![c]));
            cin = c;
        }
        let dims = [config.conv_channels[2], config.hidden[0], config.hidden[1], config.outputs];
        for i in 0..3 {
            let l = i + 1;
            tensors.push(Tensor::zeros(format!("fc{l}.weight"), vec![dims[i + 1], dims[i]]));
            tensors.push(Tensor::zeros(format!("fc{l}.bias"), vec![dims[i + 1]]));
        }
        for (i, &c) in config.conv_channels.iter().enumerate() {
            let l = i + 1;
            tensors.push(Tensor::zeros(format!("bn{l}.running_mean"), vec![c]));
            tensors.push(Tensor::filled(format!("bn{l}.running_var"), vec![c], T::one()));
        }
        NetworkWeights { config: config.clone(), tensors }
    }

    /// Uniform `+-1/sqrt(fan_in)` initialisation for conv and linear layers,
    /// unit scale and zero shift for batch normalisation.
    pub fn init(config: &NetworkConfig, seed: u64) -> Self {
        let mut w = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &mut Tensor<T>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in t.data.iter_mut() {
                *v = T::of(rng.random_range(-bound..bound));
            }
        };
        let mut cin = config.in_channels;
        for i in 0..3 {
            let fan_in = cin * config.kernel;
            fill(&mut w.tensors[conv_slot(i)], fan_in);
            fill(&mut w.tensors[conv_slot(i) + 1], fan_in);
            w.tensors[conv_slot(i) + 2].data.fill(T::one());
            cin = config.conv_channels[i];
        }
        let fan_ins = [cin, config.hidden[0], config.hidden[1]];
        for (i, &fan_in) in fan_ins.iter().enumerate() {
            fill(&mut w.tensors[fc_slot(i)], fan_in);
            fill(&mut w.tensors[fc_slot(i) + 1], fan_in);
        }
        w
    }

    pub fn trainable(&self) -> &[Tensor<T>] {
        &self.tensors[..TRAINABLE]
    }

    pub fn trainable_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors[..TRAINABLE]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.data.len()).sum()
    }

    fn d(&self, slot: usize) -> &[T] {
        &self.tensors[slot].data
    }

    /// Gradient container with the same layout and zero statistics.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(&self.config);
        for i in 0..3 {
            z.tensors[stat_slot(i) + 1].data.fill(T::zero());
        }
        z
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Real>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }

    /// Blends batch statistics into the running statistics (momentum update,
    /// unbiased variance).
    pub fn update_running_stats(&mut self, stats: &[BnStats<T>; 3]) {
        let m = T::of(self.config.bn_momentum);
        let keep = T::one() - m;
        for (i, s) in stats.iter().enumerate() {
            let unbias = T::of(s.count as f64 / (s.count as f64 - 1.0).max(1.0));
            let (rm, rest) = self.tensors.split_at_mut(stat_slot(i) + 1);
            let rm = &mut rm[stat_slot(i)].data;
            let rv = &mut rest[0].data;
            for c in 0..rm.len() {
                rm[c] = keep * rm[c] + m * s.mean[c];
                rv[c] = keep * rv[c] + m * s.var[c] * unbias;
            }
        }
    }

    /// Checks tensor names and shapes against the configuration.
    pub fn validate(&self) -> Result<()> {
        let expected = Self::zeros(&self.config);
        if expected.tensors.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                expected.tensors.len(),
                self.tensors.len()
            )));
        }
        for (e, t) in expected.tensors.iter().zip(&self.tensors) {
            if e.name != t.name || e.shape != t.shape || t.data.len() != e.data.len() {
                return Err(Error::Format(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    t.name, t.shape, e.name, e.shape
                )));
            }
        }
        for i in 0..3 {
            if self.d(stat_slot(i) + 1).iter().any(|v| !(*v > T::zero())) {
                return Err(Error::Format("running variance must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Per-channel batch statistics from a training-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

/// Dropout masks for the two hidden layers, entries `0` or `1/(1-p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks<T> {
    pub hidden: [Vec<T>; 2],
}

impl<T: Real> DropoutMasks<T> {
    pub fn sample(config: &NetworkConfig, batch: usize, rng: &mut impl Rng) -> Self {
        let p = config.dropout;
        let keep = T::of(1.0 / (1.0 - p));
        let mut draw = |n: usize| -> Vec<T> {
            (0..batch * n)
                .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                .collect()
        };
        let h0 = draw(config.hidden[0]);
        let h1 = draw(config.hidden[1]);
        DropoutMasks { hidden: [h0, h1] }
    }

    pub fn ones(config: &NetworkConfig, batch: usize) -> Self {
        DropoutMasks {
            hidden: [
                vec![T::one(); batch * config.hidden[0]],
                vec![T::one(); batch * config.hidden[1]],
            ],
        }
    }
}

/// Evaluation uses running statistics; training uses batch statistics and the given masks.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a, T> {
    Eval,
    Train(&'a DropoutMasks<T>),
}

struct ConvCache<T> {
    col: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    z: Vec<T>,
}

struct Cache<T> {
    batch: usize,
    width: usize,
    conv: Vec<ConvCache<T>>,
    /// Inputs to fc1, fc2, fc3 (after activation and dropout).
    fc_in: [Vec<T>; 3],
    /// Pre-activations of fc1, fc2, fc3.
    fc_z: [Vec<T>; 3],
    masks: DropoutMasks<T>,
}

/// Result of a forward pass; carries the cache when run in training mode.
pub struct ForwardPass<T> {
    /// `batch x outputs`, row-major.
    pub output: Vec<T>,
    pub batch: usize,
    pub stats: Option<[BnStats<T>; 3]>,
    cache: Option<Cache<T>>,
}

impl<T: Real> ForwardPass<T> {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.output.len() / self.batch;
        &self.output[i * n..(i + 1) * n]
    }

    /// Drops the cache; backward will then fail with `MissingCache`.
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }
}

impl<T: Real> NetworkWeights<T> {
    /// Forward pass. `x` is channel-major: `in_channels x (batch * width)`.
    pub fn forward(&self, x: &[T], batch: usize, mode: Mode<'_, T>) -> Result<ForwardPass<T>> {
        let cfg = &self.config;
        if batch == 0 || x.len() % (cfg.in_channels * batch) != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs for batch {batch} with {} channels",
                x.len(),
                cfg.in_channels
            )));
        }
        let width = x.len() / (cfg.in_channels * batch);
        let train = matches!(mode, Mode::Train(_));
        if train && batch < 2 {
            return Err(Error::DegenerateBatch(batch));
        }
        if let Mode::Train(m) = mode {
            if m.hidden[0].len() != batch * cfg.hidden[0] || m.hidden[1].len() != batch * cfg.hidden[1] {
                return Err(Error::ShapeMismatch("dropout masks do not match batch".into()));
            }
        }
        let slope = T::of(cfg.leaky_slope);
        let mut act: Vec<T>;
        let mut input: &[T] = x;
        let mut cin = cfg.in_channels;
        let mut conv_caches = Vec::new();
        let mut stats = Vec::new();
        let mut owned;
        for i in 0..3 {
            let s = conv_slot(i);
            let cout = cfg.conv_channels[i];
            let (pre, col) = conv_forward(input, self.d(s), self.d(s + 1), cin, cout, cfg.kernel, batch, width);
            let z = if train {
                let out = bn_train_forward(&pre, cout, self.d(s + 2), self.d(s + 3), cfg.bn_eps);
                stats.push(BnStats { mean: out.mean, var: out.var, count: batch * width });
                conv_caches.push(ConvCache { col, xhat: out.xhat, inv_std: out.inv_std, z: Vec::new() });
                out.y
            } else {
                bn_eval_forward(
                    &pre,
                    cout,
                    self.d(s + 2),
                    self.d(s + 3),
                    self.d(stat_slot(i)),
                    self.d(stat_slot(i) + 1),
                    cfg.bn_eps,
                )
            };
            act = leaky(&z, slope);
            if train {
                conv_caches.last_mut().unwrap().z = z;
            }
            owned = act;
            input = &owned;
            cin = cout;
        }
        // Temporal mean pooling to batch x channels.
        let bw = batch * width;
        let inv_w = T::of(1.0 / width as f64);
        let mut pooled = vec![T::zero(); batch * cin];
        for c in 0..cin {
            for b in 0..batch {
                let seg = &input[c * bw + b * width..c * bw + (b + 1) * width];
                pooled[b * cin + c] = seg.iter().copied().sum::<T>() * inv_w;
            }
        }
        let dims = [cin, cfg.hidden[0], cfg.hidden[1], cfg.outputs];
        let mut fc_in: [Vec<T>; 3] = Default::default();
        let mut fc_z: [Vec<T>; 3] = Default::default();
        let mut h = pooled;
        for i in 0..3 {
            let s = fc_slot(i);
            let z = linear_forward(&h, self.d(s), self.d(s + 1), batch, dims[i], dims[i + 1]);
            fc_in[i] = h;
            if i < 2 {
                let mut a = leaky(&z, slope);
                if let Mode::Train(m) = mode {
                    for (v, &k) in a.iter_mut().zip(&m.hidden[i]) {
                        *v *= k;
                    }
                }
                h = a;
            } else {
                h = Vec::new();
            }
            fc_z[i] = z;
        }
        let eps = T::of(cfg.eps_min);
        let output: Vec<T> = fc_z[2].iter().map(|&z| softplus(z) + eps).collect();
        let (stats, cache) = match mode {
            Mode::Train(m) => (
                Some(<[BnStats<T>; 3]>::try_from(stats).ok().unwrap()),
                Some(Cache { batch, width, conv: conv_caches, fc_in, fc_z, masks: m.clone() }),
            ),
            Mode::Eval => (None, None),
        };
        Ok(ForwardPass { output, batch, stats, cache })
    }

    /// Gradients of a scalar loss with respect to every trainable tensor, given
    /// the loss gradient with respect to the network output.
    pub fn backward(&self, pass: &ForwardPass<T>, dout: &[T]) -> Result<NetworkWeights<T>> {
        let cache = pass.cache.as_ref().ok_or(Error::MissingCache)?;
        let cfg = &self.config;
        let (batch, width) = (cache.batch, cache.width);
        if dout.len() != pass.output.len() {
            return Err(Error::ShapeMismatch("output gradient length".into()));
        }
        let slope = T::of(cfg.leaky_slope);
        let mut grads = self.zeros_like();
        let dims = [cfg.conv_channels[2], cfg.hidden[0], cfg.hidden[1], cfg.outputs];
        let mut dh: Vec<T> = dout
            .iter()
            .zip(&cache.fc_z[2])
            .map(|(&g, &z)| g * sigmoid(z))
            .collect();
        for i in (0..3).rev() {
            let s = fc_slot(i);
            let (dw, db, dx) = linear_backward(&dh, &cache.fc_in[i], self.d(s), batch, dims[i], dims[i + 1]);
            grads.tensors[s].data = dw;
            grads.tensors[s + 1].data = db;
            dh = dx;
            if i > 0 {
                for (g, &m) in dh.iter_mut().zip(&cache.masks.hidden[i - 1]) {
                    *g *= m;
                }
                leaky_backward(&mut dh, &cache.fc_z[i - 1], slope);
            }
        }
        // Un-pool: each time step receives 1/W of the pooled gradient.
        let c3 = cfg.conv_channels[2];
        let bw = batch * width;
        let inv_w = T::of(1.0 / width as f64);
        let mut dact = vec![T::zero(); c3 * bw];
        for c in 0..c3 {
            for b in 0..batch {
                let g = dh[b * c3 + c] * inv_w;
                dact[c * bw + b * width..c * bw + (b + 1) * width].fill(g);
            }
        }
        for i in (0..3).rev() {
            let s = conv_slot(i);
            let cc = &cache.conv[i];
            let cout = cfg.conv_channels[i];
            let cin = if i == 0 { cfg.in_channels } else { cfg.conv_channels[i - 1] };
            leaky_backward(&mut dact, &cc.z, slope);
            let (dpre, dgamma, dbeta) = bn_backward(&dact, &cc.xhat, &cc.inv_std, self.d(s + 2), cout);
            let (dw, db, dx) = conv_backward(&dpre, &cc.col, self.d(s), cin, cout, cfg.kernel, batch, width, i > 0);
            grads.tensors[s].data = dw;
            grads.tensors[s + 1].data = db;
            grads.tensors[s + 2].data = dgamma;
            grads.tensors[s + 3].data = dbeta;
            if let Some(dx) = dx {
                dact = dx;
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig { conv_channels: [4, 5, 6], hidden: [5, 4], ..NetworkConfig::default() }
    }

    #[test]
    fn default_shapes() {
        let w = NetworkWeights::<f64>::zeros(&NetworkConfig::default());
        assert_eq!(w.get("conv1.weight").unwrap().shape, vec![32, 6, 5]);
        assert_eq!(w.get("conv3.weight").unwrap().shape, vec![128, 64, 5]);
        assert_eq!(w.get("fc1.weight").unwrap().shape, vec![64, 128]);
        assert_eq!(w.get("fc3.weight").unwrap().shape, vec![6, 64]);
        assert_eq!(w.get("bn2.running_var").unwrap().data, vec![1.0; 64]);
        w.validate().unwrap();
    }

    #[test]
    fn eval_is_positive_and_deterministic() {
        let cfg = small();
        let w = NetworkWeights::<f64>::init(&cfg, 1);
        let x: Vec<f64> = (0..6 * 3 * 12).map(|i| (i as f64 * 0.37).sin() * 50.0).collect();
        let a = w.forward(&x, 3, Mode::Eval).unwrap();
        let b = w.forward(&x, 3, Mode::Eval).unwrap();
        assert_eq!(a.output, b.output);
        assert!(a.output.iter().all(|&v| v >= cfg.eps_min));
        assert!(matches!(w.backward(&a, &a.output), Err(Error::MissingCache)));
    }

    #[test]
    fn train_mode_needs_two_samples() {
        let cfg = small();
        let w = NetworkWeights::<f64>::init(&cfg, 1);
        let masks = DropoutMasks::ones(&cfg, 1);
        let x = vec![0.0; 6 * 12];
        assert!(matches!(w.forward(&x, 1, Mode::Train(&masks)), Err(Error::DegenerateBatch(1))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = small();
        let w = NetworkWeights::<f64>::init(&cfg, 2);
        let masks = DropoutMasks::ones(&cfg, 2);
        let x: Vec<f64> = (0..6 * 2 * 10).map(|i| (i as f64).cos()).collect();
        let pass = w.forward(&x, 2, Mode::Train(&masks)).unwrap();
        let g = w.backward(&pass, &vec![0.0; pass.output.len()]).unwrap();
        assert!(g.tensors.iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }
}
