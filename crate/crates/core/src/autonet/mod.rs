//! The mixture density network: an MLP mapping a condition `y` to mixture parameters.

mod checkpoint;
pub mod tape;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ConditionedBatch;
use crate::error::{MdnError, Result};
use crate::gmm::{DiagParams, Mixture, MixtureParams};
use crate::linalg::{packed_len, DenseMatrix, UpperTriangularRaw};
use crate::loss::{record_loss, LossKind, LossValue};
use crate::rng::{stream_rng, INIT_STREAM};
use crate::scalar::Real;

pub use tape::{Gradients, NodeId, Tape};

/// Standard deviation of the initial mean-head weights.
pub const MEAN_HEAD_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = MdnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(MdnError::InvalidInput(format!(
                "unknown activation `{other}` (expected tanh or relu)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    Diagonal,
    Full,
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovarianceMode::Diagonal => "diagonal",
            CovarianceMode::Full => "full",
        })
    }
}

impl FromStr for CovarianceMode {
    type Err = MdnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" | "diag" => Ok(CovarianceMode::Diagonal),
            "full" => Ok(CovarianceMode::Full),
            other => Err(MdnError::InvalidInput(format!(
                "unknown covariance mode `{other}` (expected full or diagonal)"
            ))),
        }
    }
}

/// Column layout of the network head: `[logits (K) | means (K·N) | covariance block]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub k: usize,
    pub n: usize,
    pub mode: CovarianceMode,
}

impl HeadLayout {
    /// Covariance entries per component: `N(N+1)/2` raw triangle or `N` log inverse scales.
    pub fn cov_block(&self) -> usize {
        match self.mode {
            CovarianceMode::Full => packed_len(self.n),
            CovarianceMode::Diagonal => self.n,
        }
    }

    pub fn means_offset(&self) -> usize {
        self.k
    }

    pub fn cov_offset(&self) -> usize {
        self.k + self.k * self.n
    }

    pub fn head_dim(&self) -> usize {
        self.cov_offset() + self.k * self.cov_block()
    }

    /// Splits one head row into mixture parameters (softmax over the logits).
    pub fn mixture_from_head<T: Real>(&self, head: &[T]) -> Result<Mixture<T>> {
        if head.len() != self.head_dim() {
            return Err(MdnError::shape("network head", self.head_dim(), head.len()));
        }
        let (k, n, p) = (self.k, self.n, self.cov_block());
        let logits = &head[..k];
        let lse = crate::gmm::log_sum_exp(logits);
        let weights: Vec<T> = logits.iter().map(|&a| (a - lse).exp()).collect();
        let means: Vec<Vec<T>> = (0..k)
            .map(|i| head[self.means_offset() + i * n..self.means_offset() + (i + 1) * n].to_vec())
            .collect();
        let cov = |i: usize| head[self.cov_offset() + i * p..self.cov_offset() + (i + 1) * p].to_vec();
        Ok(match self.mode {
            CovarianceMode::Full => {
                let factors = (0..k)
                    .map(|i| UpperTriangularRaw::new(n, cov(i)))
                    .collect::<Result<Vec<_>>>()?;
                Mixture::Full(MixtureParams::new(weights, means, factors)?)
            }
            CovarianceMode::Diagonal => Mixture::Diag(DiagParams::new(weights, means, (0..k).map(cov).collect())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdnConfig {
    /// Mixture components.
    pub k: usize,
    /// Data dimension.
    pub n: usize,
    /// Condition dimension.
    pub m: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub covariance_mode: CovarianceMode,
}

impl MdnConfig {
    /// Two tanh layers of width 128.
    pub fn new(k: usize, n: usize, m: usize, covariance_mode: CovarianceMode) -> Self {
        Self {
            k,
            n,
            m,
            hidden: vec![128, 128],
            activation: Activation::Tanh,
            covariance_mode,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 || self.m == 0 {
            return Err(MdnError::InvalidInput("K, N and M must all be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(MdnError::InvalidInput("hidden layer widths must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> HeadLayout {
        HeadLayout {
            k: self.k,
            n: self.n,
            mode: self.covariance_mode,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.layout().head_dim()
    }

    /// `(inputs, outputs)` of every layer, head last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.m];
        dims.extend(&self.hidden);
        dims.push(self.head_dim());
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine layer, weights row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T>) -> Self {
        assert_eq!(weights.len(), inputs * outputs);
        assert_eq!(bias.len(), outputs);
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self::new(inputs, outputs, vec![T::zero(); inputs * outputs], vec![T::zero(); outputs])
    }
}

/// All trainable weights of the network. Gradients and optimizer moments reuse this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(cfg: &MdnConfig) -> Self {
        Self {
            layers: cfg.layer_shapes().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Named parameter blocks in storage order: `layer{i}.weight`, `layer{i}.bias`, ...
    pub fn blocks(&self) -> impl Iterator<Item = (String, &[T])> {
        self.layers.iter().enumerate().flat_map(|(i, l)| {
            [
                (format!("layer{i}.weight"), l.weights.as_slice()),
                (format!("layer{i}.bias"), l.bias.as_slice()),
            ]
        })
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn flatten(&self) -> Vec<T> {
        self.blocks().flat_map(|(_, b)| b.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_scalars() {
            return Err(MdnError::shape("flat parameter vector", self.num_scalars(), values.len()));
        }
        let mut it = values.iter();
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v = *it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Checks that the layer shapes chain and match `cfg`.
    pub fn check_shapes(&self, cfg: &MdnConfig) -> Result<()> {
        let shapes = cfg.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(MdnError::shape("layer count", shapes.len(), self.layers.len()));
        }
        for ((i, o), l) in shapes.into_iter().zip(&self.layers) {
            if l.inputs != i {
                return Err(MdnError::shape("layer inputs", i, l.inputs));
            }
            if l.outputs != o {
                return Err(MdnError::shape("layer outputs", o, l.outputs));
            }
        }
        Ok(())
    }
}

/// He-style initialization for hidden layers, zeroed head except for small noise on the mean rows.
///
/// The covariance rows start at zero, so every component starts with identity precision.
pub fn init<T: Real>(cfg: &MdnConfig, seed: u64) -> NetworkParams<T> {
    let mut rng = stream_rng(seed, INIT_STREAM);
    let mut params = NetworkParams::zeros(cfg);
    let last = params.layers.len() - 1;
    for (idx, layer) in params.layers.iter_mut().enumerate() {
        if idx < last {
            let scale = (2.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::lit(scale * rng.sample::<f64, _>(StandardNormal));
            }
        } else {
            let layout = cfg.layout();
            let rows = layout.means_offset()..layout.cov_offset();
            for o in rows {
                for w in &mut layer.weights[o * layer.inputs..(o + 1) * layer.inputs] {
                    *w = T::lit(MEAN_HEAD_INIT_STD * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
    }
    params
}

/// Records the MLP on `tape` for a `B × M` condition batch and returns the `B × D` head node.
pub fn record_forward<T: Real>(tape: &mut Tape<'_, T>, cfg: &MdnConfig, ys: DenseMatrix<T>) -> Result<NodeId> {
    if ys.cols() != cfg.m {
        return Err(MdnError::shape("condition dimension", cfg.m, ys.cols()));
    }
    let mut h = tape.leaf(ys, false);
    let layers = cfg.hidden.len() + 1;
    for layer in 0..layers {
        h = tape.linear(h, layer)?;
        if layer + 1 < layers {
            h = tape.activation(h, cfg.activation);
        }
        if tape.value(h).as_slice().iter().any(|v| !v.is_finite()) {
            return Err(MdnError::NonFiniteActivation { layer });
        }
    }
    Ok(h)
}

/// Mixture parameters for a single condition `y`.
pub fn forward<T: Real>(y: &[T], params: &NetworkParams<T>, cfg: &MdnConfig) -> Result<Mixture<T>> {
    params.check_shapes(cfg)?;
    let mut tape = Tape::new(params);
    let head = record_forward(&mut tape, cfg, DenseMatrix::new(1, y.len(), y.to_vec())?)?;
    cfg.layout().mixture_from_head(tape.value(head).row(0))
}

/// Loss on one mini-batch together with its gradient.
#[derive(Debug, Clone)]
pub struct BatchGradient<T> {
    pub loss: LossValue<T>,
    pub grads: NetworkParams<T>,
}

/// A configured network with its weights and the seed it was initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdn<T> {
    pub config: MdnConfig,
    pub params: NetworkParams<T>,
    pub seed: u64,
}

/// Rows evaluated per tape when only loss values are needed.
const EVAL_CHUNK: usize = 1024;

impl<T: Real> Mdn<T> {
    pub fn new(config: MdnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init(&config, seed);
        Ok(Self { config, params, seed })
    }

    pub fn forward(&self, y: &[T]) -> Result<Mixture<T>> {
        forward(y, &self.params, &self.config)
    }

    fn check_batch(&self, batch: &ConditionedBatch<T>) -> Result<()> {
        if batch.x_dim() != self.config.n {
            return Err(MdnError::shape("data dimension", self.config.n, batch.x_dim()));
        }
        if batch.y_dim() != self.config.m {
            return Err(MdnError::shape("condition dimension", self.config.m, batch.y_dim()));
        }
        Ok(())
    }

    /// Loss and parameter gradient on the rows `indices` of `batch`.
    pub fn loss_and_gradient(&self, batch: &ConditionedBatch<T>, indices: &[usize], kind: LossKind) -> Result<BatchGradient<T>> {
        self.check_batch(batch)?;
        let (ys, xs) = batch.gather(indices);
        let mut tape = Tape::new(&self.params);
        let head = record_forward(&mut tape, &self.config, ys)?;
        let per = record_loss(&mut tape, head, &xs, self.config.layout(), kind, true)?;
        let total = tape.mean(per);
        let loss = LossValue::from_parts(tape.value(total).get(0, 0), tape.value(per).as_slice().to_vec());
        let grads = tape
            .backward(total, T::one())?
            .params
            .expect("network tape yields parameter gradients");
        Ok(BatchGradient { loss, grads })
    }

    /// Per-sample losses over a whole batch, evaluated without gradients.
    pub fn batch_loss(&self, batch: &ConditionedBatch<T>, kind: LossKind) -> Result<LossValue<T>> {
        self.check_batch(batch)?;
        if batch.is_empty() {
            return Err(MdnError::InvalidInput("cannot evaluate a loss on an empty batch".into()));
        }
        let mut per_sample = Vec::with_capacity(batch.len());
        let all: Vec<usize> = (0..batch.len()).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let (ys, xs) = batch.gather(chunk);
            let mut tape = Tape::new(&self.params);
            let head = record_forward(&mut tape, &self.config, ys)?;
            let per = record_loss(&mut tape, head, &xs, self.config.layout(), kind, true)?;
            per_sample.extend_from_slice(tape.value(per).as_slice());
        }
        Ok(LossValue::from_per_sample(per_sample))
    }

    /// Mean exact negative log-likelihood of `batch`.
    pub fn mean_nll(&self, batch: &ConditionedBatch<T>) -> Result<T> {
        Ok(self.batch_loss(batch, LossKind::ExactNll)?.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{mixture_log_density, GaussianMixture};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn head_dimensions() {
        let cfg = MdnConfig::new(3, 2, 1, CovarianceMode::Full);
        assert_eq!(cfg.head_dim(), 3 + 6 + 9);
        let cfg = MdnConfig::new(3, 2, 1, CovarianceMode::Diagonal);
        assert_eq!(cfg.head_dim(), 3 + 6 + 6);
    }

    #[test]
    fn zero_network_gives_uniform_standard_mixture() {
        let cfg = MdnConfig::new(4, 2, 1, CovarianceMode::Full).with_hidden(vec![5]);
        let params = NetworkParams::<f64>::zeros(&cfg);
        let Mixture::Full(p) = forward(&[0.7], &params, &cfg).unwrap() else {
            panic!("full mode")
        };
        for i in 0..4 {
            assert_eq!(p.weights()[i], 0.25);
            assert!(p.mean(i).iter().all(|&v| v == 0.0));
            assert!(p.factor_raw(i).entries().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_logits_give_half_weights() {
        let layout = HeadLayout {
            k: 2,
            n: 1,
            mode: CovarianceMode::Diagonal,
        };
        let m = layout.mixture_from_head(&[0.0, 0.0, 1.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let layout = HeadLayout {
            k: 3,
            n: 1,
            mode: CovarianceMode::Diagonal,
        };
        let head = [0.3, -1.2, 2.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut shifted = head;
        shifted[..3].iter_mut().for_each(|v| *v += 17.25);
        let a = layout.mixture_from_head(&head).unwrap();
        let b = layout.mixture_from_head(&shifted).unwrap();
        let total: f64 = a.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_seed_deterministic_and_zeroes_covariance_head() {
        let cfg = MdnConfig::new(2, 3, 2, CovarianceMode::Full).with_hidden(vec![16, 8]);
        let a = init::<f64>(&cfg, 42);
        let b = init::<f64>(&cfg, 42);
        assert_eq!(a, b);
        assert_ne!(a, init::<f64>(&cfg, 43));
        let head = a.layers.last().unwrap();
        let layout = cfg.layout();
        for o in layout.cov_offset()..layout.head_dim() {
            assert!(head.weights[o * head.inputs..(o + 1) * head.inputs].iter().all(|&w| w == 0.0));
            assert_eq!(head.bias[o], 0.0);
        }
        for o in 0..layout.k {
            assert!(head.weights[o * head.inputs..(o + 1) * head.inputs].iter().all(|&w| w == 0.0));
        }
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn initial_model_is_unit_covariance_mixture() {
        let cfg = MdnConfig::new(2, 2, 1, CovarianceMode::Full).with_hidden(vec![16]);
        let mdn = Mdn::<f64>::new(cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let y = [rng.random_range(-1.0..1.0)];
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let m = mdn.forward(&y).unwrap();
            // oracle: −ln Σ ω_i N(x | μ_i, I)
            let oracle: f64 = -(0..2)
                .map(|i| {
                    let Mixture::Full(p) = &m else { unreachable!() };
                    let sq: f64 = x.iter().zip(p.mean(i)).map(|(a, b)| (a - b) * (a - b)).sum();
                    p.weights()[i] * (-0.5 * sq).exp() / (2.0 * std::f64::consts::PI)
                })
                .sum::<f64>()
                .ln();
            assert!((-mixture_log_density(&x, &m).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_across_threads() {
        let cfg = MdnConfig::new(2, 2, 1, CovarianceMode::Full).with_hidden(vec![8]);
        let mdn = Mdn::<f64>::new(cfg, 3).unwrap();
        let here = mdn.forward(&[0.4]).unwrap();
        let there = std::thread::scope(|s| s.spawn(|| mdn.forward(&[0.4]).unwrap()).join().unwrap());
        assert_eq!(here, there);
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let cfg = MdnConfig::new(1, 1, 1, CovarianceMode::Full).with_hidden(vec![2]);
        let mut params = NetworkParams::<f64>::zeros(&cfg);
        params.layers[0].weights[0] = f64::INFINITY;
        params.layers[0].bias[0] = f64::NEG_INFINITY;
        let err = forward(&[1.0], &params, &cfg).unwrap_err();
        assert!(matches!(err, MdnError::NonFiniteActivation { layer: 0 }));
    }

    #[test]
    fn condition_shape_checked() {
        let cfg = MdnConfig::new(1, 1, 2, CovarianceMode::Full).with_hidden(vec![2]);
        let params = NetworkParams::<f64>::zeros(&cfg);
        assert!(matches!(forward(&[1.0], &params, &cfg), Err(MdnError::Shape { .. })));
    }

    #[test]
    fn flat_round_trip() {
        let cfg = MdnConfig::new(2, 2, 1, CovarianceMode::Full).with_hidden(vec![3]);
        let a = init::<f64>(&cfg, 1);
        let mut b = NetworkParams::zeros(&cfg);
        b.assign_flat(&a.flatten()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_scalars(), a.flatten().len());
    }
}
