//! Fully-connected regression network trained by backpropagation.
//!
//! Hidden layers apply an activation; the output layer is affine. The loss for
//! one sample is `0.5 * ||forward(x) - target||^2`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a` and input `z`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidValue(
                "network dimensions must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// `(in, out)` for every layer in order.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self
            .hidden_dims
            .iter()
            .chain(std::iter::once(&self.output_dim))
        {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }
}

/// Dense layer with row-major `out x in` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            b + dot(row, input)
        }));
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// Parameter gradients, laid out exactly like [`Network`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    /// All partials in parameter order (per layer: weights then biases).
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }
}

/// Seeded uniform initialization in `+-init_scale / sqrt(fan_in)`; zero biases.
pub fn init_network(spec: &NetworkSpec, seed: u64, init_scale: f64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layer_dims()
        .into_iter()
        .map(|(i, o)| {
            let mut layer = Layer::zeros(i, o);
            let bound = init_scale / (i as f64).sqrt();
            if bound > 0.0 {
                layer
                    .weights
                    .iter_mut()
                    .for_each(|w| *w = rng.gen_range(-bound..=bound));
            }
            layer
        })
        .collect();
    Network {
        spec: spec.clone(),
        layers,
    }
}

impl Network {
    /// Builds a network from explicit layers; shapes must chain per `spec`.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::ShapeError(format!(
                "expected {} layers, found {}",
                dims.len(),
                layers.len()
            )));
        }
        for (k, ((i, o), l)) in dims.iter().zip(&layers).enumerate() {
            if l.in_dim != *i || l.out_dim != *o || l.weights.len() != i * o || l.biases.len() != *o
            {
                return Err(Error::ShapeError(format!(
                    "layer {k} does not match a {i} -> {o} layer"
                )));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::ShapeError(format!(
                    "layer {k} has non-finite parameters"
                )));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                return &mut l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                return &mut l.biases[idx];
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                actual: input.len(),
                context: "network input",
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if k != last {
                next.iter_mut()
                    .for_each(|z| *z = self.spec.activation.apply(*z));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Loss and exact parameter gradients for one sample.
    pub fn backward(&self, input: &[f64], target: &[f64]) -> Result<(Gradients, f64)> {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate_gradients(input, target, &mut grads, 1.0)?;
        Ok((grads, loss))
    }

    /// Adds `weight * d(loss)/d(params)` into `grads` and returns the loss.
    fn accumulate_gradients(
        &self,
        input: &[f64],
        target: &[f64],
        grads: &mut Gradients,
        weight: f64,
    ) -> Result<f64> {
        self.check_input(input)?;
        if target.len() != self.spec.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.output_dim,
                actual: target.len(),
                context: "network target",
            });
        }
        let act = self.spec.activation;
        let last = self.layers.len() - 1;

        // activations[k] is the input to layer k; pre[k] its pre-activation output.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.affine(&activations[k], &mut z);
            let a = if k == last {
                z.clone()
            } else {
                z.iter().map(|&v| act.apply(v)).collect()
            };
            pre.push(z);
            activations.push(a);
        }

        let output = &activations[self.layers.len()];
        let mut delta: Vec<f64> = output.iter().zip(target).map(|(o, t)| o - t).collect();
        let loss = 0.5 * delta.iter().map(|d| d * d).sum::<f64>();

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            let a_in = &activations[k];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let wd = weight * d;
                g.biases[o] += wd;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                row.iter_mut().zip(a_in).for_each(|(gw, a)| *gw += wd * a);
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            for (i, p) in prev.iter_mut().enumerate() {
                *p *= act.derivative(pre[k - 1][i], activations[k][i]);
            }
            delta = prev;
        }
        Ok(loss)
    }

    pub fn loss(&self, input: &[f64], target: &[f64]) -> Result<f64> {
        let out = self.forward(input)?;
        if target.len() != out.len() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                actual: target.len(),
                context: "network target",
            });
        }
        Ok(0.5
            * out
                .iter()
                .zip(target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>())
    }
}

pub fn forward(net: &Network, input: &[f64]) -> Result<Vec<f64>> {
    net.forward(input)
}

pub fn backward(net: &Network, input: &[f64], target: &[f64]) -> Result<(Gradients, f64)> {
    net.backward(input, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            weight_init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidValue(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidValue("momentum must lie in [0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidValue(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.weight_init_scale >= 0.0) {
            return Err(Error::InvalidValue("weight_init_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mean per-sample loss for each epoch, measured before each minibatch update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epoch_losses: Vec<f64>,
}

impl LossTrace {
    pub fn first(&self) -> f64 {
        self.epoch_losses[0]
    }

    pub fn last(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

/// Minibatch SGD with classical momentum; sample order is shuffled per epoch
/// from `cfg.seed`.
pub fn sgd_train(
    net: &Network,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(Network, LossTrace)> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            actual: targets.len(),
            context: "training targets",
        });
    }
    for (x, t) in inputs.iter().zip(targets) {
        net.check_input(x)?;
        if t.len() != net.spec.output_dim {
            return Err(Error::DimensionMismatch {
                expected: net.spec.output_dim,
                actual: t.len(),
                context: "training target",
            });
        }
    }

    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut velocity = Gradients::zeros_like(&net);
    let mut batch_grad = Gradients::zeros_like(&net);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            batch_grad.layers.iter_mut().for_each(|l| {
                l.weights.iter_mut().for_each(|v| *v = 0.0);
                l.biases.iter_mut().for_each(|v| *v = 0.0);
            });
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                total += net.accumulate_gradients(&inputs[i], &targets[i], &mut batch_grad, w)?;
            }
            for (v, g) in velocity.flat_mut().zip(batch_grad.flat()) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
            }
            for (p, v) in net.params_mut().zip(velocity.flat()) {
                *p += v;
            }
        }
        epoch_losses.push(total / inputs.len() as f64);
    }
    Ok((net, LossTrace { epoch_losses }))
}

/// Largest relative discrepancy between `analytic` and central differences.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn compare_gradients(
    net: &Network,
    input: &[f64],
    target: &[f64],
    epsilon: f64,
    analytic: &Gradients,
) -> Result<f64> {
    let analytic = analytic.flat();
    if analytic.len() != net.parameter_count() {
        return Err(Error::DimensionMismatch {
            expected: net.parameter_count(),
            actual: analytic.len(),
            context: "gradient entries",
        });
    }
    let mut probe = net.clone();
    let mut worst = 0.0_f64;
    for (idx, a) in analytic.iter().enumerate() {
        let original = *probe.param_mut(idx);
        *probe.param_mut(idx) = original + epsilon;
        let plus = probe.loss(input, target)?;
        *probe.param_mut(idx) = original - epsilon;
        let minus = probe.loss(input, target)?;
        *probe.param_mut(idx) = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub fn gradient_check(net: &Network, input: &[f64], target: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidValue("epsilon must be positive".into()));
    }
    let (grads, _) = net.backward(input, target)?;
    compare_gradients(net, input, target, epsilon, &grads)
}

/// A small random network with an input and target, for gradient checks.
#[derive(Debug, Clone)]
pub struct GradientProbe {
    pub net: Network,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Draws layer widths in `1..=max_dim`, up to two hidden layers, random
/// biases and standard-normal-ish inputs, all from `seed`.
pub fn random_probe(seed: u64, max_dim: usize, activation: Activation) -> GradientProbe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_dim = max_dim.max(1);
    let input_dim = rng.gen_range(1..=max_dim);
    let hidden: Vec<usize> = (0..rng.gen_range(0..=2))
        .map(|_| rng.gen_range(1..=max_dim))
        .collect();
    let output_dim = rng.gen_range(1..=max_dim);
    let spec = NetworkSpec {
        input_dim,
        hidden_dims: hidden,
        output_dim,
        activation,
    };
    let mut net = init_network(&spec, rng.gen(), 1.5);
    for l in net.layers_mut() {
        l.biases
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let input = (0..input_dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let target = (0..output_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GradientProbe { net, input, target }
}

pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub format_version: u32,
    pub spec: NetworkSpec,
    pub layers: Vec<LayerDocument>,
}

impl Network {
    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            format_version: NETWORK_FORMAT_VERSION,
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    weights: l.weights.clone(),
                    biases: l.biases.clone(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &NetworkDocument) -> Result<Self> {
        if doc.format_version != NETWORK_FORMAT_VERSION {
            return Err(Error::Version {
                found: doc.format_version,
                expected: NETWORK_FORMAT_VERSION,
            });
        }
        let dims = doc.spec.layer_dims();
        if dims.len() != doc.layers.len() {
            return Err(Error::ShapeError(format!(
                "spec implies {} layers, document has {}",
                dims.len(),
                doc.layers.len()
            )));
        }
        let layers = dims
            .iter()
            .zip(&doc.layers)
            .map(|(&(i, o), l)| Layer {
                in_dim: i,
                out_dim: o,
                weights: l.weights.clone(),
                biases: l.biases.clone(),
            })
            .collect();
        Self::from_layers(doc.spec.clone(), layers)
    }
}

pub fn serialize(net: &Network) -> Result<String> {
    Ok(serde_json::to_string(&net.to_document())?)
}

pub fn deserialize(text: &str) -> Result<Network> {
    let doc: NetworkDocument = serde_json::from_str(text)?;
    Network::from_document(&doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(i: usize, h: Vec<usize>, o: usize, act: Activation) -> NetworkSpec {
        NetworkSpec::new(i, h, o, act).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(5, vec![4, 3], 2, Activation::Tanh);
        let a = init_network(&s, 11, 1.0);
        let b = init_network(&s, 11, 1.0);
        assert_eq!(a, b);
        assert!(a
            .layers()
            .iter()
            .all(|l| l.biases.iter().all(|&b| b == 0.0)));
        assert_ne!(a, init_network(&s, 12, 1.0));
        let bound = 1.0 / 5f64.sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= bound));

        let z = init_network(&s, 11, 0.0);
        assert!(z
            .layers()
            .iter()
            .all(|l| l.weights.iter().all(|&w| w == 0.0)));
        assert_eq!(
            z.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn forward_examples() {
        let s = spec(2, vec![], 2, Activation::Tanh);
        let net = Network::from_layers(
            s,
            vec![Layer {
                in_dim: 2,
                out_dim: 2,
                weights: vec![1.0, 0.0, 0.0, 1.0],
                biases: vec![0.5, -1.0],
            }],
        )
        .unwrap();
        assert_eq!(net.forward(&[3.0, 4.0]).unwrap(), vec![3.5, 3.0]);

        let s = spec(2, vec![1], 1, Activation::Tanh);
        let net = Network::from_layers(
            s,
            vec![
                Layer {
                    in_dim: 2,
                    out_dim: 1,
                    weights: vec![1.0, 1.0],
                    biases: vec![0.0],
                },
                Layer {
                    in_dim: 1,
                    out_dim: 1,
                    weights: vec![2.0],
                    biases: vec![0.0],
                },
            ],
        )
        .unwrap();
        let out = net.forward(&[0.3, -0.1]).unwrap();
        assert!((out[0] - 2.0 * 0.2f64.tanh()).abs() < 1e-15);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn backward_hand_derivative() {
        let net = Network::from_layers(
            spec(1, vec![], 1, Activation::Tanh),
            vec![Layer {
                in_dim: 1,
                out_dim: 1,
                weights: vec![1.0],
                biases: vec![0.0],
            }],
        )
        .unwrap();
        let (g, loss) = net.backward(&[2.0], &[0.0]).unwrap();
        assert_eq!(loss, 2.0);
        assert_eq!(g.layers[0].weights, vec![4.0]);
        assert_eq!(g.layers[0].biases, vec![2.0]);
    }

    #[test]
    fn backward_at_target_is_zero() {
        let net = init_network(&spec(3, vec![4], 2, Activation::Relu), 1, 1.0);
        let x = [0.2, -0.4, 0.9];
        let y = net.forward(&x).unwrap();
        let (g, loss) = net.backward(&x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|&v| v == 0.0));
        assert!(gradient_check(&net, &x, &y, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn gradient_check_detects_corruption() {
        let net = init_network(&spec(4, vec![5, 3], 2, Activation::Tanh), 9, 1.0);
        let x = [0.3, -0.7, 0.1, 0.8];
        let t = [1.0, -0.5];
        assert!(gradient_check(&net, &x, &t, 1e-5).unwrap() < 1e-4);
        let (mut g, _) = net.backward(&x, &t).unwrap();
        // Corrupt the largest entry so the fault is well above the noise floor.
        let (idx, _) = g.flat().iter().enumerate().fold((0, 0.0), |acc, (i, v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        *g.flat_mut().nth(idx).unwrap() *= 2.0;
        assert!(compare_gradients(&net, &x, &t, 1e-5, &g).unwrap() > 0.3);
    }

    #[test]
    fn zero_rate_leaves_network_unchanged() {
        let net = init_network(&spec(3, vec![4], 2, Activation::Tanh), 2, 1.0);
        let xs = vec![vec![0.1, 0.2, 0.3], vec![-0.3, 0.0, 1.0]];
        let ys = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..Default::default()
        };
        let (trained, trace) = sgd_train(&net, &xs, &ys, &cfg).unwrap();
        assert_eq!(trained, net);
        assert_eq!(trace.epoch_losses.len(), 3);
    }

    #[test]
    fn training_is_deterministic_and_rejects_empty() {
        let net = init_network(&spec(2, vec![3], 1, Activation::Tanh), 2, 1.0);
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 / 20.0, 1.0 - i as f64 / 10.0])
            .collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] * x[1]]).collect();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            seed: 77,
            ..Default::default()
        };
        let a = sgd_train(&net, &xs, &ys, &cfg).unwrap();
        let b = sgd_train(&net, &xs, &ys, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sgd_train(&net, &[], &[], &cfg),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn document_round_trip_and_tamper() {
        let net = init_network(&spec(3, vec![2], 4, Activation::Relu), 5, 1.0);
        let text = serialize(&net).unwrap();
        assert_eq!(deserialize(&text).unwrap(), net);

        let affine = init_network(&spec(3, vec![], 2, Activation::Tanh), 5, 1.0);
        let back = deserialize(&serialize(&affine).unwrap()).unwrap();
        assert_eq!(back, affine);
        assert!(back.spec().hidden_dims.is_empty());

        let mut doc = net.to_document();
        doc.spec.input_dim = 4;
        let err = Network::from_document(&doc).unwrap_err();
        assert!(matches!(err, Error::ShapeError(_)), "{err}");

        let mut doc = net.to_document();
        doc.format_version = 99;
        assert!(matches!(
            Network::from_document(&doc),
            Err(Error::Version { .. })
        ));
    }
}
