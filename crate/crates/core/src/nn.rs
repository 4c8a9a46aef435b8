//! Bias-free (by default) fully-connected autoencoders trained with plain SGD.
//!
//! A network is an ordered list of layers `a_i = act_i(W_i a_{i-1} + b_i)`.
//! The first `bottleneck_index` layers form the encoder, the rest the decoder,
//! so `decode(encode(x))` runs exactly the same arithmetic as `forward(x)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    /// Positively homogeneous of degree one: `act(c z) = c act(z)` for `c > 0`.
    pub fn is_homogeneous(self) -> bool {
        matches!(self, Activation::Relu | Activation::Identity)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Builds the layer list for `dims = [M, h_1, ..., M]`: hidden layers use
/// `hidden`, the last layer uses `output`.
pub fn arch_from_dims(dims: &[usize], hidden: Activation, output: Activation) -> Vec<LayerSpec> {
    let d = dims.len().saturating_sub(1);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| LayerSpec::new(w[0], w[1], if i + 1 == d { output } else { hidden }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, activation: Activation) -> Self {
        Self {
            weights,
            bias: None,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Returns `(pre_activation, activation)`.
    fn eval(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut z = self.weights.matvec_unchecked(x);
        if let Some(b) = &self.bias {
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
        }
        let a = z.iter().map(|&v| self.activation.apply(v)).collect();
        (z, a)
    }
}

/// Trained (or initialized) autoencoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Layer>,
    bottleneck_index: usize,
}

impl NetworkParams {
    /// `bottleneck_index` is the number of encoder layers, in `1..=layers.len()`.
    pub fn new(layers: Vec<Layer>, bottleneck_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::invalid(format!(
                    "layer {} outputs {} units but layer {} expects {}",
                    i,
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if let Some(b) = &l.bias {
                if b.len() != l.out_dim() {
                    return Err(Error::invalid(format!(
                        "layer {i} bias has length {} but {} outputs",
                        b.len(),
                        l.out_dim()
                    )));
                }
            }
        }
        if bottleneck_index == 0 || bottleneck_index > layers.len() {
            return Err(Error::invalid(format!(
                "bottleneck index {bottleneck_index} outside 1..={}",
                layers.len()
            )));
        }
        Ok(Self {
            layers,
            bottleneck_index,
        })
    }

    /// Seeded uniform fan-based initialization, `U(-√(6/(in+out)), √(6/(in+out)))`.
    pub fn init(arch: &[LayerSpec], bias: bool, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(arch, bias, &mut rng)
    }

    fn init_with_rng(arch: &[LayerSpec], bias: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        validate_arch(arch)?;
        let layers = arch
            .iter()
            .map(|spec| {
                let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
                let w = Matrix::from_fn(spec.out_dim, spec.in_dim, |_, _| {
                    rng.gen_range(-limit..limit)
                });
                Layer {
                    weights: w,
                    bias: bias.then(|| vec![0.0; spec.out_dim]),
                    activation: spec.activation,
                }
            })
            .collect();
        Self::new(layers, bottleneck_of(arch))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn bottleneck_index(&self) -> usize {
        self.bottleneck_index
    }

    /// Number of weight matrices `d`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Largest number of output units over the layers, `h`.
    pub fn max_width(&self) -> usize {
        self.layers.iter().map(Layer::out_dim).max().unwrap_or(0)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.layers[self.bottleneck_index - 1].out_dim()
    }

    /// `[in_dim, out_1, ..., out_d]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn has_bias(&self) -> bool {
        self.layers.iter().any(|l| l.bias.is_some())
    }

    pub fn encoder(&self) -> &[Layer] {
        &self.layers[..self.bottleneck_index]
    }

    pub fn decoder(&self) -> &[Layer] {
        &self.layers[self.bottleneck_index..]
    }

    pub fn weights(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().map(|l| &l.weights)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.values().len() + l.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("forward input", self.input_dim(), x.len())?;
        Ok(run_layers(&self.layers, x))
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("encode input", self.input_dim(), x.len())?;
        Ok(run_layers(self.encoder(), x))
    }

    /// An empty decoder (bottleneck at the last layer) is the identity map.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("decode input", self.code_dim(), z.len())?;
        Ok(run_layers(self.decoder(), z))
    }

    /// Rescales every weight matrix to the common spectral norm
    /// `β = (Π‖W_i‖₂)^{1/d}`. Requires homogeneous activations between
    /// layers; the output activation is unconstrained because it acts after
    /// the last (rescaled) pre-activation, which is preserved exactly.
    pub fn normalize_weights(&self) -> Result<NetworkParams> {
        let d = self.depth();
        for (i, l) in self.layers[..d - 1].iter().enumerate() {
            if !l.activation.is_homogeneous() {
                return Err(Error::invalid(format!(
                    "layer {i} uses {} which is not positively homogeneous",
                    l.activation.as_str()
                )));
            }
        }
        let norms: Vec<f64> = self
            .layers
            .iter()
            .map(|l| bounds::spectral_norm_default(&l.weights).value)
            .collect();
        if let Some(i) = norms.iter().position(|&s| s <= 0.0) {
            return Err(Error::Degenerate(format!(
                "layer {i} has zero spectral norm"
            )));
        }
        let log_beta = norms.iter().map(|s| s.ln()).sum::<f64>() / d as f64;
        let beta = log_beta.exp();
        let mut out = self.clone();
        let mut cumulative = 1.0;
        for (layer, &s) in out.layers.iter_mut().zip(&norms) {
            let c = beta / s;
            cumulative *= c;
            layer.weights.scale(c);
            if let Some(b) = &mut layer.bias {
                for v in b.iter_mut() {
                    *v *= cumulative;
                }
            }
        }
        Ok(out)
    }
}

fn run_layers(layers: &[Layer], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for l in layers {
        a = l.eval(&a).1;
    }
    a
}

fn validate_arch(arch: &[LayerSpec]) -> Result<()> {
    if arch.is_empty() {
        return Err(Error::invalid("architecture has no layers"));
    }
    for (i, s) in arch.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::invalid(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, w) in arch.windows(2).enumerate() {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::invalid(format!(
                "layer {i} out_dim {} != layer {} in_dim {}",
                w[0].out_dim,
                i + 1,
                w[1].in_dim
            )));
        }
    }
    Ok(())
}

/// Number of encoder layers: up to and including the narrowest layer
/// (first occurrence).
fn bottleneck_of(arch: &[LayerSpec]) -> usize {
    let mut best = 0;
    for (i, s) in arch.iter().enumerate() {
        if s.out_dim < arch[best].out_dim {
            best = i;
        }
    }
    best + 1
}

/// Checks the autoencoder shape: input dim equals output dim and some layer
/// narrows below it.
pub fn validate_autoencoder(arch: &[LayerSpec]) -> Result<()> {
    validate_arch(arch)?;
    let m = arch[0].in_dim;
    let out = arch[arch.len() - 1].out_dim;
    if m != out {
        return Err(Error::invalid(format!(
            "autoencoder input dim {m} != output dim {out}"
        )));
    }
    if !arch.iter().any(|s| s.out_dim < m) {
        return Err(Error::invalid(
            "autoencoder has no bottleneck narrower than the input",
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateLoss {
    Mse,
    Bce,
}

impl SurrogateLoss {
    /// Per-sample loss, averaged over entries.
    pub fn value(self, x: &[f64], out: &[f64]) -> f64 {
        let m = x.len() as f64;
        match self {
            SurrogateLoss::Mse => {
                x.iter()
                    .zip(out)
                    .map(|(a, b)| (b - a) * (b - a))
                    .sum::<f64>()
                    / m
            }
            SurrogateLoss::Bce => {
                -x.iter()
                    .zip(out)
                    .map(|(&t, &p)| {
                        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        t * p.ln() + (1.0 - t) * (1.0 - p).ln()
                    })
                    .sum::<f64>()
                    / m
            }
        }
    }

    fn output_grad(self, x: &[f64], out: &[f64]) -> Vec<f64> {
        let m = x.len() as f64;
        match self {
            SurrogateLoss::Mse => x.iter().zip(out).map(|(a, b)| 2.0 * (b - a) / m).collect(),
            SurrogateLoss::Bce => x
                .iter()
                .zip(out)
                .map(|(&t, &p)| {
                    // the clamp is flat outside its range
                    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                        0.0
                    } else {
                        (-(t / p) + (1.0 - t) / (1.0 - p)) / m
                    }
                })
                .collect(),
        }
    }
}

/// Gradients of the mean surrogate loss, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Option<Vec<f64>>>,
    pub loss: f64,
}

/// Mean surrogate reconstruction loss over `batch`.
pub fn surrogate_loss<X: AsRef<[f64]>>(
    params: &NetworkParams,
    batch: &[X],
    loss: SurrogateLoss,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for x in batch {
        let x = x.as_ref();
        let out = params.forward(x)?;
        check_len("reconstruction target", out.len(), x.len())?;
        total += loss.value(x, &out);
    }
    Ok(total / batch.len() as f64)
}

/// Reverse-mode gradient of the mean surrogate loss over `batch`.
pub fn gradient<X: AsRef<[f64]>>(
    params: &NetworkParams,
    batch: &[X],
    loss: SurrogateLoss,
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if params.output_dim() != params.input_dim() {
        return Err(Error::Dimension {
            context: "reconstruction output",
            expected: params.input_dim(),
            got: params.output_dim(),
        });
    }
    let layers = params.layers();
    let mut gw: Vec<Matrix> = layers
        .iter()
        .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
        .collect();
    let mut gb: Vec<Option<Vec<f64>>> = layers
        .iter()
        .map(|l| l.bias.as_ref().map(|b| vec![0.0; b.len()]))
        .collect();
    let mut total = 0.0;
    let mut pre = Vec::with_capacity(layers.len());
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);

    for x in batch {
        let x = x.as_ref();
        check_len("gradient input", params.input_dim(), x.len())?;
        pre.clear();
        acts.clear();
        acts.push(x.to_vec());
        for l in layers {
            let (z, a) = l.eval(acts.last().expect("non-empty"));
            pre.push(z);
            acts.push(a);
        }
        let out = acts.last().expect("non-empty");
        total += loss.value(x, out);
        let mut upstream = loss.output_grad(x, out);
        for (i, l) in layers.iter().enumerate().rev() {
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&pre[i])
                .zip(&acts[i + 1])
                .map(|((g, &z), &a)| g * l.activation.derivative(z, a))
                .collect();
            let input = &acts[i];
            let g = gw[i].values_mut();
            let cols = l.in_dim();
            for (r, &dr) in delta.iter().enumerate() {
                if dr == 0.0 {
                    continue;
                }
                for (gv, &xv) in g[r * cols..(r + 1) * cols].iter_mut().zip(input) {
                    *gv += dr * xv;
                }
            }
            if let Some(b) = &mut gb[i] {
                for (bv, &dr) in b.iter_mut().zip(&delta) {
                    *bv += dr;
                }
            }
            if i > 0 {
                upstream = l.weights.matvec_transposed_unchecked(&delta);
            }
        }
    }
    let n = batch.len() as f64;
    for g in &mut gw {
        g.scale(1.0 / n);
    }
    for b in gb.iter_mut().flatten() {
        for v in b.iter_mut() {
            *v /= n;
        }
    }
    Ok(Gradients {
        weights: gw,
        biases: gb,
        loss: total / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub surrogate_loss: SurrogateLoss,
    /// Biased layers fall outside the bias-free setting the bounds assume.
    #[serde(default)]
    pub bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 40,
            batch_size: 16,
            seed: 0,
            surrogate_loss: SurrogateLoss::Bce,
            bias: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// `loss_history[0]` is the surrogate loss at initialization,
    /// `loss_history[e]` the loss after epoch `e`.
    pub loss_history: Vec<f64>,
}

/// Mini-batch SGD without momentum. Deterministic in `(arch, data, cfg)`.
pub fn train(arch: &[LayerSpec], data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    validate_autoencoder(arch)?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    check_len("dataset dimension", arch[0].in_dim, data.dim())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetworkParams::init_with_rng(arch, cfg.bias, &mut rng)?;
    let samples = data.samples();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    history.push(surrogate_loss(&params, samples, cfg.surrogate_loss)?);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].as_slice()));
            let g = gradient(&params, &batch, cfg.surrogate_loss)?;
            if cfg.learning_rate == 0.0 {
                continue;
            }
            for ((layer, gw), gb) in params.layers.iter_mut().zip(&g.weights).zip(&g.biases) {
                for (w, d) in layer.weights.values_mut().iter_mut().zip(gw.values()) {
                    *w -= cfg.learning_rate * d;
                }
                if let (Some(b), Some(gb)) = (&mut layer.bias, gb) {
                    for (bv, d) in b.iter_mut().zip(gb) {
                        *bv -= cfg.learning_rate * d;
                    }
                }
            }
        }
        let epoch_loss = surrogate_loss(&params, samples, cfg.surrogate_loss)?;
        if !epoch_loss.is_finite() || !params.weights().all(Matrix::is_finite) {
            return Err(Error::Numeric(
                "training diverged to non-finite values".into(),
            ));
        }
        history.push(epoch_loss);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}
