//! Small seeded trainer (dense, conv, ReLU; softmax cross-entropy; Adam).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::metrics::{compute_metrics, confusion, MetricsError, MetricsReport};
use crate::network::{Conv2d, LayerDoc, ModelDoc, Network, NetworkError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("loss became {loss} in epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d { filters: usize, kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2] },
    Relu,
}

/// Parses hidden layers from a comma list. `N` is a dense layer of `N` units,
/// `convF` a convolution with `F` 3×3 filters at stride 2 and no padding;
/// each is followed by a ReLU. `convF:K:S:P` sets kernel, stride and padding.
/// The empty string means no hidden layers.
pub fn parse_arch(text: &str) -> Result<Vec<LayerSpec>, TrainError> {
    let mut out = Vec::new();
    for tok in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let bad = || TrainError::Arch(format!("cannot parse layer {tok:?}"));
        if let Some(rest) = tok.strip_prefix("conv") {
            let parts: Vec<usize> =
                rest.split(':').map(|p| p.parse::<usize>().map_err(|_| bad())).collect::<Result<_, _>>()?;
            let (filters, k, s, p) = match parts.as_slice() {
                [f] => (*f, 3, 2, 0),
                [f, k, s, p] => (*f, *k, *s, *p),
                _ => return Err(bad()),
            };
            out.push(LayerSpec::Conv2d { filters, kernel: [k, k], stride: [s, s], padding: [p, p] });
        } else {
            out.push(LayerSpec::Dense { units: tok.parse().map_err(|_| bad())? });
        }
        out.push(LayerSpec::Relu);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layers; a dense output layer is appended.
    pub hidden: Vec<LayerSpec>,
    /// `(channels, height, width)` of the input, needed by conv layers.
    /// When absent, a square single-channel image is assumed.
    pub input_shape: Option<[usize; 3]>,
    /// Defaults to one more than the largest training label.
    pub num_classes: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            input_shape: None,
            num_classes: None,
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return err("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return err("batch size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err(format!("learning rate {} must be positive", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return err(format!("{name} = {b} is outside [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return err(format!("adam eps {} must be positive", self.adam_eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub doc: ModelDoc,
    pub network: Network,
    pub train_accuracy: f64,
    /// Mean cross-entropy over each epoch's minibatch passes.
    pub epoch_losses: Vec<f64>,
}

struct Param {
    value: Vec<f64>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    fn new(value: Vec<f64>) -> Self {
        let n = value.len();
        Self { value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] }
    }

    fn adam(&mut self, cfg: &TrainConfig, t: i32, scale: f64) {
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.value.len() {
            let g = self.grad[i] * scale;
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            self.value[i] -= cfg.lr * mh / (vh.sqrt() + cfg.adam_eps);
            self.grad[i] = 0.0;
        }
    }
}

enum TLayer {
    Dense {
        n_in: usize,
        n_out: usize,
        w: Param,
        b: Param,
    },
    Conv {
        shape: Conv2d,
        /// (output, input, flat weight index)
        taps: Vec<(usize, usize, usize)>,
        per_filter: usize,
        w: Param,
        b: Param,
    },
    Relu,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let r = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-r..=r)).collect()
}

fn build_layers(
    hidden: &[LayerSpec],
    input_dim: usize,
    input_shape: Option<[usize; 3]>,
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TLayer>, TrainError> {
    let mut layers = Vec::new();
    let mut width = input_dim;
    // spatial shape of the current activation, if it still has one
    let mut shape = match input_shape {
        Some(s) if s.iter().product::<usize>() != input_dim => {
            return Err(TrainError::Arch(format!("input shape {s:?} does not hold {input_dim} values")))
        }
        Some(s) => Some(s),
        None => {
            let side = (input_dim as f64).sqrt().round() as usize;
            (side * side == input_dim).then_some([1, side, side])
        }
    };
    let out_layer = LayerSpec::Dense { units: num_classes };
    for (k, spec) in hidden.iter().chain(std::iter::once(&out_layer)).enumerate() {
        match *spec {
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(TrainError::Arch(format!("layer {k} has no units")));
                }
                layers.push(TLayer::Dense {
                    n_in: width,
                    n_out: units,
                    w: Param::new(uniform(rng, units * width, width)),
                    b: Param::new(vec![0.0; units]),
                });
                width = units;
                shape = None;
            }
            LayerSpec::Conv2d { filters, kernel, stride, padding } => {
                let in_shape =
                    shape.ok_or_else(|| TrainError::Arch(format!("conv layer {k} needs an image-shaped input")))?;
                let conv = Conv2d { in_shape, filters, kernel, stride, padding, weights: Vec::new(), bias: Vec::new() };
                let (oh, ow) = conv
                    .out_hw()
                    .filter(|_| filters > 0)
                    .ok_or_else(|| TrainError::Arch(format!("conv layer {k} does not fit its input")))?;
                let [c, _, _] = in_shape;
                let [kh, kw] = kernel;
                let mut taps = Vec::new();
                conv.for_each_tap(|o, i, [f, ci, ky, kx]| {
                    taps.push((o, i, ((f * c + ci) * kh + ky) * kw + kx));
                });
                let fan_in = c * kh * kw;
                layers.push(TLayer::Conv {
                    taps,
                    per_filter: oh * ow,
                    w: Param::new(uniform(rng, filters * fan_in, fan_in)),
                    b: Param::new(vec![0.0; filters]),
                    shape: conv,
                });
                width = filters * oh * ow;
                shape = Some([filters, oh, ow]);
            }
            LayerSpec::Relu => layers.push(TLayer::Relu),
        }
    }
    Ok(layers)
}

impl TLayer {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TLayer::Dense { n_in, n_out, w, b } => (0..*n_out)
                .map(|o| {
                    let row = &w.value[o * n_in..(o + 1) * n_in];
                    let mut acc = 0.0;
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    acc + b.value[o]
                })
                .collect(),
            TLayer::Conv { taps, per_filter, w, b, .. } => {
                let mut out: Vec<f64> = (0..b.value.len() * per_filter).map(|o| b.value[o / per_filter]).collect();
                for &(o, i, wi) in taps {
                    out[o] += w.value[wi] * x[i];
                }
                out
            }
            TLayer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, x: &[f64], g: &[f64]) -> Vec<f64> {
        match self {
            TLayer::Dense { n_in, n_out, w, b } => {
                let mut gin = vec![0.0; *n_in];
                for o in 0..*n_out {
                    let go = g[o];
                    b.grad[o] += go;
                    let base = o * *n_in;
                    for i in 0..*n_in {
                        w.grad[base + i] += go * x[i];
                        gin[i] += go * w.value[base + i];
                    }
                }
                gin
            }
            TLayer::Conv { taps, per_filter, w, b, .. } => {
                let mut gin = vec![0.0; x.len()];
                for (o, go) in g.iter().enumerate() {
                    b.grad[o / *per_filter] += go;
                }
                for &(o, i, wi) in taps.iter() {
                    w.grad[wi] += g[o] * x[i];
                    gin[i] += g[o] * w.value[wi];
                }
                gin
            }
            TLayer::Relu => x.iter().zip(g).map(|(v, gv)| if *v > 0.0 { *gv } else { 0.0 }).collect(),
        }
    }

    fn params(&mut self) -> Vec<&mut Param> {
        match self {
            TLayer::Dense { w, b, .. } | TLayer::Conv { w, b, .. } => vec![w, b],
            TLayer::Relu => Vec::new(),
        }
    }

    fn to_doc(&self) -> LayerDoc {
        match self {
            TLayer::Dense { n_in, w, b, .. } => {
                LayerDoc::Dense { weights: w.value.chunks(*n_in).map(<[f64]>::to_vec).collect(), bias: b.value.clone() }
            }
            TLayer::Conv { shape, w, b, .. } => {
                let [c, _, _] = shape.in_shape;
                let [kh, kw] = shape.kernel;
                let weights = w
                    .value
                    .chunks(c * kh * kw)
                    .map(|f| f.chunks(kh * kw).map(|ch| ch.chunks(kw).map(<[f64]>::to_vec).collect()).collect())
                    .collect();
                LayerDoc::Conv2d(Conv2d { weights, bias: b.value.clone(), ..shape.clone() })
            }
            TLayer::Relu => LayerDoc::Relu,
        }
    }
}

/// Cross-entropy of softmax(logits) at `label`, and its gradient.
fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Trains on `data` with minibatch Adam. Weights start uniform in
/// `±1/√fan_in`, biases at zero; the same seed gives the same model.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Data("no training rows".into()));
    }
    let input_dim = data.dim();
    let num_classes = cfg.num_classes.unwrap_or_else(|| data.num_classes()).max(1);
    if let Some(bad) = data.labels.iter().find(|&&y| y >= num_classes) {
        return Err(TrainError::Data(format!("label {bad} is not below {num_classes}")));
    }
    if let Some((i, r)) = data.rows.iter().enumerate().find(|(_, r)| r.iter().any(|v| !v.is_finite())) {
        return Err(TrainError::Data(format!("row {i} has a non-finite value {r:?}")));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut layers = build_layers(&cfg.hidden, input_dim, cfg.input_shape, num_classes, &mut init_rng)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch_loss = 0.0;
            for &s in idx {
                let mut acts = vec![data.rows[s].clone()];
                for l in &layers {
                    let next = l.forward(acts.last().expect("nonempty"));
                    acts.push(next);
                }
                let (loss, mut g) = softmax_xent(acts.last().expect("nonempty"), data.labels[s]);
                batch_loss += loss;
                for (k, l) in layers.iter_mut().enumerate().rev() {
                    g = l.backward(&acts[k], &g);
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch, loss: batch_loss });
            }
            epoch_loss += batch_loss;
            step = step.saturating_add(1);
            let scale = 1.0 / idx.len() as f64;
            for l in layers.iter_mut() {
                for p in l.params() {
                    p.adam(cfg, step, scale);
                }
            }
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
    }

    let doc = ModelDoc {
        version: 1,
        input_dim,
        num_classes,
        labels: None,
        layers: layers.iter().map(TLayer::to_doc).collect(),
    };
    let network = doc.build()?;
    let train_accuracy = evaluate(&network, data)?.accuracy;
    Ok(TrainOutcome { doc, network, train_accuracy, epoch_losses })
}

pub fn predict_all(net: &Network, data: &Dataset) -> Result<Vec<usize>, TrainError> {
    data.rows.iter().map(|x| Ok(net.infer(x)?.1)).collect()
}

pub fn evaluate(net: &Network, data: &Dataset) -> Result<MetricsReport, TrainError> {
    let preds = predict_all(net, data)?;
    Ok(compute_metrics(&confusion(&preds, &data.labels, net.num_classes())?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let c = if y == 0 { -2.0 } else { 2.0 };
            rows.push(vec![c + rng.gen_range(-1.0..1.0), c + rng.gen_range(-1.0..1.0)]);
            labels.push(y);
        }
        Dataset::unnamed(rows, labels).unwrap()
    }

    #[test]
    fn arch_parsing() {
        assert_eq!(parse_arch("").unwrap(), vec![]);
        assert_eq!(
            parse_arch("16, 8").unwrap(),
            vec![LayerSpec::Dense { units: 16 }, LayerSpec::Relu, LayerSpec::Dense { units: 8 }, LayerSpec::Relu]
        );
        assert_eq!(
            parse_arch("conv4").unwrap()[0],
            LayerSpec::Conv2d { filters: 4, kernel: [3, 3], stride: [2, 2], padding: [0, 0] }
        );
        assert_eq!(
            parse_arch("conv16:5:1:2").unwrap()[0],
            LayerSpec::Conv2d { filters: 16, kernel: [5, 5], stride: [1, 1], padding: [2, 2] }
        );
        assert!(parse_arch("dense").is_err());
        assert!(parse_arch("conv4:3").is_err());
    }

    #[test]
    fn config_errors() {
        let ds = blobs(10, 0);
        for cfg in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { lr: -1.0, ..Default::default() },
            TrainConfig { beta2: 1.0, ..Default::default() },
        ] {
            assert!(matches!(train(&ds, &cfg), Err(TrainError::Config(_))));
        }
        let conv = TrainConfig { hidden: parse_arch("conv4").unwrap(), ..Default::default() };
        // two inputs is not a square image
        assert!(matches!(train(&ds, &conv), Err(TrainError::Arch(_))));
        let few = TrainConfig { num_classes: Some(1), ..Default::default() };
        assert!(matches!(train(&ds, &few), Err(TrainError::Data(_))));
    }

    #[test]
    fn separable_blobs_linear() {
        let ds = blobs(200, 1);
        let cfg = TrainConfig { epochs: 30, batch_size: 16, lr: 1e-2, seed: 5, ..Default::default() };
        let out = train(&ds, &cfg).unwrap();
        assert!(out.train_accuracy >= 0.95, "accuracy {}", out.train_accuracy);
        assert!(out.epoch_losses.last() <= out.epoch_losses.first());
        assert_eq!(out.network.input_dim(), 2);
        assert_eq!(out.network.num_classes(), 2);
    }

    #[test]
    fn deterministic_bytes() {
        let ds = blobs(60, 2);
        let cfg =
            TrainConfig { hidden: parse_arch("4").unwrap(), epochs: 3, batch_size: 8, seed: 11, ..Default::default() };
        let a = train(&ds, &cfg).unwrap().doc.to_json();
        let b = train(&ds, &cfg).unwrap().doc.to_json();
        assert_eq!(a, b);
        let c = train(&ds, &TrainConfig { seed: 12, ..cfg }).unwrap().doc.to_json();
        assert_ne!(a, c);
    }

    /// Finite differences against the analytic gradient of one sample.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hidden = parse_arch("conv2:2:1:1,3").unwrap();
        let mut layers = build_layers(&hidden, 9, Some([1, 3, 3]), 3, &mut rng).unwrap();
        let x: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let label = 1;
        let loss_of = |layers: &[TLayer]| {
            let mut a = x.clone();
            for l in layers {
                a = l.forward(&a);
            }
            softmax_xent(&a, label).0
        };
        let mut acts = vec![x.clone()];
        for l in &layers {
            let n = l.forward(acts.last().unwrap());
            acts.push(n);
        }
        let (_, mut g) = softmax_xent(acts.last().unwrap(), label);
        for (k, l) in layers.iter_mut().enumerate().rev() {
            g = l.backward(&acts[k], &g);
        }
        let h = 1e-6;
        for li in 0..layers.len() {
            let n = layers[li].params().len();
            for pi in 0..n {
                let len = layers[li].params()[pi].value.len();
                for j in 0..len {
                    let analytic = layers[li].params()[pi].grad[j];
                    layers[li].params()[pi].value[j] += h;
                    let up = loss_of(&layers);
                    layers[li].params()[pi].value[j] -= 2.0 * h;
                    let down = loss_of(&layers);
                    layers[li].params()[pi].value[j] += h;
                    let numeric = (up - down) / (2.0 * h);
                    assert!((analytic - numeric).abs() < 1e-6, "layer {li} param {pi}[{j}]: {analytic} vs {numeric}");
                }
            }
        }
    }

    #[test]
    fn conv_model_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..16).map(|_| rng.gen::<f64>()).collect()).collect();
        let labels = (0..20).map(|i| i % 3).collect();
        let ds = Dataset::unnamed(rows, labels).unwrap();
        let cfg = TrainConfig { hidden: parse_arch("conv4").unwrap(), epochs: 2, batch_size: 5, ..Default::default() };
        let out = train(&ds, &cfg).unwrap();
        assert!(matches!(out.doc.layers[0], LayerDoc::Conv2d(_)));
        let reloaded = crate::network::load_model(&out.doc.to_json()).unwrap();
        for x in &ds.rows {
            assert_eq!(reloaded.forward(x).unwrap(), out.network.forward(x).unwrap());
        }
    }

    #[test]
    fn memorized_set_is_perfect() {
        let ds = blobs(40, 4);
        let cfg =
            TrainConfig { hidden: parse_arch("8").unwrap(), epochs: 60, batch_size: 8, lr: 1e-2, ..Default::default() };
        let out = train(&ds, &cfg).unwrap();
        let m = evaluate(&out.network, &ds).unwrap();
        assert_eq!((m.accuracy, m.precision_macro, m.recall_macro, m.f1), (1.0, 1.0, 1.0, 1.0));
    }
}
