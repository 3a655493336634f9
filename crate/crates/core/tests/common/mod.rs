#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use starcert::network::{LayerDoc, ModelDoc, Network};

/// Dense ReLU network with the given layer widths, weights uniform in ±1.
pub fn random_doc(rng: &mut ChaCha8Rng, widths: &[usize]) -> ModelDoc {
    let mut layers = Vec::new();
    for (k, pair) in widths.windows(2).enumerate() {
        let weights = (0..pair[1]).map(|_| (0..pair[0]).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let bias = (0..pair[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
        layers.push(LayerDoc::Dense { weights, bias });
        if k + 2 < widths.len() {
            layers.push(LayerDoc::Relu);
        }
    }
    ModelDoc { version: 1, input_dim: widths[0], num_classes: *widths.last().unwrap(), labels: None, layers }
}

pub fn random_net(rng: &mut ChaCha8Rng, widths: &[usize]) -> Network {
    random_doc(rng, widths).build().unwrap()
}

/// Straight-line evaluation of a dense ReLU document, independent of `Network`.
pub fn reference_eval(doc: &ModelDoc, x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    for layer in &doc.layers {
        v = match layer {
            LayerDoc::Dense { weights, bias } => weights
                .iter()
                .zip(bias)
                .map(|(row, b)| row.iter().zip(&v).map(|(w, x)| w * x).sum::<f64>() + b)
                .collect(),
            LayerDoc::Relu => v.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect(),
            LayerDoc::Conv2d(_) => unimplemented!("dense documents only"),
        };
    }
    v
}

pub fn sample_box(rng: &mut ChaCha8Rng, lb: &[f64], ub: &[f64]) -> Vec<f64> {
    lb.iter().zip(ub).map(|(&l, &u)| if l == u { l } else { rng.gen_range(l..=u) }).collect()
}

pub fn argmax_low(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}
