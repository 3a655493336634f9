//! Browser bindings for a small demo page.
//!
//! The page gets a fixed 2-input, 3-class network trained at startup and can
//! verify L∞ boxes on it, sweep the radius, and turn dropped files into
//! byteplots. Every export has a plain-Rust twin (`*_json`, `byteplot_rgba`)
//! so the logic is testable without a browser.

use std::cell::OnceCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use starcert::data::Dataset;
use starcert::network::Network;
use starcert::preprocess::bytes_to_image;
use starcert::specgen::InputSpec;
use starcert::trainer::{parse_arch, train, TrainConfig};
use starcert::verifier::{verify_exact, verify_query, verify_query_with_hints, ExactBudget, VerdictCode, VerifyConfig};
use wasm_bindgen::prelude::*;

pub const CENTERS: [[f64; 2]; 3] = [[0.0, 0.6], [-0.52, -0.3], [0.52, -0.3]];

thread_local! {
    static DEMO: OnceCell<Network> = const { OnceCell::new() };
}

/// Points of [-1, 1]² labeled by their nearest center.
pub fn demo_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let d = |c: &[f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        let label = (0..3).min_by(|&a, &b| d(&CENTERS[a]).total_cmp(&d(&CENTERS[b]))).unwrap();
        rows.push(p.to_vec());
        labels.push(label);
    }
    Dataset::unnamed(rows, labels).expect("demo data is well formed")
}

pub fn demo_network() -> Network {
    let cfg = TrainConfig {
        hidden: parse_arch("8,8").unwrap(),
        epochs: 60,
        batch_size: 32,
        lr: 1e-2,
        seed: 7,
        ..Default::default()
    };
    train(&demo_data(600, 7), &cfg).expect("demo training succeeds").network
}

fn with_net<T>(f: impl FnOnce(&Network) -> T) -> T {
    DEMO.with(|cell| f(cell.get_or_init(demo_network)))
}

fn class_at(net: &Network, x: f64, y: f64) -> usize {
    net.infer(&[x, y]).map(|(_, c)| c).unwrap_or(0)
}

/// Verdict for the box of radius `eps` around `(x, y)`, targeting the class
/// predicted at the center.
pub fn verify_json(net: &Network, x: f64, y: f64, eps: f64, exact: bool, seed: u64) -> Result<String, String> {
    let target = class_at(net, x, y);
    let spec = InputSpec::from_radius(vec![x, y], eps, target);
    let verdict = if exact {
        verify_exact(net, &spec, &ExactBudget::default())
    } else {
        verify_query(net, &spec, &VerifyConfig { seed, ..Default::default() })
    }
    .map_err(|e| e.to_string())?;
    Ok(json!({
        "target": target,
        "word": verdict.code.word(),
        "verdict": serde_json::to_value(&verdict).map_err(|e| e.to_string())?,
    })
    .to_string())
}

/// Verdicts over `steps` radii in `(0, max_eps]`, reusing counterexamples as
/// the box grows.
pub fn sweep_json(net: &Network, x: f64, y: f64, max_eps: f64, steps: usize, seed: u64) -> Result<String, String> {
    if steps == 0 || max_eps.is_nan() || max_eps <= 0.0 {
        return Err("need at least one step and a positive radius".into());
    }
    let target = class_at(net, x, y);
    let cfg = VerifyConfig { seed, ..Default::default() };
    let mut hints = Vec::new();
    let mut points = Vec::with_capacity(steps);
    let mut certified = 0.0;
    let mut unbroken = true;
    for i in 1..=steps {
        let eps = max_eps * i as f64 / steps as f64;
        let spec = InputSpec::from_radius(vec![x, y], eps, target);
        let v = verify_query_with_hints(net, &spec, &cfg, &hints).map_err(|e| e.to_string())?;
        unbroken &= v.code == VerdictCode::Robust;
        if unbroken {
            certified = eps;
        }
        if let Some(c) = &v.counterexample {
            hints.push(c.clone());
        }
        points.push(json!({ "eps": eps, "code": v.code as u8, "stage": v.stage.name(), "time_s": v.timings.total }));
    }
    Ok(json!({ "target": target, "certified_eps": certified, "points": points }).to_string())
}

/// Grayscale byteplot as RGBA, ready for `ImageData`.
pub fn byteplot_rgba(bytes: &[u8], width: usize) -> Result<Vec<u8>, String> {
    let img = bytes_to_image(bytes, width).map_err(|e| e.to_string())?;
    Ok(img.pixels().iter().flat_map(|&p| [p, p, p, 255]).collect())
}

#[wasm_bindgen]
pub fn classify(x: f64, y: f64) -> usize {
    with_net(|net| class_at(net, x, y))
}

/// Predicted class on an `n`×`n` grid over [-1, 1]², row by row from the top.
#[wasm_bindgen]
pub fn decision_map(n: usize) -> Vec<u8> {
    with_net(|net| {
        let mut out = Vec::with_capacity(n * n);
        for row in 0..n {
            let y = 1.0 - 2.0 * (row as f64 + 0.5) / n as f64;
            for col in 0..n {
                let x = -1.0 + 2.0 * (col as f64 + 0.5) / n as f64;
                out.push(class_at(net, x, y) as u8);
            }
        }
        out
    })
}

#[wasm_bindgen]
pub fn verify_box(x: f64, y: f64, eps: f64, exact: bool, seed: u32) -> Result<String, JsError> {
    with_net(|net| verify_json(net, x, y, eps, exact, seed.into())).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn eps_sweep(x: f64, y: f64, max_eps: f64, steps: usize, seed: u32) -> Result<String, JsError> {
    with_net(|net| sweep_json(net, x, y, max_eps, steps, seed.into())).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn byteplot(bytes: &[u8], width: usize) -> Result<Vec<u8>, JsError> {
    byteplot_rgba(bytes, width).map_err(|e| JsError::new(&e))
}
