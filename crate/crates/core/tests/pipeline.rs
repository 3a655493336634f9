mod common;

use common::random_net;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starcert::bench::{
    aggregate, per_class_table, run_benchmark, select_samples, BenchPlan, BenchRow, Method, PerturbMode,
    SampleSelection,
};
use starcert::data::Dataset;
use starcert::metrics::{compute_metrics, confusion, cra_codes};
use starcert::preprocess::{apply_scaler, bytes_to_image, fit_scaler, normalize, resize_nearest, ByteImage};
use starcert::specgen::{Feature, FeatureKind, FeatureMask, FeatureSchema};
use starcert::trainer::{evaluate, parse_arch, train, TrainConfig};
use starcert::verifier::{VerdictCode, VerifyConfig};

/// Counts straight from the pair list, one class at a time.
fn tally(preds: &[usize], labels: &[usize], c: usize) -> (u64, u64, u64, u64) {
    let mut t = (0, 0, 0, 0);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p == c, y == c) {
            (true, true) => t.0 += 1,
            (false, false) => t.1 += 1,
            (true, false) => t.2 += 1,
            (false, true) => t.3 += 1,
        }
    }
    t
}

#[test]
fn confusion_matches_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let n = rng.gen_range(1..200);
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let cc = confusion(&preds, &labels, 3).unwrap();
        let mut p_sum = 0.0;
        let mut r_sum = 0.0;
        for c in 0..3 {
            let (tp, tn, fp, fn_) = tally(&preds, &labels, c);
            assert_eq!((cc.tp[c], cc.tn[c], cc.fp[c], cc.fn_[c]), (tp, tn, fp, fn_));
            assert_eq!(tp + tn + fp + fn_, n as u64);
            p_sum += if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            r_sum += if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        }
        let m = compute_metrics(&cc).unwrap();
        let correct = preds.iter().zip(&labels).filter(|(p, y)| p == y).count();
        assert_eq!(m.accuracy, correct as f64 / n as f64);
        assert!((m.precision_macro - p_sum / 3.0).abs() < 1e-12);
        assert!((m.recall_macro - r_sum / 3.0).abs() < 1e-12);
    }
}

#[test]
fn cra_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let codes: Vec<VerdictCode> = (0..100)
        .map(|_| [VerdictCode::Falsified, VerdictCode::Robust, VerdictCode::Unknown][rng.gen_range(0..3)])
        .collect();
    let robust = codes.iter().filter(|c| **c == VerdictCode::Robust).count();
    assert_eq!(cra_codes(&codes).unwrap(), robust as f64 / 100.0);
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_order_free(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60), seed in any::<u64>()) {
        let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = compute_metrics(&confusion(&preds, &labels, 4).unwrap()).unwrap();
        for v in [m.accuracy, m.precision_macro, m.recall_macro, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let mut shuffled = pairs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p2: Vec<usize> = shuffled.iter().map(|p| p.0).collect();
        let l2: Vec<usize> = shuffled.iter().map(|p| p.1).collect();
        prop_assert_eq!(compute_metrics(&confusion(&p2, &l2, 4).unwrap()).unwrap(), m);
    }
}

#[test]
fn byteplot_keeps_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let blob: Vec<u8> = (0..1024).map(|_| rng.gen()).collect();
    for width in [1, 7, 32, 1000, 2048] {
        let img = bytes_to_image(&blob, width).unwrap();
        assert_eq!(img.height(), blob.len().div_ceil(width));
        assert_eq!(&img.pixels()[..blob.len()], blob.as_slice());
        assert!(img.pixels()[blob.len()..].iter().all(|&p| p == 0));
        assert!(normalize(&img).iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn resize_matches_index_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (w, h) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let img = ByteImage::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap();
        let (ow, oh) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let out = resize_nearest(&img, ow, oh).unwrap();
        for y in 0..oh {
            for x in 0..ow {
                let src = img.pixels()[(y * h / oh) * w + x * w / ow];
                assert_eq!(out.pixels()[y * ow + x], src);
            }
        }
    }
}

#[test]
fn scaled_columns_are_standard() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> =
        (0..50).map(|_| (0..5).map(|j| rng.gen_range(-10.0..10.0) * (j + 1) as f64 + j as f64).collect()).collect();
    let p = fit_scaler(&rows).unwrap();
    let z: Vec<Vec<f64>> = rows.iter().map(|r| apply_scaler(&p, r).unwrap()).collect();
    for j in 0..5 {
        let mean = z.iter().map(|r| r[j]).sum::<f64>() / 50.0;
        let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 50.0;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }
}

fn blobs(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    for i in 0..n {
        let y = i % 2;
        let c = if y == 0 { -1.5 } else { 1.5 };
        rows.push(vec![c + rng.gen_range(-1.0..1.0), c + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        labels.push(y);
    }
    Dataset::unnamed(rows, labels).unwrap()
}

#[test]
fn trained_model_round_trips_and_separates() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ds = blobs(&mut rng, 200);
    let cfg = TrainConfig {
        hidden: parse_arch("8").unwrap(),
        epochs: 25,
        batch_size: 16,
        lr: 1e-2,
        seed: 3,
        ..Default::default()
    };
    let out = train(&ds, &cfg).unwrap();
    assert!(out.train_accuracy >= 0.95);
    assert!(out.epoch_losses.last().unwrap() <= out.epoch_losses.first().unwrap());
    let reloaded = starcert::network::load_model(&out.doc.to_json()).unwrap();
    for x in &ds.rows {
        assert_eq!(reloaded.infer(x).unwrap(), out.network.infer(x).unwrap());
    }
    assert_eq!(evaluate(&reloaded, &ds).unwrap().accuracy, out.train_accuracy);
}

#[test]
fn random_labels_give_chance_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = random_net(&mut rng, &[3, 4]);
    let rows: Vec<Vec<f64>> = (0..2000).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let labels = (0..2000).map(|_| rng.gen_range(0..4)).collect();
    let m = evaluate(&net, &Dataset::unnamed(rows, labels).unwrap()).unwrap();
    assert!((m.accuracy - 0.25).abs() < 0.1, "accuracy {}", m.accuracy);
}

fn schema3() -> FeatureSchema {
    FeatureSchema::new(
        [FeatureKind::Continuous, FeatureKind::DiscreteLarge, FeatureKind::Binary]
            .into_iter()
            .enumerate()
            .map(|(i, kind)| Feature { name: format!("f{i}"), kind, min: -3.0, max: 3.0 })
            .collect(),
    )
    .unwrap()
}

fn strip_time(rows: &[BenchRow]) -> Vec<BenchRow> {
    rows.iter().cloned().map(|r| BenchRow { time_s: 0.0, ..r }).collect()
}

#[test]
fn worker_count_only_changes_times() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ds = blobs(&mut rng, 60);
    let net = random_net(&mut rng, &[3, 6, 2]);
    let samples = select_samples(&ds, &SampleSelection { count: Some(12), seed: 1, ..Default::default() }).unwrap();
    let plan = BenchPlan {
        models: vec![("a".into(), net.clone()), ("b".into(), random_net(&mut rng, &[3, 5, 2]))],
        samples,
        mode: PerturbMode::Features { schema: schema3(), masks: FeatureMask::PRESETS.to_vec() },
        epsilons: vec![1.0, 5.0, 20.0],
        method: Method::Auto(VerifyConfig { num_samples: 40, seed: 9, ..Default::default() }),
        workers: 1,
    };
    let serial = run_benchmark(&plan).unwrap();
    let parallel = run_benchmark(&BenchPlan { workers: 4, ..plan.clone() }).unwrap();
    assert_eq!(serial.rows.len(), 2 * 4 * 3 * 12);
    assert_eq!(strip_time(&serial.rows), strip_time(&parallel.rows));
    let masks: Vec<&str> = FeatureMask::PRESETS.iter().map(|m| m.name()).collect();
    let keys: Vec<_> = serial
        .rows
        .iter()
        .map(|r| {
            let mask = masks.iter().position(|m| *m == r.mask).unwrap();
            (r.model.clone(), mask, r.epsilon.to_bits(), r.sample)
        })
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]), "rows are not in (model, mask, epsilon, sample) order");
    assert_eq!(serial.aggregates, aggregate(&serial.rows));
    for a in &serial.aggregates {
        let cell: Vec<&BenchRow> =
            serial.rows.iter().filter(|r| r.model == a.model && r.mask == a.mask && r.epsilon == a.epsilon).collect();
        assert_eq!(cell.len(), 12);
        let robust = cell.iter().filter(|r| r.verdict == 1).count();
        assert_eq!(a.cra_pct, 100.0 * robust as f64 / 12.0);
        let mean = cell.iter().map(|r| r.time_s).sum::<f64>() / 12.0;
        assert!((a.avg_time_s - mean).abs() < 1e-9);
    }
    let table = per_class_table(&serial.rows, None);
    for c in &table {
        let recount = serial
            .rows
            .iter()
            .filter(|r| r.model == c.model && r.mask == c.mask && r.epsilon == c.epsilon && r.class == c.class)
            .filter(|r| r.verdict == 1)
            .count();
        assert_eq!(c.robust, recount);
    }
}
