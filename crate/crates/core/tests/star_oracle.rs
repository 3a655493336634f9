//! Star-set and zonotope transformers checked against sampling, vertex
//! enumeration and activation-pattern oracles.

mod common;

use common::{random_doc, random_net, sample_box};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starcert::linalg::Matrix;
use starcert::network::{Layer, LayerDoc};
use starcert::star::{reach, union_bounds, zono_bounds, BoundMode, NeuronBounds, ReachMethod, ReachOptions, StarSet};

const MEMBER_TOL: f64 = 1e-7;

/// Vertices of the bounded polygon `{x ∈ R² : a·x ≤ b}`.
fn polygon_vertices(halfplanes: &[([f64; 2], f64)]) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for i in 0..halfplanes.len() {
        for j in i + 1..halfplanes.len() {
            let ([a1, b1], c1) = halfplanes[i];
            let ([a2, b2], c2) = halfplanes[j];
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-12 {
                continue;
            }
            let x = [(c1 * b2 - c2 * b1) / det, (a1 * c2 - a2 * c1) / det];
            if halfplanes.iter().all(|([a, b], c)| a * x[0] + b * x[1] <= c + 1e-9) {
                out.push(x);
            }
        }
    }
    out
}

fn box_halfplanes(lb: [f64; 2], ub: [f64; 2]) -> Vec<([f64; 2], f64)> {
    vec![([1.0, 0.0], ub[0]), ([-1.0, 0.0], -lb[0]), ([0.0, 1.0], ub[1]), ([0.0, -1.0], -lb[1])]
}

/// A star over two predicate variables with random extra constraints that
/// keep the origin feasible.
fn random_constrained_star(rng: &mut ChaCha8Rng, n: usize) -> (StarSet, Vec<([f64; 2], f64)>) {
    let center: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let basis = Matrix::from_rows(
        &(0..n).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect::<Vec<_>>(),
    )
    .unwrap();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut hp = box_halfplanes([-1.0, -1.0], [1.0, 1.0]);
    for _ in 0..rng.gen_range(1..4) {
        let a = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let b = rng.gen_range(0.05..1.0);
        rows.push(a.to_vec());
        rhs.push(b);
        hp.push((a, b));
    }
    let star =
        StarSet::new(center, basis, Matrix::from_rows(&rows).unwrap(), rhs, vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    (star, hp)
}

fn sample_predicate(rng: &mut ChaCha8Rng, hp: &[([f64; 2], f64)]) -> [f64; 2] {
    loop {
        let a = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        if hp.iter().all(|([p, q], c)| p * a[0] + q * a[1] <= *c) {
            return a;
        }
    }
}

#[test]
fn box_star_contains_sampled_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lb: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..0.0)).collect();
    let mut ub: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..2.0)).collect();
    ub[2] = lb[2]; // one zero-width dimension
    let star = StarSet::from_box(&lb, &ub).unwrap();
    for _ in 0..1000 {
        let x = sample_box(&mut rng, &lb, &ub);
        assert!(star.contains(&x, MEMBER_TOL).unwrap());
    }
    let mut outside = lb.clone();
    outside[0] -= 0.1;
    assert!(!star.contains(&outside, MEMBER_TOL).unwrap());
}

#[test]
fn affine_image_contains_mapped_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let (star, hp) = random_constrained_star(&mut rng, 3);
        let w =
            Matrix::from_rows(&(0..4).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect::<Vec<_>>())
                .unwrap();
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let image = star.affine_map(&w, &b).unwrap();
        for _ in 0..100 {
            let a = sample_predicate(&mut rng, &hp);
            let x = star.evaluate(&a);
            let mut y = w.mul_vec(&x);
            y.iter_mut().zip(&b).for_each(|(v, o)| *v += o);
            assert!(image.contains(&y, MEMBER_TOL).unwrap());
        }
    }
}

#[test]
fn lp_bounds_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let (star, hp) = random_constrained_star(&mut rng, 3);
        let verts = polygon_vertices(&hp);
        assert!(!verts.is_empty());
        for i in 0..3 {
            let vals: Vec<f64> = verts.iter().map(|v| star.evaluate(v)[i]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lp = star.dim_bounds(i, BoundMode::Lp).unwrap();
            assert!((lp.lower - lo).abs() < 1e-6, "{} vs {lo}", lp.lower);
            assert!((lp.upper - hi).abs() < 1e-6, "{} vs {hi}", lp.upper);
            let est = star.dim_bounds(i, BoundMode::Estimate).unwrap();
            assert!(est.lower <= lp.lower + 1e-12 && est.upper >= lp.upper - 1e-12);
        }
    }
}

#[test]
fn exact_relu_step_union_is_pointwise_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let star = StarSet::from_box(&[-1.0, -0.5], &[2.0, 1.5]).unwrap();
    let rotated =
        star.affine_map(&Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 1.0]]).unwrap(), &[0.0, 0.0]).unwrap();
    for neuron in 0..2 {
        let pieces = rotated.relu_exact_step(neuron).unwrap();
        assert_eq!(pieces.len(), 2);
        // Forward: every image of a sampled input is covered.
        for _ in 0..300 {
            let a = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            let mut x = rotated.evaluate(&a);
            x[neuron] = x[neuron].max(0.0);
            let mut hit = false;
            for p in &pieces {
                if p.contains(&x, MEMBER_TOL).unwrap() {
                    hit = true;
                    break;
                }
            }
            assert!(hit, "image {x:?} not covered");
        }
        // Backward: every point of a piece is the image of an input point.
        for p in &pieces {
            for _ in 0..100 {
                let a = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
                let x = rotated.evaluate(&a);
                let keep = if p.center()[neuron] == 0.0 && p.basis().row(neuron).iter().all(|v| *v == 0.0) {
                    x[neuron] <= 0.0
                } else {
                    x[neuron] >= 0.0
                };
                if keep {
                    let y = p.evaluate(&a);
                    let mut want = x.clone();
                    want[neuron] = want[neuron].max(0.0);
                    for (u, v) in y.iter().zip(&want) {
                        assert!((u - v).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn approx_relu_step_contains_exact_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let (star, hp) = random_constrained_star(&mut rng, 3);
        let mut relaxed = star.clone();
        for i in 0..3 {
            let nb = star.dim_bounds(i, BoundMode::Lp).unwrap();
            relaxed = relaxed.relu_approx_step(i, nb).unwrap();
        }
        for _ in 0..100 {
            let a = sample_predicate(&mut rng, &hp);
            let x: Vec<f64> = star.evaluate(&a).into_iter().map(|v| v.max(0.0)).collect();
            assert!(relaxed.contains(&x, MEMBER_TOL).unwrap());
        }
    }
}

/// Exact output bounds of a 2-h-k network over a 2-D box, by enumerating
/// activation patterns and the vertices of each linear region.
fn pattern_bounds(doc: &starcert::network::ModelDoc, lb: [f64; 2], ub: [f64; 2]) -> Vec<(f64, f64)> {
    let (LayerDoc::Dense { weights: w1, bias: b1 }, LayerDoc::Dense { weights: w2, bias: b2 }) =
        (&doc.layers[0], &doc.layers[2])
    else {
        panic!("dense-relu-dense expected")
    };
    let h = w1.len();
    let k = w2.len();
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); k];
    for pattern in 0..(1u32 << h) {
        let mut hp = box_halfplanes(lb, ub);
        for i in 0..h {
            let active = pattern >> i & 1 == 1;
            let s = if active { -1.0 } else { 1.0 };
            hp.push(([s * w1[i][0], s * w1[i][1]], -s * b1[i]));
        }
        for v in polygon_vertices(&hp) {
            let hidden: Vec<f64> = (0..h)
                .map(|i| if pattern >> i & 1 == 1 { w1[i][0] * v[0] + w1[i][1] * v[1] + b1[i] } else { 0.0 })
                .collect();
            for j in 0..k {
                let y: f64 = w2[j].iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + b2[j];
                out[j].0 = out[j].0.min(y);
                out[j].1 = out[j].1.max(y);
            }
        }
    }
    out
}

#[test]
fn exact_reach_matches_pattern_enumeration_and_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..10 {
        let doc = random_doc(&mut rng, &[2, 2, 2]);
        let net = doc.build().unwrap();
        let lb = [rng.gen_range(-1.0..0.0), rng.gen_range(-1.0..0.0)];
        let ub = [lb[0] + rng.gen_range(0.1..1.5), lb[1] + rng.gen_range(0.1..1.5)];
        let input = StarSet::from_box(&lb, &ub).unwrap();
        let stars = reach(&net, &input, ReachMethod::Exact, &ReachOptions::default()).unwrap();
        let got = union_bounds(&stars).unwrap();
        let want = pattern_bounds(&doc, lb, ub);
        for (g, w) in got.iter().zip(&want) {
            assert!((g.lower - w.0).abs() < 1e-6 && (g.upper - w.1).abs() < 1e-6, "{g:?} vs {w:?}");
        }
        // Dense grid: never outside, and close to the exact range.
        let steps = 200;
        let mut grid = vec![(f64::INFINITY, f64::NEG_INFINITY); 2];
        for i in 0..=steps {
            for j in 0..=steps {
                let x = [
                    lb[0] + (ub[0] - lb[0]) * i as f64 / steps as f64,
                    lb[1] + (ub[1] - lb[1]) * j as f64 / steps as f64,
                ];
                let y = net.forward(&x).unwrap();
                for d in 0..2 {
                    grid[d].0 = grid[d].0.min(y[d]);
                    grid[d].1 = grid[d].1.max(y[d]);
                }
            }
        }
        for (g, w) in got.iter().zip(&grid) {
            assert!(g.lower <= w.0 + 1e-9 && g.upper >= w.1 - 1e-9);
            assert!(w.0 - g.lower < 0.02 && g.upper - w.1 < 0.02);
        }
        let approx = reach(&net, &input, ReachMethod::Approx, &ReachOptions::default()).unwrap();
        for (a, e) in approx[0].bounds().unwrap().iter().zip(&got) {
            assert!(a.lower <= e.lower + 1e-9 && a.upper >= e.upper - 1e-9);
        }
    }
}

#[test]
fn zonotope_bounds_contain_concrete_propagations() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let net = random_net(&mut rng, &[3, 4, 2]);
        let lb: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..0.0)).collect();
        let ub: Vec<f64> = lb.iter().map(|l| l + rng.gen_range(0.0..1.0)).collect();
        let zb = zono_bounds(&net, &lb, &ub).unwrap();
        assert_eq!(zb.len(), net.layers().len() + 1);
        for _ in 0..1000 {
            let mut v = sample_box(&mut rng, &lb, &ub);
            for (k, layer) in net.layers().iter().enumerate() {
                v = match layer {
                    Layer::Affine(a) => a.apply(&v),
                    Layer::Relu { .. } => v.iter().map(|z| z.max(0.0)).collect(),
                };
                for (x, b) in v.iter().zip(&zb[k + 1]) {
                    assert!(b.contains(*x, 1e-9), "{x} outside {b:?}");
                }
            }
        }
    }
}

#[test]
fn all_stable_zonotope_equals_affine_image() {
    // Positive weights and biases on a positive box keep every ReLU active.
    let net = starcert::network::load_model(
        r#"{"version":1,"input_dim":2,"num_classes":2,"layers":[
        {"type":"dense","weights":[[1,0.5],[0.25,1]],"bias":[1,1]},{"type":"relu"},
        {"type":"dense","weights":[[1,-1],[2,1]],"bias":[0,0]}]}"#,
    )
    .unwrap();
    let zb = zono_bounds(&net, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
    let exact = reach(
        &net,
        &StarSet::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
        ReachMethod::Exact,
        &ReachOptions::default(),
    )
    .unwrap();
    assert_eq!(exact.len(), 1);
    for (z, e) in zb[3].iter().zip(exact[0].bounds().unwrap()) {
        assert!((z.lower - e.lower).abs() < 1e-12 && (z.upper - e.upper).abs() < 1e-12);
    }
}

#[test]
fn relax_zero_equals_approx_and_relax_one_contains_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..10 {
        let net = random_net(&mut rng, &[4, 6, 6, 3]);
        let lb: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..0.0)).collect();
        let ub: Vec<f64> = lb.iter().map(|l| l + rng.gen_range(0.2..1.0)).collect();
        let input = StarSet::from_box(&lb, &ub).unwrap();
        let opts = ReachOptions::default();
        let approx = reach(&net, &input, ReachMethod::Approx, &opts).unwrap()[0].bounds().unwrap();
        let relax0 = reach(&net, &input, ReachMethod::Relax(0.0), &opts).unwrap()[0].bounds().unwrap();
        let relax1 = reach(&net, &input, ReachMethod::Relax(1.0), &opts).unwrap()[0].bounds().unwrap();
        assert_eq!(approx, relax0);
        for (a, r) in approx.iter().zip(&relax1) {
            assert!(r.lower <= a.lower + 1e-9 && r.upper >= a.upper - 1e-9);
        }
    }
}

#[test]
fn approx_bounds_are_monotone_in_the_input_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..10 {
        let net = random_net(&mut rng, &[3, 5, 5, 2]);
        let center: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let small = rng.gen_range(0.01..0.3);
        let big = small + rng.gen_range(0.0..0.3);
        let bounds = |r: f64| -> Vec<NeuronBounds> {
            let lb: Vec<f64> = center.iter().map(|c| c - r).collect();
            let ub: Vec<f64> = center.iter().map(|c| c + r).collect();
            let input = StarSet::from_box(&lb, &ub).unwrap();
            reach(&net, &input, ReachMethod::Approx, &ReachOptions::default()).unwrap()[0].bounds().unwrap()
        };
        for (a, b) in bounds(small).iter().zip(bounds(big)) {
            assert!(a.lower >= b.lower - 1e-9 && a.upper <= b.upper + 1e-9, "{a:?} not inside {b:?}");
        }
    }
}
