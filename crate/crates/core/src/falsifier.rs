//! Random-example counterexample search.
//!
//! Samples come from a ChaCha8 stream seeded with the configured `u64`, in a
//! fixed order: the unperturbed base point, then up to 32 random box corners,
//! then uniform points in the box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::network::{Network, NetworkError};
use crate::specgen::InputSpec;

pub const MAX_CORNERS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FalsifyConfig {
    pub num_samples: usize,
    pub seed: u64,
    pub include_corners: bool,
}

impl Default for FalsifyConfig {
    fn default() -> Self {
        Self { num_samples: 500, seed: 0, include_corners: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub point: Vec<f64>,
    pub predicted: usize,
}

struct SampleStream<'a> {
    spec: &'a InputSpec,
    rng: ChaCha8Rng,
    emitted: usize,
    total: usize,
    corners: usize,
}

impl Iterator for SampleStream<'_> {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.emitted >= self.total {
            return None;
        }
        let i = self.emitted;
        self.emitted += 1;
        let spec = self.spec;
        if i == 0 {
            return Some(spec.x.clone());
        }
        let corner = i <= self.corners;
        let rng = &mut self.rng;
        Some(
            spec.lower
                .iter()
                .zip(&spec.upper)
                .map(|(&l, &u)| {
                    if l >= u {
                        l
                    } else if corner {
                        if rng.gen::<bool>() {
                            u
                        } else {
                            l
                        }
                    } else {
                        rng.gen_range(l..=u)
                    }
                })
                .collect(),
        )
    }
}

fn stream<'a>(spec: &'a InputSpec, cfg: &FalsifyConfig) -> SampleStream<'a> {
    let total = cfg.num_samples.max(1);
    let corners = if cfg.include_corners { MAX_CORNERS.min(total - 1) } else { 0 };
    SampleStream { spec, rng: ChaCha8Rng::seed_from_u64(cfg.seed), emitted: 0, total, corners }
}

/// The `num_samples` candidate inputs, in evaluation order.
pub fn gen_rand_examples(spec: &InputSpec, cfg: &FalsifyConfig) -> Vec<Vec<f64>> {
    stream(spec, cfg).collect()
}

/// First sampled input whose predicted class differs from `spec.target`.
pub fn falsify(net: &Network, spec: &InputSpec, cfg: &FalsifyConfig) -> Result<Option<Counterexample>, NetworkError> {
    falsify_with_hints(net, spec, cfg, &[])
}

/// Like [`falsify`], but also tries `hints` (those inside the box) right after
/// the base point. Used to carry counterexamples across nested boxes.
pub fn falsify_with_hints(
    net: &Network,
    spec: &InputSpec,
    cfg: &FalsifyConfig,
    hints: &[Vec<f64>],
) -> Result<Option<Counterexample>, NetworkError> {
    Ok(match search(net, spec, cfg, hints, None)? {
        Search::Found(c) => Some(c),
        Search::NotFound | Search::TimedOut => None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Search {
    Found(Counterexample),
    NotFound,
    TimedOut,
}

/// Sampling search that gives up once `deadline` passes.
pub fn search(
    net: &Network,
    spec: &InputSpec,
    cfg: &FalsifyConfig,
    hints: &[Vec<f64>],
    deadline: Option<Instant>,
) -> Result<Search, NetworkError> {
    if spec.dim() != net.input_dim() {
        return Err(NetworkError::InputDim { expected: net.input_dim(), got: spec.dim() });
    }
    let mut samples = stream(spec, cfg);
    let base = samples.next();
    let candidates = base.into_iter().chain(hints.iter().filter(|h| spec.contains(h)).cloned()).chain(samples);
    for point in candidates {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Ok(Search::TimedOut);
        }
        let (_, predicted) = net.infer(&point)?;
        if predicted != spec.target && spec.contains(&point) {
            return Ok(Search::Found(Counterexample { point, predicted }));
        }
    }
    Ok(Search::NotFound)
}
