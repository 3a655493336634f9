//! Robustness verdicts: sampling, then relaxed and approximate star
//! reachability, plus an exact mode for small networks.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::falsifier::{self, FalsifyConfig, Search};
use crate::lp::{LpStatus, Sense};
use crate::network::{Network, NetworkError};
use crate::specgen::InputSpec;
use crate::star::{reach, zono_bounds, ReachMethod, ReachOptions, StarError, StarSet};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("invalid input spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum VerdictCode {
    Falsified = 0,
    Robust = 1,
    Unknown = 2,
}

impl VerdictCode {
    /// `violated`, `holds` or `timeout`.
    pub fn word(self) -> &'static str {
        match self {
            VerdictCode::Falsified => "violated",
            VerdictCode::Robust => "holds",
            VerdictCode::Unknown => "timeout",
        }
    }
}

impl From<VerdictCode> for u8 {
    fn from(c: VerdictCode) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for VerdictCode {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(VerdictCode::Falsified),
            1 => Ok(VerdictCode::Robust),
            2 => Ok(VerdictCode::Unknown),
            _ => Err(format!("verdict code {v} is not 0, 1 or 2")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Falsification,
    Relax,
    Approx,
    Exact,
    /// The query failed before reaching a verdict.
    Error,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Falsification => "falsification",
            Stage::Relax => "relax",
            Stage::Approx => "approx",
            Stage::Exact => "exact",
            Stage::Error => "error",
        }
    }
}

/// Wall seconds per stage. `total` is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub falsify: f64,
    pub relax: f64,
    pub approx: f64,
    pub exact: f64,
    pub total: f64,
}

impl StageTimings {
    fn add(&mut self, stage: Stage, d: Duration) {
        let s = d.as_secs_f64();
        match stage {
            Stage::Falsification => self.falsify += s,
            Stage::Relax => self.relax += s,
            Stage::Approx => self.approx += s,
            Stage::Exact => self.exact += s,
            Stage::Error => {}
        }
        self.total = self.falsify + self.relax + self.approx + self.exact;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub code: VerdictCode,
    pub stage: Stage,
    #[serde(rename = "time_s")]
    pub timings: StageTimings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Vec<f64>>,
    pub seed: u64,
}

impl Verdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Falsifier sample count.
    pub num_samples: usize,
    pub relax_factor: f64,
    pub timeout_s: Option<f64>,
    pub seed: u64,
    pub include_corners: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { num_samples: 500, relax_factor: 0.5, timeout_s: None, seed: 0, include_corners: true }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<(), VerifyError> {
        if self.num_samples == 0 {
            return Err(VerifyError::InvalidConfig("falsifier needs at least one sample".into()));
        }
        if !(0.0..=1.0).contains(&self.relax_factor) {
            return Err(VerifyError::InvalidConfig(format!("relax factor {} is outside [0, 1]", self.relax_factor)));
        }
        validate_timeout(self.timeout_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactBudget {
    pub max_stars: usize,
    pub timeout_s: Option<f64>,
}

impl Default for ExactBudget {
    fn default() -> Self {
        Self { max_stars: 10_000, timeout_s: None }
    }
}

fn validate_timeout(t: Option<f64>) -> Result<(), VerifyError> {
    match t {
        Some(t) if !(t > 0.0 && t.is_finite()) => {
            Err(VerifyError::InvalidConfig(format!("timeout {t} must be a positive number of seconds")))
        }
        _ => Ok(()),
    }
}

fn validate_spec(net: &Network, spec: &InputSpec) -> Result<(), VerifyError> {
    let n = net.input_dim();
    if spec.x.len() != n || spec.lower.len() != n || spec.upper.len() != n {
        return Err(NetworkError::InputDim { expected: n, got: spec.x.len() }.into());
    }
    if spec.target >= net.num_classes() {
        return Err(VerifyError::InvalidSpec(format!(
            "target {} but the network has {} classes",
            spec.target,
            net.num_classes()
        )));
    }
    for (i, (l, u)) in spec.lower.iter().zip(&spec.upper).enumerate() {
        if !(l.is_finite() && u.is_finite() && l <= u) {
            return Err(VerifyError::InvalidSpec(format!("bad bounds [{l}, {u}] in dimension {i}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputCheck {
    Certified,
    /// Not proven. `witness` is the predicate point maximizing `Y_j − Y_target`
    /// in the offending star, when the LP produced one.
    Undetermined {
        witness: Option<Witness>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub star: usize,
    pub class: usize,
    pub margin: f64,
    pub alpha: Vec<f64>,
}

fn class_margin(star: &StarSet, j: usize, target: usize) -> Result<Option<(f64, Vec<f64>)>, StarError> {
    let mut dir = vec![0.0; star.dim()];
    dir[j] = 1.0;
    dir[target] = -1.0;
    let out = star.optimize(&dir, Sense::Maximize)?;
    Ok(match out.status {
        LpStatus::Infeasible => None,
        LpStatus::Optimal | LpStatus::Unbounded => {
            Some((out.value.unwrap_or(f64::INFINITY), out.point.unwrap_or_default()))
        }
    })
}

/// Certified iff every star has `max(Y_j − Y_target) < 0` for every `j ≠ target`.
pub fn check_output_set(stars: &[StarSet], target: usize) -> OutputCheck {
    for (s, star) in stars.iter().enumerate() {
        if target >= star.dim() {
            return OutputCheck::Undetermined { witness: None };
        }
        for j in (0..star.dim()).filter(|&j| j != target) {
            match class_margin(star, j, target) {
                Ok(None) => {}
                Ok(Some((margin, _))) if margin < 0.0 => {}
                Ok(Some((margin, alpha))) => {
                    return OutputCheck::Undetermined { witness: Some(Witness { star: s, class: j, margin, alpha }) }
                }
                Err(_) => return OutputCheck::Undetermined { witness: None },
            }
        }
    }
    OutputCheck::Certified
}

/// Maps output-star predicates back to an input point and keeps it only if it
/// lies in the box and misclassifies.
fn recover(net: &Network, spec: &InputSpec, input: &StarSet, alpha: &[f64]) -> Option<Vec<f64>> {
    let m = input.num_pred();
    if alpha.len() < m {
        return None;
    }
    let x: Vec<f64> = input
        .evaluate(&alpha[..m])
        .into_iter()
        .zip(spec.lower.iter().zip(&spec.upper))
        .map(|(v, (&l, &u))| v.clamp(l, u))
        .collect();
    match net.infer(&x) {
        Ok((_, label)) if label != spec.target && spec.contains(&x) => Some(x),
        _ => None,
    }
}

struct Clock {
    timings: StageTimings,
    seed: u64,
}

impl Clock {
    fn timed<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.add(stage, t.elapsed());
        out
    }

    fn verdict(&self, code: VerdictCode, stage: Stage, counterexample: Option<Vec<f64>>) -> Verdict {
        Verdict { code, stage, timings: self.timings, counterexample, seed: self.seed }
    }
}

fn deadline_from(start: Instant, timeout_s: Option<f64>) -> Option<Instant> {
    timeout_s.map(|t| start + Duration::from_secs_f64(t))
}

/// Sampling falsification, then relaxed reachability, then approximate
/// reachability. A passed deadline yields code 2 at the current stage.
pub fn verify_query(net: &Network, spec: &InputSpec, cfg: &VerifyConfig) -> Result<Verdict, VerifyError> {
    verify_query_with_hints(net, spec, cfg, &[])
}

/// [`verify_query`] with extra falsifier candidates, e.g. counterexamples
/// found for a smaller box around the same sample.
pub fn verify_query_with_hints(
    net: &Network,
    spec: &InputSpec,
    cfg: &VerifyConfig,
    hints: &[Vec<f64>],
) -> Result<Verdict, VerifyError> {
    cfg.validate()?;
    validate_spec(net, spec)?;
    let start = Instant::now();
    let deadline = deadline_from(start, cfg.timeout_s);
    let mut clock = Clock { timings: StageTimings::default(), seed: cfg.seed };

    let fcfg = FalsifyConfig { num_samples: cfg.num_samples, seed: cfg.seed, include_corners: cfg.include_corners };
    let found = clock.timed(Stage::Falsification, || falsifier::search(net, spec, &fcfg, hints, deadline))?;
    match found {
        Search::Found(c) => return Ok(clock.verdict(VerdictCode::Falsified, Stage::Falsification, Some(c.point))),
        Search::TimedOut => return Ok(clock.verdict(VerdictCode::Unknown, Stage::Falsification, None)),
        Search::NotFound => {}
    }

    let relaxed = clock.timed(Stage::Relax, || {
        let input = StarSet::from_box(&spec.lower, &spec.upper)?;
        let pre = zono_bounds(net, &spec.lower, &spec.upper)?;
        let opts = ReachOptions { deadline, pre_bounds: Some(&pre), ..Default::default() };
        let out = reach(net, &input, ReachMethod::Relax(cfg.relax_factor), &opts)?;
        Ok::<_, StarError>((input, pre, check_output_set(&out, spec.target)))
    });
    let pre = match relaxed {
        Ok((_, _, OutputCheck::Certified)) => return Ok(clock.verdict(VerdictCode::Robust, Stage::Relax, None)),
        Ok((_, pre, _)) => pre,
        Err(_) => return Ok(clock.verdict(VerdictCode::Unknown, Stage::Relax, None)),
    };

    let approx = clock.timed(Stage::Approx, || {
        let input = StarSet::from_box(&spec.lower, &spec.upper)?;
        let opts = ReachOptions { deadline, pre_bounds: Some(&pre), ..Default::default() };
        let out = reach(net, &input, ReachMethod::Approx, &opts)?;
        Ok::<_, StarError>(check_output_set(&out, spec.target))
    });
    Ok(match approx {
        Ok(OutputCheck::Certified) => clock.verdict(VerdictCode::Robust, Stage::Approx, None),
        _ => clock.verdict(VerdictCode::Unknown, Stage::Approx, None),
    })
}

/// Complete check by exact reachability. Code 2 only when the budget or
/// deadline is exhausted, or no violating point survives re-validation.
pub fn verify_exact(net: &Network, spec: &InputSpec, budget: &ExactBudget) -> Result<Verdict, VerifyError> {
    validate_timeout(budget.timeout_s)?;
    validate_spec(net, spec)?;
    let start = Instant::now();
    let deadline = deadline_from(start, budget.timeout_s);
    let mut clock = Clock { timings: StageTimings::default(), seed: 0 };
    let (code, cex) = clock.timed(Stage::Exact, || {
        let input = match StarSet::from_box(&spec.lower, &spec.upper) {
            Ok(s) => s,
            Err(_) => return (VerdictCode::Unknown, None),
        };
        let opts = ReachOptions { max_stars: budget.max_stars, deadline, pre_bounds: None };
        let stars = match reach(net, &input, ReachMethod::Exact, &opts) {
            Ok(s) => s,
            Err(_) => return (VerdictCode::Unknown, None),
        };
        let mut certified = true;
        for star in &stars {
            for j in (0..star.dim()).filter(|&j| j != spec.target) {
                match class_margin(star, j, spec.target) {
                    Ok(None) => {}
                    Ok(Some((m, _))) if m < 0.0 => {}
                    Ok(Some((_, alpha))) => {
                        certified = false;
                        if let Some(x) = recover(net, spec, &input, &alpha) {
                            return (VerdictCode::Falsified, Some(x));
                        }
                    }
                    Err(_) => certified = false,
                }
            }
        }
        if certified {
            (VerdictCode::Robust, None)
        } else {
            (VerdictCode::Unknown, None)
        }
    });
    Ok(clock.verdict(code, Stage::Exact, cex))
}
