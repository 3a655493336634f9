//! Benchmark sweeps over models × masks × epsilons × samples.
//!
//! For each (model, mask, sample) the epsilons run in ascending order on one
//! worker, and counterexamples found at smaller epsilons are handed to the
//! falsifier at larger ones. Rows are sorted afterwards, so the worker count
//! only affects `time_s`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::data::Dataset;
use crate::network::Network;
use crate::specgen::{build_feature_spec, build_pixel_spec, FeatureMask, FeatureSchema, InputSpec, Sample, SpecError};
use crate::verifier::{verify_exact, verify_query_with_hints, ExactBudget, Stage, Verdict, VerdictCode, VerifyConfig};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {class} has {available} samples, {wanted} requested")]
    TooFewInClass { class: usize, available: usize, wanted: usize },
    #[error("{wanted} samples requested from a dataset of {available}")]
    TooFewSamples { available: usize, wanted: usize },
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("report line {line}: {msg}")]
    Report { line: u64, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleSelection {
    /// Uniform draw without replacement; all rows when `None`.
    pub count: Option<usize>,
    /// Per-class draw; takes precedence over `count`.
    pub per_class: Option<usize>,
    pub seed: u64,
}

/// Chosen rows, ascending by id. The same seed picks the same rows.
pub fn select_samples(data: &Dataset, sel: &SampleSelection) -> Result<Vec<Sample>, BenchError> {
    if data.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sel.seed);
    let mut ids: Vec<usize> = if let Some(k) = sel.per_class {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in data.labels.iter().enumerate() {
            by_class.entry(y).or_default().push(i);
        }
        let mut ids = Vec::new();
        for (class, members) in by_class {
            if members.len() < k {
                return Err(BenchError::TooFewInClass { class, available: members.len(), wanted: k });
            }
            ids.extend(members.choose_multiple(&mut rng, k).copied());
        }
        ids
    } else if let Some(n) = sel.count {
        if n > data.len() {
            return Err(BenchError::TooFewSamples { available: data.len(), wanted: n });
        }
        rand::seq::index::sample(&mut rng, data.len(), n).into_vec()
    } else {
        (0..data.len()).collect()
    };
    ids.sort_unstable();
    Ok(ids.into_iter().filter_map(|i| data.sample(i)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum PerturbMode {
    /// Epsilons are percentages of each masked feature's range.
    Features { schema: FeatureSchema, masks: Vec<FeatureMask> },
    /// Epsilons are integers `k`, meaning `k/255` per pixel.
    Pixels,
}

impl PerturbMode {
    fn mask_names(&self) -> Vec<String> {
        match self {
            PerturbMode::Features { masks, .. } => masks.iter().map(|m| m.name().to_string()).collect(),
            PerturbMode::Pixels => vec!["all".to_string()],
        }
    }

    fn spec(&self, mask: usize, sample: &Sample, eps: f64) -> Result<InputSpec, SpecError> {
        match self {
            PerturbMode::Features { schema, masks } => {
                build_feature_spec(&sample.x, sample.label, eps, schema, &masks[mask])
            }
            PerturbMode::Pixels => {
                if eps < 0.0 || eps.fract() != 0.0 || eps > f64::from(u32::MAX) {
                    return Err(SpecError::NegativeEpsilon(eps));
                }
                build_pixel_spec(&sample.x, sample.label, eps as u32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Sampling, then relaxed and approximate reachability.
    Auto(VerifyConfig),
    Exact(ExactBudget),
}

#[derive(Debug, Clone)]
pub struct BenchPlan {
    /// (name, network) pairs, in report order.
    pub models: Vec<(String, Network)>,
    pub samples: Vec<Sample>,
    pub mode: PerturbMode,
    pub epsilons: Vec<f64>,
    pub method: Method,
    /// Concurrent queries; 0 uses every core.
    pub workers: usize,
}

impl BenchPlan {
    pub fn validate(&self) -> Result<(), BenchError> {
        let err = |m: &str| Err(BenchError::Plan(m.to_string()));
        if self.models.is_empty() {
            return err("no models");
        }
        if self.samples.is_empty() {
            return err("no samples");
        }
        if self.epsilons.is_empty() {
            return err("no epsilons");
        }
        if self.epsilons.windows(2).any(|w| !(w[0] < w[1])) {
            return err("epsilons must be strictly ascending");
        }
        if let PerturbMode::Features { masks, .. } = &self.mode {
            if masks.is_empty() {
                return err("no masks");
            }
        }
        if let Method::Auto(cfg) = &self.method {
            cfg.validate().map_err(|e| BenchError::Plan(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub mask: String,
    pub epsilon: f64,
    pub sample: usize,
    pub class: usize,
    pub verdict: u8,
    pub stage: String,
    pub time_s: f64,
    /// Why the query failed; only on `stage = "error"` rows.
    #[serde(skip)]
    pub error: Option<String>,
}

impl BenchRow {
    pub fn code(&self) -> Option<VerdictCode> {
        VerdictCode::try_from(self.verdict).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub mask: String,
    pub epsilon: f64,
    pub cra_pct: f64,
    pub avg_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub model: String,
    pub mask: String,
    pub epsilon: f64,
    pub class: usize,
    pub samples: usize,
    pub robust: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<Aggregate>,
}

impl BenchReport {
    pub fn from_rows(rows: Vec<BenchRow>) -> Self {
        let aggregates = aggregate(&rows);
        Self { rows, aggregates }
    }
}

struct Chain<'a> {
    model: usize,
    mask: usize,
    sample: &'a Sample,
}

fn run_chain(plan: &BenchPlan, masks: &[String], chain: &Chain) -> Vec<(usize, usize, usize, BenchRow)> {
    let (name, net) = &plan.models[chain.model];
    let mut hints: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::with_capacity(plan.epsilons.len());
    for (ei, &eps) in plan.epsilons.iter().enumerate() {
        let start = Instant::now();
        let result = plan.mode.spec(chain.mask, chain.sample, eps).map_err(|e| e.to_string()).and_then(|spec| {
            match &plan.method {
                Method::Auto(cfg) => verify_query_with_hints(net, &spec, cfg, &hints),
                Method::Exact(b) => verify_exact(net, &spec, b),
            }
            .map_err(|e| e.to_string())
        });
        let time_s = start.elapsed().as_secs_f64();
        let (verdict, stage, error) = match result {
            Ok(Verdict { code, stage, counterexample, .. }) => {
                if let Some(c) = counterexample {
                    hints.push(c);
                }
                (code as u8, stage.name().to_string(), None)
            }
            Err(e) => (VerdictCode::Unknown as u8, Stage::Error.name().to_string(), Some(e)),
        };
        out.push((
            chain.model,
            chain.mask,
            ei,
            BenchRow {
                model: name.clone(),
                mask: masks[chain.mask].clone(),
                epsilon: eps,
                sample: chain.sample.id,
                class: chain.sample.label,
                verdict,
                stage,
                time_s,
                error,
            },
        ));
    }
    out
}

/// Runs every query of the plan. Query failures become `stage = "error"`
/// rows with code 2; only an invalid plan is an error.
pub fn run_benchmark(plan: &BenchPlan) -> Result<BenchReport, BenchError> {
    plan.validate()?;
    let masks = plan.mode.mask_names();
    let mut chains = Vec::new();
    for model in 0..plan.models.len() {
        for mask in 0..masks.len() {
            for sample in &plan.samples {
                chains.push(Chain { model, mask, sample });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    let mut keyed: Vec<_> = pool.install(|| chains.par_iter().flat_map_iter(|c| run_chain(plan, &masks, c)).collect());
    keyed.sort_by_key(|(m, k, e, row)| (*m, *k, *e, row.sample));
    Ok(BenchReport::from_rows(keyed.into_iter().map(|(_, _, _, r)| r).collect()))
}

/// CRA and mean time per consecutive (model, mask, epsilon) group, in row order.
pub fn aggregate(rows: &[BenchRow]) -> Vec<Aggregate> {
    let mut out: Vec<Aggregate> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let head = &rows[i];
        let mut j = i;
        let mut robust = 0usize;
        let mut time = 0.0;
        while j < rows.len()
            && rows[j].model == head.model
            && rows[j].mask == head.mask
            && rows[j].epsilon == head.epsilon
        {
            if rows[j].verdict == VerdictCode::Robust as u8 {
                robust += 1;
            }
            time += rows[j].time_s;
            j += 1;
        }
        let n = (j - i) as f64;
        out.push(Aggregate {
            model: head.model.clone(),
            mask: head.mask.clone(),
            epsilon: head.epsilon,
            cra_pct: 100.0 * robust as f64 / n,
            avg_time_s: time / n,
        });
        i = j;
    }
    out
}

/// Robust counts per (model, mask, epsilon, class). `train_counts[c]`, when
/// given, is echoed as the number of training samples of class `c`.
pub fn per_class_table(rows: &[BenchRow], train_counts: Option<&[usize]>) -> Vec<ClassCount> {
    let mut cells: Vec<ClassCount> = Vec::new();
    let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let groups = aggregate(rows);
    let mut g = 0;
    for row in rows {
        while !(groups[g].model == row.model && groups[g].mask == row.mask && groups[g].epsilon == row.epsilon) {
            g += 1;
        }
        let slot = *index.entry((g, row.class)).or_insert_with(|| {
            cells.push(ClassCount {
                model: row.model.clone(),
                mask: row.mask.clone(),
                epsilon: row.epsilon,
                class: row.class,
                samples: 0,
                robust: 0,
                train_samples: train_counts.map(|t| t.get(row.class).copied().unwrap_or(0)),
            });
            cells.len() - 1
        });
        cells[slot].samples += 1;
        if row.verdict == VerdictCode::Robust as u8 {
            cells[slot].robust += 1;
        }
    }
    let order: Vec<(usize, usize)> = index.keys().copied().collect();
    let mut sorted = Vec::with_capacity(cells.len());
    for key in order {
        sorted.push(cells[index[&key]].clone());
    }
    sorted
}

pub const ROW_HEADER: [&str; 8] = ["model", "mask", "epsilon", "sample", "class", "verdict", "stage", "time_s"];
pub const AGGREGATE_HEADER: [&str; 5] = ["model", "mask", "epsilon", "cra_pct", "avg_time_s"];

pub fn write_rows_csv<W: Write>(rows: &[BenchRow], w: W) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(ROW_HEADER)?;
    for r in rows {
        wr.write_record([
            r.model.clone(),
            r.mask.clone(),
            r.epsilon.to_string(),
            r.sample.to_string(),
            r.class.to_string(),
            r.verdict.to_string(),
            r.stage.clone(),
            r.time_s.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| BenchError::Csv(e.into()))
}

pub fn read_rows_csv<R: Read>(r: R) -> Result<Vec<BenchRow>, BenchError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(ROW_HEADER) {
        return Err(BenchError::Report { line: 1, msg: format!("header must be {}", ROW_HEADER.join(",")) });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |col: &str| BenchError::Report { line, msg: format!("bad {col} value") };
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(ROW_HEADER[i]));
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(ROW_HEADER[i]));
        let verdict = rec[5].parse::<u8>().ok().filter(|v| *v <= 2).ok_or_else(|| bad("verdict"))?;
        rows.push(BenchRow {
            model: rec[0].to_string(),
            mask: rec[1].to_string(),
            epsilon: num(2)?,
            sample: int(3)?,
            class: int(4)?,
            verdict,
            stage: rec[6].to_string(),
            time_s: num(7)?,
            error: None,
        });
    }
    Ok(rows)
}

pub fn write_aggregates_csv<W: Write>(aggs: &[Aggregate], w: W) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(AGGREGATE_HEADER)?;
    for a in aggs {
        wr.write_record([
            a.model.clone(),
            a.mask.clone(),
            a.epsilon.to_string(),
            a.cra_pct.to_string(),
            a.avg_time_s.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| BenchError::Csv(e.into()))
}

pub fn read_aggregates_csv<R: Read>(r: R) -> Result<Vec<Aggregate>, BenchError> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_per_class_csv<W: Write>(cells: &[ClassCount], w: W) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    let with_train = cells.iter().any(|c| c.train_samples.is_some());
    let mut header = vec!["model", "mask", "epsilon", "class", "samples", "robust"];
    if with_train {
        header.push("train_samples");
    }
    wr.write_record(&header)?;
    for c in cells {
        let mut rec = vec![
            c.model.clone(),
            c.mask.clone(),
            c.epsilon.to_string(),
            c.class.to_string(),
            c.samples.to_string(),
            c.robust.to_string(),
        ];
        if with_train {
            rec.push(c.train_samples.unwrap_or(0).to_string());
        }
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| BenchError::Csv(e.into()))
}
