//! Star sets, zonotopes and the ReLU reachability transformers.
//!
//! A star is `{c + Vα : Cα ≤ d, lb ≤ α ≤ ub}`. Affine layers map stars
//! exactly. ReLU layers are handled one of three ways:
//!
//! * **exact**: split every unstable neuron into its two linear pieces, giving a
//!   list of stars whose union is the exact image;
//! * **approx**: one star; every unstable neuron gets a fresh predicate variable
//!   constrained by the triangle relaxation, with LP-tight pre-activation bounds;
//! * **relax(f)**: like approx, but only the `1 − f` fraction of unstable neurons
//!   with the largest estimated triangle area get LP-tight bounds; the rest keep
//!   their cheap interval estimates.

use thiserror::Error;
use web_time::Instant;

use crate::linalg::{dot, Matrix};
use crate::lp::{LinearProgram, LpError, LpOutcome, LpStatus, Sense, Simplex};
use crate::network::{Layer, Network};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StarError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("lower bound exceeds upper bound in dimension {0}")]
    InvalidBox(usize),
    #[error("star set is empty")]
    Empty,
    #[error("inconsistent neuron bounds [{lower}, {upper}]")]
    InconsistentBounds { lower: f64, upper: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("exact reachability exceeded the budget of {0} stars")]
    StarBudget(usize),
    #[error("reachability deadline passed")]
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronStatus {
    StablePositive,
    StableNegative,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronBounds {
    pub lower: f64,
    pub upper: f64,
}

impl NeuronBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self, StarError> {
        if lower > upper || lower.is_nan() || upper.is_nan() {
            return Err(StarError::InconsistentBounds { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn status(&self) -> NeuronStatus {
        if self.lower >= 0.0 {
            NeuronStatus::StablePositive
        } else if self.upper <= 0.0 {
            NeuronStatus::StableNegative
        } else {
            NeuronStatus::Unstable
        }
    }

    /// Area of the triangle relaxation, `u·(−l)/2` (0 when stable).
    pub fn triangle_area(&self) -> f64 {
        match self.status() {
            NeuronStatus::Unstable => self.upper * -self.lower / 2.0,
            _ => 0.0,
        }
    }

    pub fn intersect(&self, other: &NeuronBounds) -> NeuronBounds {
        let lower = self.lower.max(other.lower);
        let upper = self.upper.min(other.upper);
        // Two sound enclosures of a nonempty set always overlap; numerical
        // noise can still cross them by an ulp.
        if lower > upper {
            let m = (lower + upper) / 2.0;
            NeuronBounds { lower: m, upper: m }
        } else {
            NeuronBounds { lower, upper }
        }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lower - tol && v <= self.upper + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    /// Interval arithmetic over the predicate box; ignores `C`.
    Estimate,
    /// Two LP solves; tight.
    Lp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarSet {
    center: Vec<f64>,
    basis: Matrix,
    cons: Matrix,
    rhs: Vec<f64>,
    pred_lb: Vec<f64>,
    pred_ub: Vec<f64>,
}

impl StarSet {
    pub fn new(
        center: Vec<f64>,
        basis: Matrix,
        cons: Matrix,
        rhs: Vec<f64>,
        pred_lb: Vec<f64>,
        pred_ub: Vec<f64>,
    ) -> Result<Self, StarError> {
        let m = basis.cols();
        if basis.rows() != center.len() {
            return Err(StarError::DimensionMismatch(format!(
                "basis has {} rows for a {}-dim center",
                basis.rows(),
                center.len()
            )));
        }
        if cons.cols() != m || cons.rows() != rhs.len() || pred_lb.len() != m || pred_ub.len() != m {
            return Err(StarError::DimensionMismatch("predicate constraint shapes disagree with the basis".into()));
        }
        Ok(Self { center, basis, cons, rhs, pred_lb, pred_ub })
    }

    /// The box `[lb, ub]` as a star with one predicate variable per dimension.
    pub fn from_box(lb: &[f64], ub: &[f64]) -> Result<Self, StarError> {
        if lb.len() != ub.len() {
            return Err(StarError::DimensionMismatch(format!(
                "lower has {} entries, upper has {}",
                lb.len(),
                ub.len()
            )));
        }
        if let Some(i) = lb.iter().zip(ub).position(|(l, u)| !(l <= u)) {
            return Err(StarError::InvalidBox(i));
        }
        let n = lb.len();
        let center = lb.iter().zip(ub).map(|(l, u)| (l + u) / 2.0).collect();
        let half: Vec<f64> = lb.iter().zip(ub).map(|(l, u)| (u - l) / 2.0).collect();
        Ok(Self {
            center,
            basis: Matrix::from_diag(&half),
            cons: Matrix::zeros(0, n),
            rhs: Vec::new(),
            pred_lb: vec![-1.0; n],
            pred_ub: vec![1.0; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_pred(&self) -> usize {
        self.basis.cols()
    }

    pub fn num_constraints(&self) -> usize {
        self.rhs.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn predicate_bounds(&self) -> (&[f64], &[f64]) {
        (&self.pred_lb, &self.pred_ub)
    }

    /// Maps a predicate point to the state space.
    pub fn evaluate(&self, alpha: &[f64]) -> Vec<f64> {
        let mut x = self.basis.mul_vec(alpha);
        for (v, c) in x.iter_mut().zip(&self.center) {
            *v += c;
        }
        x
    }

    /// Linear program over the predicate with objective `coef·α`.
    pub fn predicate_lp(&self, coef: Vec<f64>, sense: Sense) -> LinearProgram {
        let mut lp = LinearProgram::new(coef, sense).with_bounds(self.pred_lb.clone(), self.pred_ub.clone());
        for i in 0..self.rhs.len() {
            lp.constraints.push((self.cons.row(i).to_vec(), self.rhs[i]));
        }
        lp
    }

    /// Optimizes `dir·x` over the set. The returned value includes `dir·c`.
    pub fn optimize(&self, dir: &[f64], sense: Sense) -> Result<LpOutcome, StarError> {
        if dir.len() != self.dim() {
            return Err(StarError::DimensionMismatch(format!(
                "direction has {} entries for a {}-dim star",
                dir.len(),
                self.dim()
            )));
        }
        let m = self.num_pred();
        let mut coef = vec![0.0; m];
        for (i, &d) in dir.iter().enumerate() {
            if d != 0.0 {
                for (c, v) in coef.iter_mut().zip(self.basis.row(i)) {
                    *c += d * v;
                }
            }
        }
        let mut out = Simplex::default().solve(&self.predicate_lp(coef, sense))?;
        if let Some(v) = out.value.as_mut() {
            *v += dot(dir, &self.center);
        }
        Ok(out)
    }

    pub fn is_empty(&self) -> Result<bool, StarError> {
        if self.rhs.is_empty() {
            return Ok(self.pred_lb.iter().zip(&self.pred_ub).any(|(l, u)| l > u));
        }
        let lp = self.predicate_lp(vec![0.0; self.num_pred()], Sense::Maximize);
        Ok(Simplex::default().solve(&lp)?.status == LpStatus::Infeasible)
    }

    /// Whether `x` lies in the set, up to `tol` per coordinate.
    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool, StarError> {
        if x.len() != self.dim() {
            return Err(StarError::DimensionMismatch(format!(
                "point has {} entries for a {}-dim star",
                x.len(),
                self.dim()
            )));
        }
        let mut lp = self.predicate_lp(vec![0.0; self.num_pred()], Sense::Maximize);
        for i in 0..self.dim() {
            let target = x[i] - self.center[i];
            let row = self.basis.row(i);
            lp.constraints.push((row.to_vec(), target + tol));
            lp.constraints.push((row.iter().map(|v| -v).collect(), -target + tol));
        }
        Ok(Simplex::default().solve(&lp)?.status == LpStatus::Optimal)
    }

    /// Exact image under `x ↦ Wx + b`.
    pub fn affine_map(&self, w: &Matrix, b: &[f64]) -> Result<StarSet, StarError> {
        if w.cols() != self.dim() || w.rows() != b.len() {
            return Err(StarError::DimensionMismatch(format!(
                "map is {}x{} with {} offsets, star has dimension {}",
                w.rows(),
                w.cols(),
                b.len(),
                self.dim()
            )));
        }
        let mut center = w.mul_vec(&self.center);
        for (c, o) in center.iter_mut().zip(b) {
            *c += o;
        }
        Ok(StarSet {
            center,
            basis: w.matmul(&self.basis),
            cons: self.cons.clone(),
            rhs: self.rhs.clone(),
            pred_lb: self.pred_lb.clone(),
            pred_ub: self.pred_ub.clone(),
        })
    }

    fn estimate(&self, i: usize) -> NeuronBounds {
        let mut lo = self.center[i];
        let mut hi = self.center[i];
        for ((&v, &l), &u) in self.basis.row(i).iter().zip(&self.pred_lb).zip(&self.pred_ub) {
            if v > 0.0 {
                lo += v * l;
                hi += v * u;
            } else if v < 0.0 {
                lo += v * u;
                hi += v * l;
            }
        }
        NeuronBounds { lower: lo, upper: hi }
    }

    /// Bounds of dimension `i` over the set.
    pub fn dim_bounds(&self, i: usize, mode: BoundMode) -> Result<NeuronBounds, StarError> {
        if i >= self.dim() {
            return Err(StarError::DimensionMismatch(format!(
                "dimension {i} out of range for a {}-dim star",
                self.dim()
            )));
        }
        match mode {
            BoundMode::Estimate => {
                if self.pred_lb.iter().zip(&self.pred_ub).any(|(l, u)| l > u) {
                    return Err(StarError::Empty);
                }
                Ok(self.estimate(i))
            }
            BoundMode::Lp => {
                if self.basis.row(i).iter().all(|&v| v == 0.0) {
                    if self.is_empty()? {
                        return Err(StarError::Empty);
                    }
                    let c = self.center[i];
                    return Ok(NeuronBounds { lower: c, upper: c });
                }
                let mut e = vec![0.0; self.dim()];
                e[i] = 1.0;
                let lo = self.optimize(&e, Sense::Minimize)?;
                let hi = self.optimize(&e, Sense::Maximize)?;
                match (lo.status, hi.status) {
                    (LpStatus::Optimal, LpStatus::Optimal) => {
                        let (l, u) = (lo.value.unwrap(), hi.value.unwrap());
                        // Never report LP bounds looser than the interval estimate.
                        Ok(NeuronBounds { lower: l.min(u), upper: u.max(l) }.intersect(&self.estimate(i)))
                    }
                    (LpStatus::Infeasible, _) | (_, LpStatus::Infeasible) => Err(StarError::Empty),
                    _ => Err(StarError::DimensionMismatch("unbounded predicate; star bounds must be finite".into())),
                }
            }
        }
    }

    fn with_row_zeroed(mut self, i: usize) -> StarSet {
        self.center[i] = 0.0;
        self.basis.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
        self
    }

    fn with_halfspace(&self, i: usize, nonnegative: bool) -> StarSet {
        let mut s = self.clone();
        let row: Vec<f64> = if nonnegative {
            // −(c_i + V_i α) ≤ 0
            self.basis.row(i).iter().map(|v| -v).collect()
        } else {
            self.basis.row(i).to_vec()
        };
        let rhs = if nonnegative { self.center[i] } else { -self.center[i] };
        s.cons.push_row(&row);
        s.rhs.push(rhs);
        s
    }

    /// Exact ReLU on dimension `i`: at most two stars whose union is the image.
    pub fn relu_exact_step(&self, i: usize) -> Result<Vec<StarSet>, StarError> {
        let nb = self.dim_bounds(i, BoundMode::Lp)?;
        Ok(self.relu_exact_with(i, nb))
    }

    fn relu_exact_with(&self, i: usize, nb: NeuronBounds) -> Vec<StarSet> {
        match nb.status() {
            NeuronStatus::StablePositive => vec![self.clone()],
            NeuronStatus::StableNegative => vec![self.clone().with_row_zeroed(i)],
            NeuronStatus::Unstable => {
                vec![self.with_halfspace(i, true), self.with_halfspace(i, false).with_row_zeroed(i)]
            }
        }
    }

    /// Triangle-relaxed ReLU on dimension `i` given sound bounds `nb`.
    pub fn relu_approx_step(&self, i: usize, nb: NeuronBounds) -> Result<StarSet, StarError> {
        if nb.lower > nb.upper || nb.lower.is_nan() || nb.upper.is_nan() {
            return Err(StarError::InconsistentBounds { lower: nb.lower, upper: nb.upper });
        }
        if i >= self.dim() {
            return Err(StarError::DimensionMismatch(format!("neuron {i} out of range")));
        }
        let (l, u) = (nb.lower, nb.upper);
        match nb.status() {
            NeuronStatus::StablePositive => Ok(self.clone()),
            NeuronStatus::StableNegative => Ok(self.clone().with_row_zeroed(i)),
            NeuronStatus::Unstable => {
                let m = self.num_pred();
                let vi = self.basis.row(i).to_vec();
                let ci = self.center[i];
                let mut cons = self.cons.widen(1);
                let mut rhs = self.rhs.clone();
                // y ≥ x_i  ⇔  V_i α − y ≤ −c_i
                let mut row = vi.clone();
                row.push(-1.0);
                cons.push_row(&row);
                rhs.push(-ci);
                // y ≤ u (x_i − l)/(u − l)  ⇔  y − λ V_i α ≤ λ (c_i − l)
                let lambda = u / (u - l);
                let mut row: Vec<f64> = vi.iter().map(|v| -lambda * v).collect();
                row.push(1.0);
                cons.push_row(&row);
                rhs.push(lambda * (ci - l));

                let mut basis = self.basis.widen(1);
                basis.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                basis[(i, m)] = 1.0;
                let mut center = self.center.clone();
                center[i] = 0.0;
                let mut pred_lb = self.pred_lb.clone();
                let mut pred_ub = self.pred_ub.clone();
                pred_lb.push(0.0);
                pred_ub.push(u);
                Ok(StarSet { center, basis, cons, rhs, pred_lb, pred_ub })
            }
        }
    }

    /// Per-dimension LP bounds.
    pub fn bounds(&self) -> Result<Vec<NeuronBounds>, StarError> {
        (0..self.dim()).map(|i| self.dim_bounds(i, BoundMode::Lp)).collect()
    }
}

/// Elementwise hull of the LP bounds of several stars.
pub fn union_bounds(stars: &[StarSet]) -> Result<Vec<NeuronBounds>, StarError> {
    let mut acc: Option<Vec<NeuronBounds>> = None;
    for s in stars {
        let b = s.bounds()?;
        acc = Some(match acc {
            None => b,
            Some(a) => a
                .iter()
                .zip(&b)
                .map(|(x, y)| NeuronBounds { lower: x.lower.min(y.lower), upper: x.upper.max(y.upper) })
                .collect(),
        });
    }
    acc.ok_or(StarError::Empty)
}

/// `{center + Gβ : β ∈ [−1, 1]^g}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    pub center: Vec<f64>,
    pub generators: Matrix,
}

impl Zonotope {
    pub fn from_box(lb: &[f64], ub: &[f64]) -> Result<Self, StarError> {
        if lb.len() != ub.len() {
            return Err(StarError::DimensionMismatch("box bounds differ in length".into()));
        }
        if let Some(i) = lb.iter().zip(ub).position(|(l, u)| !(l <= u)) {
            return Err(StarError::InvalidBox(i));
        }
        let half: Vec<f64> = lb.iter().zip(ub).map(|(l, u)| (u - l) / 2.0).collect();
        Ok(Self {
            center: lb.iter().zip(ub).map(|(l, u)| (l + u) / 2.0).collect(),
            generators: Matrix::from_diag(&half),
        })
    }

    pub fn bounds(&self) -> Vec<NeuronBounds> {
        (0..self.center.len())
            .map(|i| {
                let r: f64 = self.generators.row(i).iter().map(|g| g.abs()).sum();
                NeuronBounds { lower: self.center[i] - r, upper: self.center[i] + r }
            })
            .collect()
    }

    pub fn affine_map(&self, w: &Matrix, b: &[f64]) -> Zonotope {
        let mut center = w.mul_vec(&self.center);
        for (c, o) in center.iter_mut().zip(b) {
            *c += o;
        }
        Zonotope { center, generators: w.matmul(&self.generators) }
    }

    /// Minimal-area parallelogram ReLU abstraction, one new generator per
    /// unstable neuron.
    pub fn relu(&self) -> Zonotope {
        let bounds = self.bounds();
        let unstable: Vec<usize> =
            (0..bounds.len()).filter(|&i| bounds[i].status() == NeuronStatus::Unstable).collect();
        let g = self.generators.cols();
        let mut generators = self.generators.widen(unstable.len());
        let mut center = self.center.clone();
        for (i, nb) in bounds.iter().enumerate() {
            match nb.status() {
                NeuronStatus::StablePositive => {}
                NeuronStatus::StableNegative => {
                    center[i] = 0.0;
                    generators.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                }
                NeuronStatus::Unstable => {
                    let (l, u) = (nb.lower, nb.upper);
                    let lambda = u / (u - l);
                    let mu = -lambda * l / 2.0;
                    center[i] = lambda * center[i] + mu;
                    generators.row_mut(i)[..g].iter_mut().for_each(|v| *v *= lambda);
                    let k = unstable.iter().position(|&j| j == i).unwrap();
                    generators[(i, g + k)] = mu;
                }
            }
        }
        Zonotope { center, generators }
    }
}

/// Zonotope bounds for the input box followed by the output of every layer,
/// so `result[k]` holds the pre-activation bounds of a ReLU at layer index `k`.
pub fn zono_bounds(net: &Network, lb: &[f64], ub: &[f64]) -> Result<Vec<Vec<NeuronBounds>>, StarError> {
    if lb.len() != net.input_dim() {
        return Err(StarError::DimensionMismatch(format!(
            "box has {} dims, network expects {}",
            lb.len(),
            net.input_dim()
        )));
    }
    let mut z = Zonotope::from_box(lb, ub)?;
    let mut out = vec![z.bounds()];
    for layer in net.layers() {
        match layer {
            Layer::Affine(a) => {
                z = z.affine_map(&a.weights, &a.bias);
                out.push(z.bounds());
            }
            Layer::Relu { .. } => {
                let pre = z.bounds();
                z = z.relu();
                let clipped = z
                    .bounds()
                    .iter()
                    .zip(&pre)
                    .map(|(b, p)| b.intersect(&NeuronBounds { lower: p.lower.max(0.0), upper: p.upper.max(0.0) }))
                    .collect();
                out.push(clipped);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReachMethod {
    Exact,
    Approx,
    /// Fraction of unstable neurons per layer that keep estimated bounds.
    Relax(f64),
}

#[derive(Debug, Clone)]
pub struct ReachOptions<'a> {
    /// Exact-mode star budget.
    pub max_stars: usize,
    pub deadline: Option<Instant>,
    /// Sound pre-bounds, laid out as returned by [`zono_bounds`].
    pub pre_bounds: Option<&'a [Vec<NeuronBounds>]>,
}

impl Default for ReachOptions<'_> {
    fn default() -> Self {
        Self { max_stars: 10_000, deadline: None, pre_bounds: None }
    }
}

impl ReachOptions<'_> {
    fn check_deadline(&self) -> Result<(), StarError> {
        match self.deadline {
            Some(d) if Instant::now() >= d => Err(StarError::Timeout),
            _ => Ok(()),
        }
    }
}

/// Number of unstable neurons that receive LP bounds under `Relax(factor)`.
pub fn relax_refine_count(factor: f64, unstable: usize) -> usize {
    let f = factor.clamp(0.0, 1.0);
    (((1.0 - f) * unstable as f64).round() as usize).min(unstable)
}

/// Reachable output sets of `net` from `input`.
pub fn reach(
    net: &Network,
    input: &StarSet,
    method: ReachMethod,
    opts: &ReachOptions,
) -> Result<Vec<StarSet>, StarError> {
    if input.dim() != net.input_dim() {
        return Err(StarError::DimensionMismatch(format!(
            "input set has {} dims, network expects {}",
            input.dim(),
            net.input_dim()
        )));
    }
    if let Some(pre) = opts.pre_bounds {
        if pre.len() != net.layers().len() + 1 {
            return Err(StarError::DimensionMismatch("pre-bounds do not cover every layer".into()));
        }
    }
    match method {
        ReachMethod::Exact => reach_exact(net, input, opts),
        ReachMethod::Approx => reach_single(net, input, 0.0, opts).map(|s| vec![s]),
        ReachMethod::Relax(f) => reach_single(net, input, f, opts).map(|s| vec![s]),
    }
}

fn estimated_bounds(star: &StarSet, pre: Option<&[NeuronBounds]>) -> Vec<NeuronBounds> {
    (0..star.dim())
        .map(|i| {
            let est = star.estimate(i);
            match pre {
                Some(p) => est.intersect(&p[i]),
                None => est,
            }
        })
        .collect()
}

fn reach_single(net: &Network, input: &StarSet, relax: f64, opts: &ReachOptions) -> Result<StarSet, StarError> {
    let mut star = input.clone();
    for (k, layer) in net.layers().iter().enumerate() {
        opts.check_deadline()?;
        match layer {
            Layer::Affine(a) => star = star.affine_map(&a.weights, &a.bias)?,
            Layer::Relu { .. } => {
                let pre = opts.pre_bounds.map(|p| p[k].as_slice());
                let mut bounds = estimated_bounds(&star, pre);
                let mut unstable: Vec<usize> =
                    (0..bounds.len()).filter(|&i| bounds[i].status() == NeuronStatus::Unstable).collect();
                // Largest estimated area first; index breaks ties.
                unstable
                    .sort_by(|&a, &b| bounds[b].triangle_area().total_cmp(&bounds[a].triangle_area()).then(a.cmp(&b)));
                let refine = relax_refine_count(relax, unstable.len());
                for &i in &unstable[..refine] {
                    opts.check_deadline()?;
                    let tight = star.dim_bounds(i, BoundMode::Lp)?;
                    bounds[i] = bounds[i].intersect(&tight);
                }
                for (i, nb) in bounds.iter().enumerate() {
                    star = star.relu_approx_step(i, *nb)?;
                }
            }
        }
    }
    Ok(star)
}

fn reach_exact(net: &Network, input: &StarSet, opts: &ReachOptions) -> Result<Vec<StarSet>, StarError> {
    let layers = net.layers();
    let mut out = Vec::new();
    // (star, layer index, next neuron)
    let mut stack = vec![(input.clone(), 0usize, 0usize)];
    while let Some((mut star, mut k, mut neuron)) = stack.pop() {
        opts.check_deadline()?;
        loop {
            if k == layers.len() {
                out.push(star);
                break;
            }
            match &layers[k] {
                Layer::Affine(a) => {
                    star = star.affine_map(&a.weights, &a.bias)?;
                    k += 1;
                    neuron = 0;
                }
                Layer::Relu { width } => {
                    if neuron == *width {
                        k += 1;
                        neuron = 0;
                        continue;
                    }
                    let mut est = star.estimate(neuron);
                    if let Some(pre) = opts.pre_bounds {
                        est = est.intersect(&pre[k][neuron]);
                    }
                    let nb = if est.status() == NeuronStatus::Unstable {
                        opts.check_deadline()?;
                        star.dim_bounds(neuron, BoundMode::Lp)?
                    } else {
                        est
                    };
                    let mut pieces = star.relu_exact_with(neuron, nb);
                    neuron += 1;
                    if pieces.len() == 2 {
                        let negative = pieces.pop().unwrap();
                        stack.push((negative, k, neuron));
                        if out.len() + stack.len() + 1 > opts.max_stars {
                            return Err(StarError::StarBudget(opts.max_stars));
                        }
                    }
                    star = pieces.pop().unwrap();
                }
            }
        }
    }
    Ok(out)
}
