//! VNN-LIB robustness queries: emitter, parser and batch generation.
//!
//! Emitted files encode the *negated* robustness property, so a query is
//! satisfiable exactly when some input in the box makes another class score
//! at least as high as the target:
//!
//! ```text
//! (declare-const X_0 Real)
//! (declare-const Y_0 Real)
//! (declare-const Y_1 Real)
//! (assert (<= X_0 0.60000000000000009))
//! (assert (>= X_0 0.39999999999999997))
//! (assert (>= Y_0 Y_1))
//! ```
//!
//! The accepted grammar is deliberately small: `declare-const` of sort `Real`,
//! bound asserts with `<=`/`>=` between an input and a constant, and one output
//! assertion that is either a single atom or a flat `or` of atoms.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::specgen::{build_feature_spec, build_pixel_spec};
use crate::specgen::{FeatureMask, FeatureSchema, InputSpec, Sample, SpecError};

#[derive(Debug, Error)]
pub enum VnnlibError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: undeclared variable {var}")]
    Undeclared { line: usize, var: String },
    #[error("missing {which} bound for {var}")]
    MissingBound { var: String, which: &'static str },
    #[error("line {line}: conflicting bounds for {var}")]
    ConflictingBounds { line: usize, var: String },
    #[error("target class {target} out of range for {num_outputs} outputs")]
    InvalidTarget { target: usize, num_outputs: usize },
    #[error("property is not a robustness query (a disjunction of Y_j >= Y_t over every j != t)")]
    NotRobustness,
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
}

/// One comparison over output variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    /// `Y_a >= Y_b`
    Ge(usize, usize),
    /// `Y_a <= Y_b`
    Le(usize, usize),
    /// `Y_a >= c`
    GeConst(usize, f64),
    /// `Y_a <= c`
    LeConst(usize, f64),
}

impl Atom {
    pub fn holds(&self, y: &[f64]) -> bool {
        match *self {
            Atom::Ge(a, b) => y[a] >= y[b],
            Atom::Le(a, b) => y[a] <= y[b],
            Atom::GeConst(a, c) => y[a] >= c,
            Atom::LeConst(a, c) => y[a] <= c,
        }
    }

    fn outputs(&self) -> Vec<usize> {
        match *self {
            Atom::Ge(a, b) | Atom::Le(a, b) => vec![a, b],
            Atom::GeConst(a, _) | Atom::LeConst(a, _) => vec![a],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VnnLibSpec {
    pub num_inputs: usize,
    pub num_outputs: usize,
    pub input_bounds: Vec<(f64, f64)>,
    /// Disjunction; the query is unsafe when any atom holds.
    pub property: Vec<Atom>,
}

impl VnnLibSpec {
    /// Negated robustness of `target` over the box of `spec`.
    pub fn robustness(spec: &InputSpec, target: usize, num_outputs: usize) -> Result<Self, VnnlibError> {
        if target >= num_outputs {
            return Err(VnnlibError::InvalidTarget { target, num_outputs });
        }
        Ok(Self {
            num_inputs: spec.dim(),
            num_outputs,
            input_bounds: spec.lower.iter().copied().zip(spec.upper.iter().copied()).collect(),
            property: (0..num_outputs).filter(|&j| j != target).map(|j| Atom::Ge(j, target)).collect(),
        })
    }

    /// True when the outputs satisfy the (negated) property.
    pub fn violated_by(&self, y: &[f64]) -> bool {
        self.property.iter().any(|a| a.holds(y))
    }

    /// The target class when the property has the robustness shape
    /// `∨_{j≠t} Y_j ≥ Y_t`.
    pub fn robustness_target(&self) -> Option<usize> {
        let t = match self.property.first()? {
            Atom::Ge(_, t) => *t,
            _ => return None,
        };
        let expected: Vec<Atom> = (0..self.num_outputs).filter(|&j| j != t).map(|j| Atom::Ge(j, t)).collect();
        (self.property == expected).then_some(t)
    }

    /// The box and target of a robustness query, centred on the box midpoint.
    pub fn to_input_spec(&self) -> Result<InputSpec, VnnlibError> {
        let target = self.robustness_target().ok_or(VnnlibError::NotRobustness)?;
        let (lower, upper) = (self.lower(), self.upper());
        Ok(InputSpec {
            x: lower.iter().zip(&upper).map(|(l, u)| l + (u - l) / 2.0).collect(),
            lower,
            upper,
            ..InputSpec::point(Vec::new(), target)
        })
    }

    pub fn lower(&self) -> Vec<f64> {
        self.input_bounds.iter().map(|b| b.0).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.input_bounds.iter().map(|b| b.1).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(64 * (self.num_inputs + self.num_outputs) + 64);
        s.push_str("; robustness query: satisfiable iff a non-target output reaches the target\n");
        for i in 0..self.num_inputs {
            let _ = writeln!(s, "(declare-const X_{i} Real)");
        }
        for j in 0..self.num_outputs {
            let _ = writeln!(s, "(declare-const Y_{j} Real)");
        }
        for (i, (lo, hi)) in self.input_bounds.iter().enumerate() {
            let _ = writeln!(s, "(assert (<= X_{i} {}))", fmt_decimal(*hi));
            let _ = writeln!(s, "(assert (>= X_{i} {}))", fmt_decimal(*lo));
        }
        match self.property.as_slice() {
            [] => {}
            [atom] => {
                let _ = writeln!(s, "(assert {})", fmt_atom(atom));
            }
            atoms => {
                s.push_str("(assert (or\n");
                for a in atoms {
                    let _ = writeln!(s, "    {}", fmt_atom(a));
                }
                s.push_str("))\n");
            }
        }
        s
    }
}

fn fmt_atom(a: &Atom) -> String {
    match *a {
        Atom::Ge(x, y) => format!("(>= Y_{x} Y_{y})"),
        Atom::Le(x, y) => format!("(<= Y_{x} Y_{y})"),
        Atom::GeConst(x, c) => format!("(>= Y_{x} {})", fmt_decimal(c)),
        Atom::LeConst(x, c) => format!("(<= Y_{x} {})", fmt_decimal(c)),
    }
}

/// Positional decimal with 17 significant digits (exact f64 round trip).
pub fn fmt_decimal(v: f64) -> String {
    if v == 0.0 {
        return "0.0".to_string();
    }
    let sci = format!("{:.16e}", v.abs());
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let sign = if v < 0.0 { "-" } else { "" };
    let n = digits.len() as i32;
    let point = exp + 1; // digits before the decimal point
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point >= n {
        format!("{}{}.0", digits, "0".repeat((point - n) as usize))
    } else {
        format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
    };
    format!("{sign}{body}")
}

/// Emits the negated robustness query for `spec`.
pub fn emit(spec: &InputSpec, target: usize, num_outputs: usize) -> Result<String, VnnlibError> {
    Ok(VnnLibSpec::robustness(spec, target, num_outputs)?.to_text())
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String, usize),
    List(Vec<Sexp>, usize),
}

impl Sexp {
    fn line(&self) -> usize {
        match self {
            Sexp::Atom(_, l) | Sexp::List(_, l) => *l,
        }
    }
}

fn tokenize(text: &str) -> Vec<(String, usize)> {
    let mut tokens = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split(';').next().unwrap_or("");
        let mut cur = String::new();
        for ch in line.chars() {
            match ch {
                '(' | ')' => {
                    if !cur.is_empty() {
                        tokens.push((std::mem::take(&mut cur), ln + 1));
                    }
                    tokens.push((ch.to_string(), ln + 1));
                }
                c if c.is_whitespace() => {
                    if !cur.is_empty() {
                        tokens.push((std::mem::take(&mut cur), ln + 1));
                    }
                }
                c => cur.push(c),
            }
        }
        if !cur.is_empty() {
            tokens.push((cur, ln + 1));
        }
    }
    tokens
}

fn read_forms(text: &str) -> Result<Vec<Sexp>, VnnlibError> {
    let mut stack: Vec<(Vec<Sexp>, usize)> = Vec::new();
    let mut top = Vec::new();
    let mut last_line = 1;
    for (tok, line) in tokenize(text) {
        last_line = line;
        match tok.as_str() {
            "(" => stack.push((Vec::new(), line)),
            ")" => {
                let (items, start) =
                    stack.pop().ok_or_else(|| VnnlibError::Syntax { line, msg: "unbalanced `)`".into() })?;
                let node = Sexp::List(items, start);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(node),
                    None => top.push(node),
                }
            }
            _ => match stack.last_mut() {
                Some((parent, _)) => parent.push(Sexp::Atom(tok, line)),
                None => return Err(VnnlibError::Syntax { line, msg: format!("unexpected top-level token `{tok}`") }),
            },
        }
    }
    if let Some((_, start)) = stack.last() {
        return Err(VnnlibError::Syntax { line: last_line.max(*start), msg: "unclosed `(`".into() });
    }
    Ok(top)
}

#[derive(Debug, Clone, Copy)]
enum Var {
    X(usize),
    Y(usize),
}

fn parse_var(name: &str) -> Option<Var> {
    let (prefix, idx) = name.split_once('_')?;
    let idx: usize = idx.parse().ok()?;
    match prefix {
        "X" => Some(Var::X(idx)),
        "Y" => Some(Var::Y(idx)),
        _ => None,
    }
}

fn parse_number(s: &Sexp) -> Option<f64> {
    match s {
        Sexp::Atom(a, _) => {
            if a.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.') {
                a.parse().ok().filter(|v: &f64| v.is_finite())
            } else {
                None
            }
        }
        Sexp::List(items, _) => match items.as_slice() {
            [Sexp::Atom(op, _), inner] if op == "-" => parse_number(inner).map(|v| -v),
            _ => None,
        },
    }
}

enum Operand {
    Var(Var),
    Const(f64),
}

struct Parser {
    declared_x: Vec<bool>,
    declared_y: Vec<bool>,
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
    property: Option<Vec<Atom>>,
}

impl Parser {
    fn operand(&self, s: &Sexp) -> Result<Operand, VnnlibError> {
        if let Some(v) = parse_number(s) {
            return Ok(Operand::Const(v));
        }
        let Sexp::Atom(name, line) = s else {
            return Err(VnnlibError::Syntax { line: s.line(), msg: "expected a variable or constant".into() });
        };
        let var = parse_var(name).ok_or_else(|| VnnlibError::Syntax {
            line: *line,
            msg: format!("expected a variable or constant, found `{name}`"),
        })?;
        let declared = match var {
            Var::X(i) => self.declared_x.get(i).copied().unwrap_or(false),
            Var::Y(j) => self.declared_y.get(j).copied().unwrap_or(false),
        };
        if !declared {
            return Err(VnnlibError::Undeclared { line: *line, var: name.clone() });
        }
        Ok(Operand::Var(var))
    }

    /// `(op a b)` with op in {<=, >=}, normalized to (a ≥ b) or (a ≤ b).
    fn comparison(&self, s: &Sexp) -> Result<(bool, Operand, Operand, usize), VnnlibError> {
        let Sexp::List(items, line) = s else {
            return Err(VnnlibError::Syntax { line: s.line(), msg: "expected a comparison".into() });
        };
        match items.as_slice() {
            [Sexp::Atom(op, _), a, b] if op == "<=" || op == ">=" => {
                Ok((op == ">=", self.operand(a)?, self.operand(b)?, *line))
            }
            _ => Err(VnnlibError::Syntax { line: *line, msg: "expected (<= a b) or (>= a b)".into() }),
        }
    }

    fn output_atom(&self, s: &Sexp) -> Result<Atom, VnnlibError> {
        let (ge, a, b, line) = self.comparison(s)?;
        Ok(match (a, b) {
            (Operand::Var(Var::Y(a)), Operand::Var(Var::Y(b))) => {
                if ge {
                    Atom::Ge(a, b)
                } else {
                    Atom::Le(a, b)
                }
            }
            (Operand::Var(Var::Y(a)), Operand::Const(c)) => {
                if ge {
                    Atom::GeConst(a, c)
                } else {
                    Atom::LeConst(a, c)
                }
            }
            (Operand::Const(c), Operand::Var(Var::Y(a))) => {
                if ge {
                    Atom::LeConst(a, c)
                } else {
                    Atom::GeConst(a, c)
                }
            }
            _ => {
                return Err(VnnlibError::Syntax {
                    line,
                    msg: "output atoms must compare Y variables or a Y variable with a constant".into(),
                })
            }
        })
    }

    fn set_bound(&mut self, i: usize, value: f64, is_lower: bool, line: usize) -> Result<(), VnnlibError> {
        let slot = if is_lower { &mut self.lower[i] } else { &mut self.upper[i] };
        match slot {
            Some(old) if *old != value => return Err(VnnlibError::ConflictingBounds { line, var: format!("X_{i}") }),
            _ => *slot = Some(value),
        }
        if let (Some(lo), Some(hi)) = (self.lower[i], self.upper[i]) {
            if lo > hi {
                return Err(VnnlibError::ConflictingBounds { line, var: format!("X_{i}") });
            }
        }
        Ok(())
    }

    fn set_property(&mut self, atoms: Vec<Atom>, line: usize) -> Result<(), VnnlibError> {
        if self.property.is_some() {
            return Err(VnnlibError::Syntax { line, msg: "only one output assertion is supported".into() });
        }
        self.property = Some(atoms);
        Ok(())
    }

    fn assertion(&mut self, body: &Sexp, line: usize) -> Result<(), VnnlibError> {
        if let Sexp::List(items, _) = body {
            if let Some(Sexp::Atom(head, _)) = items.first() {
                if head == "or" {
                    let atoms = items[1..].iter().map(|a| self.output_atom(a)).collect::<Result<Vec<_>, _>>()?;
                    if atoms.is_empty() {
                        return Err(VnnlibError::Syntax { line, msg: "empty disjunction".into() });
                    }
                    return self.set_property(atoms, line);
                }
            }
        }
        let (ge, a, b, cline) = self.comparison(body)?;
        match (a, b) {
            (Operand::Var(Var::X(i)), Operand::Const(c)) => self.set_bound(i, c, ge, cline),
            (Operand::Const(c), Operand::Var(Var::X(i))) => self.set_bound(i, c, !ge, cline),
            (Operand::Var(Var::X(_)), _) | (_, Operand::Var(Var::X(_))) => Err(VnnlibError::Syntax {
                line: cline,
                msg: "input constraints must compare one X variable with a constant".into(),
            }),
            _ => {
                let atom = self.output_atom(body)?;
                self.set_property(vec![atom], line)
            }
        }
    }
}

/// Parses a query in the supported grammar subset.
pub fn parse(text: &str) -> Result<VnnLibSpec, VnnlibError> {
    let forms = read_forms(text)?;
    let mut p =
        Parser { declared_x: Vec::new(), declared_y: Vec::new(), lower: Vec::new(), upper: Vec::new(), property: None };
    for form in &forms {
        let Sexp::List(items, line) = form else { unreachable!() };
        let line = *line;
        match items.as_slice() {
            [Sexp::Atom(head, _), Sexp::Atom(name, _), Sexp::Atom(sort, _)] if head == "declare-const" => {
                if sort != "Real" {
                    return Err(VnnlibError::Syntax { line, msg: format!("unsupported sort `{sort}`") });
                }
                let var = parse_var(name).ok_or_else(|| VnnlibError::Syntax {
                    line,
                    msg: format!("variable names must be X_i or Y_j, found `{name}`"),
                })?;
                let (slots, i) = match var {
                    Var::X(i) => (&mut p.declared_x, i),
                    Var::Y(j) => (&mut p.declared_y, j),
                };
                if slots.len() <= i {
                    slots.resize(i + 1, false);
                }
                if slots[i] {
                    return Err(VnnlibError::Syntax { line, msg: format!("{name} declared twice") });
                }
                slots[i] = true;
                p.lower.resize(p.declared_x.len(), None);
                p.upper.resize(p.declared_x.len(), None);
            }
            [Sexp::Atom(head, _), body] if head == "assert" => p.assertion(body, line)?,
            _ => return Err(VnnlibError::Syntax { line, msg: "expected (declare-const ..) or (assert ..)".into() }),
        }
    }
    for (name, slots) in [("X", &p.declared_x), ("Y", &p.declared_y)] {
        if let Some(i) = slots.iter().position(|d| !d) {
            return Err(VnnlibError::Syntax {
                line: 0,
                msg: format!("{name}_{i} is never declared; indices must be contiguous"),
            });
        }
    }
    let mut input_bounds = Vec::with_capacity(p.declared_x.len());
    for i in 0..p.declared_x.len() {
        let lo = p.lower[i].ok_or_else(|| VnnlibError::MissingBound { var: format!("X_{i}"), which: "lower" })?;
        let hi = p.upper[i].ok_or_else(|| VnnlibError::MissingBound { var: format!("X_{i}"), which: "upper" })?;
        input_bounds.push((lo, hi));
    }
    let property = p.property.unwrap_or_default();
    debug_assert!(property.iter().flat_map(Atom::outputs).all(|j| j < p.declared_y.len()));
    Ok(VnnLibSpec { num_inputs: p.declared_x.len(), num_outputs: p.declared_y.len(), input_bounds, property })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub file: String,
    pub sample: usize,
    pub mask: String,
    pub epsilon: f64,
    pub target: usize,
}

/// How a batch turns epsilons into boxes.
#[derive(Debug, Clone)]
pub enum BatchMode<'a> {
    Features { schema: &'a FeatureSchema, masks: &'a [FeatureMask] },
    Pixels,
}

/// Writes one query per (sample, mask, epsilon) and a `manifest.csv`.
/// Returns the manifest rows in (sample, mask, epsilon) order.
pub fn batch_emit(
    dataset: &str,
    samples: &[Sample],
    epsilons: &[f64],
    mode: &BatchMode,
    num_outputs: usize,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>, VnnlibError> {
    fs::create_dir_all(out_dir).map_err(|source| VnnlibError::Io { path: out_dir.to_path_buf(), source })?;
    let mut rows = Vec::new();
    for sample in samples {
        let masks: Vec<Option<&FeatureMask>> = match mode {
            BatchMode::Features { masks, .. } => masks.iter().map(Some).collect(),
            BatchMode::Pixels => vec![None],
        };
        for mask in masks {
            for &eps in epsilons {
                let spec = match (mode, mask) {
                    (BatchMode::Features { schema, .. }, Some(m)) => {
                        build_feature_spec(&sample.x, sample.label, eps, schema, m)?
                    }
                    _ => {
                        let k = eps.round();
                        if (k - eps).abs() > 0.0 || k < 0.0 {
                            return Err(SpecError::NegativeEpsilon(eps).into());
                        }
                        build_pixel_spec(&sample.x, sample.label, k as u32)?
                    }
                };
                let mask_name = spec.mask_name().to_string();
                let file = format!("{dataset}_{}_{mask_name}_{eps}.vnnlib", sample.id);
                let text = emit(&spec, sample.label, num_outputs)?;
                let path = out_dir.join(&file);
                fs::write(&path, text).map_err(|source| VnnlibError::Io { path, source })?;
                rows.push(ManifestRow { file, sample: sample.id, mask: mask_name, epsilon: eps, target: sample.label });
            }
        }
    }
    let manifest = out_dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => VnnlibError::Io { path: manifest.clone(), source },
        other => VnnlibError::Syntax { line: 0, msg: format!("{other:?}") },
    })?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| VnnlibError::Io { path: manifest, source })?;
    Ok(rows)
}
