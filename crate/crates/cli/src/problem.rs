//! Problem files: JSON with keys `A`, `B`, `U`, `W` (row-major nested
//! arrays), `nu_bar`, and optional `solver` and `sim` sections.
//!
//! ```json
//! {
//!   "A": [[2.0]], "B": [[1.0]], "U": [[0.0]], "W": [[1.0]],
//!   "nu_bar": [0.8],
//!   "solver": { "tol": 1e-10, "max_iter": 10000, "s0": "identity" },
//!   "sim": { "steps": 100000, "trials": 8, "seed": 7, "q_noise": [[1.0]] }
//! }
//! ```

use std::fmt;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use mare_core::{ChannelSpec, Matrix, PlantModel, SymMatrix};
use serde_json::{Map, Value};

/// Initial iterate for the solver.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialGuess {
    Zero,
    Identity,
    Scaled(f64),
    Explicit(SymMatrix),
}

impl InitialGuess {
    pub fn resolve(&self, n: usize) -> Result<Option<SymMatrix>> {
        Ok(match self {
            InitialGuess::Zero => None,
            InitialGuess::Identity => Some(SymMatrix::identity(n)),
            InitialGuess::Scaled(c) => Some(SymMatrix::identity(n).scale(*c)),
            InitialGuess::Explicit(s) => {
                if s.dim() != n {
                    return Err(anyhow!("solver.s0: expected {n}x{n}, got {}x{}", s.dim(), s.dim()));
                }
                Some(s.clone())
            }
        })
    }
}

impl std::str::FromStr for InitialGuess {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "zero" => Ok(InitialGuess::Zero),
            "identity" => Ok(InitialGuess::Identity),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .map(InitialGuess::Scaled)
                .ok_or_else(|| format!("expected zero, identity or a non-negative number, got {other:?}")),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolverSection {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub s0: Option<InitialGuess>,
}

#[derive(Clone, Debug, Default)]
pub struct SimSection {
    pub steps: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub q_noise: Option<SymMatrix>,
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub plant: PlantModel,
    pub solver: SolverSection,
    pub sim: SimSection,
}

/// An error tied to a field path such as `A` or `solver.tol`.
#[derive(Debug)]
struct FieldError {
    path: String,
    msg: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.msg)
    }
}

impl std::error::Error for FieldError {}

fn field_err(path: &str, msg: impl Into<String>) -> anyhow::Error {
    FieldError {
        path: path.to_string(),
        msg: msg.into(),
    }
    .into()
}

pub fn load(path: &Path) -> Result<Problem> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse(&text).with_context(|| format!("invalid problem file {}", path.display()))
}

pub fn parse(text: &str) -> Result<Problem> {
    let root: Value = serde_json::from_str(text).map_err(|e| anyhow!("{e}"))?;
    let obj = root.as_object().ok_or_else(|| anyhow!("top level must be an object"))?;
    reject_unknown(obj, "", &["A", "B", "U", "W", "nu_bar", "solver", "sim"])?;

    let a = matrix(required(obj, "A")?, "A")?;
    let b = matrix(required(obj, "B")?, "B")?;
    let u = sym(required(obj, "U")?, "U")?;
    let w = sym(required(obj, "W")?, "W")?;
    let nu = numbers(required(obj, "nu_bar")?, "nu_bar")?;
    let channels = ChannelSpec::new(nu).map_err(|e| field_err("nu_bar", e.to_string()))?;
    let plant = PlantModel::new(a, b, u, w, channels).map_err(|e| anyhow!("{e}"))?;

    let solver = match obj.get("solver") {
        Some(v) => solver_section(v)?,
        None => SolverSection::default(),
    };
    let sim = match obj.get("sim") {
        Some(v) => sim_section(v)?,
        None => SimSection::default(),
    };
    Ok(Problem { plant, solver, sim })
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| field_err(key, "missing"))
}

fn reject_unknown(obj: &Map<String, Value>, prefix: &str, allowed: &[&str]) -> Result<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(field_err(
            &format!("{prefix}{k}"),
            format!("unknown key (expected one of {})", allowed.join(", ")),
        )),
        None => Ok(()),
    }
}

fn number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| field_err(path, format!("expected a finite number, got {v}")))
}

fn numbers(v: &Value, path: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| field_err(path, "expected an array of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{path}[{}]", i + 1)))
        .collect()
}

/// Parses a nested row-major array. Row numbers in messages are 1-based.
pub fn matrix(v: &Value, path: &str) -> Result<Matrix> {
    let rows = v
        .as_array()
        .ok_or_else(|| field_err(path, "expected a nested array of rows"))?;
    if rows.is_empty() {
        return Err(field_err(path, "matrix has no rows"));
    }
    let mut data = Vec::new();
    let mut width = None;
    for (i, row) in rows.iter().enumerate() {
        let row_path = format!("{path}: row {}", i + 1);
        let entries = row.as_array().ok_or_else(|| anyhow!("{row_path} is not an array"))?;
        match width {
            None if entries.is_empty() => return Err(anyhow!("{row_path} is empty")),
            None => width = Some(entries.len()),
            Some(w) if w != entries.len() => {
                return Err(anyhow!("{row_path} has {} entries, expected {w}", entries.len()))
            }
            Some(_) => {}
        }
        for (j, x) in entries.iter().enumerate() {
            data.push(number(x, &format!("{path}[{}][{}]", i + 1, j + 1))?);
        }
    }
    Matrix::new(rows.len(), width.unwrap_or(0), data).map_err(|e| field_err(path, e.to_string()))
}

fn sym(v: &Value, path: &str) -> Result<SymMatrix> {
    let m = matrix(v, path)?;
    if !m.is_square() {
        return Err(field_err(
            path,
            format!("expected a square matrix, got {}x{}", m.rows(), m.cols()),
        ));
    }
    let asym = (&m - &m.transpose()).max_abs();
    if asym > 1e-12 * m.max_abs().max(1.0) {
        return Err(field_err(
            path,
            format!("matrix is not symmetric (max asymmetry {asym:e})"),
        ));
    }
    SymMatrix::from_matrix(m).map_err(|e| field_err(path, e.to_string()))
}

fn count(v: &Value, path: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| field_err(path, format!("expected a non-negative integer, got {v}")))
}

fn solver_section(v: &Value) -> Result<SolverSection> {
    let obj = v.as_object().ok_or_else(|| field_err("solver", "expected an object"))?;
    reject_unknown(obj, "solver.", &["tol", "max_iter", "s0"])?;
    let s0 = match obj.get("s0") {
        None => None,
        Some(Value::String(s)) => Some(s.parse().map_err(|e: String| field_err("solver.s0", e))?),
        Some(Value::Number(_)) => {
            let c = number(&obj["s0"], "solver.s0")?;
            if c < 0.0 {
                return Err(field_err("solver.s0", "scale must be non-negative"));
            }
            Some(InitialGuess::Scaled(c))
        }
        Some(other) => Some(InitialGuess::Explicit(sym(other, "solver.s0")?)),
    };
    Ok(SolverSection {
        tol: obj.get("tol").map(|x| number(x, "solver.tol")).transpose()?,
        max_iter: obj
            .get("max_iter")
            .map(|x| count(x, "solver.max_iter").map(|c| c as usize))
            .transpose()?,
        s0,
    })
}

fn sim_section(v: &Value) -> Result<SimSection> {
    let obj = v.as_object().ok_or_else(|| field_err("sim", "expected an object"))?;
    reject_unknown(obj, "sim.", &["steps", "trials", "seed", "q_noise"])?;
    Ok(SimSection {
        steps: obj
            .get("steps")
            .map(|x| count(x, "sim.steps").map(|c| c as usize))
            .transpose()?,
        trials: obj
            .get("trials")
            .map(|x| count(x, "sim.trials").map(|c| c as usize))
            .transpose()?,
        seed: obj.get("seed").map(|x| count(x, "sim.seed")).transpose()?,
        q_noise: obj.get("q_noise").map(|x| sym(x, "sim.q_noise")).transpose()?,
    })
}
