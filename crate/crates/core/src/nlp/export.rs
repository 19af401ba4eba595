//! Plain-text export of a shooting problem for external NLP solvers.
//!
//! ```text
//! nlp-export v1
//! dimensions <variables> <constraints> <states> <controls> <intervals> <parameters>
//! horizon <T>
//! form sum|least_squares
//! tolerances <rel> <abs>
//! initial_state <n>
//! <value>                      one per line, 17 significant digits
//! lower <variables>
//! ...
//! upper <variables>
//! ...
//! start <variables>
//! ...
//! control_map <intervals> <controls> <parameters>
//! ...                          row-major, one interval block after another
//! jacobian <nnz>
//! <row> <col>                  zero-based, row-major order
//! end
//! ```
//!
//! Constraint rows are `c_0 = x_0 - x̃_0` and `c_{k+1} = x_{k+1} - F_k(x_k, M_k p)`;
//! the objective is the sum over intervals of the quadrature states (or half
//! their squared norm). Values are written with `{:.16e}`, which round-trips
//! every finite `f64` exactly.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;

use crate::ocp::{ObjectiveForm, ShootingProblem};

pub const HEADER: &str = "nlp-export v1";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedProblem {
    pub variables: usize,
    pub constraints: usize,
    pub states: usize,
    pub controls: usize,
    pub intervals: usize,
    pub parameters: usize,
    pub horizon: f64,
    pub form: ObjectiveForm,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_state: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub start: Vec<f64>,
    /// `intervals` blocks of `controls × parameters`, row-major.
    pub control_map: Vec<f64>,
    pub jacobian: Vec<(usize, usize)>,
}

/// Structural nonzeros of `∂c/∂w`, row-major.
pub fn jacobian_pattern(problem: &ShootingProblem) -> Vec<(usize, usize)> {
    let n = problem.state_dim();
    let off_p = problem.residual_count();
    let mut out = Vec::new();
    for i in 0..n {
        out.push((i, i));
    }
    for k in 0..problem.intervals() {
        let m = problem.controls().map(k);
        let cols: Vec<usize> = (0..m.cols())
            .filter(|&j| (0..m.rows()).any(|r| m[(r, j)] != 0.0))
            .collect();
        for i in 0..n {
            let row = (k + 1) * n + i;
            for j in 0..n {
                out.push((row, k * n + j));
            }
            out.push((row, row));
            for &j in &cols {
                out.push((row, off_p + j));
            }
        }
    }
    out
}

pub fn to_exported(problem: &ShootingProblem, start: &[f64]) -> ExportedProblem {
    let (lower, upper) = problem.variable_bounds();
    let nu = problem.controls().control_dim();
    let control_map = (0..problem.intervals())
        .flat_map(|k| problem.controls().map(k).as_slice().to_vec())
        .collect();
    ExportedProblem {
        variables: problem.variable_count(),
        constraints: problem.residual_count(),
        states: problem.state_dim(),
        controls: nu,
        intervals: problem.intervals(),
        parameters: problem.parameter_count(),
        horizon: problem.grid().horizon(),
        form: problem.form(),
        rel_tol: problem.integrator().rel_tol,
        abs_tol: problem.integrator().abs_tol,
        initial_state: problem.initial_state().to_vec(),
        lower,
        upper,
        start: start.to_vec(),
        control_map,
        jacobian: jacobian_pattern(problem),
    }
}

fn push_values(out: &mut String, name: &str, values: &[f64]) {
    let _ = writeln!(out, "{name} {}", values.len());
    for v in values {
        let _ = writeln!(out, "{v:.16e}");
    }
}

pub fn write_export<W: Write>(e: &ExportedProblem, mut sink: W) -> Result<(), ExportError> {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(
        out,
        "dimensions {} {} {} {} {} {}",
        e.variables, e.constraints, e.states, e.controls, e.intervals, e.parameters
    );
    let _ = writeln!(out, "horizon {:.16e}", e.horizon);
    let form = match e.form {
        ObjectiveForm::Sum => "sum",
        ObjectiveForm::LeastSquares => "least_squares",
    };
    let _ = writeln!(out, "form {form}");
    let _ = writeln!(out, "tolerances {:.16e} {:.16e}", e.rel_tol, e.abs_tol);
    push_values(&mut out, "initial_state", &e.initial_state);
    push_values(&mut out, "lower", &e.lower);
    push_values(&mut out, "upper", &e.upper);
    push_values(&mut out, "start", &e.start);
    let _ = writeln!(
        out,
        "control_map {} {} {}",
        e.intervals, e.controls, e.parameters
    );
    for v in &e.control_map {
        let _ = writeln!(out, "{v:.16e}");
    }
    let _ = writeln!(out, "jacobian {}", e.jacobian.len());
    for (r, c) in &e.jacobian {
        let _ = writeln!(out, "{r} {c}");
    }
    out.push_str("end\n");
    sink.write_all(out.as_bytes())?;
    Ok(())
}

pub fn export_problem(
    problem: &ShootingProblem,
    start: &[f64],
    path: &std::path::Path,
) -> Result<(), ExportError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_export(&to_exported(problem, start), &mut w)?;
    w.flush()?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    line: usize,
}

impl<R: Read> Lines<R> {
    fn err(&self, message: impl Into<String>) -> ExportError {
        ExportError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<String, ExportError> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    /// `keyword a b …` with `count` integer fields.
    fn record(&mut self, keyword: &str, count: usize) -> Result<Vec<String>, ExportError> {
        let l = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(keyword) {
            return Err(self.err(format!("expected `{keyword}`")));
        }
        let fields: Vec<String> = parts.map(str::to_string).collect();
        if fields.len() != count {
            return Err(self.err(format!("`{keyword}` needs {count} fields")));
        }
        Ok(fields)
    }

    fn usize_field(&self, s: &str) -> Result<usize, ExportError> {
        s.parse()
            .map_err(|_| self.err(format!("invalid integer `{s}`")))
    }

    fn f64_field(&self, s: &str) -> Result<f64, ExportError> {
        s.parse()
            .map_err(|_| self.err(format!("invalid number `{s}`")))
    }

    fn values(&mut self, keyword: &str, expected: usize) -> Result<Vec<f64>, ExportError> {
        let f = self.record(keyword, 1)?;
        let count = self.usize_field(&f[0])?;
        if count != expected {
            return Err(self.err(format!(
                "`{keyword}` has {count} values, expected {expected}"
            )));
        }
        (0..count)
            .map(|_| {
                let l = self.next()?;
                self.f64_field(l.trim())
            })
            .collect()
    }
}

pub fn read_export<R: Read>(source: R) -> Result<ExportedProblem, ExportError> {
    let mut lines = Lines {
        inner: BufReader::new(source).lines(),
        line: 0,
    };
    if lines.next()?.trim() != HEADER {
        return Err(lines.err(format!("expected `{HEADER}`")));
    }
    let d = lines.record("dimensions", 6)?;
    let dims: Vec<usize> = d
        .iter()
        .map(|s| lines.usize_field(s))
        .collect::<Result<_, _>>()?;
    let [variables, constraints, states, controls, intervals, parameters] = dims[..] else {
        unreachable!()
    };
    if variables != (intervals + 1) * states + parameters || constraints != (intervals + 1) * states
    {
        return Err(lines.err("inconsistent dimensions"));
    }
    let h = lines.record("horizon", 1)?;
    let horizon = lines.f64_field(&h[0])?;
    let f = lines.record("form", 1)?;
    let form = match f[0].as_str() {
        "sum" => ObjectiveForm::Sum,
        "least_squares" => ObjectiveForm::LeastSquares,
        other => return Err(lines.err(format!("unknown form `{other}`"))),
    };
    let t = lines.record("tolerances", 2)?;
    let (rel_tol, abs_tol) = (lines.f64_field(&t[0])?, lines.f64_field(&t[1])?);
    let initial_state = lines.values("initial_state", states)?;
    let lower = lines.values("lower", variables)?;
    let upper = lines.values("upper", variables)?;
    let start = lines.values("start", variables)?;
    let c = lines.record("control_map", 3)?;
    let cm: Vec<usize> = c
        .iter()
        .map(|s| lines.usize_field(s))
        .collect::<Result<_, _>>()?;
    if cm != [intervals, controls, parameters] {
        return Err(lines.err("control map dimensions disagree with the header"));
    }
    let control_map = (0..intervals * controls * parameters)
        .map(|_| {
            let l = lines.next()?;
            lines.f64_field(l.trim())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let j = lines.record("jacobian", 1)?;
    let nnz = lines.usize_field(&j[0])?;
    let mut jacobian = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let l = lines.next()?;
        let mut it = l.split_whitespace();
        let (Some(r), Some(c), None) = (it.next(), it.next(), it.next()) else {
            return Err(lines.err("expected `row col`"));
        };
        let (r, c) = (lines.usize_field(r)?, lines.usize_field(c)?);
        if r >= constraints || c >= variables {
            return Err(lines.err("sparsity entry out of range"));
        }
        jacobian.push((r, c));
    }
    if lines.next()?.trim() != "end" {
        return Err(lines.err("expected `end`"));
    }
    Ok(ExportedProblem {
        variables,
        constraints,
        states,
        controls,
        intervals,
        parameters,
        horizon,
        form,
        rel_tol,
        abs_tol,
        initial_state,
        lower,
        upper,
        start,
        control_map,
        jacobian,
    })
}

pub fn import_problem(path: &std::path::Path) -> Result<ExportedProblem, ExportError> {
    read_export(std::fs::File::open(path)?)
}
