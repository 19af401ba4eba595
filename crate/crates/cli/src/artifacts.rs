//! Chromatogram CSV and report JSON.
//!
//! The chromatogram has one row per outlet sample:
//! `t_min,c_NaCl,c_<protein>…,purity,collecting` with concentrations in
//! kmol/m³, time in minutes from the start of loading, and `collecting`
//! 1 inside a reported collection window, else 0. Numbers are written in
//! shortest round-trip form, so re-reading a file reproduces the samples
//! bit for bit.

use std::io::{BufRead, Write};

use adr_core::nlp::SolveStatus;
use adr_core::ocp::{MetricsSpec, OutletSample, PerformanceMetrics};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn chromatogram_header(proteins: &[String]) -> String {
    let mut cols = vec!["t_min".to_string(), "c_NaCl".to_string()];
    cols.extend(proteins.iter().map(|p| format!("c_{p}")));
    cols.push("purity".into());
    cols.push("collecting".into());
    cols.join(",")
}

/// Shortest round-trip text, in exponent form outside `[1e-4, 1e6)`.
fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn in_windows(t: f64, windows: &[[f64; 2]]) -> bool {
    windows.iter().any(|w| t >= w[0] && t <= w[1])
}

pub fn write_chromatogram<W: Write>(
    mut out: W,
    proteins: &[String],
    samples: &[OutletSample],
    spec: &MetricsSpec,
    windows: &[[f64; 2]],
) -> std::io::Result<()> {
    writeln!(out, "{}", chromatogram_header(proteins))?;
    for s in samples {
        write!(out, "{}", num(s.t))?;
        for &c in &s.c {
            write!(out, ",{}", num(c))?;
        }
        writeln!(
            out,
            ",{},{}",
            num(spec.purity(&s.c)),
            u8::from(in_windows(s.t, windows))
        )?;
    }
    Ok(())
}

/// Parses a chromatogram, checking the header and column count; errors
/// carry the 1-based line number.
pub fn read_chromatogram<R: BufRead>(
    input: R,
    proteins: &[String],
) -> Result<Vec<OutletSample>, CliError> {
    let header = chromatogram_header(proteins);
    let width = proteins.len() + 4;
    let bad =
        |line: usize, msg: String| CliError::Validation(format!("chromatogram line {line}: {msg}"));
    let mut samples: Vec<OutletSample> = Vec::new();
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == header => {}
        Some((_, Ok(h))) => return Err(bad(1, format!("expected header `{header}`, found `{h}`"))),
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(bad(1, "empty file".into())),
    }
    for (i, line) in lines {
        let line = line?;
        let no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(bad(
                no,
                format!("expected {width} columns, found {}", fields.len()),
            ));
        }
        let mut values = Vec::with_capacity(width - 1);
        for f in &fields[..width - 1] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| bad(no, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(bad(no, format!("`{f}` is not finite")));
            }
            values.push(v);
        }
        let t = values[0];
        if samples.last().is_some_and(|s| s.t >= t) {
            return Err(bad(no, "time is not strictly increasing".into()));
        }
        samples.push(OutletSample {
            t,
            c: values[1..width - 2].to_vec(),
        });
    }
    if samples.len() < 2 {
        return Err(CliError::Validation(
            "chromatogram needs at least two samples".into(),
        ));
    }
    Ok(samples)
}

/// Piecewise constant elution salt, one row per interval.
pub fn write_control<W: Write>(
    mut out: W,
    t0: f64,
    duration: f64,
    salt: &[f64],
) -> std::io::Result<()> {
    writeln!(out, "t_start_min,t_end_min,c_NaCl")?;
    let n = salt.len() as f64;
    for (k, u) in salt.iter().enumerate() {
        let a = t0 + duration * k as f64 / n;
        let b = t0 + duration * (k + 1) as f64 / n;
        writeln!(out, "{a},{b},{u}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: Option<f64>,
    pub violation: Option<f64>,
    pub stationarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub member: usize,
    pub solver: SolverSummary,
    /// Exact yield when the member was ranked.
    #[serde(rename = "yield")]
    pub yield_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSummary {
    pub start: f64,
    pub end: f64,
    pub metrics: PerformanceMetrics,
    pub solver: SolverSummary,
    /// The best grid sample had a higher exact yield than the solver result.
    pub kept_grid_sample: bool,
    /// `(start, end, yield)` of the sampled start grid.
    pub grid: Vec<[f64; 3]>,
}

/// Everything `metrics.json` records about a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub elution_min: f64,
    pub intervals: usize,
    pub decision_variables: Option<usize>,
    /// Elution salt per interval.
    pub control: Vec<f64>,
    pub metrics: PerformanceMetrics,
    pub gradient: Option<GradientSummary>,
    pub members: Vec<MemberSummary>,
    /// Index of the member taken, `None` if the gradient baseline was kept.
    pub selected_member: Option<usize>,
    /// No member converged; usable members were ranked instead.
    pub fallback: bool,
    pub refined: Option<SolverSummary>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> MetricsSpec {
        MetricsSpec {
            proteins: vec![1, 2, 3],
            target: 0,
            threshold: 0.99,
            t_load: 8.0,
            c_in_target: 2.67e-6,
            total_duration: 54.0,
            detection_floor: 1e-12,
        }
    }

    fn names() -> Vec<String> {
        vec!["IgG".into(), "BSA".into(), "Mb".into()]
    }

    #[test]
    fn header_matches_the_case_study_layout() {
        assert_eq!(
            chromatogram_header(&names()),
            "t_min,c_NaCl,c_IgG,c_BSA,c_Mb,purity,collecting"
        );
    }

    #[test]
    fn chromatogram_round_trips_bit_exactly() {
        let samples: Vec<OutletSample> = (0..5)
            .map(|i| {
                let t = 0.1 + i as f64 / 3.0;
                OutletSample {
                    t,
                    c: vec![0.009 + t / 7.0, 1e-7 * t, 3e-9 / (1.0 + t), -1e-12 * t],
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_chromatogram(&mut buf, &names(), &samples, &spec(), &[[0.2, 0.5]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = read_chromatogram(text.as_bytes(), &names()).unwrap();
        assert_eq!(back, samples);
        // purity column equals the recomputed purity
        for (line, s) in text.lines().skip(1).zip(&samples) {
            let cols: Vec<&str> = line.split(',').collect();
            let p: f64 = cols[5].parse().unwrap();
            assert!((p - spec().purity(&s.c)).abs() <= 1e-12);
            assert_eq!(cols[6], if (0.2..=0.5).contains(&s.t) { "1" } else { "0" });
        }
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let h = chromatogram_header(&names());
        let cases = [
            (format!("{h}\n0,1,2,3,4,1,0\n1,1,2,3\n"), 3),
            (format!("{h}\n0,1,2,3,4,1,0\n1,1,x,3,4,1,0\n"), 3),
            (format!("{h}\n0,1,2,3,4,1,0\n0,1,2,3,4,1,0\n"), 3),
            ("t,c\n".to_string(), 1),
        ];
        for (text, line) in cases {
            let err = read_chromatogram(text.as_bytes(), &names())
                .unwrap_err()
                .to_string();
            assert!(err.contains(&format!("line {line}:")), "{err}");
        }
    }

    #[test]
    fn control_rows_tile_the_elution_phase() {
        let mut buf = Vec::new();
        write_control(&mut buf, 8.0, 40.0, &[0.1, 0.2]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_start_min,t_end_min,c_NaCl\n8,28,0.1\n28,48,0.2\n"
        );
    }
}
