use serde::{Deserialize, Serialize};

use super::objective::purity;
use super::OcpError;

/// Outlet concentrations of the mobile components at time `t` (minutes
/// from the start of loading).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutletSample {
    pub t: f64,
    pub c: Vec<f64>,
}

/// What to collect and how to normalize it.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSpec {
    /// Positions of the proteins in [`OutletSample::c`].
    pub proteins: Vec<usize>,
    /// Position of the product inside `proteins`.
    pub target: usize,
    pub threshold: f64,
    pub t_load: f64,
    pub c_in_target: f64,
    /// `t_load + T_elute + t_strip`
    pub total_duration: f64,
    /// Total protein level below which the outlet counts as empty
    /// (purity 0); DG undershoots make purity meaningless there.
    pub detection_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMetrics {
    #[serde(rename = "yield")]
    pub yield_fraction: f64,
    /// Yield per minute of total process time.
    pub productivity: f64,
    /// Maximal intervals of the collection set `{Π ≥ threshold}`.
    pub windows: Vec<[f64; 2]>,
    pub total_duration: f64,
}

impl MetricsSpec {
    pub fn purity(&self, outlet: &[f64]) -> f64 {
        let np = self.proteins.len();
        let mut buf = [0.0; 8];
        let mut heap = Vec::new();
        let c: &mut [f64] = if np <= buf.len() {
            &mut buf[..np]
        } else {
            heap.resize(np, 0.0);
            &mut heap
        };
        for (b, &i) in c.iter_mut().zip(&self.proteins) {
            *b = outlet[i];
        }
        if c.iter().map(|v| v.max(0.0)).sum::<f64>() < self.detection_floor {
            return 0.0;
        }
        purity(c, self.target)
    }

    fn target_value(&self, c: &[f64]) -> f64 {
        c[self.proteins[self.target]].max(0.0)
    }
}

pub fn purity_trace(samples: &[OutletSample], spec: &MetricsSpec) -> Vec<f64> {
    samples.iter().map(|s| spec.purity(&s.c)).collect()
}

fn lerp(a: &[f64], b: &[f64], s: f64, out: &mut [f64]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = x + s * (y - x);
    }
}

/// Position `s ∈ [0, 1]` along the segment where the purity of the linearly
/// interpolated concentrations crosses the threshold.
fn crossing(a: &[f64], b: &[f64], spec: &MetricsSpec, a_inside: bool) -> f64 {
    let mut c = vec![0.0; a.len()];
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        lerp(a, b, mid, &mut c);
        let inside = spec.purity(&c) >= spec.threshold;
        if inside == a_inside {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Yield and productivity from outlet samples: the target is collected
/// wherever the purity is at least the threshold; linear interpolation
/// between samples, crossings located by bisection.
pub fn exact_metrics(
    samples: &[OutletSample],
    spec: &MetricsSpec,
) -> Result<PerformanceMetrics, OcpError> {
    if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(OcpError::Metrics(
            "sample times must be strictly increasing".into(),
        ));
    }
    if samples
        .iter()
        .any(|s| s.t.is_nan() || s.c.iter().any(|v| !v.is_finite()))
    {
        return Err(OcpError::Metrics("non-finite sample".into()));
    }
    let inside: Vec<bool> = samples
        .iter()
        .map(|s| spec.purity(&s.c) >= spec.threshold)
        .collect();
    let mut collected = 0.0;
    let mut windows: Vec<[f64; 2]> = Vec::new();
    let mut open: Option<f64> = None;
    if let (Some(first), Some(true)) = (samples.first(), inside.first()) {
        open = Some(first.t);
    }
    for i in 0..samples.len().saturating_sub(1) {
        let (a, b) = (&samples[i], &samples[i + 1]);
        let dt = b.t - a.t;
        let (ca, cb) = (spec.target_value(&a.c), spec.target_value(&b.c));
        match (inside[i], inside[i + 1]) {
            (true, true) => collected += 0.5 * dt * (ca + cb),
            (false, false) => {}
            (true, false) => {
                let s = crossing(&a.c, &b.c, spec, true);
                let cs = ca + s * (cb - ca);
                collected += 0.5 * s * dt * (ca + cs);
                let t = a.t + s * dt;
                windows.push([open.take().unwrap_or(a.t), t]);
            }
            (false, true) => {
                let s = crossing(&a.c, &b.c, spec, false);
                let cs = ca + s * (cb - ca);
                collected += 0.5 * (1.0 - s) * dt * (cs + cb);
                open = Some(a.t + s * dt);
            }
        }
    }
    if let (Some(t0), Some(last)) = (open, samples.last()) {
        windows.push([t0, last.t]);
    }
    let yield_fraction = collected / (spec.t_load * spec.c_in_target);
    let productivity = if spec.total_duration > 0.0 {
        yield_fraction / spec.total_duration
    } else {
        0.0
    };
    Ok(PerformanceMetrics {
        yield_fraction,
        productivity,
        windows,
        total_duration: spec.total_duration,
    })
}
