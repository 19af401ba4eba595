use serde::{Deserialize, Serialize};

use super::OcpError;
use crate::linalg::DMat;

/// Equidistant shooting grid `t_k = k T_s` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingGrid {
    horizon: f64,
    intervals: usize,
}

impl ShootingGrid {
    pub fn new(horizon: f64, intervals: usize) -> Result<Self, OcpError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(OcpError::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if intervals == 0 {
            return Err(OcpError::InvalidGrid(
                "at least one shooting interval required".into(),
            ));
        }
        Ok(Self { horizon, intervals })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn sampling_time(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    /// `[t_k, t_{k+1}]`; the last node is exactly `T`.
    pub fn interval(&self, k: usize) -> (f64, f64) {
        let ts = self.sampling_time();
        let end = if k + 1 == self.intervals {
            self.horizon
        } else {
            (k + 1) as f64 * ts
        };
        (k as f64 * ts, end)
    }
}

/// Linear map from the control parameters `p` to the per-interval controls
/// `u_k = M_k p`, together with box bounds on `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMap {
    control_dim: usize,
    maps: Vec<DMat<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    // parameters 0..reach[k] influence some interval j ≤ k
    reach: Vec<usize>,
}

impl ControlMap {
    pub fn new(maps: Vec<DMat<f64>>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OcpError> {
        let first = maps
            .first()
            .ok_or_else(|| OcpError::InvalidGrid("control map needs an interval".into()))?;
        let (nu, np) = (first.rows(), first.cols());
        if maps.iter().any(|m| m.rows() != nu || m.cols() != np) {
            return Err(OcpError::Dimension("control maps differ in shape".into()));
        }
        if lower.len() != np || upper.len() != np {
            return Err(OcpError::Dimension(format!(
                "parameter bounds need {np} entries"
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(OcpError::InvalidBounds(
                "parameter lower bound exceeds upper bound".into(),
            ));
        }
        let mut reach = Vec::with_capacity(maps.len());
        let mut r = 0;
        for m in &maps {
            for j in 0..np {
                if (0..nu).any(|i| m[(i, j)] != 0.0) {
                    r = r.max(j + 1);
                }
            }
            reach.push(r);
        }
        Ok(Self {
            control_dim: nu,
            maps,
            lower,
            upper,
            reach,
        })
    }

    /// Zero-order hold: one free control vector per interval, `p = (u_0, …, u_{N-1})`.
    pub fn piecewise_constant(
        intervals: usize,
        lower: &[f64],
        upper: &[f64],
    ) -> Result<Self, OcpError> {
        let nu = lower.len();
        let np = intervals * nu;
        let maps = (0..intervals)
            .map(|k| DMat::from_fn(nu, np, |i, j| if j == k * nu + i { 1.0 } else { 0.0 }))
            .collect();
        Self::new(maps, lower.repeat(intervals), upper.repeat(intervals))
    }

    /// Scalar linear ramp from `p_0` to `p_1` sampled at interval midpoints.
    pub fn linear_ramp(intervals: usize, lower: f64, upper: f64) -> Result<Self, OcpError> {
        let maps = (0..intervals)
            .map(|k| {
                let s = (k as f64 + 0.5) / intervals as f64;
                DMat::from_row_major(1, 2, vec![1.0 - s, s])
            })
            .collect();
        Self::new(maps, vec![lower; 2], vec![upper; 2])
    }

    pub fn intervals(&self) -> usize {
        self.maps.len()
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn map(&self, k: usize) -> &DMat<f64> {
        &self.maps[k]
    }

    /// Number of leading parameters that can affect intervals `0..=k`.
    pub fn reach(&self, k: usize) -> usize {
        self.reach[k]
    }

    pub fn control(&self, k: usize, p: &[f64]) -> Vec<f64> {
        self.maps[k].mul_vec(p)
    }

    /// All interval controls, concatenated.
    pub fn controls(&self, p: &[f64]) -> Vec<f64> {
        (0..self.intervals())
            .flat_map(|k| self.control(k, p))
            .collect()
    }

    pub fn project(&self, p: &mut [f64]) {
        for ((v, &l), &u) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(l, u);
        }
    }
}

/// Linear salt ramp sampled at interval midpoints and held per interval.
pub fn gradient_elution(start: f64, end: f64, intervals: usize) -> Vec<f64> {
    let n = intervals;
    (0..n)
        .map(|k| start + (end - start) * (k as f64 + 0.5) / n as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_nodes() {
        let g = ShootingGrid::new(40.0, 8).unwrap();
        assert_eq!(g.sampling_time(), 5.0);
        assert_eq!(g.interval(7), (35.0, 40.0));
        let g = ShootingGrid::new(1.0, 3).unwrap();
        assert_eq!(g.interval(2).1, 1.0);
        assert!(ShootingGrid::new(0.0, 3).is_err());
        assert!(ShootingGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn gradient_samples_midpoints() {
        let g = ShootingGrid::new(1.0, 2).unwrap();
        assert_eq!(gradient_elution(0.0, 1.0, g.intervals()), vec![0.25, 0.75]);
        let g = ShootingGrid::new(10.0, 5).unwrap();
        assert!(gradient_elution(0.3, 0.3, g.intervals())
            .iter()
            .all(|&u| u == 0.3));
    }

    #[test]
    fn ramp_map_matches_gradient() {
        let g = ShootingGrid::new(40.0, 8).unwrap();
        let map = ControlMap::linear_ramp(8, 9e-3, 1.0).unwrap();
        let u = map.controls(&[0.1, 0.6]);
        let expected = gradient_elution(0.1, 0.6, g.intervals());
        for (a, b) in u.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(map.reach(0), 2);
    }

    #[test]
    fn zoh_map_selects() {
        let map = ControlMap::piecewise_constant(3, &[0.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(map.parameter_count(), 6);
        let p = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(map.control(1, &p), vec![3.0, 4.0]);
        assert_eq!((map.reach(0), map.reach(1), map.reach(2)), (2, 4, 6));
        assert!(ControlMap::piecewise_constant(2, &[1.0], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_inputs_give_monotone_ramp(a in 0.0f64..1.0, b in 0.0f64..1.0, n in 1usize..30) {
            let g = ShootingGrid::new(7.0, n).unwrap();
            let u = gradient_elution(a, b, g.intervals());
            for w in u.windows(2) {
                if b >= a { prop_assert!(w[1] >= w[0]); } else { prop_assert!(w[1] <= w[0]); }
            }
            prop_assert!(u.iter().all(|&v| v >= a.min(b) - 1e-15 && v <= a.max(b) + 1e-15));
        }
    }
}
