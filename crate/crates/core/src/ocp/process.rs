use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::{MetricsSpec, OutletSample};
use super::objective::{ObjectiveSystem, SmoothedYield, StageObjective};
use super::problem::{build_problem, ShootingProblem, StateBounds};
use super::{ControlMap, OcpError, ShootingGrid};
use crate::dg::{assemble_stencil, grid_operators, AdrSystem, SpatialGrid, TransportParams};
use crate::esdirk::{DenseOutput, Esdirk, IntegrationReport, IntegratorOptions, OdeSystem};
use crate::models::{ChromatographyConfig, ReactionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    pub elements: usize,
    pub degree: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            elements: 10,
            degree: 3,
        }
    }
}

/// Discretized chromatography column. Components: salt, mobile proteins,
/// bound proteins; the first protein is the product.
#[derive(Clone)]
pub struct ColumnModel {
    config: ChromatographyConfig,
    grid: SpatialGrid<f64>,
    base: AdrSystem<f64>,
}

/// Piecewise constant elution salt profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ElutionProfile {
    pub duration: f64,
    /// One salt level per equal-length interval.
    pub salt: Vec<f64>,
}

/// Outlet trajectory over load, elution and strip.
#[derive(Debug, Clone)]
pub struct ProcessRun {
    pub samples: Vec<OutletSample>,
    /// States at the end of load, elution and strip.
    pub phase_end_states: Vec<Vec<f64>>,
    pub report: IntegrationReport,
}

/// Hermite sub-samples per accepted step in the chromatogram.
const SUBSAMPLES: usize = 4;

impl ColumnModel {
    pub fn new(config: ChromatographyConfig, disc: Discretization) -> Result<Self, OcpError> {
        config.validate().map_err(OcpError::Model)?;
        let grid = SpatialGrid::new(config.column.length, disc.elements, disc.degree)
            .map_err(|e| OcpError::Model(e.to_string()))?;
        let reaction = config.reaction();
        let mobile = reaction.components().mobile.clone();
        let transport =
            TransportParams::new(config.column.velocity, config.column.diffusion, mobile);
        let ops = grid_operators(&grid).map_err(|e| OcpError::Model(e.to_string()))?;
        let stencil = assemble_stencil(&grid, &transport, &ops)
            .map_err(|e| OcpError::Model(e.to_string()))?;
        let base = AdrSystem::new(Arc::new(stencil), Arc::new(reaction))
            .map_err(|e| OcpError::Model(e.to_string()))?;
        Ok(Self { config, grid, base })
    }

    pub fn config(&self) -> &ChromatographyConfig {
        &self.config
    }

    pub fn grid(&self) -> &SpatialGrid<f64> {
        &self.grid
    }

    pub fn proteins(&self) -> usize {
        self.config.proteins()
    }

    pub fn components(&self) -> usize {
        self.config.component_count()
    }

    pub fn state_len(&self) -> usize {
        self.grid.node_count() * self.components()
    }

    /// Salt and mobile proteins, the entries of [`OutletSample::c`].
    pub fn mobile_count(&self) -> usize {
        1 + self.proteins()
    }

    /// Column equilibrated at the loading salt level, free of protein.
    pub fn initial_state(&self) -> Vec<f64> {
        let salt = self.config.phases.load_salt;
        self.grid.project(self.components(), |_, c| {
            c.iter_mut().for_each(|v| *v = 0.0);
            c[0] = salt;
        })
    }

    pub fn load_system(&self) -> AdrSystem<f64> {
        let mut inlet = vec![self.config.phases.load_salt];
        inlet.extend_from_slice(&self.config.inlet);
        self.base.clone().with_inlet(inlet)
    }

    /// Salt inlet set by the control; no protein feed.
    pub fn elution_system(&self) -> AdrSystem<f64> {
        self.base
            .clone()
            .with_inlet(vec![0.0; self.mobile_count()])
            .with_controlled(vec![0])
    }

    pub fn strip_system(&self) -> AdrSystem<f64> {
        let mut inlet = vec![0.0; self.mobile_count()];
        inlet[0] = self.config.phases.strip_salt;
        self.base.clone().with_inlet(inlet)
    }

    /// Elution salt bounds: loading level to stripping level.
    pub fn control_bounds(&self) -> (f64, f64) {
        let p = &self.config.phases;
        (p.load_salt.min(p.strip_salt), p.load_salt.max(p.strip_salt))
    }

    /// `[-0.1 s_i, 10 s_i]` per component with reference levels: strip salt,
    /// `φ q_max` for mobile and `q_max` for bound proteins.
    pub fn state_bounds(&self) -> StateBounds {
        let np = self.proteins();
        let phi = self.config.column.phase_ratio();
        let q_max = &self.config.isotherm.q_max;
        let mut scale = vec![self
            .config
            .phases
            .strip_salt
            .max(self.config.phases.load_salt)];
        scale.extend(q_max.iter().map(|q| phi * q));
        scale.extend(q_max.iter().copied());
        let nodes = self.grid.node_count();
        let lower = (0..nodes)
            .flat_map(|_| scale.iter().map(|s| -0.1 * s))
            .collect();
        let upper = (0..nodes)
            .flat_map(|_| scale.iter().map(|s| 10.0 * s))
            .collect();
        debug_assert_eq!(scale.len(), 1 + 2 * np);
        StateBounds { lower, upper }
    }

    pub fn yield_objective(&self, delta: f64) -> StageObjective {
        let proteins: Vec<usize> = (1..=self.proteins()).collect();
        let integrand = SmoothedYield::new(
            proteins,
            0,
            self.config.phases.load_min,
            self.config.inlet[0],
            delta,
        );
        StageObjective {
            outlet: Some(Arc::new(integrand)),
            ..StageObjective::default()
        }
    }

    pub fn metrics_spec(&self, elution_min: f64) -> MetricsSpec {
        let p = &self.config.phases;
        MetricsSpec {
            proteins: (1..=self.proteins()).collect(),
            target: 0,
            threshold: 0.99,
            t_load: p.load_min,
            c_in_target: self.config.inlet[0],
            total_duration: p.load_min + elution_min + p.strip_min,
            detection_floor: 1e-6 * self.config.inlet[0],
        }
    }

    /// State after loading from [`Self::initial_state`].
    pub fn loaded_state(&self, integrator: &IntegratorOptions<f64>) -> Result<Vec<f64>, OcpError> {
        let opts = IntegratorOptions {
            refresh_jacobian_every_step: true,
            ..integrator.clone()
        };
        let sol = Esdirk::new(opts)
            .integrate(
                &self.load_system(),
                0.0,
                self.config.phases.load_min,
                &self.initial_state(),
                &[],
            )
            .map_err(|source| OcpError::Integration {
                interval: 0,
                source,
            })?;
        Ok(sol.x)
    }

    /// Multiple shooting problem over the elution phase, starting from the
    /// loaded column and maximizing the smoothed yield.
    pub fn elution_problem(
        &self,
        grid: ShootingGrid,
        controls: ControlMap,
        delta: f64,
        integrator: &IntegratorOptions<f64>,
    ) -> Result<ShootingProblem, OcpError> {
        let start = self.loaded_state(integrator)?;
        let system = ObjectiveSystem::new(self.elution_system(), self.yield_objective(delta));
        build_problem(
            Arc::new(system),
            grid,
            controls,
            self.state_bounds(),
            start,
            integrator.clone(),
        )
    }

    /// Amount of each protein held in the column (mobile plus bound), per
    /// unit of cross-section and porosity.
    pub fn protein_inventory(&self, x: &[f64]) -> Vec<f64> {
        let np = self.proteins();
        let phi = self.config.column.phase_ratio();
        (0..np)
            .map(|i| {
                self.grid
                    .spatial_integral(x, self.components(), |c| c[1 + i] + phi * c[1 + np + i])
            })
            .collect()
    }

    /// Load, elution under `profile` and strip, restarting the integrator at
    /// every control discontinuity.
    pub fn simulate_process(
        &self,
        profile: &ElutionProfile,
        integrator: &IntegratorOptions<f64>,
    ) -> Result<ProcessRun, OcpError> {
        let nc = self.components();
        let outlet = (self.grid.node_count() - 1) * nc;
        let opts = IntegratorOptions {
            refresh_jacobian_every_step: true,
            dense_components: Some((0..self.mobile_count()).map(|i| outlet + i).collect()),
            ..integrator.clone()
        };
        let integ = Esdirk::new(opts);
        let phases = &self.config.phases;
        let mut report = IntegrationReport::default();
        let mut samples: Vec<OutletSample> = Vec::new();
        let mut phase_end_states = Vec::new();
        let mut segment = 0usize;
        let mut run = |sys: &dyn OdeSystem<f64>,
                       t0: f64,
                       t1: f64,
                       x: &[f64],
                       u: &[f64],
                       samples: &mut Vec<OutletSample>| {
            let sol =
                integ
                    .integrate(sys, t0, t1, x, u)
                    .map_err(|source| OcpError::Integration {
                        interval: segment,
                        source,
                    })?;
            segment += 1;
            report.merge(&sol.report);
            append_samples(samples, sol.dense.as_ref().expect("dense output requested"));
            Ok::<_, OcpError>(sol.x)
        };
        let mut x = run(
            &self.load_system(),
            0.0,
            phases.load_min,
            &self.initial_state(),
            &[],
            &mut samples,
        )?;
        phase_end_states.push(x.clone());
        let elution = self.elution_system();
        let n = profile.salt.len();
        if profile.duration > 0.0 && n > 0 {
            let ts = profile.duration / n as f64;
            for (k, &u) in profile.salt.iter().enumerate() {
                let t0 = phases.load_min + k as f64 * ts;
                let t1 = if k + 1 == n {
                    phases.load_min + profile.duration
                } else {
                    t0 + ts
                };
                x = run(&elution, t0, t1, &x, &[u], &mut samples)?;
            }
        }
        phase_end_states.push(x.clone());
        let t_strip = phases.load_min + profile.duration.max(0.0);
        if phases.strip_min > 0.0 {
            x = run(
                &self.strip_system(),
                t_strip,
                t_strip + phases.strip_min,
                &x,
                &[],
                &mut samples,
            )?;
        }
        phase_end_states.push(x);
        Ok(ProcessRun {
            samples,
            phase_end_states,
            report,
        })
    }
}

fn append_samples(samples: &mut Vec<OutletSample>, dense: &DenseOutput<f64>) {
    let m = dense.components.len();
    let mut c = vec![0.0; m];
    let push = |t: f64, c: &[f64], samples: &mut Vec<OutletSample>| {
        if samples.last().is_none_or(|s| t > s.t) {
            samples.push(OutletSample { t, c: c.to_vec() });
        }
    };
    for k in 0..dense.t.len() {
        if k > 0 && dense.t[k] > dense.t[k - 1] {
            let (a, b) = (dense.t[k - 1], dense.t[k]);
            for j in 1..SUBSAMPLES {
                let t = a + (b - a) * j as f64 / SUBSAMPLES as f64;
                dense.eval(t, &mut c);
                push(t, &c, samples);
            }
        }
        push(dense.t[k], &dense.y[k], samples);
    }
}
