//! Run configuration (TOML). Every section is optional; omitted values fall
//! back to the case-study defaults.

use std::path::{Path, PathBuf};

use adr_core::esdirk::IntegratorOptions;
use adr_core::models::ChromatographyConfig;
use adr_core::nlp::SolverOptions;
use adr_core::ocp::Discretization;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ChromatographyConfig,
    pub discretization: Discretization,
    pub shooting: ShootingConfig,
    pub tolerances: Tolerances,
    pub objective: ObjectiveConfig,
    pub solver: SolverOptions,
    pub gradient: GradientConfig,
    pub profile: ProfileConfig,
    pub ensemble: EnsembleConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootingConfig {
    pub intervals: usize,
    pub elution_min: f64,
    /// Finer interval count for a second solve after multi-start.
    pub refine_intervals: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Used for initial node states and refinement.
    pub strict_rel_tol: f64,
    pub strict_abs_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Sigmoid width of the smoothed collection indicator.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientConfig {
    /// Geometric levels per end point of the start grid (levels² samples).
    pub levels: usize,
}

/// Elution profile for `simulate` and `export-nlp`: explicit ZOH `steps`,
/// otherwise a linear gradient sampled on the shooting grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub start: f64,
    pub end: f64,
    pub steps: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub count: usize,
    /// Standard deviation of the log-normal perturbation factors.
    pub scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: ChromatographyConfig::default(),
            discretization: Discretization::default(),
            shooting: ShootingConfig::default(),
            tolerances: Tolerances::default(),
            objective: ObjectiveConfig::default(),
            solver: SolverOptions::default(),
            gradient: GradientConfig::default(),
            profile: ProfileConfig::default(),
            ensemble: EnsembleConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self {
            intervals: 8,
            elution_min: 40.0,
            refine_intervals: None,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            strict_rel_tol: 1e-8,
            strict_abs_tol: 1e-10,
        }
    }
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { delta: 0.01 }
    }
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self { levels: 4 }
    }
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            start: 0.01,
            end: 0.1,
            steps: None,
        }
    }
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            count: 8,
            scale: 0.2,
            seed: 1,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Validation(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.model.validate().map_err(CliError::Validation)?;
        let d = &self.discretization;
        if d.elements == 0 || !(1..=16).contains(&d.degree) {
            return fail("discretization needs elements ≥ 1 and degree in 1..=16".into());
        }
        let s = &self.shooting;
        if s.intervals == 0 {
            return fail("shooting.intervals must be positive".into());
        }
        if !(s.elution_min >= 0.0 && s.elution_min.is_finite()) {
            return fail("shooting.elution_min must be finite and non-negative".into());
        }
        if let Some(r) = s.refine_intervals {
            if r < s.intervals || !r.is_multiple_of(s.intervals) {
                return fail(format!(
                    "refine_intervals {r} is not a multiple of {}",
                    s.intervals
                ));
            }
        }
        let t = &self.tolerances;
        if [t.rel_tol, t.abs_tol, t.strict_rel_tol, t.strict_abs_tol]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return fail("tolerances must be positive".into());
        }
        if !(self.objective.delta > 0.0) {
            return fail("objective.delta must be positive".into());
        }
        self.solver.validate().map_err(CliError::Validation)?;
        if self.gradient.levels < 2 {
            return fail("gradient.levels must be at least 2".into());
        }
        let (lo, hi) = self.control_bounds();
        let levels: Vec<f64> = match &self.profile.steps {
            Some(v) if v.is_empty() => return fail("profile.steps must not be empty".into()),
            Some(v) => v.clone(),
            None => vec![self.profile.start, self.profile.end],
        };
        if levels.iter().any(|v| !(*v >= lo && *v <= hi)) {
            return fail(format!("profile salt levels must lie in [{lo}, {hi}]"));
        }
        if self.ensemble.count == 0
            || !(self.ensemble.scale >= 0.0 && self.ensemble.scale.is_finite())
        {
            return fail("ensemble needs count ≥ 1 and a finite scale ≥ 0".into());
        }
        Ok(())
    }

    /// Elution salt bounds: loading level to strip level.
    pub fn control_bounds(&self) -> (f64, f64) {
        let p = &self.model.phases;
        (p.load_salt.min(p.strip_salt), p.load_salt.max(p.strip_salt))
    }

    pub fn integrator(&self) -> IntegratorOptions<f64> {
        IntegratorOptions::with_tolerances(self.tolerances.rel_tol, self.tolerances.abs_tol)
    }

    pub fn strict_integrator(&self) -> IntegratorOptions<f64> {
        IntegratorOptions::with_tolerances(
            self.tolerances.strict_rel_tol,
            self.tolerances.strict_abs_tol,
        )
    }
}
