//! Reaction models in stoichiometric form `R(c) = νᵀ r(c)` and the
//! ion-exchange chromatography parameterization.
//!
//! The chromatography state per spatial node is
//! `[c_NaCl, c_1..c_n, q_1..q_n]`: the salt modifier, the mobile protein
//! concentrations, and the bound (stationary) protein concentrations.

use serde::{Deserialize, Serialize};

use crate::linalg::DMat;
use crate::scalar::Real;

/// Names and mobility of the components carried in the state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSet {
    pub names: Vec<String>,
    pub mobile: Vec<bool>,
}

impl ComponentSet {
    pub fn new(names: Vec<String>, mobile: Vec<bool>) -> Self {
        assert_eq!(names.len(), mobile.len());
        Self { names, mobile }
    }

    pub fn all_mobile(n: usize) -> Self {
        Self {
            names: (0..n).map(|i| format!("c{i}")).collect(),
            mobile: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn mobile_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mobile[i]).collect()
    }

    pub fn mobile_count(&self) -> usize {
        self.mobile.iter().filter(|&&m| m).count()
    }
}

/// Nodewise reaction kinetics.
pub trait ReactionModel<T: Real>: Send + Sync {
    fn components(&self) -> &ComponentSet;

    /// Stoichiometric matrix `ν`, `N_r × N_C`.
    fn stoichiometry(&self) -> &DMat<T>;

    /// Reaction rates `r(c)`, length `N_r`.
    fn rates(&self, c: &[T], r: &mut [T]);

    /// `∂r/∂c`, `N_r × N_C`.
    fn rate_jacobian(&self, c: &[T], jac: &mut DMat<T>);

    fn reaction_count(&self) -> usize {
        self.stoichiometry().rows()
    }

    /// `R(c) = νᵀ r(c)`.
    fn source(&self, c: &[T], out: &mut [T]) {
        let nu = self.stoichiometry();
        let mut r = vec![T::zero(); nu.rows()];
        self.rates(c, &mut r);
        out.iter_mut().for_each(|o| *o = T::zero());
        for (k, &rk) in r.iter().enumerate() {
            if rk != T::zero() {
                crate::linalg::axpy(rk, nu.row(k), out);
            }
        }
    }

    /// `∂R/∂c = νᵀ ∂r/∂c`, `N_C × N_C`.
    fn source_jacobian(&self, c: &[T], out: &mut DMat<T>) {
        let nu = self.stoichiometry();
        let n = c.len();
        let mut dr = DMat::zeros(nu.rows(), n);
        self.rate_jacobian(c, &mut dr);
        out.fill(T::zero());
        nu.transpose().matmul_acc(T::one(), &dr, out);
    }
}

/// No reactions.
#[derive(Debug, Clone)]
pub struct Inert<T> {
    components: ComponentSet,
    nu: DMat<T>,
}

impl<T: Real> Inert<T> {
    pub fn new(components: ComponentSet) -> Self {
        let n = components.len();
        Self {
            components,
            nu: DMat::zeros(0, n),
        }
    }
}

impl<T: Real> ReactionModel<T> for Inert<T> {
    fn components(&self) -> &ComponentSet {
        &self.components
    }
    fn stoichiometry(&self) -> &DMat<T> {
        &self.nu
    }
    fn rates(&self, _c: &[T], _r: &mut [T]) {}
    fn rate_jacobian(&self, _c: &[T], _jac: &mut DMat<T>) {}
}

/// Linear kinetics `R(c) = A c` (one rate per component, `ν = I`).
#[derive(Debug, Clone)]
pub struct LinearReaction<T> {
    components: ComponentSet,
    matrix: DMat<T>,
    nu: DMat<T>,
}

impl<T: Real> LinearReaction<T> {
    pub fn new(components: ComponentSet, matrix: DMat<T>) -> Self {
        let n = components.len();
        assert_eq!((matrix.rows(), matrix.cols()), (n, n));
        Self {
            components,
            matrix,
            nu: DMat::identity(n),
        }
    }
}

impl<T: Real> ReactionModel<T> for LinearReaction<T> {
    fn components(&self) -> &ComponentSet {
        &self.components
    }
    fn stoichiometry(&self) -> &DMat<T> {
        &self.nu
    }
    fn rates(&self, c: &[T], r: &mut [T]) {
        r.copy_from_slice(&self.matrix.mul_vec(c));
    }
    fn rate_jacobian(&self, _c: &[T], jac: &mut DMat<T>) {
        jac.as_mut_slice().copy_from_slice(self.matrix.as_slice());
    }
}

/// Competitive Langmuir kinetics with salt-modulated rate constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsothermParams<T> {
    /// Saturation capacity per protein [kmol/m³].
    pub q_max: Vec<T>,
    /// Desorption rate constants.
    pub k_des0: Vec<T>,
    /// Adsorption rate constants.
    pub k_ads0: Vec<T>,
    /// Hydrophobicity [m³/kmol].
    pub gamma: Vec<T>,
    /// Ion-exchange exponent.
    pub beta: Vec<T>,
    /// Phase ratio `(1 - ε) / ε`.
    pub phi: T,
}

impl<T: Real> IsothermParams<T> {
    pub fn proteins(&self) -> usize {
        self.q_max.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.q_max.len();
        for (name, v) in [
            ("k_des0", &self.k_des0),
            ("k_ads0", &self.k_ads0),
            ("gamma", &self.gamma),
            ("beta", &self.beta),
        ] {
            if v.len() != n {
                return Err(format!("{name} has {} entries, expected {n}", v.len()));
            }
        }
        let positive = |v: &[T]| v.iter().all(|&x| x > T::zero() && x.is_finite());
        if !positive(&self.q_max)
            || !positive(&self.k_des0)
            || !positive(&self.k_ads0)
            || !positive(&self.beta)
        {
            return Err("q_max, k_des0, k_ads0 and beta must be positive".into());
        }
        if !self.gamma.iter().all(|&g| g >= T::zero() && g.is_finite()) {
            return Err("gamma must be non-negative".into());
        }
        if !(self.phi > T::zero()) {
            return Err("phase ratio must be positive".into());
        }
        Ok(())
    }

    #[inline]
    pub fn k_ads(&self, i: usize, salt: T) -> T {
        self.k_ads0[i] * (self.gamma[i] * salt).exp()
    }

    /// `k_des0 · max(c_NaCl, 0)^β`
    #[inline]
    pub fn k_des(&self, i: usize, salt: T) -> T {
        if salt > T::zero() {
            self.k_des0[i] * salt.powf(self.beta[i])
        } else {
            T::zero()
        }
    }

    #[inline]
    fn k_des_slope(&self, i: usize, salt: T) -> T {
        if salt > T::zero() {
            self.k_des0[i] * self.beta[i] * salt.powf(self.beta[i] - T::one())
        } else {
            T::zero()
        }
    }
}

/// `∂q_i/∂t` for every protein.
pub fn langmuir_rates<T: Real>(
    salt: T,
    c: &[T],
    q: &[T],
    params: &IsothermParams<T>,
    out: &mut [T],
) {
    let n = params.proteins();
    let free = T::one() - (0..n).map(|j| q[j] / params.q_max[j]).sum::<T>();
    for i in 0..n {
        out[i] =
            params.k_ads(i, salt) * c[i] * params.q_max[i] * free - params.k_des(i, salt) * q[i];
    }
}

/// Partials of [`langmuir_rates`] with respect to `[salt, c_1..c_n, q_1..q_n]`
/// (`n × (1 + 2n)`).
pub fn langmuir_jacobian<T: Real>(
    salt: T,
    c: &[T],
    q: &[T],
    params: &IsothermParams<T>,
    jac: &mut DMat<T>,
) {
    let n = params.proteins();
    assert_eq!((jac.rows(), jac.cols()), (n, 1 + 2 * n));
    jac.fill(T::zero());
    let free = T::one() - (0..n).map(|j| q[j] / params.q_max[j]).sum::<T>();
    for i in 0..n {
        let ka = params.k_ads(i, salt);
        let adsorb = ka * c[i] * params.q_max[i];
        jac[(i, 0)] = params.gamma[i] * adsorb * free - params.k_des_slope(i, salt) * q[i];
        jac[(i, 1 + i)] = ka * params.q_max[i] * free;
        for j in 0..n {
            jac[(i, 1 + n + j)] = -adsorb / params.q_max[j];
        }
        jac[(i, 1 + n + i)] -= params.k_des(i, salt);
    }
}

/// Chromatography kinetics: `r = ∂_t q`, `ν = [0; -φI; I]`.
#[derive(Debug, Clone)]
pub struct ChromatographyReaction<T> {
    params: IsothermParams<T>,
    components: ComponentSet,
    nu: DMat<T>,
}

impl<T: Real> ChromatographyReaction<T> {
    pub fn new(params: IsothermParams<T>, protein_names: &[&str]) -> Self {
        let n = params.proteins();
        assert_eq!(protein_names.len(), n);
        let mut names = vec!["NaCl".to_string()];
        names.extend(protein_names.iter().map(|s| format!("c_{s}")));
        names.extend(protein_names.iter().map(|s| format!("q_{s}")));
        let mut mobile = vec![true; 1 + n];
        mobile.extend(std::iter::repeat_n(false, n));
        let mut nu = DMat::zeros(n, 1 + 2 * n);
        for i in 0..n {
            nu[(i, 1 + i)] = -params.phi;
            nu[(i, 1 + n + i)] = T::one();
        }
        Self {
            params,
            components: ComponentSet::new(names, mobile),
            nu,
        }
    }

    pub fn params(&self) -> &IsothermParams<T> {
        &self.params
    }
}

impl<T: Real> ReactionModel<T> for ChromatographyReaction<T> {
    fn components(&self) -> &ComponentSet {
        &self.components
    }

    fn stoichiometry(&self) -> &DMat<T> {
        &self.nu
    }

    fn rates(&self, c: &[T], r: &mut [T]) {
        let n = self.params.proteins();
        langmuir_rates(c[0], &c[1..=n], &c[1 + n..], &self.params, r);
    }

    fn rate_jacobian(&self, c: &[T], jac: &mut DMat<T>) {
        let n = self.params.proteins();
        langmuir_jacobian(c[0], &c[1..=n], &c[1 + n..], &self.params, jac);
    }

    fn source(&self, c: &[T], out: &mut [T]) {
        let n = self.params.proteins();
        let mut r = [T::zero(); 8];
        let r = if n <= 8 {
            &mut r[..n]
        } else {
            unreachable!("at most 8 proteins")
        };
        langmuir_rates(c[0], &c[1..=n], &c[1 + n..], &self.params, r);
        out[0] = T::zero();
        for i in 0..n {
            out[1 + i] = -self.params.phi * r[i];
            out[1 + n + i] = r[i];
        }
    }
}

/// Column geometry and transport (equilibrium dispersive model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnParams {
    /// Length [m].
    pub length: f64,
    /// Volume [m³].
    pub volume: f64,
    /// Porosity.
    pub porosity: f64,
    /// Interstitial velocity [m/min].
    pub velocity: f64,
    /// Apparent diffusion [m²/min].
    pub diffusion: f64,
}

impl ColumnParams {
    pub fn phase_ratio(&self) -> f64 {
        (1.0 - self.porosity) / self.porosity
    }
}

/// Load / strip phases around the controlled elution phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSchedule {
    pub load_min: f64,
    pub load_salt: f64,
    pub strip_min: f64,
    pub strip_salt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsothermTable {
    pub proteins: Vec<String>,
    pub q_max: Vec<f64>,
    pub k_des0: Vec<f64>,
    pub k_ads0: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Full case-study parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChromatographyConfig {
    pub column: ColumnParams,
    pub isotherm: IsothermTable,
    /// Protein inlet concentrations during loading [kmol/m³].
    pub inlet: Vec<f64>,
    pub phases: PhaseSchedule,
}

impl ChromatographyConfig {
    pub fn isotherm_params(&self) -> IsothermParams<f64> {
        IsothermParams {
            q_max: self.isotherm.q_max.clone(),
            k_des0: self.isotherm.k_des0.clone(),
            k_ads0: self.isotherm.k_ads0.clone(),
            gamma: self.isotherm.gamma.clone(),
            beta: self.isotherm.beta.clone(),
            phi: self.column.phase_ratio(),
        }
    }

    pub fn reaction(&self) -> ChromatographyReaction<f64> {
        let names: Vec<&str> = self.isotherm.proteins.iter().map(String::as_str).collect();
        ChromatographyReaction::new(self.isotherm_params(), &names)
    }

    pub fn proteins(&self) -> usize {
        self.isotherm.proteins.len()
    }

    /// Components in state order: salt, mobile proteins, bound proteins.
    pub fn component_count(&self) -> usize {
        1 + 2 * self.proteins()
    }

    pub fn validate(&self) -> Result<(), String> {
        let c = &self.column;
        let positive = [c.length, c.volume, c.velocity];
        if positive.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err("column length, volume and velocity must be positive".into());
        }
        if !(c.diffusion >= 0.0 && c.diffusion.is_finite()) {
            return Err("diffusion must be non-negative".into());
        }
        if !(c.porosity > 0.0 && c.porosity < 1.0) {
            return Err("porosity must lie in (0, 1)".into());
        }
        let n = self.proteins();
        if n == 0 || n > 8 {
            return Err(format!("between 1 and 8 proteins supported, got {n}"));
        }
        if self.inlet.len() != n {
            return Err(format!(
                "inlet has {} entries, expected {n}",
                self.inlet.len()
            ));
        }
        if self.inlet.iter().any(|&x| !(x >= 0.0)) {
            return Err("inlet concentrations must be non-negative".into());
        }
        let p = &self.phases;
        if !(p.load_min > 0.0)
            || !(p.strip_min >= 0.0)
            || !(p.load_salt >= 0.0)
            || !(p.strip_salt >= 0.0)
        {
            return Err("phase durations and salt levels must be non-negative (load > 0)".into());
        }
        self.isotherm_params().validate()
    }
}

impl Default for ChromatographyConfig {
    fn default() -> Self {
        case_study_config()
    }
}

impl Default for ColumnParams {
    fn default() -> Self {
        case_study_config().column
    }
}

impl Default for IsothermTable {
    fn default() -> Self {
        case_study_config().isotherm
    }
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        case_study_config().phases
    }
}

/// IgG / BSA / myoglobin separation on an ion-exchange column.
pub fn case_study_config() -> ChromatographyConfig {
    ChromatographyConfig {
        column: ColumnParams {
            length: 3.00e-2,
            volume: 1.00e-6,
            porosity: 0.32,
            velocity: 3.00e-2,
            diffusion: 5e-6,
        },
        isotherm: IsothermTable {
            proteins: vec!["IgG".into(), "BSA".into(), "Mb".into()],
            q_max: vec![5.40e-4, 1.04e-3, 7.50e-4],
            k_des0: vec![3.00e3, 3.00e3, 3.00e3],
            k_ads0: vec![2.31e6, 1.76e5, 5.00e6],
            gamma: vec![0.0, 0.0, 0.0],
            beta: vec![1.12, 3.20, 0.61],
        },
        inlet: vec![2.67e-6, 5.97e-6, 1.11e-5],
        phases: PhaseSchedule {
            load_min: 8.0,
            load_salt: 9.00e-3,
            strip_min: 6.0,
            strip_salt: 1.00,
        },
    }
}
