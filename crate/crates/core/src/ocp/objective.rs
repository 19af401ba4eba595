use std::sync::Arc;

use crate::dg::AdrSystem;
use crate::esdirk::OdeSystem;
use crate::linalg::{BlockTridiagonal, DMat};

/// Denominator guard of the purity ratio.
pub const PURITY_GUARD: f64 = 1e-30;

/// Pointwise integrand with its gradient.
pub trait Integrand: Send + Sync {
    fn value(&self, c: &[f64]) -> f64;
    /// Overwrites `grad`.
    fn gradient(&self, c: &[f64], grad: &mut [f64]);
}

/// Bolza stage terms: `ψ₁` integrated over the column at every node, `ψ₂` of
/// the outlet component vector and `ψ₃` of the control.
#[derive(Clone, Default)]
pub struct StageObjective {
    pub spatial: Option<Arc<dyn Integrand>>,
    pub outlet: Option<Arc<dyn Integrand>>,
    pub control: Option<Arc<dyn Integrand>>,
}

/// Share of `proteins[target]` among the listed concentrations; negative
/// values count as zero.
pub fn purity(proteins: &[f64], target: usize) -> f64 {
    let total: f64 = proteins.iter().map(|c| c.max(0.0)).sum();
    proteins[target].max(0.0) / (total + PURITY_GUARD)
}

/// `1 / (1 + exp(-x/δ))`
pub fn sigmoid(x: f64, delta: f64) -> f64 {
    let z = x / delta;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Negative yield rate collected while the outlet is pure enough:
/// `-σ(Π - Π_min) c_target / (t_load c_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedYield {
    /// Component indices of the proteins in the outlet vector.
    pub proteins: Vec<usize>,
    /// Position of the target inside `proteins`.
    pub target: usize,
    pub threshold: f64,
    pub delta: f64,
    /// `1 / (t_load c_in,target)`
    pub scale: f64,
}

impl SmoothedYield {
    pub fn new(
        proteins: Vec<usize>,
        target: usize,
        t_load: f64,
        c_in_target: f64,
        delta: f64,
    ) -> Self {
        assert!(delta > 0.0 && t_load > 0.0 && c_in_target > 0.0);
        Self {
            proteins,
            target,
            threshold: 0.99,
            delta,
            scale: 1.0 / (t_load * c_in_target),
        }
    }

    fn gather(&self, c: &[f64]) -> ([f64; 8], usize) {
        let mut buf = [0.0; 8];
        for (b, &i) in buf.iter_mut().zip(&self.proteins) {
            *b = c[i];
        }
        (buf, self.proteins.len())
    }
}

impl Integrand for SmoothedYield {
    fn value(&self, c: &[f64]) -> f64 {
        let (p, n) = self.gather(c);
        let pi = purity(&p[..n], self.target);
        -sigmoid(pi - self.threshold, self.delta) * p[self.target].max(0.0) * self.scale
    }

    fn gradient(&self, c: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (p, n) = self.gather(c);
        let ct = p[self.target].max(0.0);
        let total: f64 = p[..n].iter().map(|v| v.max(0.0)).sum::<f64>() + PURITY_GUARD;
        let pi = ct / total;
        let s = sigmoid(pi - self.threshold, self.delta);
        let ds = s * (1.0 - s) / self.delta;
        for (j, &idx) in self.proteins.iter().enumerate() {
            if p[j] <= 0.0 {
                continue;
            }
            let dpi = if j == self.target {
                (total - ct) / (total * total)
            } else {
                -ct / (total * total)
            };
            let dct = if j == self.target { 1.0 } else { 0.0 };
            grad[idx] = -(ds * dpi * ct + s * dct) * self.scale;
        }
    }
}

/// Column model with the stage objective appended as one quadrature state.
#[derive(Clone)]
pub struct ObjectiveSystem {
    model: AdrSystem<f64>,
    objective: StageObjective,
}

impl ObjectiveSystem {
    pub fn new(model: AdrSystem<f64>, objective: StageObjective) -> Self {
        Self { model, objective }
    }

    pub fn model(&self) -> &AdrSystem<f64> {
        &self.model
    }

    fn outlet_offset(&self) -> usize {
        let st = self.model.stencil();
        (st.grid().node_count() - 1) * st.components()
    }
}

impl OdeSystem<f64> for ObjectiveSystem {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn control_dim(&self) -> usize {
        self.model.control_dim()
    }

    fn jacobian_layout(&self) -> (usize, usize) {
        self.model.jacobian_layout()
    }

    fn rhs(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.model.rhs(t, x, u, out);
    }

    fn jacobian_state(&self, t: f64, x: &[f64], u: &[f64], jac: &mut BlockTridiagonal<f64>) {
        self.model.jacobian_state(t, x, u, jac);
    }

    fn jacobian_control(&self, t: f64, x: &[f64], u: &[f64], jac: &mut DMat<f64>) {
        self.model.jacobian_control(t, x, u, jac);
    }

    fn quadrature_dim(&self) -> usize {
        1
    }

    fn quadrature(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let nc = self.model.stencil().components();
        let mut total = 0.0;
        if let Some(psi) = &self.objective.spatial {
            total += self
                .model
                .stencil()
                .grid()
                .spatial_integral(x, nc, |c| psi.value(c));
        }
        if let Some(psi) = &self.objective.outlet {
            let o = self.outlet_offset();
            total += psi.value(&x[o..o + nc]);
        }
        if let Some(psi) = &self.objective.control {
            total += psi.value(u);
        }
        out[0] = total;
    }

    fn quadrature_jacobian(
        &self,
        _t: f64,
        x: &[f64],
        u: &[f64],
        dx: &mut DMat<f64>,
        du: &mut DMat<f64>,
    ) {
        let st = self.model.stencil();
        let nc = st.components();
        let mut g = vec![0.0; nc];
        if let Some(psi) = &self.objective.spatial {
            let grid = st.grid();
            let half_h = 0.5 * grid.element_length();
            let n = grid.nodes_per_element();
            for node in 0..grid.node_count() {
                let w = half_h * grid.weights()[node % n];
                psi.gradient(&x[node * nc..(node + 1) * nc], &mut g);
                for (i, &gi) in g.iter().enumerate() {
                    dx[(0, node * nc + i)] += w * gi;
                }
            }
        }
        if let Some(psi) = &self.objective.outlet {
            let o = self.outlet_offset();
            psi.gradient(&x[o..o + nc], &mut g);
            for (i, &gi) in g.iter().enumerate() {
                dx[(0, o + i)] += gi;
            }
        }
        if let Some(psi) = &self.objective.control {
            let mut gu = vec![0.0; u.len()];
            psi.gradient(u, &mut gu);
            for (j, &gj) in gu.iter().enumerate() {
                du[(0, j)] += gj;
            }
        }
    }
}
