//! Local discontinuous Galerkin semi-discretization of the ADR system.
//!
//! The diffusive flux is carried by an auxiliary variable `q = -D ∂_z c`
//! that is eliminated at assembly, leaving a three-element stencil
//!
//! ```text
//! dc^k/dt = T₋₁ᵏ c^{k-1} + T₀ᵏ c^k + T₊₁ᵏ c^{k+1} + c_in bᵏ + R(c^k)
//! ```
//!
//! per mobile component. Interior fluxes: advective and auxiliary fluxes
//! from the upwind element, concentration flux from the downwind element.
//! Boundary fluxes: `(vc)* = 2v c_in - v c(0⁺)`, `q* = -q(0⁺)` at the inlet
//! and `(vc)* = v c(L⁻)` at the outlet; `c*` is the interior trace at both
//! ends. The outlet diffusive flux is selected by [`OutletFlux`].
//!
//! State layout is element-major: `x[(k (p+1) + j) N_C + i]` for element
//! `k`, node `j`, component `i`.

use thiserror::Error;

use std::sync::Arc;

use crate::basis::{self, element_operators, BasisError, ElementOperators, NodalSet};
use crate::esdirk::OdeSystem;
use crate::linalg::{BlockTridiagonal, DMat};
use crate::models::ReactionModel;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DgError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid transport parameters: {0}")]
    InvalidTransport(String),
    #[error("element operators have degree {ops} and length {ops_h}, grid expects degree {grid} and length {grid_h}")]
    OperatorMismatch {
        ops: usize,
        grid: usize,
        ops_h: f64,
        grid_h: f64,
    },
    #[error("non-finite right-hand side at state index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Uniform partition of `[0, L]` into `N_E` elements of degree `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid<T> {
    length: T,
    elements: usize,
    nodes: NodalSet<T>,
    weights: Vec<T>,
}

impl<T: Real> SpatialGrid<T> {
    pub fn new(length: T, elements: usize, degree: usize) -> Result<Self, DgError> {
        if !(length > T::zero()) || !length.is_finite() {
            return Err(DgError::InvalidGrid(format!(
                "length must be positive, got {length}"
            )));
        }
        if elements < 2 {
            return Err(DgError::InvalidGrid(format!(
                "at least 2 elements required, got {elements}"
            )));
        }
        let nodes = basis::lgl_nodes(degree)?;
        let weights = basis::lgl_weights(&nodes).weights;
        Ok(Self {
            length,
            elements,
            nodes,
            weights,
        })
    }

    #[inline]
    pub fn length(&self) -> T {
        self.length
    }

    #[inline]
    pub fn elements(&self) -> usize {
        self.elements
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.nodes.degree()
    }

    #[inline]
    pub fn nodes_per_element(&self) -> usize {
        self.nodes.len()
    }

    /// Total number of nodes, `N_E (p + 1)`.
    #[inline]
    pub fn node_count(&self) -> usize {
        self.elements * self.nodes.len()
    }

    #[inline]
    pub fn element_length(&self) -> T {
        self.length / T::from_count(self.elements)
    }

    pub fn reference_nodes(&self) -> &NodalSet<T> {
        &self.nodes
    }

    /// LGL weights on the reference element.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn element_left(&self, k: usize) -> T {
        self.element_length() * T::from_count(k)
    }

    /// Physical coordinates of all nodes in state order.
    pub fn node_positions(&self) -> Vec<T> {
        let h = self.element_length();
        (0..self.elements)
            .flat_map(|k| {
                let left = self.element_left(k);
                self.nodes
                    .nodes()
                    .iter()
                    .map(move |&xi| basis::affine_map(xi, h, left))
            })
            .collect()
    }

    /// Nodal interpolation of `profile(z, out)` onto the grid.
    pub fn project(&self, components: usize, mut profile: impl FnMut(T, &mut [T])) -> Vec<T> {
        let mut x = vec![T::zero(); self.node_count() * components];
        for (node, z) in self.node_positions().into_iter().enumerate() {
            profile(z, &mut x[node * components..(node + 1) * components]);
        }
        x
    }

    /// Values at `z = L` (last node of the last element), all components.
    pub fn outlet_values(&self, x: &[T], components: usize) -> Vec<T> {
        let last = self.node_count() - 1;
        x[last * components..(last + 1) * components].to_vec()
    }

    /// `Σ_k Σ_j (h/2) w_j ψ(c_{kj})` with `ψ` applied to the node's component vector.
    pub fn spatial_integral(
        &self,
        x: &[T],
        components: usize,
        mut psi: impl FnMut(&[T]) -> T,
    ) -> T {
        let half_h = self.element_length() * T::lit(0.5);
        let n = self.nodes.len();
        let mut total = T::zero();
        for k in 0..self.elements {
            let mut local = T::zero();
            for j in 0..n {
                let node = k * n + j;
                local += self.weights[j] * psi(&x[node * components..(node + 1) * components]);
            }
            total += half_h * local;
        }
        total
    }

    /// Evaluates the discrete polynomial of component `i` at `z ∈ [0, L]`.
    /// Interfaces take the value from the element on the right, except at `L`.
    pub fn evaluate(&self, x: &[T], components: usize, i: usize, z: T) -> T {
        let h = self.element_length();
        let k = ((z / h).floor().to_f64_lossy().max(0.0) as usize).min(self.elements - 1);
        let xi = (z - self.element_left(k)) * T::lit(2.0) / h - T::one();
        let n = self.nodes.len();
        let values: Vec<T> = (0..n).map(|j| x[(k * n + j) * components + i]).collect();
        basis::interpolate(&self.nodes, &values, xi)
    }
}

/// Diffusive numerical flux `q*` at `z = L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutletFlux {
    /// `q* = 0`: the zero-diffusive-flux condition imposed directly.
    /// Converges at order `p + 1`.
    #[default]
    Zero,
    /// `q* = -q(L⁻)`: the condition holds for the trace average only.
    /// Drops to order `p` for odd `p` when diffusion is significant.
    Mirror,
}

/// Scalar transport shared by all mobile components.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportParams<T> {
    pub velocity: T,
    pub diffusion: T,
    pub mobile: Vec<bool>,
    pub outlet: OutletFlux,
}

impl<T: Real> TransportParams<T> {
    pub fn new(velocity: T, diffusion: T, mobile: Vec<bool>) -> Self {
        Self {
            velocity,
            diffusion,
            mobile,
            outlet: OutletFlux::default(),
        }
    }

    pub fn with_outlet(mut self, outlet: OutletFlux) -> Self {
        self.outlet = outlet;
        self
    }

    pub fn validate(&self) -> Result<(), DgError> {
        if !(self.velocity > T::zero()) || !self.velocity.is_finite() {
            return Err(DgError::InvalidTransport(format!(
                "velocity must be positive, got {}",
                self.velocity
            )));
        }
        if !(self.diffusion >= T::zero()) || !self.diffusion.is_finite() {
            return Err(DgError::InvalidTransport(format!(
                "diffusion must be non-negative, got {}",
                self.diffusion
            )));
        }
        if self.mobile.is_empty() {
            return Err(DgError::InvalidTransport("no components".into()));
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.mobile.len()
    }
}

/// Reduced LDG operator for the mobile component family.
#[derive(Debug, Clone)]
pub struct AssembledStencil<T> {
    grid: SpatialGrid<T>,
    transport: TransportParams<T>,
    mobile_idx: Vec<usize>,
    /// `T₋₁ᵏ`; zero for the first element.
    pub lower: Vec<DMat<T>>,
    /// `T₀ᵏ`
    pub center: Vec<DMat<T>>,
    /// `T₊₁ᵏ`; zero for the last element.
    pub upper: Vec<DMat<T>>,
    /// `b¹`; the inlet forcing of every other element is zero.
    pub inlet: Vec<T>,
    // q^k = aux_own[k] c^k + aux_next[k] c^{k+1}
    aux_own: Vec<DMat<T>>,
    aux_next: Vec<DMat<T>>,
    transport_jacobian: BlockTridiagonal<T>,
}

/// Builds the element operators matching `grid`.
pub fn grid_operators<T: Real>(grid: &SpatialGrid<T>) -> Result<ElementOperators<T>, DgError> {
    Ok(element_operators(grid.degree(), grid.element_length())?)
}

pub fn assemble_stencil<T: Real>(
    grid: &SpatialGrid<T>,
    transport: &TransportParams<T>,
    ops: &ElementOperators<T>,
) -> Result<AssembledStencil<T>, DgError> {
    transport.validate()?;
    let h = grid.element_length();
    if ops.degree != grid.degree() || (ops.length - h).abs() > T::lit(1e3) * T::epsilon() * h {
        return Err(DgError::OperatorMismatch {
            ops: ops.degree,
            grid: grid.degree(),
            ops_h: ops.length.to_f64_lossy(),
            grid_h: h.to_f64_lossy(),
        });
    }
    let n = grid.nodes_per_element();
    let ne = grid.elements();
    let (v, d) = (transport.velocity, transport.diffusion);
    let two = T::lit(2.0);
    let s = &ops.stiffness;
    let minv = &ops.mass_inverse;
    let (first, last) = (0, n - 1);
    let outer = |a: usize, b: usize| {
        DMat::from_fn(n, n, |i, j| {
            if i == a && j == b {
                T::one()
            } else {
                T::zero()
            }
        })
    };

    // Auxiliary maps.
    let mut aux_own = Vec::with_capacity(ne);
    let mut aux_next = Vec::with_capacity(ne);
    for k in 0..ne {
        let mut own = s.clone();
        own.scale(-d);
        let mut next = DMat::zeros(n, n);
        if k + 1 < ne {
            own[(last, last)] += d;
            next[(last, first)] -= d;
        }
        aux_own.push(minv.matmul(&own));
        aux_next.push(minv.matmul(&next));
    }

    // M-scaled blocks, multiplied by M⁻¹ at the end.
    let mut lower = Vec::with_capacity(ne);
    let mut center = Vec::with_capacity(ne);
    let mut upper = Vec::with_capacity(ne);
    let e0e0 = outer(first, first);
    let e0ep = outer(first, last);
    let epep = outer(last, last);
    for k in 0..ne {
        let mut c0 = s.clone();
        c0.scale(-v);
        s.matmul_acc(-T::one(), &aux_own[k], &mut c0);
        let mut cp = DMat::zeros(n, n);
        s.matmul_acc(-T::one(), &aux_next[k], &mut cp);
        let mut cm = DMat::zeros(n, n);

        if k == 0 {
            // -e₀ [2v (c₀ - c_in) + 2 q₀]
            c0[(first, first)] -= two * v;
            e0e0.matmul_acc(-two, &aux_own[k], &mut c0);
            e0e0.matmul_acc(-two, &aux_next[k], &mut cp);
        } else {
            // -e₀ [v (c₀ - c^{k-1}_p) + (q₀ - q^{k-1}_p)]
            c0[(first, first)] -= v;
            e0e0.matmul_acc(-T::one(), &aux_own[k], &mut c0);
            e0e0.matmul_acc(-T::one(), &aux_next[k], &mut cp);
            cm[(first, last)] += v;
            e0ep.matmul_acc(T::one(), &aux_own[k - 1], &mut cm);
            e0ep.matmul_acc(T::one(), &aux_next[k - 1], &mut c0);
        }
        if k + 1 == ne {
            // +e_p (q_p - q*)
            let weight = match transport.outlet {
                OutletFlux::Zero => T::one(),
                OutletFlux::Mirror => two,
            };
            epep.matmul_acc(weight, &aux_own[k], &mut c0);
        }
        lower.push(minv.matmul(&cm));
        center.push(minv.matmul(&c0));
        upper.push(minv.matmul(&cp));
    }
    let inlet: Vec<T> = (0..n).map(|i| two * v * minv[(i, first)]).collect();

    let mobile_idx: Vec<usize> = (0..transport.components())
        .filter(|&i| transport.mobile[i])
        .collect();
    let transport_jacobian =
        expand_blocks(&lower, &center, &upper, &mobile_idx, transport.components());
    Ok(AssembledStencil {
        grid: grid.clone(),
        transport: transport.clone(),
        mobile_idx,
        lower,
        center,
        upper,
        inlet,
        aux_own,
        aux_next,
        transport_jacobian,
    })
}

fn expand_blocks<T: Real>(
    lower: &[DMat<T>],
    center: &[DMat<T>],
    upper: &[DMat<T>],
    mobile: &[usize],
    nc: usize,
) -> BlockTridiagonal<T> {
    let ne = center.len();
    let n = center[0].rows();
    let mut jac = BlockTridiagonal::zeros(ne, n * nc);
    let place = |src: &DMat<T>, dst: &mut DMat<T>| {
        for j in 0..n {
            for l in 0..n {
                for &i in mobile {
                    dst[(j * nc + i, l * nc + i)] = src[(j, l)];
                }
            }
        }
    };
    for k in 0..ne {
        place(&center[k], &mut jac.diag[k]);
        if k + 1 < ne {
            place(&upper[k], &mut jac.upper[k]);
            place(&lower[k + 1], &mut jac.lower[k]);
        }
    }
    jac
}

impl<T: Real> AssembledStencil<T> {
    pub fn grid(&self) -> &SpatialGrid<T> {
        &self.grid
    }

    pub fn transport(&self) -> &TransportParams<T> {
        &self.transport
    }

    #[inline]
    pub fn components(&self) -> usize {
        self.transport.components()
    }

    /// Mobile component indices in state order.
    pub fn mobile_indices(&self) -> &[usize] {
        &self.mobile_idx
    }

    /// `N_E (p+1) N_C`
    #[inline]
    pub fn state_len(&self) -> usize {
        self.grid.node_count() * self.components()
    }

    #[inline]
    pub fn index(&self, element: usize, node: usize, component: usize) -> usize {
        (element * self.grid.nodes_per_element() + node) * self.components() + component
    }

    /// Transport action plus inlet forcing; `inlet` has one entry per mobile component.
    pub fn transport_rhs(&self, x: &[T], inlet: &[T], out: &mut [T]) {
        let nc = self.components();
        let n = self.grid.nodes_per_element();
        let ne = self.grid.elements();
        assert_eq!(x.len(), self.state_len());
        assert_eq!(out.len(), self.state_len());
        assert_eq!(inlet.len(), self.mobile_idx.len());
        out.iter_mut().for_each(|o| *o = T::zero());
        let stride = n * nc;
        for k in 0..ne {
            let mut apply = |blk: &DMat<T>, src_elem: usize| {
                for j in 0..n {
                    let row = (k * n + j) * nc;
                    for (l, &t) in blk.row(j).iter().enumerate() {
                        if t == T::zero() {
                            continue;
                        }
                        let col = src_elem * stride + l * nc;
                        for &i in &self.mobile_idx {
                            out[row + i] += t * x[col + i];
                        }
                    }
                }
            };
            if k > 0 {
                apply(&self.lower[k], k - 1);
            }
            apply(&self.center[k], k);
            if k + 1 < ne {
                apply(&self.upper[k], k + 1);
            }
        }
        for (j, &b) in self.inlet.iter().enumerate() {
            for (m, &i) in self.mobile_idx.iter().enumerate() {
                out[j * nc + i] += b * inlet[m];
            }
        }
    }

    /// `f(x, c_in)`: transport, inlet forcing and nodewise reaction.
    pub fn rhs<R: ReactionModel<T> + ?Sized>(
        &self,
        reaction: &R,
        x: &[T],
        inlet: &[T],
        out: &mut [T],
    ) -> Result<(), DgError> {
        self.transport_rhs(x, inlet, out);
        let nc = self.components();
        let mut buf = [T::zero(); 32];
        let mut heap;
        let src: &mut [T] = if nc <= buf.len() {
            &mut buf[..nc]
        } else {
            heap = vec![T::zero(); nc];
            &mut heap
        };
        if reaction.reaction_count() > 0 {
            for node in 0..self.grid.node_count() {
                let range = node * nc..(node + 1) * nc;
                reaction.source(&x[range.clone()], src);
                for (o, &s) in out[range].iter_mut().zip(src.iter()) {
                    *o += s;
                }
            }
        }
        match out.iter().position(|v| !v.is_finite()) {
            Some(idx) => Err(DgError::NonFinite(idx)),
            None => Ok(()),
        }
    }

    /// Empty Jacobian with the stencil's block structure.
    pub fn jacobian_pattern(&self) -> BlockTridiagonal<T> {
        BlockTridiagonal::zeros(
            self.grid.elements(),
            self.grid.nodes_per_element() * self.components(),
        )
    }

    /// `∂f/∂x` into `jac` (shape from [`Self::jacobian_pattern`]).
    pub fn rhs_jacobian_state<R: ReactionModel<T> + ?Sized>(
        &self,
        reaction: &R,
        x: &[T],
        jac: &mut BlockTridiagonal<T>,
    ) {
        jac.clone_from(&self.transport_jacobian);
        if reaction.reaction_count() == 0 {
            return;
        }
        let nc = self.components();
        let n = self.grid.nodes_per_element();
        let mut local = DMat::zeros(nc, nc);
        for k in 0..self.grid.elements() {
            let blk = &mut jac.diag[k];
            for j in 0..n {
                let node = k * n + j;
                reaction.source_jacobian(&x[node * nc..(node + 1) * nc], &mut local);
                for a in 0..nc {
                    for b in 0..nc {
                        blk[(j * nc + a, j * nc + b)] += local[(a, b)];
                    }
                }
            }
        }
    }

    /// `∂f/∂c_in`, `state_len × n_mobile`; only first-element rows are nonzero.
    pub fn rhs_jacobian_inlet(&self) -> DMat<T> {
        let nc = self.components();
        let mut jac = DMat::zeros(self.state_len(), self.mobile_idx.len());
        for (j, &b) in self.inlet.iter().enumerate() {
            for (m, &i) in self.mobile_idx.iter().enumerate() {
                jac[(j * nc + i, m)] = b;
            }
        }
        jac
    }

    /// Auxiliary variable `q = -D ∂_z c` of every mobile component, recovered from `x`.
    pub fn auxiliary(&self, x: &[T]) -> Vec<T> {
        let nc = self.components();
        let n = self.grid.nodes_per_element();
        let ne = self.grid.elements();
        let mut q = vec![T::zero(); x.len()];
        for k in 0..ne {
            for j in 0..n {
                let row = (k * n + j) * nc;
                for l in 0..n {
                    let own = self.aux_own[k][(j, l)];
                    let next = self.aux_next[k][(j, l)];
                    for &i in &self.mobile_idx {
                        q[row + i] += own * x[(k * n + l) * nc + i];
                        if k + 1 < ne {
                            q[row + i] += next * x[((k + 1) * n + l) * nc + i];
                        }
                    }
                }
            }
        }
        q
    }

    /// Numerical boundary fluxes `(vc)* + q*` per mobile component at the
    /// inlet and the outlet.
    pub fn boundary_fluxes(&self, x: &[T], inlet: &[T]) -> (Vec<T>, Vec<T>) {
        let q = self.auxiliary(x);
        let nc = self.components();
        let v = self.transport.velocity;
        let last = (self.grid.node_count() - 1) * nc;
        let two = T::lit(2.0);
        let inflow = self
            .mobile_idx
            .iter()
            .enumerate()
            .map(|(m, &i)| two * v * inlet[m] - v * x[i] - q[i])
            .collect();
        let outflow = self
            .mobile_idx
            .iter()
            .map(|&i| match self.transport.outlet {
                OutletFlux::Zero => v * x[last + i],
                OutletFlux::Mirror => v * x[last + i] - q[last + i],
            })
            .collect();
        (inflow, outflow)
    }
}

/// Semi-discrete column `x' = f(x, c_in)` as an integrator system. The
/// control `u` overrides the inlet concentration of selected mobile
/// components; the others keep their base values.
#[derive(Clone)]
pub struct AdrSystem<T: Real> {
    stencil: Arc<AssembledStencil<T>>,
    reaction: Arc<dyn ReactionModel<T>>,
    inlet_base: Vec<T>,
    controlled: Vec<usize>,
    inlet_jacobian: Arc<DMat<T>>,
}

impl<T: Real> AdrSystem<T> {
    /// System with zero inlet and no control.
    pub fn new(
        stencil: Arc<AssembledStencil<T>>,
        reaction: Arc<dyn ReactionModel<T>>,
    ) -> Result<Self, DgError> {
        let set = reaction.components();
        if set.len() != stencil.components() || set.mobile_indices() != stencil.mobile_indices() {
            return Err(DgError::InvalidTransport(format!(
                "reaction has {} components (mobile {:?}), transport {} (mobile {:?})",
                set.len(),
                set.mobile_indices(),
                stencil.components(),
                stencil.mobile_indices()
            )));
        }
        let inlet_jacobian = Arc::new(stencil.rhs_jacobian_inlet());
        let inlet_base = vec![T::zero(); stencil.mobile_indices().len()];
        Ok(Self {
            stencil,
            reaction,
            inlet_base,
            controlled: Vec::new(),
            inlet_jacobian,
        })
    }

    /// Inlet concentrations per mobile component when no control overrides them.
    pub fn with_inlet(mut self, inlet: Vec<T>) -> Self {
        assert_eq!(
            inlet.len(),
            self.inlet_base.len(),
            "one inlet value per mobile component"
        );
        self.inlet_base = inlet;
        self
    }

    /// Mobile positions (into [`AssembledStencil::mobile_indices`]) set by the control.
    pub fn with_controlled(mut self, controlled: Vec<usize>) -> Self {
        assert!(
            controlled.iter().all(|&m| m < self.inlet_base.len()),
            "controlled index out of range"
        );
        self.controlled = controlled;
        self
    }

    pub fn stencil(&self) -> &AssembledStencil<T> {
        &self.stencil
    }

    pub fn reaction(&self) -> &dyn ReactionModel<T> {
        self.reaction.as_ref()
    }

    /// Effective inlet vector for control `u`.
    pub fn inlet(&self, u: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.inlet_base);
        for (&m, &v) in self.controlled.iter().zip(u) {
            out[m] = v;
        }
    }

    fn with_inlet_buffer<R>(&self, u: &[T], f: impl FnOnce(&[T]) -> R) -> R {
        let mut buf = [T::zero(); 16];
        let n = self.inlet_base.len();
        if n <= buf.len() {
            self.inlet(u, &mut buf[..n]);
            f(&buf[..n])
        } else {
            let mut v = vec![T::zero(); n];
            self.inlet(u, &mut v);
            f(&v)
        }
    }
}

impl<T: Real> OdeSystem<T> for AdrSystem<T> {
    fn dim(&self) -> usize {
        self.stencil.state_len()
    }

    fn control_dim(&self) -> usize {
        self.controlled.len()
    }

    fn jacobian_layout(&self) -> (usize, usize) {
        let g = self.stencil.grid();
        (
            g.elements(),
            g.nodes_per_element() * self.stencil.components(),
        )
    }

    fn rhs(&self, _t: T, x: &[T], u: &[T], out: &mut [T]) {
        // a non-finite value is left in `out` for the integrator to reject
        self.with_inlet_buffer(u, |inlet| {
            let _ = self.stencil.rhs(self.reaction.as_ref(), x, inlet, out);
        });
    }

    fn jacobian_state(&self, _t: T, x: &[T], _u: &[T], jac: &mut BlockTridiagonal<T>) {
        self.stencil
            .rhs_jacobian_state(self.reaction.as_ref(), x, jac);
    }

    fn jacobian_control(&self, _t: T, _x: &[T], _u: &[T], jac: &mut DMat<T>) {
        let nc = self.stencil.components();
        let rows = self.stencil.grid().nodes_per_element() * nc;
        for (col, &m) in self.controlled.iter().enumerate() {
            for r in 0..rows {
                jac[(r, col)] = self.inlet_jacobian[(r, m)];
            }
        }
    }
}
