//! Legendre-Gauss-Lobatto nodal sets, Lagrange bases and elemental
//! mass/stiffness operators.
//!
//! Interior LGL nodes of degree `p` are the roots of `P_{p-1}^{(1,1)}`,
//! obtained as eigenvalues of the symmetric Jacobi matrix of the `(1,1)`
//! weight (Golub-Welsch). Elemental integrals use an LGL rule with `p + 2`
//! points, exact for polynomials of degree `2p + 1`.

use thiserror::Error;

use crate::linalg::{symmetric_tridiagonal_eigenvalues, DMat};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("polynomial degree must be at least 1, got {0}")]
    DegreeTooLow(usize),
    #[error("element length must be positive and finite, got {0}")]
    InvalidLength(f64),
    #[error("mass matrix is singular")]
    SingularMass,
}

/// Reference nodes on `[-1, 1]`, strictly increasing, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalSet<T> {
    degree: usize,
    nodes: Vec<T>,
}

impl<T: Real> NodalSet<T> {
    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Nodal quadrature rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule<T> {
    pub nodes: NodalSet<T>,
    pub weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    pub fn integrate(&self, mut f: impl FnMut(T) -> T) -> T {
        self.nodes
            .nodes()
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Element-invariant operators for a uniform element of length `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementOperators<T> {
    pub degree: usize,
    pub length: T,
    /// `M_ij = ∫ ℓ_i ℓ_j dz`
    pub mass: DMat<T>,
    /// `S_ij = ∫ ℓ_i ∂_z ℓ_j dz`
    pub stiffness: DMat<T>,
    pub mass_inverse: DMat<T>,
    pub nodes: NodalSet<T>,
}

/// Jacobi polynomial `P_n^{(α,β)}(x)` by the three-term recurrence.
pub fn jacobi_eval<T: Real>(n: usize, alpha: T, beta: T, x: T) -> T {
    let one = T::one();
    let two = T::lit(2.0);
    let mut p_prev = one;
    if n == 0 {
        return p_prev;
    }
    let ab = alpha + beta;
    let mut p = ((ab + two) * x + (alpha - beta)) / two;
    for k in 1..n {
        let k = T::from_count(k);
        let s = two * k + ab;
        let a1 = two * (k + one) * (k + ab + one) * s;
        let a2 = (s + one) * (alpha * alpha - beta * beta);
        let a3 = s * (s + one) * (s + two);
        let a4 = two * (k + alpha) * (k + beta) * (s + two);
        let next = ((a2 + a3 * x) * p - a4 * p_prev) / a1;
        p_prev = p;
        p = next;
    }
    p
}

/// Roots of `P_n^{(α,β)}` as eigenvalues of the symmetric Jacobi matrix.
pub fn jacobi_roots<T: Real>(n: usize, alpha: T, beta: T) -> Vec<T> {
    if n == 0 {
        return Vec::new();
    }
    let two = T::lit(2.0);
    let ab = alpha + beta;
    let diag: Vec<T> = (0..n)
        .map(|k| {
            let s = two * T::from_count(k) + ab;
            let denom = s * (s + two);
            if denom == T::zero() {
                // k = 0 with α + β = 0: limit value.
                (beta - alpha) / (ab + two)
            } else {
                (beta * beta - alpha * alpha) / denom
            }
        })
        .collect();
    let off: Vec<T> = (1..n)
        .map(|k| {
            let k = T::from_count(k);
            let s = two * k + ab;
            let num = k * (k + alpha) * (k + beta) * (k + ab);
            (two / s) * (num / ((s - T::one()) * (s + T::one()))).sqrt()
        })
        .collect();
    symmetric_tridiagonal_eigenvalues(&diag, &off)
}

/// LGL nodes of degree `p`: endpoints plus the roots of `P_{p-1}^{(1,1)}`.
pub fn lgl_nodes<T: Real>(p: usize) -> Result<NodalSet<T>, BasisError> {
    if p < 1 {
        return Err(BasisError::DegreeTooLow(p));
    }
    let mut nodes = Vec::with_capacity(p + 1);
    nodes.push(-T::one());
    nodes.extend(jacobi_roots(p - 1, T::one(), T::one()));
    nodes.push(T::one());
    // exact mirror symmetry
    let half = T::lit(0.5);
    for j in 0..=p / 2 {
        let s = (nodes[p - j] - nodes[j]) * half;
        nodes[j] = -s;
        nodes[p - j] = s;
    }
    if p.is_multiple_of(2) {
        nodes[p / 2] = T::zero();
    }
    Ok(NodalSet { degree: p, nodes })
}

/// LGL weights `w_j = 2 / (p (p+1) P_p(ξ_j)^2)`.
pub fn lgl_weights<T: Real>(nodes: &NodalSet<T>) -> QuadratureRule<T> {
    let p = nodes.degree;
    let scale = T::lit(2.0) / T::from_count(p * (p + 1));
    let weights = nodes
        .nodes
        .iter()
        .map(|&x| {
            let lp = jacobi_eval(p, T::zero(), T::zero(), x);
            scale / (lp * lp)
        })
        .collect();
    QuadratureRule {
        nodes: nodes.clone(),
        weights,
    }
}

pub fn lgl_rule<T: Real>(p: usize) -> Result<QuadratureRule<T>, BasisError> {
    Ok(lgl_weights(&lgl_nodes(p)?))
}

/// Lagrange basis polynomial `ℓ_j(x)` on the nodal set.
pub fn lagrange_eval<T: Real>(nodes: &NodalSet<T>, j: usize, x: T) -> T {
    let xs = &nodes.nodes;
    let xj = xs[j];
    xs.iter()
        .enumerate()
        .filter(|&(m, _)| m != j)
        .fold(T::one(), |acc, (_, &xm)| acc * (x - xm) / (xj - xm))
}

/// Derivative `ℓ_j'(x)` on the reference element.
pub fn lagrange_derivative<T: Real>(nodes: &NodalSet<T>, j: usize, x: T) -> T {
    let xs = &nodes.nodes;
    let xj = xs[j];
    let mut total = T::zero();
    for (m, &xm) in xs.iter().enumerate() {
        if m == j {
            continue;
        }
        let mut term = T::one() / (xj - xm);
        for (l, &xl) in xs.iter().enumerate() {
            if l != j && l != m {
                term *= (x - xl) / (xj - xl);
            }
        }
        total += term;
    }
    total
}

/// Evaluates the nodal interpolant with the given nodal values at `x`.
pub fn interpolate<T: Real>(nodes: &NodalSet<T>, values: &[T], x: T) -> T {
    assert_eq!(values.len(), nodes.len());
    values
        .iter()
        .enumerate()
        .map(|(j, &v)| v * lagrange_eval(nodes, j, x))
        .sum()
}

/// Maps a reference coordinate `ξ ∈ [-1, 1]` into the element starting at `left_edge`.
#[inline]
pub fn affine_map<T: Real>(xi: T, h: T, left_edge: T) -> T {
    left_edge + h * (xi + T::one()) * T::lit(0.5)
}

pub fn element_operators<T: Real>(p: usize, h: T) -> Result<ElementOperators<T>, BasisError> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(BasisError::InvalidLength(h.to_f64_lossy()));
    }
    let nodes = lgl_nodes::<T>(p)?;
    let quad = lgl_rule::<T>(p + 1)?;
    let n = p + 1;
    let q = quad.nodes.len();
    let phi = DMat::from_fn(q, n, |a, j| lagrange_eval(&nodes, j, quad.nodes.nodes[a]));
    let dphi = DMat::from_fn(q, n, |a, j| {
        lagrange_derivative(&nodes, j, quad.nodes.nodes[a])
    });
    let half_h = h * T::lit(0.5);
    let mass = DMat::from_fn(n, n, |i, j| {
        half_h
            * (0..q)
                .map(|a| quad.weights[a] * phi[(a, i)] * phi[(a, j)])
                .sum::<T>()
    });
    // dz = (h/2) dξ and ∂_z = (2/h) ∂_ξ cancel
    let stiffness = DMat::from_fn(n, n, |i, j| {
        (0..q)
            .map(|a| quad.weights[a] * phi[(a, i)] * dphi[(a, j)])
            .sum::<T>()
    });
    let mass_inverse = mass.inverse().map_err(|_| BasisError::SingularMass)?;
    Ok(ElementOperators {
        degree: p,
        length: h,
        mass,
        stiffness,
        mass_inverse,
        nodes,
    })
}
