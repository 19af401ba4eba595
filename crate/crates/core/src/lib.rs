//! High-order simulation and optimal boundary control of 1-D
//! advection-diffusion-reaction systems: nodal DG in space, ESDIRK in time
//! with forward sensitivities, direct multiple shooting and SQP.
//!
//! The numerical kernels are generic over [`Real`]; the aliases below fix
//! them to `f64`, the precision of the optimization layers.

// `!(x > 0.0)` rejects NaN along with the bound; tableau constants carry
// more digits than f64 so the f32 and f64 roundings both come out right.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod basis;
pub mod dg;
pub mod esdirk;
pub mod linalg;
pub mod models;
pub mod nlp;
pub mod ocp;
pub mod scalar;

pub use scalar::Real;

pub type Matrix = linalg::DMat<f64>;
pub type BlockMatrix = linalg::BlockTridiagonal<f64>;
pub type Grid = dg::SpatialGrid<f64>;
pub type Transport = dg::TransportParams<f64>;
pub type Stencil = dg::AssembledStencil<f64>;
pub type Column = dg::AdrSystem<f64>;
pub type Integrator = esdirk::Esdirk<f64>;
pub type IntegratorOptions = esdirk::IntegratorOptions<f64>;
pub type Isotherm = models::IsothermParams<f64>;
