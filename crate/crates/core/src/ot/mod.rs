//! Transport solvers: exact monotone transport for luminance, entropic
//! (Sinkhorn) transport for chrominance, and the barycentric projection that
//! turns a coupling into a per-color map.

mod one_d;
mod projection;
mod sinkhorn;

pub use one_d::{monotone_coupling, monotone_cost, solve_ot_1d, ColorMapping1D};
pub use projection::{barycentric_projection, ColorMapping2D};
pub use sinkhorn::{
    sinkhorn, sinkhorn_dense, CostMatrix, GroundCost, KernelMode, PointCost, SinkhornParams,
    TransportPlan,
};
