//! Weighted power-mean target sets: membership, Euclidean projections,
//! intersection projections, and the direction vectors that drive the
//! outer optimization loops.

mod direction;
mod project;
mod set_distance;
mod spec;

pub use direction::{direction_consensus, direction_malfare, malfare_value, Direction, NormKind};
pub use project::{distance_intersection, project_intersection, support_min};
pub use set_distance::{restricted_set_distance, BoundedSetDistance};
pub use spec::{AggregationSpec, Exponent, MultiGroupSpec};

/// Projection tolerance for the closed-form exponents (1 and neg_inf).
pub const TOL_PROJ_EXACT: f64 = 1e-9;
/// Projection tolerance for general exponents (iterative solver).
pub const TOL_PROJ_GENERAL: f64 = 1e-7;
/// Distances below this count as "already in the set" for directions.
pub const TOL_INSIDE: f64 = 1e-8;
/// Slack on the membership threshold test.
pub const TOL_CONTAIN: f64 = 1e-10;
/// Iteration cap for scalar solvers inside projections.
pub const MAX_ITER: usize = 10_000;
/// Sweep cap for the intersection projection.
pub const MAX_DYKSTRA_SWEEPS: usize = 5_000;

/// Box bound on projections of points with sup-norm at most `b`:
/// `2 sqrt(m) (b + max_n c_n)`.
pub fn projection_bound(m: usize, b: f64, specs: &[AggregationSpec]) -> f64 {
    let c_max = specs.iter().map(|s| s.c).fold(0.0, f64::max);
    2.0 * (m as f64).sqrt() * (b + c_max)
}
