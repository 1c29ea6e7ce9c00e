//! Numerical toolkit for Hörmander vector fields: commutator tables,
//! approximate exponentials built from flows, maximal commutator tuples,
//! almost-exponential charts, control-distance and ball-volume estimates,
//! and mollification of nonsmooth fields.

pub mod acceptance;
pub mod approxexp;
pub mod error;
pub mod expr;
pub mod fields;
pub mod flow;
pub mod jet;
pub mod linalg;
pub mod maximality;
pub mod metric;
pub mod mollify;
pub mod report;
pub mod sampling;

pub use approxexp::{
    almost_exponential, approx_commutator_plan, approx_exp, derivative_expansion_check, invert_e, jacobian_e,
    jacobian_structure_check, pullback_check, pullback_field, scaling_map, AnisotropicBox, ExpansionReport,
    StructureOptions, TupleSelection,
};
pub use error::{Error, Result};
pub use fields::{
    build_table, builtin_family, estimate_constants, eval_commutator, BoxDomain, CommutatorTable, RegularityConstants,
    Smoothness, VectorFieldFamily, Word,
};
pub use flow::{integrate_flow, run_plan, Direction, FlowPlan, Leg, Trajectory};
pub use maximality::{
    big_lambda, lambda_det, resolve_in_basis, select_maximal, stability_check, stratify, MaximalityReport,
    Stratification,
};
pub use metric::{
    ballbox_verify, cc_upper, doubling_estimate, reachable_grid, rho_sample, BallEstimate, BallboxOptions, DistanceEstimate,
    DistanceOptions, GridSpec, Witness,
};
pub use mollify::{
    convergence_check, mollified_bracket, mollified_commutator, mollify_family, uniform_bound_check, MollifiedFamily,
};
pub use report::{Table, VerificationReport};
