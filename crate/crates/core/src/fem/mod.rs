//! Taylor-Hood finite elements for incompressible Navier-Stokes.

pub mod anderson;
pub mod assembly;
pub mod basis;
pub mod flow;
pub mod space;

pub use assembly::{
    assemble_constant_operators, assemble_convection, assemble_load, ConstantOperators,
};
pub use flow::{
    dirichlet_values, field_difference_norm, micro_step, BodyForce, BoundarySpec, FlowField,
    FlowParams, InflowProfile, MicroSolver, Norm, PicardSettings, Pulse, StepReport,
};
pub use space::{ElementGeometry, FunctionSpace, Topology};
