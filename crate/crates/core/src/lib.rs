//! Symmetric interior-penalty discontinuous Galerkin discretization of the
//! steady Stokes problem on level-set domains, using clipped polytopic
//! boundary elements without reference mappings.

pub mod analysis;
pub mod assembly;
pub mod error;
pub mod fespace;
pub mod geometry;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod study;

pub use analysis::{convergence_rates, ConvergenceTable, ErrorReport};
pub use assembly::{assemble_system, PenaltyField, SaddleSystem};
pub use error::{Error, Result};
pub use fespace::Spaces;
pub use geometry::{BoundingBox, LevelSetDomain, Point, PointClass, Vector};
pub use mesh::{
    build_active_mesh, build_background, ActiveMesh, BackgroundMesh, Facet, FacetKind,
    PolytopicElement,
};
pub use problem::{make_problem, ManufacturedProblem};
pub use quadrature::QuadratureTable;
pub use solver::{solve, SolutionFields, SolverKind, SolverOptions};
pub use study::{
    run_diagnostics, run_study, DiagnosticReport, PenaltyScaling, StudyConfig, StudyOutcome,
};
