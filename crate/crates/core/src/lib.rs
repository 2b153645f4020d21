//! Hybridizable discontinuous Galerkin solvers for scalar conservation laws on
//! structured quadrilateral meshes, with face-block trace storage, batched
//! dense kernels and preconditioned Newton-GMRES.

// Index loops mirror the quadrature sums; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod dense;
pub mod error;
pub mod krylov;
pub mod local;
pub mod mesh;
pub mod models;
pub mod newton;
pub mod parallel;
pub mod precond;
pub mod study;
pub mod trace;

pub use basis::{gauss_rule, lobatto_nodes, tabulate_basis, BasisTab, QuadratureRule};
pub use dense::{gemm_batch, gemv_strided_batch, lu_invert_batch, DenseBatch};
pub use error::{HdgError, Result};
pub use krylov::{gmres, GmresConfig, GmresStats, IdentityPrecond, LinearOperator, Orthogonalization, Preconditioner};
pub use local::{Discretization, StateFields, TimeTerm};
pub use mesh::{build_structured_quad, Mesh2D, Rect};
pub use models::{
    burgers_model, convdiff_sine, heat_model, poisson_sine, BoundaryKind, BurgersModel, LinearModel, OutflowCondition, PdeModel,
};
pub use newton::{newton_solve, time_march, NewtonConfig, SolveReport, SolverOptions};
pub use parallel::set_num_threads;
pub use precond::{BaseKind, BasePrecond, PolynomialPrecond};
pub use study::{CaseName, CaseSpec, SweepRow, TimeMode};
pub use trace::{assemble_global, block_matvec, read_dump, to_dense, write_dump, FaceBlockMatrix};
