//! Staged function specifications and their compilation: expressions,
//! interval analysis, validation, budgeted construction, built-in families
//! and scaling studies.

pub mod analysis;
pub mod build;
pub mod expr;
pub mod families;
pub mod interval;
pub mod scaling;
pub mod spec;

pub use build::{build, BuildOptions, BuildResult, StageReport};
pub use expr::Expr;
pub use families::{builtin_family, builtin_family_with, catalog, nested_log_bounds, FamilyInfo, FamilyParams};
pub use interval::Interval;
pub use scaling::{run_scaling, ScalingReport, ScalingRow};
pub use spec::{parse_spec, reference_eval, FunctionSpec, Mode, StageKind, StageOp, StageSpec};
