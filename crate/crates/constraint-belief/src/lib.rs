//! Learn the set of constraints consistent with locally-optimal demonstrations,
//! maintain a belief over that set, and plan/execute trajectories that trade
//! off cost against probabilistic constraint satisfaction.
//!
//! The pipeline: [`scenario`] defines tasks and offset-parameterized constraint
//! models; [`kkt`] certifies demonstrations and decides robust consistency of
//! parameter boxes; [`extraction`] recovers the full consistent set as a
//! disjoint box union; [`belief`] turns it into a distribution and folds in
//! sensing; [`planning`] and [`sampled`] produce open-loop plans; [`policy`]
//! and [`sim`] close the loop and benchmark.
//!
//! See the crate `examples/` directory for one runnable example per capability,
//! and the `cbp` binary for the file-based pipeline.

pub mod cli;
pub mod geometry;
pub(crate) mod lp;
pub mod scenario;

pub use geometry::{AxisBox, BoxUnion, GeometryError};
pub use scenario::{
    load_scenario, parse_scenario, rollout, save_scenario, ConstraintModel, CostKind, DynKind,
    Dynamics, Facet, ModelBlock, PhiKind, ScenarioError, Task, Trajectory,
};
