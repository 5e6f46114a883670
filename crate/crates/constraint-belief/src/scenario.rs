//! Task definitions: discrete-time dynamics, costs, known constraints, the
//! offset-parameterized unknown constraint model, and scenario file I/O.
//!
//! The unknown unsafe set is a union of axis-aligned obstacles whose facet
//! offsets are the entries of the parameter vector `theta`. A model is split
//! into blocks, each with its own map from trajectory points into a block of
//! constraint space (e.g. workspace positions, or the squared control norm),
//! so mixed state/control uncertainty is a product of independent blocks.

use crate::geometry::{AxisBox, BoxUnion};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Numerical threshold for strict unsafety: a point is unsafe iff `g > TAU_STRICT`.
/// The boundary `g == 0` counts as safe.
pub const TAU_STRICT: f64 = 1e-9;

/// Tolerance for the dynamic-consistency check of trajectories.
pub const DYN_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DynKind {
    SingleIntegrator,
    DoubleIntegrator,
}

/// Discrete-time dynamics, forward-Euler for the double integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub kind: DynKind,
    pub workspace_dim: usize,
    pub dt: f64,
    pub state_bounds: AxisBox,
    pub control_bounds: AxisBox,
}

impl Dynamics {
    pub fn state_dim(&self) -> usize {
        match self.kind {
            DynKind::SingleIntegrator => self.workspace_dim,
            DynKind::DoubleIntegrator => 2 * self.workspace_dim,
        }
    }

    pub fn control_dim(&self) -> usize {
        self.workspace_dim
    }

    /// One exact integration step.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let d = self.workspace_dim;
        match self.kind {
            DynKind::SingleIntegrator => {
                (0..d).map(|i| x[i] + self.dt * u[i]).collect()
            }
            DynKind::DoubleIntegrator => {
                let mut next = vec![0.0; 2 * d];
                for i in 0..d {
                    next[i] = x[i] + self.dt * x[d + i];
                    next[d + i] = x[d + i] + self.dt * u[i];
                }
                next
            }
        }
    }

    /// Position components of a state.
    pub fn position<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[..self.workspace_dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostKind {
    SumSquaredControl,
    PathLength,
}

/// A planning/demonstration task (fixed horizon, start, goal, known unsafe set).
#[derive(Debug, Clone)]
pub struct Task {
    pub dynamics: Dynamics,
    pub horizon: usize,
    pub cost: CostKind,
    pub x0: Vec<f64>,
    pub xg: Vec<f64>,
    /// Known unsafe boxes in workspace (position) coordinates.
    pub known_unsafe: BoxUnion,
}

impl Task {
    pub fn cost_of(&self, traj: &Trajectory) -> f64 {
        match self.cost {
            CostKind::SumSquaredControl => traj
                .controls
                .iter()
                .map(|u| u.iter().map(|v| v * v).sum::<f64>())
                .sum(),
            CostKind::PathLength => {
                let d = self.dynamics.workspace_dim;
                traj.states
                    .windows(2)
                    .map(|w| {
                        (0..d)
                            .map(|i| (w[1][i] - w[0][i]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .sum()
            }
        }
    }
}

/// Time-indexed states and controls, dynamically consistent by invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Checks dynamic consistency and state/control bounds.
    pub fn validate(&self, dyn_: &Dynamics) -> Result<(), ScenarioError> {
        if self.states.len() != self.controls.len() + 1 {
            return Err(invalid(
                "demos.states",
                format!(
                    "expected {} controls for {} states, got {}",
                    self.states.len().saturating_sub(1),
                    self.states.len(),
                    self.controls.len()
                ),
            ));
        }
        for (t, x) in self.states.iter().enumerate() {
            if x.len() != dyn_.state_dim() {
                return Err(invalid("demos.states", format!("state dim {} at step {t}", x.len())));
            }
            if !dyn_.state_bounds.contains_with_tol(x, DYN_TOL) {
                return Err(invalid("demos.states", format!("state out of bounds at step {t}")));
            }
        }
        for (t, u) in self.controls.iter().enumerate() {
            if u.len() != dyn_.control_dim() {
                return Err(invalid("demos.controls", format!("control dim {} at step {t}", u.len())));
            }
            if !dyn_.control_bounds.contains_with_tol(u, DYN_TOL) {
                return Err(invalid("demos.controls", format!("control out of bounds at step {t}")));
            }
        }
        for t in 0..self.controls.len() {
            let pred = dyn_.step(&self.states[t], &self.controls[t]);
            let err = pred
                .iter()
                .zip(&self.states[t + 1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if err > DYN_TOL {
                return Err(invalid(
                    "demos.states",
                    format!("dynamics violated at timestep {t} by {err:.3e}"),
                ));
            }
        }
        Ok(())
    }
}

/// Integrates controls from `x0`; the result satisfies the dynamics exactly.
pub fn rollout(dyn_: &Dynamics, x0: &[f64], controls: &[Vec<f64>]) -> Result<Trajectory, ScenarioError> {
    let mut states = vec![x0.to_vec()];
    for (t, u) in controls.iter().enumerate() {
        if !dyn_.control_bounds.contains_with_tol(u, DYN_TOL) {
            return Err(invalid("controls", format!("control out of bounds at step {t}")));
        }
        let next = dyn_.step(states.last().unwrap(), u);
        if !dyn_.state_bounds.contains_with_tol(&next, DYN_TOL) {
            return Err(invalid("controls", format!("state out of bounds after step {t}")));
        }
        states.push(next);
    }
    Ok(Trajectory { states, controls: controls.to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhiKind {
    /// Workspace position components of the state.
    StateProjection,
    /// Scalar `||u||^2` of the control.
    ControlNormSquared,
    /// The full state.
    Identity,
}

/// One block of constraint space with its own obstacles and theta coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub phi: PhiKind,
    /// Constraint-space dimension of this block.
    pub kdim: usize,
    pub n_obs: usize,
    /// Offset of this block's coordinates within the full theta vector.
    pub theta_offset: usize,
    /// Bounding box of this block's constraint space (derived from task bounds).
    pub c_bounds: AxisBox,
}

impl ModelBlock {
    /// Theta coordinates per obstacle: two facets (lower/upper) per constraint
    /// dimension for spatial blocks, a single upper-bound offset for the
    /// control-norm block.
    pub fn theta_per_obs(&self) -> usize {
        match self.phi {
            PhiKind::ControlNormSquared => 1,
            _ => 2 * self.kdim,
        }
    }

    pub fn theta_len(&self) -> usize {
        self.n_obs * self.theta_per_obs()
    }
}

/// A facet of one obstacle. `lower == true` means the offset is the obstacle's
/// lower bound in `kappa_dim` (the facet function is `a = kappa_i - theta_c`);
/// otherwise the upper bound (`a = theta_c - kappa_i`). A point is strictly
/// inside an obstacle iff every facet has `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Facet {
    pub block: usize,
    pub obs: usize,
    pub kappa_dim: usize,
    pub theta_coord: usize,
    pub lower: bool,
}

impl Facet {
    /// Signed facet value `a(kappa, theta)`.
    pub fn value(&self, kappa: &[f64], theta: &[f64]) -> f64 {
        if self.lower {
            kappa[self.kappa_dim] - theta[self.theta_coord]
        } else {
            theta[self.theta_coord] - kappa[self.kappa_dim]
        }
    }

    /// d(a)/d(kappa_i) for this facet's own dimension.
    pub fn kappa_grad_sign(&self) -> f64 {
        if self.lower {
            1.0
        } else {
            -1.0
        }
    }
}

/// Offset-parameterized union-of-boxes unsafe set over one or more blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintModel {
    pub blocks: Vec<ModelBlock>,
    pub theta_prior: AxisBox,
    pub keep_degenerate: bool,
}

impl ConstraintModel {
    pub fn new(blocks: Vec<ModelBlock>, theta_prior: AxisBox) -> Result<Self, ScenarioError> {
        let d: usize = blocks.iter().map(ModelBlock::theta_len).sum();
        if theta_prior.dim() != d {
            return Err(invalid(
                "model.theta_prior",
                format!("expected dimension {d}, got {}", theta_prior.dim()),
            ));
        }
        Ok(Self { blocks, theta_prior, keep_degenerate: true })
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_prior.dim()
    }

    /// All facets of obstacle `obs` in block `block`.
    pub fn obstacle_facets(&self, block: usize, obs: usize) -> Vec<Facet> {
        let b = &self.blocks[block];
        let base = b.theta_offset + obs * b.theta_per_obs();
        match b.phi {
            PhiKind::ControlNormSquared => vec![Facet {
                block,
                obs,
                kappa_dim: 0,
                theta_coord: base,
                lower: true,
            }],
            _ => (0..b.kdim)
                .flat_map(|i| {
                    [true, false].into_iter().map(move |lower| Facet {
                        block,
                        obs,
                        kappa_dim: i,
                        theta_coord: base + 2 * i + usize::from(!lower),
                        lower,
                    })
                })
                .collect(),
        }
    }

    pub fn all_facets(&self) -> Vec<Facet> {
        let mut out = Vec::new();
        for (bi, b) in self.blocks.iter().enumerate() {
            for o in 0..b.n_obs {
                out.extend(self.obstacle_facets(bi, o));
            }
        }
        out
    }

    /// Depth of `kappa` inside obstacle `(block, obs)`: positive iff strictly inside.
    pub fn obstacle_g(&self, block: usize, obs: usize, kappa: &[f64], theta: &[f64]) -> f64 {
        self.obstacle_facets(block, obs)
            .iter()
            .map(|f| f.value(kappa, theta))
            .fold(f64::INFINITY, f64::min)
    }

    /// Max over this block's obstacles of the inside depth.
    pub fn block_g(&self, block: usize, theta: &[f64], kappa: &[f64]) -> f64 {
        (0..self.blocks[block].n_obs)
            .map(|o| self.obstacle_g(block, o, kappa, theta))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `g(kappa, theta)` over the full product constraint space: `kappa` is the
    /// concatenation of all block coordinates. Positive iff strictly inside
    /// some obstacle.
    pub fn g_value(&self, theta: &[f64], kappa: &[f64]) -> Result<f64, ScenarioError> {
        if theta.len() != self.theta_dim() {
            return Err(invalid("theta", format!("expected dim {}", self.theta_dim())));
        }
        let kdim_total: usize = self.blocks.iter().map(|b| b.kdim).sum();
        if kappa.len() != kdim_total {
            return Err(invalid("kappa", format!("expected dim {kdim_total}")));
        }
        let mut g = f64::NEG_INFINITY;
        let mut off = 0;
        for (bi, b) in self.blocks.iter().enumerate() {
            let kb = &kappa[off..off + b.kdim];
            if b.n_obs > 0 {
                g = g.max(self.block_g(bi, theta, kb));
            }
            off += b.kdim;
        }
        Ok(g)
    }

    /// The set of `theta` (as a closed box in the prior) for which `kappa` lies
    /// strictly inside obstacle `(block, obs)`. `None` if no prior `theta` does.
    pub fn inside_theta_box(&self, block: usize, obs: usize, kappa: &[f64]) -> Option<AxisBox> {
        let prior = &self.theta_prior;
        let mut lo = prior.lo().to_vec();
        let mut hi = prior.hi().to_vec();
        for f in self.obstacle_facets(block, obs) {
            let c = f.theta_coord;
            let k = kappa[f.kappa_dim];
            if f.lower {
                // inside needs theta_c < kappa_i
                if prior.lo()[c] >= k {
                    return None;
                }
                hi[c] = hi[c].min(k);
            } else {
                // inside needs theta_c > kappa_i
                if prior.hi()[c] <= k {
                    return None;
                }
                lo[c] = lo[c].max(k);
            }
            if lo[c] > hi[c] {
                return None;
            }
        }
        Some(AxisBox::new(lo, hi).expect("clipped to prior"))
    }

    /// Union over `theta_box` of the unsafe set, one `BoxUnion` per block.
    /// For offset obstacles this is one box per obstacle, spanned by the
    /// extremal facet offsets.
    pub fn unsafe_regions(&self, theta_box: &AxisBox) -> Vec<BoxUnion> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(bi, _)| self.unsafe_region_block(bi, theta_box))
            .collect()
    }

    pub fn unsafe_region_block(&self, block: usize, theta_box: &AxisBox) -> BoxUnion {
        let b = &self.blocks[block];
        let mut boxes = Vec::new();
        for o in 0..b.n_obs {
            if let Some(outer) = self.obstacle_span(block, o, theta_box, false) {
                boxes.push(outer);
            }
        }
        BoxUnion::from_overlapping(b.kdim, &boxes)
    }

    /// Intersection over `theta_box` of the unsafe set of one obstacle (the
    /// guaranteed-unsafe core), `None` if empty.
    pub fn guaranteed_inner(&self, block: usize, obs: usize, theta_box: &AxisBox) -> Option<AxisBox> {
        self.obstacle_span(block, obs, theta_box, true)
    }

    /// The obstacle box at the extremal offsets of `theta_box`: the largest
    /// (`inner == false`, union over the box) or smallest (`inner == true`,
    /// intersection over the box) realization, clipped to the block bounds.
    fn obstacle_span(
        &self,
        block: usize,
        obs: usize,
        theta_box: &AxisBox,
        inner: bool,
    ) -> Option<AxisBox> {
        let b = &self.blocks[block];
        let mut lo = b.c_bounds.lo().to_vec();
        let mut hi = b.c_bounds.hi().to_vec();
        for f in self.obstacle_facets(block, obs) {
            let c = f.theta_coord;
            let (pick_lo, pick_hi) = (theta_box.lo()[c], theta_box.hi()[c]);
            if f.lower {
                let v = if inner { pick_hi } else { pick_lo };
                lo[f.kappa_dim] = lo[f.kappa_dim].max(v);
            } else {
                let v = if inner { pick_lo } else { pick_hi };
                hi[f.kappa_dim] = hi[f.kappa_dim].min(v);
            }
        }
        for i in 0..b.kdim {
            if lo[i] >= hi[i] {
                return None;
            }
        }
        Some(AxisBox::new(lo, hi).expect("lo < hi checked"))
    }

    /// Per-block constraint points of a trajectory: `(timestep, kappa)` pairs.
    pub fn constraint_points(&self, block: usize, traj: &Trajectory, dyn_: &Dynamics) -> Vec<(usize, Vec<f64>)> {
        match self.blocks[block].phi {
            PhiKind::StateProjection => traj
                .states
                .iter()
                .enumerate()
                .map(|(t, x)| (t, dyn_.position(x).to_vec()))
                .collect(),
            PhiKind::Identity => traj.states.iter().enumerate().map(|(t, x)| (t, x.clone())).collect(),
            PhiKind::ControlNormSquared => traj
                .controls
                .iter()
                .enumerate()
                .map(|(t, u)| (t, vec![u.iter().map(|v| v * v).sum::<f64>()]))
                .collect(),
        }
    }
}

impl AxisBox {
    /// Closed membership with an explicit tolerance.
    pub fn contains_with_tol(&self, point: &[f64], tol: f64) -> bool {
        self.lo()
            .iter()
            .zip(self.hi())
            .zip(point)
            .all(|((l, h), x)| *x >= l - tol && *x <= h + tol)
    }
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsFile {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DynamicsFile {
    kind: String,
    dim: usize,
    dt: f64,
    state_bounds: BoundsFile,
    control_bounds: BoundsFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    #[serde(rename = "T")]
    horizon: usize,
    cost: String,
    x0: Vec<f64>,
    xg: Vec<f64>,
    known_unsafe: Vec<BoundsFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PhiField {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    phi: PhiField,
    n_obs: usize,
    theta_prior: BoundsFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoFile {
    states: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    version: u32,
    dynamics: DynamicsFile,
    task: TaskFile,
    model: ModelFile,
    demos: Vec<DemoFile>,
}

fn box_from_file(b: &BoundsFile, field: &str) -> Result<AxisBox, ScenarioError> {
    AxisBox::new(b.lo.clone(), b.hi.clone()).map_err(|e| invalid(field, e.to_string()))
}

fn box_to_file(b: &AxisBox) -> BoundsFile {
    BoundsFile { lo: b.lo().to_vec(), hi: b.hi().to_vec() }
}

fn phi_kind_from_str(s: &str, field: &str) -> Result<PhiKind, ScenarioError> {
    match s {
        "state-projection" => Ok(PhiKind::StateProjection),
        "control-norm-squared" => Ok(PhiKind::ControlNormSquared),
        "identity" => Ok(PhiKind::Identity),
        other => Err(invalid(field, format!("unknown phi kind `{other}`"))),
    }
}

fn phi_kind_to_str(p: PhiKind) -> &'static str {
    match p {
        PhiKind::StateProjection => "state-projection",
        PhiKind::ControlNormSquared => "control-norm-squared",
        PhiKind::Identity => "identity",
    }
}

/// Derives the constraint-space bounding box of a block from the task bounds.
fn block_c_bounds(phi: PhiKind, dyn_: &Dynamics) -> AxisBox {
    match phi {
        PhiKind::StateProjection => {
            let d = dyn_.workspace_dim;
            AxisBox::new(dyn_.state_bounds.lo()[..d].to_vec(), dyn_.state_bounds.hi()[..d].to_vec())
                .expect("state bounds valid")
        }
        PhiKind::Identity => dyn_.state_bounds.clone(),
        PhiKind::ControlNormSquared => {
            let max_sq: f64 = dyn_
                .control_bounds
                .lo()
                .iter()
                .zip(dyn_.control_bounds.hi())
                .map(|(l, h)| l.powi(2).max(h.powi(2)))
                .sum();
            AxisBox::new(vec![0.0], vec![max_sq]).expect("nonnegative")
        }
    }
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<(Task, ConstraintModel, Vec<Trajectory>), ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

/// Parses a scenario from JSON text (same contract as [`load_scenario`]).
pub fn parse_scenario(text: &str) -> Result<(Task, ConstraintModel, Vec<Trajectory>), ScenarioError> {
    let file: ScenarioFile =
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    if file.version != 1 {
        return Err(invalid("version", format!("unsupported version {}", file.version)));
    }

    let kind = match file.dynamics.kind.as_str() {
        "single-integrator" => DynKind::SingleIntegrator,
        "double-integrator" => DynKind::DoubleIntegrator,
        other => return Err(invalid("dynamics.kind", format!("unknown kind `{other}`"))),
    };
    if file.dynamics.dim == 0 {
        return Err(invalid("dynamics.dim", "workspace dimension must be positive"));
    }
    if !(file.dynamics.dt > 0.0) {
        return Err(invalid("dynamics.dt", "timestep must be positive"));
    }
    let dynamics = Dynamics {
        kind,
        workspace_dim: file.dynamics.dim,
        dt: file.dynamics.dt,
        state_bounds: box_from_file(&file.dynamics.state_bounds, "dynamics.state_bounds")?,
        control_bounds: box_from_file(&file.dynamics.control_bounds, "dynamics.control_bounds")?,
    };
    if dynamics.state_bounds.dim() != dynamics.state_dim() {
        return Err(invalid(
            "dynamics.state_bounds",
            format!("expected dim {}, got {}", dynamics.state_dim(), dynamics.state_bounds.dim()),
        ));
    }
    if dynamics.control_bounds.dim() != dynamics.control_dim() {
        return Err(invalid(
            "dynamics.control_bounds",
            format!("expected dim {}, got {}", dynamics.control_dim(), dynamics.control_bounds.dim()),
        ));
    }

    let cost = match file.task.cost.as_str() {
        "sum-squared-control" => CostKind::SumSquaredControl,
        "path-length" => CostKind::PathLength,
        other => return Err(invalid("task.cost", format!("unknown cost `{other}`"))),
    };
    if file.task.horizon < 2 {
        return Err(invalid("task.T", "horizon must be at least 2"));
    }
    if file.task.x0.len() != dynamics.state_dim() || file.task.xg.len() != dynamics.state_dim() {
        return Err(invalid("task.x0", "start/goal must match the state dimension"));
    }
    let mut known = Vec::new();
    for (i, b) in file.task.known_unsafe.iter().enumerate() {
        let bx = box_from_file(b, "task.known_unsafe")?;
        if bx.dim() != dynamics.workspace_dim {
            return Err(invalid(
                "task.known_unsafe",
                format!("box {i} must live in workspace dim {}", dynamics.workspace_dim),
            ));
        }
        known.push(bx);
    }
    let known_unsafe = BoxUnion::from_overlapping(dynamics.workspace_dim, &known);
    let task = Task {
        dynamics: dynamics.clone(),
        horizon: file.task.horizon,
        cost,
        x0: file.task.x0.clone(),
        xg: file.task.xg.clone(),
        known_unsafe,
    };
    if !task.dynamics.state_bounds.contains(&task.x0) {
        return Err(invalid("task.x0", "start state violates state bounds"));
    }
    if !task.dynamics.state_bounds.contains(&task.xg) {
        return Err(invalid("task.xg", "goal state violates state bounds"));
    }
    for (name, x) in [("task.x0", &task.x0), ("task.xg", &task.xg)] {
        let pos = task.dynamics.position(x);
        if task.known_unsafe.boxes().iter().any(|b| {
            let inside = b
                .lo()
                .iter()
                .zip(b.hi())
                .zip(pos)
                .all(|((l, h), p)| *p > l + TAU_STRICT && *p < h - TAU_STRICT);
            inside
        }) {
            return Err(invalid(name, "state lies strictly inside a known unsafe box"));
        }
    }

    let phi_kinds: Vec<PhiKind> = match &file.model.phi {
        PhiField::One(s) => vec![phi_kind_from_str(s, "model.phi")?],
        PhiField::Many(v) => v
            .iter()
            .map(|s| phi_kind_from_str(s, "model.phi"))
            .collect::<Result<_, _>>()?,
    };
    if phi_kinds.is_empty() {
        return Err(invalid("model.phi", "at least one block required"));
    }
    let mut blocks = Vec::new();
    let mut theta_offset = 0;
    for phi in phi_kinds {
        let kdim = match phi {
            PhiKind::StateProjection => dynamics.workspace_dim,
            PhiKind::Identity => dynamics.state_dim(),
            PhiKind::ControlNormSquared => 1,
        };
        let n_obs = match phi {
            PhiKind::ControlNormSquared => 1,
            _ => file.model.n_obs,
        };
        let mut block = ModelBlock {
            phi,
            kdim,
            n_obs,
            theta_offset,
            c_bounds: block_c_bounds(phi, &dynamics),
        };
        theta_offset += block.theta_len();
        // silence unused warning path: theta_offset tracked above
        block.theta_offset = theta_offset - block.theta_len();
        blocks.push(block);
    }
    let theta_prior = box_from_file(&file.model.theta_prior, "model.theta_prior")?;
    let model = ConstraintModel::new(blocks, theta_prior)?;

    let mut demos = Vec::new();
    for (i, d) in file.demos.iter().enumerate() {
        let traj = Trajectory { states: d.states.clone(), controls: d.controls.clone() };
        if traj.states.len() != task.horizon {
            return Err(invalid(
                "demos",
                format!("demo {i} has {} states, task horizon is {}", traj.states.len(), task.horizon),
            ));
        }
        traj.validate(&dynamics)?;
        demos.push(traj);
    }

    Ok((task, model, demos))
}

/// Serializes a scenario back to the file schema (inverse of [`load_scenario`]).
pub fn scenario_to_json(task: &Task, model: &ConstraintModel, demos: &[Trajectory]) -> String {
    let file = ScenarioFile {
        version: 1,
        dynamics: DynamicsFile {
            kind: match task.dynamics.kind {
                DynKind::SingleIntegrator => "single-integrator".to_string(),
                DynKind::DoubleIntegrator => "double-integrator".to_string(),
            },
            dim: task.dynamics.workspace_dim,
            dt: task.dynamics.dt,
            state_bounds: box_to_file(&task.dynamics.state_bounds),
            control_bounds: box_to_file(&task.dynamics.control_bounds),
        },
        task: TaskFile {
            horizon: task.horizon,
            cost: match task.cost {
                CostKind::SumSquaredControl => "sum-squared-control".to_string(),
                CostKind::PathLength => "path-length".to_string(),
            },
            x0: task.x0.clone(),
            xg: task.xg.clone(),
            known_unsafe: task.known_unsafe.boxes().iter().map(box_to_file).collect(),
        },
        model: ModelFile {
            phi: {
                let kinds: Vec<String> = model
                    .blocks
                    .iter()
                    .map(|b| phi_kind_to_str(b.phi).to_string())
                    .collect();
                if kinds.len() == 1 {
                    PhiField::One(kinds.into_iter().next().unwrap())
                } else {
                    PhiField::Many(kinds)
                }
            },
            n_obs: model
                .blocks
                .iter()
                .find(|b| b.phi != PhiKind::ControlNormSquared)
                .map_or(0, |b| b.n_obs),
            theta_prior: box_to_file(&model.theta_prior),
        },
        demos: demos
            .iter()
            .map(|t| DemoFile { states: t.states.clone(), controls: t.controls.clone() })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("serializable")
}

pub fn save_scenario(
    path: &Path,
    task: &Task,
    model: &ConstraintModel,
    demos: &[Trajectory],
) -> Result<(), ScenarioError> {
    std::fs::write(path, scenario_to_json(task, model, demos))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_1d_json() -> String {
        r#"{
            "version": 1,
            "dynamics": {
                "kind": "single-integrator", "dim": 1, "dt": 1.0,
                "state_bounds": {"lo": [-10.0], "hi": [10.0]},
                "control_bounds": {"lo": [-2.0], "hi": [2.0]}
            },
            "task": {
                "T": 4, "cost": "sum-squared-control",
                "x0": [0.0], "xg": [3.0], "known_unsafe": []
            },
            "model": {"phi": "state-projection", "n_obs": 1, "theta_prior": {"lo": [4.0, 5.0], "hi": [5.0, 8.0]}},
            "demos": []
        }"#
        .to_string()
    }

    #[test]
    fn minimal_scenario_loads() {
        let (task, model, demos) = parse_scenario(&minimal_1d_json()).unwrap();
        assert_eq!(task.horizon, 4);
        assert!(demos.is_empty());
        assert_eq!(model.theta_dim(), 2);
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = minimal_1d_json().replace("\"version\": 1,", "\"version\": 1, \"extra\": 5,");
        assert!(matches!(parse_scenario(&bad), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn inconsistent_demo_names_timestep() {
        let with_demo = minimal_1d_json().replace(
            "\"demos\": []",
            "\"demos\": [{\"states\": [[0.0],[1.0],[2.1],[3.0]], \"controls\": [[1.0],[1.0],[1.0]]}]",
        );
        let err = parse_scenario(&with_demo).unwrap_err();
        match err {
            ScenarioError::Validation { field, message } => {
                assert_eq!(field, "demos.states");
                assert!(message.contains("timestep 1"), "message: {message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (task, model, demos) = parse_scenario(&minimal_1d_json()).unwrap();
        let once = scenario_to_json(&task, &model, &demos);
        let (t2, m2, d2) = parse_scenario(&once).unwrap();
        let twice = scenario_to_json(&t2, &m2, &d2);
        assert_eq!(once, twice);
    }

    #[test]
    fn rollout_zero_controls_is_constant() {
        let (task, _, _) = parse_scenario(&minimal_1d_json()).unwrap();
        let traj = rollout(&task.dynamics, &[1.0], &[vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(traj.states, vec![vec![1.0], vec![1.0], vec![1.0]]);
        traj.validate(&task.dynamics).unwrap();
    }

    #[test]
    fn rollout_double_integrator_euler() {
        let dynamics = Dynamics {
            kind: DynKind::DoubleIntegrator,
            workspace_dim: 1,
            dt: 1.0,
            state_bounds: AxisBox::new(vec![-10.0, -10.0], vec![10.0, 10.0]).unwrap(),
            control_bounds: AxisBox::new(vec![-2.0], vec![2.0]).unwrap(),
        };
        let traj = rollout(&dynamics, &[0.0, 0.0], &[vec![1.0], vec![1.0]]).unwrap();
        let positions: Vec<f64> = traj.states.iter().map(|x| x[0]).collect();
        let velocities: Vec<f64> = traj.states.iter().map(|x| x[1]).collect();
        assert_eq!(positions, vec![0.0, 0.0, 1.0]);
        assert_eq!(velocities, vec![0.0, 1.0, 2.0]);
        traj.validate(&dynamics).unwrap();
    }

    #[test]
    fn rollout_reports_bound_violation_step() {
        let (task, _, _) = parse_scenario(&minimal_1d_json()).unwrap();
        let err = rollout(&task.dynamics, &[9.0], &[vec![1.0], vec![1.0]]).unwrap_err();
        assert!(err.to_string().contains("step 1"), "{err}");
    }

    fn obstacle_model() -> ConstraintModel {
        // one 2-D obstacle, fully uncertain offsets in [0, 1]^4
        let block = ModelBlock {
            phi: PhiKind::StateProjection,
            kdim: 2,
            n_obs: 1,
            theta_offset: 0,
            c_bounds: AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        };
        let prior = AxisBox::new(vec![0.0; 4], vec![1.0; 4]).unwrap();
        ConstraintModel::new(vec![block], prior).unwrap()
    }

    #[test]
    fn g_value_inside_obstacle() {
        let model = obstacle_model();
        // theta layout per dim: [lo_x, hi_x, lo_y, hi_y]
        let theta = [0.3, 0.6, 0.3, 0.6];
        let g = model.g_value(&theta, &[0.45, 0.45]).unwrap();
        assert!((g - 0.15).abs() < 1e-12);
        let g_face = model.g_value(&theta, &[0.3, 0.45]).unwrap();
        assert!(g_face.abs() < 1e-12);
    }

    #[test]
    fn g_value_scalar_bound() {
        let dynamics = Dynamics {
            kind: DynKind::SingleIntegrator,
            workspace_dim: 1,
            dt: 1.0,
            state_bounds: AxisBox::new(vec![-100.0], vec![100.0]).unwrap(),
            control_bounds: AxisBox::new(vec![-10.0], vec![10.0]).unwrap(),
        };
        let block = ModelBlock {
            phi: PhiKind::ControlNormSquared,
            kdim: 1,
            n_obs: 1,
            theta_offset: 0,
            c_bounds: block_c_bounds(PhiKind::ControlNormSquared, &dynamics),
        };
        let model =
            ConstraintModel::new(vec![block], AxisBox::new(vec![0.0], vec![100.0]).unwrap()).unwrap();
        let g = model.g_value(&[97.85], &[99.0]).unwrap();
        assert!((g - 1.15).abs() < 1e-12);
        // unsafe region of theta in [97.85, 100]: kappa > 97.85
        let region = model.unsafe_region_block(0, &AxisBox::new(vec![97.85], vec![100.0]).unwrap());
        assert_eq!(region.boxes().len(), 1);
        assert!((region.boxes()[0].lo()[0] - 97.85).abs() < 1e-12);
        assert!((region.boxes()[0].hi()[0] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn unsafe_region_singleton_is_exact_obstacle() {
        let model = obstacle_model();
        let theta = AxisBox::singleton(&[0.2, 0.7, 0.1, 0.5]);
        let region = model.unsafe_region_block(0, &theta);
        assert_eq!(region.boxes().len(), 1);
        assert_eq!(region.boxes()[0].lo(), &[0.2, 0.1]);
        assert_eq!(region.boxes()[0].hi(), &[0.7, 0.5]);
    }

    #[test]
    fn unsafe_region_takes_extremal_offsets() {
        let model = obstacle_model();
        // x_hi uncertain in [0.6, 0.9], everything else pinned
        let tb = AxisBox::new(vec![0.3, 0.6, 0.3, 0.6], vec![0.3, 0.9, 0.3, 0.6]).unwrap();
        let region = model.unsafe_region_block(0, &tb);
        assert_eq!(region.boxes()[0].hi()[0], 0.9);
        assert_eq!(region.boxes()[0].lo()[0], 0.3);
    }

    #[test]
    fn unsafe_region_monotone_in_theta_box() {
        let model = obstacle_model();
        let small = AxisBox::new(vec![0.3, 0.5, 0.3, 0.5], vec![0.4, 0.6, 0.4, 0.6]).unwrap();
        let big = AxisBox::new(vec![0.2, 0.5, 0.2, 0.5], vec![0.4, 0.8, 0.4, 0.8]).unwrap();
        let rs = model.unsafe_region_block(0, &small);
        let rb = model.unsafe_region_block(0, &big);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            if rs.contains(&p) {
                assert!(rb.contains(&p));
            }
        }
    }

    #[test]
    fn g_positive_iff_inside_singleton_region() {
        let model = obstacle_model();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let lo_x = rng.gen_range(0.0..0.5);
            let hi_x = rng.gen_range(lo_x + 0.05..1.0);
            let lo_y = rng.gen_range(0.0..0.5);
            let hi_y = rng.gen_range(lo_y + 0.05..1.0);
            let theta = [lo_x, hi_x, lo_y, hi_y];
            let kappa = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let g = model.g_value(&theta, &kappa).unwrap();
            let region = model.unsafe_region_block(0, &AxisBox::singleton(&theta));
            let strictly_inside = region.boxes().iter().any(|b| {
                b.lo()
                    .iter()
                    .zip(b.hi())
                    .zip(&kappa)
                    .all(|((l, h), k)| *k > l + TAU_STRICT && *k < h - TAU_STRICT)
            });
            assert_eq!(g > TAU_STRICT, strictly_inside, "theta {theta:?} kappa {kappa:?}");
        }
    }
}
