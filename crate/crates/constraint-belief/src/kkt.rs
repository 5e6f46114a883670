//! First-order optimality checks for demonstrations.
//!
//! A demonstration is consistent with a parameter `theta` if some Lagrange
//! multipliers make its primal feasibility, complementary slackness, and
//! stationarity residuals small. Stationarity is linear in the multipliers, so
//! the best multipliers come from a min-max linear program. The same program
//! decides consistency robustly over a whole `theta` box: facets whose offset
//! varies over the box are forced to carry a zero multiplier, and primal
//! feasibility is checked at the extremal corner.

use crate::geometry::{AxisBox, MEMBERSHIP_TOL};
use crate::lp::{LinearProgram, LpStatus, Relation};
use crate::planning::{lattice_plan, Forbidden, Lattice};
use crate::scenario::{
    ConstraintModel, CostKind, DynKind, Dynamics, Facet, PhiKind, Task, Trajectory,
};
use std::cell::RefCell;
use std::collections::HashMap;
use thiserror::Error;

/// Default KKT residual tolerance.
pub const DEFAULT_DELTA_KKT: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("task infeasible under the given theta: {0}")]
    Infeasible(String),
    #[error("local refinement did not converge: residual {residual:.3e} after {outer} outer iterations")]
    NonConvergence { residual: f64, outer: usize },
}

/// Lagrange multipliers matching one demonstration's constraint inventory.
#[derive(Debug, Clone, Default)]
pub struct Multipliers {
    /// Known inequality multipliers (state/control bounds, known obstacle facets).
    pub known_ineq: Vec<f64>,
    /// Unknown-constraint facet multipliers, one per (timestep, obstacle, facet).
    pub unknown_ineq: Vec<f64>,
    /// Equality multipliers (dynamics, start, goal).
    pub known_eq: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(sys: &KktSystem) -> Self {
        Self {
            known_ineq: vec![0.0; sys.known_ineq.len()],
            unknown_ineq: vec![0.0; sys.unknown.len()],
            known_eq: vec![0.0; sys.eq_rows.len()],
        }
    }
}

/// Residuals of the KKT conditions: all max-norms, nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub primal_residual: f64,
    pub comp_slack_residual: f64,
    pub stationarity_residual: f64,
    pub consistent: bool,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.primal_residual
            .max(self.comp_slack_residual)
            .max(self.stationarity_residual)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct IneqInfo {
    pub grad: Vec<(usize, f64)>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct UnknownIneq {
    pub facet: Facet,
    pub timestep: usize,
    pub grad: Vec<(usize, f64)>,
    /// The facet-dimension coordinate of the demo point.
    pub kappa: f64,
}

impl UnknownIneq {
    /// Facet slack `a(kappa, theta)` at a single theta.
    pub fn value_at(&self, theta: &[f64]) -> f64 {
        if self.facet.lower {
            self.kappa - theta[self.facet.theta_coord]
        } else {
            theta[self.facet.theta_coord] - self.kappa
        }
    }

    /// Worst-case (largest) slack over a theta box.
    pub fn max_over(&self, b: &AxisBox) -> f64 {
        if self.facet.lower {
            self.kappa - b.lo()[self.facet.theta_coord]
        } else {
            b.hi()[self.facet.theta_coord] - self.kappa
        }
    }
}

/// The flattened constraint inventory of one demonstration: cost gradient,
/// equality gradients, known inequality gradients/values, and unknown facet
/// slacks per timestep and obstacle.
pub struct KktSystem {
    pub(crate) zdim: usize,
    pub(crate) cost_grad: Vec<f64>,
    pub(crate) eq_rows: Vec<Vec<(usize, f64)>>,
    pub(crate) eq_values: Vec<f64>,
    pub(crate) known_ineq: Vec<IneqInfo>,
    pub(crate) unknown: Vec<UnknownIneq>,
    /// (block, obs, timestep) groups of indices into `unknown`.
    pub(crate) obstacle_groups: Vec<Vec<usize>>,
    cache: RefCell<HashMap<CacheKey, f64>>,
}

type CacheKey = Vec<(usize, u64)>;

impl KktSystem {
    pub fn build(traj: &Trajectory, task: &Task, model: &ConstraintModel) -> Self {
        let dynamics = &task.dynamics;
        let nx = dynamics.state_dim();
        let nu = dynamics.control_dim();
        let horizon = traj.states.len();
        let zdim = horizon * nx + (horizon - 1) * nu;
        let state_idx = |t: usize, i: usize| t * nx + i;
        let control_idx = |t: usize, i: usize| horizon * nx + t * nu + i;

        let mut cost_grad = vec![0.0; zdim];
        match task.cost {
            CostKind::SumSquaredControl => {
                for (t, u) in traj.controls.iter().enumerate() {
                    for (i, &v) in u.iter().enumerate() {
                        cost_grad[control_idx(t, i)] = 2.0 * v;
                    }
                }
            }
            CostKind::PathLength => {
                let wd = dynamics.workspace_dim;
                for t in 0..horizon - 1 {
                    let a = &traj.states[t];
                    let b = &traj.states[t + 1];
                    let norm: f64 = (0..wd).map(|i| (b[i] - a[i]).powi(2)).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        for i in 0..wd {
                            let dir = (b[i] - a[i]) / norm;
                            cost_grad[state_idx(t + 1, i)] += dir;
                            cost_grad[state_idx(t, i)] -= dir;
                        }
                    }
                }
            }
        }

        let mut eq_rows = Vec::new();
        let mut eq_values = Vec::new();
        // dynamics rows
        for t in 0..horizon - 1 {
            let pred = dynamics.step(&traj.states[t], &traj.controls[t]);
            for i in 0..nx {
                let mut row = vec![(state_idx(t + 1, i), 1.0)];
                match dynamics.kind {
                    DynKind::SingleIntegrator => {
                        row.push((state_idx(t, i), -1.0));
                        row.push((control_idx(t, i), -dynamics.dt));
                    }
                    DynKind::DoubleIntegrator => {
                        let wd = dynamics.workspace_dim;
                        row.push((state_idx(t, i), -1.0));
                        if i < wd {
                            row.push((state_idx(t, wd + i), -dynamics.dt));
                        } else {
                            row.push((control_idx(t, i - wd), -dynamics.dt));
                        }
                    }
                }
                eq_rows.push(row);
                eq_values.push(traj.states[t + 1][i] - pred[i]);
            }
        }
        // start and goal
        for i in 0..nx {
            eq_rows.push(vec![(state_idx(0, i), 1.0)]);
            eq_values.push(traj.states[0][i] - task.x0[i]);
        }
        for i in 0..nx {
            eq_rows.push(vec![(state_idx(horizon - 1, i), 1.0)]);
            eq_values.push(traj.states[horizon - 1][i] - task.xg[i]);
        }

        let mut known_ineq = Vec::new();
        // state bounds
        for (t, x) in traj.states.iter().enumerate() {
            for i in 0..nx {
                known_ineq.push(IneqInfo {
                    grad: vec![(state_idx(t, i), 1.0)],
                    value: x[i] - dynamics.state_bounds.hi()[i],
                });
                known_ineq.push(IneqInfo {
                    grad: vec![(state_idx(t, i), -1.0)],
                    value: dynamics.state_bounds.lo()[i] - x[i],
                });
            }
        }
        // control bounds
        for (t, u) in traj.controls.iter().enumerate() {
            for i in 0..nu {
                known_ineq.push(IneqInfo {
                    grad: vec![(control_idx(t, i), 1.0)],
                    value: u[i] - dynamics.control_bounds.hi()[i],
                });
                known_ineq.push(IneqInfo {
                    grad: vec![(control_idx(t, i), -1.0)],
                    value: dynamics.control_bounds.lo()[i] - u[i],
                });
            }
        }
        // known obstacles: one inequality per (timestep, obstacle), using the
        // depth function; the gradient follows the single innermost facet
        for (t, x) in traj.states.iter().enumerate() {
            let pos = dynamics.position(x);
            for b in task.known_unsafe.boxes() {
                let mut depth = f64::INFINITY;
                let mut grad_entry: Option<(usize, f64)> = None;
                for i in 0..b.dim() {
                    let lower = pos[i] - b.lo()[i];
                    if lower < depth {
                        depth = lower;
                        grad_entry = Some((state_idx(t, i), 1.0));
                    }
                    let upper = b.hi()[i] - pos[i];
                    if upper < depth {
                        depth = upper;
                        grad_entry = Some((state_idx(t, i), -1.0));
                    }
                }
                if let Some(entry) = grad_entry {
                    known_ineq.push(IneqInfo { grad: vec![entry], value: depth });
                }
            }
        }

        let mut unknown = Vec::new();
        let mut obstacle_groups = Vec::new();
        for (bi, block) in model.blocks.iter().enumerate() {
            let points = model.constraint_points(bi, traj, dynamics);
            for obs in 0..block.n_obs {
                let facets = model.obstacle_facets(bi, obs);
                for (t, kappa) in &points {
                    let mut group = Vec::new();
                    for facet in &facets {
                        let grad = match block.phi {
                            PhiKind::StateProjection => {
                                vec![(state_idx(*t, facet.kappa_dim), facet.kappa_grad_sign())]
                            }
                            PhiKind::Identity => {
                                vec![(state_idx(*t, facet.kappa_dim), facet.kappa_grad_sign())]
                            }
                            PhiKind::ControlNormSquared => traj.controls[*t]
                                .iter()
                                .enumerate()
                                .map(|(i, &v)| (control_idx(*t, i), 2.0 * v * facet.kappa_grad_sign()))
                                .collect(),
                        };
                        group.push(unknown.len());
                        unknown.push(UnknownIneq {
                            facet: *facet,
                            timestep: *t,
                            grad,
                            kappa: kappa[facet.kappa_dim],
                        });
                    }
                    obstacle_groups.push(group);
                }
            }
        }

        KktSystem {
            zdim,
            cost_grad,
            eq_rows,
            eq_values,
            known_ineq,
            unknown,
            obstacle_groups,
            cache: RefCell::new(HashMap::new()),
        }
    }

    /// Worst-case primal residual over a theta box: equality violations, known
    /// inequality violations, and the deepest robust obstacle penetration
    /// (evaluated at the extremal corner; offsets are monotone per facet).
    pub fn primal_robust(&self, theta_box: &AxisBox) -> f64 {
        let mut primal = 0.0f64;
        for v in &self.eq_values {
            primal = primal.max(v.abs());
        }
        for c in &self.known_ineq {
            primal = primal.max(c.value);
        }
        for group in &self.obstacle_groups {
            let depth = group
                .iter()
                .map(|&i| self.unknown[i].max_over(theta_box))
                .fold(f64::INFINITY, f64::min);
            primal = primal.max(depth);
        }
        primal.max(0.0)
    }

    /// Minimum achievable max of comp-slack and stationarity residuals over
    /// multipliers valid for every theta in the box. Facets whose offset varies
    /// over the box are excluded (their multiplier must be zero).
    pub fn dual_residual_robust(&self, theta_box: &AxisBox) -> f64 {
        let (active, key) = self.active_unknowns(theta_box);
        if let Some(&v) = self.cache.borrow().get(&key) {
            return v;
        }
        let v = match self.solve_multiplier_lp(&active) {
            Some((r, _)) => r,
            None => f64::INFINITY,
        };
        self.cache.borrow_mut().insert(key, v);
        v
    }

    /// As [`dual_residual_robust`] but also returning the witnessing multipliers.
    pub fn solve_robust(&self, theta_box: &AxisBox) -> (f64, Multipliers) {
        let (active, _) = self.active_unknowns(theta_box);
        match self.solve_multiplier_lp(&active) {
            Some((r, m)) => (r, m),
            None => (f64::INFINITY, Multipliers::zeros(self)),
        }
    }

    /// Unknown facets allowed to carry a multiplier over this box: the theta
    /// coordinate must be pinned (degenerate in the box). Returns the weight
    /// `|a|` each candidate pays in complementary slackness.
    fn active_unknowns(&self, theta_box: &AxisBox) -> (Vec<(usize, f64)>, CacheKey) {
        let mut active = Vec::new();
        let mut key = Vec::new();
        for (i, u) in self.unknown.iter().enumerate() {
            let c = u.facet.theta_coord;
            if theta_box.width(c) <= MEMBERSHIP_TOL {
                let w = (u.kappa - theta_box.lo()[c]).abs();
                active.push((i, w));
                key.push((i, w.to_bits()));
            }
        }
        (active, key)
    }

    /// min-max LP over multipliers: comp-slack rows `m_i * w_i <= r` and
    /// stationarity rows `|grad_c + sum m_i grad_i|_j <= r`.
    fn solve_multiplier_lp(&self, active_unknowns: &[(usize, f64)]) -> Option<(f64, Multipliers)> {
        let n_known = self.known_ineq.len();
        let n_active = active_unknowns.len();
        let n_eq = self.eq_rows.len();
        let n = n_known + n_active + n_eq + 1;
        let r_var = n - 1;
        let mut lp = LinearProgram::new(n);
        for i in 0..n_eq {
            lp.free[n_known + n_active + i] = true;
        }
        lp.objective[r_var] = 1.0;

        // comp-slack rows
        for (i, c) in self.known_ineq.iter().enumerate() {
            lp.add_row(vec![(i, c.value.abs()), (r_var, -1.0)], Relation::Le, 0.0);
        }
        for (j, &(_, w)) in active_unknowns.iter().enumerate() {
            lp.add_row(vec![(n_known + j, w), (r_var, -1.0)], Relation::Le, 0.0);
        }

        // stationarity rows (two per z coordinate)
        let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.zdim];
        for (i, c) in self.known_ineq.iter().enumerate() {
            for &(z, g) in &c.grad {
                columns[z].push((i, g));
            }
        }
        for (j, &(ui, _)) in active_unknowns.iter().enumerate() {
            for &(z, g) in &self.unknown[ui].grad {
                columns[z].push((n_known + j, g));
            }
        }
        for (e, row) in self.eq_rows.iter().enumerate() {
            for &(z, g) in row {
                columns[z].push((n_known + n_active + e, g));
            }
        }
        for z in 0..self.zdim {
            let base = self.cost_grad[z];
            let mut pos = columns[z].clone();
            pos.push((r_var, -1.0));
            lp.add_row(pos, Relation::Le, -base);
            let mut neg: Vec<(usize, f64)> =
                columns[z].iter().map(|&(v, g)| (v, -g)).collect();
            neg.push((r_var, -1.0));
            lp.add_row(neg, Relation::Le, base);
        }

        match lp.solve() {
            LpStatus::Optimal { x, value } => {
                let mut m = Multipliers::zeros(self);
                m.known_ineq.copy_from_slice(&x[..n_known]);
                for (j, &(ui, _)) in active_unknowns.iter().enumerate() {
                    m.unknown_ineq[ui] = x[n_known + j];
                }
                for e in 0..n_eq {
                    m.known_eq[e] = x[n_known + n_active + e];
                }
                Some((value, m))
            }
            _ => None,
        }
    }

    /// Stationarity vector `grad c + sum m grad` for given multipliers.
    pub fn stationarity_vector(&self, mult: &Multipliers) -> Vec<f64> {
        let mut v = self.cost_grad.clone();
        for (c, &m) in self.known_ineq.iter().zip(&mult.known_ineq) {
            if m != 0.0 {
                for &(z, g) in &c.grad {
                    v[z] += m * g;
                }
            }
        }
        for (u, &m) in self.unknown.iter().zip(&mult.unknown_ineq) {
            if m != 0.0 {
                for &(z, g) in &u.grad {
                    v[z] += m * g;
                }
            }
        }
        for (row, &m) in self.eq_rows.iter().zip(&mult.known_eq) {
            if m != 0.0 {
                for &(z, g) in row {
                    v[z] += m * g;
                }
            }
        }
        v
    }
}

/// Evaluates the KKT residuals of a trajectory for given `theta` and multipliers.
pub fn kkt_residuals(
    traj: &Trajectory,
    theta: &[f64],
    mult: &Multipliers,
    task: &Task,
    model: &ConstraintModel,
    delta_kkt: f64,
) -> KktReport {
    let sys = KktSystem::build(traj, task, model);
    kkt_residuals_with(&sys, theta, mult, delta_kkt)
}

pub(crate) fn kkt_residuals_with(
    sys: &KktSystem,
    theta: &[f64],
    mult: &Multipliers,
    delta_kkt: f64,
) -> KktReport {
    let point = AxisBox::singleton(theta);
    let primal = sys.primal_robust(&point);

    let mut comp = 0.0f64;
    for (c, &m) in sys.known_ineq.iter().zip(&mult.known_ineq) {
        comp = comp.max((m * c.value).abs());
    }
    for (u, &m) in sys.unknown.iter().zip(&mult.unknown_ineq) {
        comp = comp.max((m * u.value_at(theta)).abs());
    }

    let stationarity = sys
        .stationarity_vector(mult)
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));

    let consistent = primal <= delta_kkt && comp <= delta_kkt && stationarity <= delta_kkt;
    KktReport {
        primal_residual: primal,
        comp_slack_residual: comp,
        stationarity_residual: stationarity,
        consistent,
    }
}

/// Searches for multipliers certifying local optimality of `traj` at `theta`.
/// Returns the verdict at tolerance `delta_kkt` and the best multipliers found.
pub fn certify_local_opt(
    traj: &Trajectory,
    theta: &[f64],
    task: &Task,
    model: &ConstraintModel,
    delta_kkt: f64,
) -> (bool, Multipliers) {
    let sys = KktSystem::build(traj, task, model);
    let point = AxisBox::singleton(theta);
    let primal = sys.primal_robust(&point);
    let (dual, mult) = sys.solve_robust(&point);
    (primal.max(dual) <= delta_kkt, mult)
}

/// True iff a single multiplier set makes all demos KKT-consistent for every
/// theta in `theta_box`.
pub fn robust_box_consistent(
    theta_box: &AxisBox,
    demos: &[Trajectory],
    task: &Task,
    model: &ConstraintModel,
    delta_kkt: f64,
) -> bool {
    demos.iter().all(|d| {
        let sys = KktSystem::build(d, task, model);
        sys.primal_robust(theta_box) <= delta_kkt
            && sys.dual_residual_robust(theta_box) <= delta_kkt
    })
}

/// Knobs for [`synthesize_demo`]'s penalty refinement. The KKT relaxation
/// weights are not fixed anywhere authoritative, so they are all configurable.
#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    pub tol: f64,
    pub max_outer: usize,
    pub penalty_growth: f64,
    pub initial_penalty: f64,
    pub max_inner: usize,
    pub lattice_cells: usize,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_DELTA_KKT,
            max_outer: 50,
            penalty_growth: 10.0,
            initial_penalty: 10.0,
            max_inner: 400,
            lattice_cells: 12,
            seed: 0,
        }
    }
}

/// Produces a locally-optimal demonstration for the task under `theta_true`:
/// a lattice path seeds an augmented-Lagrangian refinement over the controls
/// until [`certify_local_opt`] accepts the result at `cfg.tol`.
pub fn synthesize_demo(
    task: &Task,
    model: &ConstraintModel,
    theta_true: &[f64],
    cfg: &SynthesisConfig,
) -> Result<Trajectory, SynthesisError> {
    let dynamics = &task.dynamics;
    let theta_point = AxisBox::singleton(theta_true);
    let forbidden = Forbidden::from_model(model, &theta_point);

    let seed_traj = seed_trajectory(task, model, &forbidden, cfg)?;
    let mut controls: Vec<f64> = seed_traj.controls.iter().flatten().copied().collect();
    let horizon = task.horizon;

    let refiner = Refiner { task, model, theta: theta_true };
    let nx = dynamics.state_dim();
    let mut y_goal = vec![0.0; nx];
    let mut y_ineq: Vec<f64> = Vec::new();
    let mut rho = cfg.initial_penalty;
    let mut best_residual = f64::INFINITY;

    for _outer in 0..cfg.max_outer {
        refiner.minimize(&mut controls, &y_goal, &mut y_ineq, rho, cfg);
        let traj = refiner.traj(&controls);
        let (ok, _) = certify_local_opt(&traj, theta_true, task, model, cfg.tol);
        if ok {
            return Ok(traj);
        }
        let sys = KktSystem::build(&traj, task, model);
        let primal = sys.primal_robust(&theta_point);
        let dual = sys.dual_residual_robust(&theta_point);
        best_residual = best_residual.min(primal.max(dual));
        // multiplier updates
        let xf = &traj.states[horizon - 1];
        for i in 0..nx {
            y_goal[i] += rho * (xf[i] - task.xg[i]);
        }
        let g = refiner.ineq_values(&traj);
        if y_ineq.len() != g.len() {
            y_ineq = vec![0.0; g.len()];
        }
        for (y, gi) in y_ineq.iter_mut().zip(&g) {
            *y = (*y + rho * gi).max(0.0);
        }
        rho = (rho * cfg.penalty_growth).min(1e12);
    }
    Err(SynthesisError::NonConvergence { residual: best_residual, outer: cfg.max_outer })
}

fn seed_trajectory(
    task: &Task,
    model: &ConstraintModel,
    forbidden: &Forbidden,
    cfg: &SynthesisConfig,
) -> Result<Trajectory, SynthesisError> {
    // straight-line seed when it is collision-free, otherwise a lattice path
    let dynamics = &task.dynamics;
    let horizon = task.horizon;
    let nu = dynamics.control_dim();
    let straight: Vec<Vec<f64>> = match dynamics.kind {
        DynKind::SingleIntegrator => (0..horizon - 1)
            .map(|_| {
                (0..nu)
                    .map(|i| (task.xg[i] - task.x0[i]) / ((horizon - 1) as f64 * dynamics.dt))
                    .collect()
            })
            .collect(),
        DynKind::DoubleIntegrator => vec![vec![0.0; nu]; horizon - 1],
    };
    let clipped: Vec<Vec<f64>> = straight
        .iter()
        .map(|u| {
            u.iter()
                .enumerate()
                .map(|(i, v)| {
                    v.clamp(dynamics.control_bounds.lo()[i], dynamics.control_bounds.hi()[i])
                })
                .collect()
        })
        .collect();
    if let Ok(traj) = crate::scenario::rollout(dynamics, &task.x0, &clipped) {
        if forbidden.trajectory_clear(&traj, task, model) && dynamics.kind == DynKind::SingleIntegrator
        {
            return Ok(traj);
        }
    }
    let lattice = Lattice::regular(task, cfg.lattice_cells);
    match lattice_plan(task, model, forbidden, &lattice) {
        Ok(traj) => Ok(traj),
        Err(e) => Err(SynthesisError::Infeasible(e.to_string())),
    }
}

struct Refiner<'a> {
    task: &'a Task,
    model: &'a ConstraintModel,
    theta: &'a [f64],
}

impl<'a> Refiner<'a> {
    fn traj(&self, controls_flat: &[f64]) -> Trajectory {
        let dynamics = &self.task.dynamics;
        let nu = dynamics.control_dim();
        let controls: Vec<Vec<f64>> = controls_flat.chunks(nu).map(|c| c.to_vec()).collect();
        let mut states = vec![self.task.x0.clone()];
        for u in &controls {
            let next = dynamics.step(states.last().unwrap(), u);
            states.push(next);
        }
        Trajectory { states, controls }
    }

    /// All penalized inequality values: state bounds, obstacle depths
    /// (known and unknown at the fixed theta).
    fn ineq_values(&self, traj: &Trajectory) -> Vec<f64> {
        let dynamics = &self.task.dynamics;
        let nx = dynamics.state_dim();
        let mut g = Vec::new();
        for x in &traj.states {
            for i in 0..nx {
                g.push(x[i] - dynamics.state_bounds.hi()[i]);
                g.push(dynamics.state_bounds.lo()[i] - x[i]);
            }
        }
        for x in &traj.states {
            let pos = dynamics.position(x);
            for b in self.task.known_unsafe.boxes() {
                g.push(box_depth(b.lo(), b.hi(), pos));
            }
        }
        for (bi, block) in self.model.blocks.iter().enumerate() {
            let points = self.model.constraint_points(bi, traj, dynamics);
            for obs in 0..block.n_obs {
                for (_, kappa) in &points {
                    g.push(self.model.obstacle_g(bi, obs, kappa, self.theta));
                }
            }
        }
        g
    }

    fn objective(&self, controls: &[f64], y_goal: &[f64], y_ineq: &[f64], rho: f64) -> f64 {
        let traj = self.traj(controls);
        let mut obj = self.task.cost_of(&traj);
        let xf = traj.states.last().unwrap();
        for (i, y) in y_goal.iter().enumerate() {
            let h = xf[i] - self.task.xg[i];
            obj += y * h + 0.5 * rho * h * h;
        }
        let g = self.ineq_values(&traj);
        for (gi, y) in g.iter().zip(y_ineq.iter().chain(std::iter::repeat(&0.0))) {
            let t = (y + rho * gi).max(0.0);
            obj += (t * t - y * y) / (2.0 * rho);
        }
        obj
    }

    fn gradient(&self, controls: &[f64], y_goal: &[f64], y_ineq: &[f64], rho: f64) -> Vec<f64> {
        // central differences over controls; dimensions are small at desk scale
        let h = 1e-6;
        let mut grad = vec![0.0; controls.len()];
        let mut work = controls.to_vec();
        for i in 0..controls.len() {
            work[i] = controls[i] + h;
            let plus = self.objective(&work, y_goal, y_ineq, rho);
            work[i] = controls[i] - h;
            let minus = self.objective(&work, y_goal, y_ineq, rho);
            work[i] = controls[i];
            grad[i] = (plus - minus) / (2.0 * h);
        }
        grad
    }

    fn minimize(
        &self,
        controls: &mut Vec<f64>,
        y_goal: &[f64],
        y_ineq: &mut Vec<f64>,
        rho: f64,
        cfg: &SynthesisConfig,
    ) {
        let dynamics = &self.task.dynamics;
        let nu = dynamics.control_dim();
        let g0 = self.ineq_values(&self.traj(controls));
        if y_ineq.len() != g0.len() {
            *y_ineq = vec![0.0; g0.len()];
        }
        let project = |u: &mut Vec<f64>| {
            for (i, v) in u.iter_mut().enumerate() {
                let d = i % nu;
                *v = v.clamp(dynamics.control_bounds.lo()[d], dynamics.control_bounds.hi()[d]);
            }
        };
        project(controls);
        let mut step = 0.1;
        for _ in 0..cfg.max_inner {
            let grad = self.gradient(controls, y_goal, y_ineq, rho);
            let gnorm = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if gnorm < cfg.tol * 0.05 {
                break;
            }
            let f0 = self.objective(controls, y_goal, y_ineq, rho);
            let mut accepted = false;
            let mut alpha = step;
            for _ in 0..40 {
                let mut cand: Vec<f64> =
                    controls.iter().zip(&grad).map(|(u, g)| u - alpha * g).collect();
                project(&mut cand);
                let f = self.objective(&cand, y_goal, y_ineq, rho);
                if f < f0 - 1e-12 {
                    *controls = cand;
                    step = (alpha * 1.5).min(1.0);
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
    }
}

/// Depth of `p` inside the closed box `[lo, hi]` (positive inside).
fn box_depth(lo: &[f64], hi: &[f64], p: &[f64]) -> f64 {
    lo.iter()
        .zip(hi)
        .zip(p)
        .map(|((l, h), x)| (x - l).min(h - x))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxUnion;
    use crate::scenario::ModelBlock;

    fn kinematic_task(x0: Vec<f64>, xg: Vec<f64>, horizon: usize) -> Task {
        let wd = x0.len();
        Task {
            dynamics: Dynamics {
                kind: DynKind::SingleIntegrator,
                workspace_dim: wd,
                dt: 1.0,
                state_bounds: AxisBox::new(vec![-10.0; wd], vec![10.0; wd]).unwrap(),
                control_bounds: AxisBox::new(vec![-5.0; wd], vec![5.0; wd]).unwrap(),
            },
            horizon,
            cost: CostKind::SumSquaredControl,
            x0,
            xg,
            known_unsafe: BoxUnion::empty(wd),
        }
    }

    fn obstacle_model_2d(prior: AxisBox) -> ConstraintModel {
        let block = ModelBlock {
            phi: PhiKind::StateProjection,
            kdim: 2,
            n_obs: 1,
            theta_offset: 0,
            c_bounds: AxisBox::new(vec![-10.0, -10.0], vec![10.0, 10.0]).unwrap(),
        };
        ConstraintModel::new(vec![block], prior).unwrap()
    }

    #[test]
    fn stationary_task_all_residuals_zero() {
        let task = kinematic_task(vec![1.0, 1.0], vec![1.0, 1.0], 4);
        let model = obstacle_model_2d(AxisBox::new(vec![2.0; 4], vec![3.0; 4]).unwrap());
        let traj = crate::scenario::rollout(&task.dynamics, &task.x0, &vec![vec![0.0, 0.0]; 3])
            .unwrap();
        let sys = KktSystem::build(&traj, &task, &model);
        let mult = Multipliers::zeros(&sys);
        let theta = [5.0, 6.0, 5.0, 6.0];
        let report = kkt_residuals(&traj, &theta, &mult, &task, &model, 1e-6);
        assert_eq!(report.primal_residual, 0.0);
        assert_eq!(report.comp_slack_residual, 0.0);
        assert_eq!(report.stationarity_residual, 0.0);
        assert!(report.consistent);
    }

    #[test]
    fn infeasible_theta_shows_in_primal() {
        let task = kinematic_task(vec![0.0, 0.0], vec![2.0, 0.0], 3);
        let model = obstacle_model_2d(AxisBox::new(vec![-1.0; 4], vec![3.0; 4]).unwrap());
        let traj =
            crate::scenario::rollout(&task.dynamics, &task.x0, &vec![vec![1.0, 0.0]; 2]).unwrap();
        // obstacle [0.8, 1.4] x [-0.2, 0.3] swallows the middle point (1, 0) by 0.2
        let theta = [0.8, 1.4, -0.2, 0.3];
        let sys = KktSystem::build(&traj, &task, &model);
        let mult = Multipliers::zeros(&sys);
        let report = kkt_residuals(&traj, &theta, &mult, &task, &model, 1e-6);
        assert!((report.primal_residual - 0.2).abs() < 1e-9, "{report:?}");
        let (ok, m) = certify_local_opt(&traj, &theta, &task, &model, 1e-6);
        assert!(!ok);
        let rep = kkt_residuals(&traj, &theta, &m, &task, &model, 1e-6);
        assert!(rep.primal_residual > 1e-6);
    }

    #[test]
    fn straight_line_demo_certifies() {
        let task = kinematic_task(vec![0.0, 0.0], vec![3.0, 0.0], 4);
        let model = obstacle_model_2d(AxisBox::new(vec![5.0; 4], vec![6.0; 4]).unwrap());
        let traj =
            crate::scenario::rollout(&task.dynamics, &task.x0, &vec![vec![1.0, 0.0]; 3]).unwrap();
        let (ok, mult) = certify_local_opt(&traj, &[5.0, 6.0, 5.0, 6.0], &task, &model, 1e-6);
        assert!(ok);
        let report = kkt_residuals(&traj, &[5.0, 6.0, 5.0, 6.0], &mult, &task, &model, 1e-6);
        assert!(report.consistent, "{report:?}");
    }

    #[test]
    fn perturbed_demo_fails_certification() {
        let task = kinematic_task(vec![0.0, 0.0], vec![3.0, 0.0], 4);
        let model = obstacle_model_2d(AxisBox::new(vec![5.0; 4], vec![6.0; 4]).unwrap());
        // interior states perturbed by 0.1, controls re-derived so dynamics hold
        let states = vec![
            vec![0.0, 0.0],
            vec![1.1, -0.1],
            vec![1.9, 0.1],
            vec![3.0, 0.0],
        ];
        let controls: Vec<Vec<f64>> = states
            .windows(2)
            .map(|w| (0..2).map(|i| w[1][i] - w[0][i]).collect())
            .collect();
        let traj = Trajectory { states, controls };
        traj.validate(&task.dynamics).unwrap();
        let (ok, _) = certify_local_opt(&traj, &[5.0, 6.0, 5.0, 6.0], &task, &model, 1e-6);
        assert!(!ok);
    }

    #[test]
    fn stationarity_gradient_matches_finite_differences() {
        // the stationarity vector must equal the numeric gradient of the
        // Lagrangian in (states, controls) for fixed multipliers
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let cost = if trial % 2 == 0 {
                CostKind::SumSquaredControl
            } else {
                CostKind::PathLength
            };
            let mut task = kinematic_task(vec![0.0, 0.0], vec![2.0, 1.0], 4);
            task.cost = cost;
            let model = obstacle_model_2d(AxisBox::new(vec![-8.0; 4], vec![8.0; 4]).unwrap());
            let controls: Vec<Vec<f64>> = (0..3)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let traj = crate::scenario::rollout(&task.dynamics, &task.x0, &controls).unwrap();
            let theta: Vec<f64> = vec![
                rng.gen_range(-8.0..0.0),
                rng.gen_range(0.5..8.0),
                rng.gen_range(-8.0..0.0),
                rng.gen_range(0.5..8.0),
            ];
            let sys = KktSystem::build(&traj, &task, &model);
            let mut mult = Multipliers::zeros(&sys);
            for v in mult.known_eq.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            for v in mult.unknown_ineq.iter_mut() {
                *v = rng.gen_range(0.0..1.0);
            }
            let analytic = sys.stationarity_vector(&mult);

            // numeric differentiation of the Lagrangian in flattened z
            let nx = 2;
            let nu = 2;
            let horizon = 4;
            let lagrangian = |z: &[f64]| -> f64 {
                let states: Vec<Vec<f64>> =
                    (0..horizon).map(|t| z[t * nx..(t + 1) * nx].to_vec()).collect();
                let controls: Vec<Vec<f64>> = (0..horizon - 1)
                    .map(|t| {
                        z[horizon * nx + t * nu..horizon * nx + (t + 1) * nu].to_vec()
                    })
                    .collect();
                let t2 = Trajectory { states, controls };
                let mut val = task.cost_of(&t2);
                let s2 = KktSystem::build(&t2, &task, &model);
                for (c, &m) in s2.known_ineq.iter().zip(&mult.known_ineq) {
                    val += m * c.value;
                }
                for (u, &m) in s2.unknown.iter().zip(&mult.unknown_ineq) {
                    val += m * u.value_at(&theta);
                }
                for (h, &m) in s2.eq_values.iter().zip(&mult.known_eq) {
                    val += m * h;
                }
                val
            };
            let mut z: Vec<f64> = traj.states.iter().flatten().copied().collect();
            z.extend(traj.controls.iter().flatten().copied());
            let h = 1e-6;
            for i in 0..z.len() {
                let orig = z[i];
                z[i] = orig + h;
                let plus = lagrangian(&z);
                z[i] = orig - h;
                let minus = lagrangian(&z);
                z[i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                assert!(
                    (numeric - analytic[i]).abs() < 1e-5,
                    "coord {i}: numeric {numeric} vs analytic {} (cost {cost:?})",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn scalar_bound_inactive_demo_is_robustly_consistent() {
        // demo max ||u||^2 = 97.85 with the bound inactive: the whole interval
        // [97.85, 100] must be robustly consistent
        let u_val = 97.85f64.sqrt();
        let task = Task {
            dynamics: Dynamics {
                kind: DynKind::SingleIntegrator,
                workspace_dim: 1,
                dt: 1.0,
                state_bounds: AxisBox::new(vec![-100.0], vec![100.0]).unwrap(),
                control_bounds: AxisBox::new(vec![-12.0], vec![12.0]).unwrap(),
            },
            horizon: 3,
            cost: CostKind::SumSquaredControl,
            x0: vec![0.0],
            xg: vec![2.0 * u_val],
            known_unsafe: BoxUnion::empty(1),
        };
        let block = ModelBlock {
            phi: PhiKind::ControlNormSquared,
            kdim: 1,
            n_obs: 1,
            theta_offset: 0,
            c_bounds: AxisBox::new(vec![0.0], vec![144.0]).unwrap(),
        };
        let model =
            ConstraintModel::new(vec![block], AxisBox::new(vec![0.0], vec![100.0]).unwrap())
                .unwrap();
        let traj =
            crate::scenario::rollout(&task.dynamics, &[0.0], &vec![vec![u_val]; 2]).unwrap();
        let demos = [traj];
        let whole = AxisBox::new(vec![97.85], vec![100.0]).unwrap();
        assert!(robust_box_consistent(&whole, &demos, &task, &model, 1e-6));
        // a box dipping below the demo's max is primal-infeasible
        let low = AxisBox::new(vec![90.0], vec![100.0]).unwrap();
        assert!(!robust_box_consistent(&low, &demos, &task, &model, 1e-6));
    }

    #[test]
    fn singleton_box_equals_certify() {
        use rand::{Rng, SeedableRng};
        let task = kinematic_task(vec![0.0, 0.0], vec![3.0, 0.0], 4);
        let model = obstacle_model_2d(AxisBox::new(vec![-4.0; 4], vec![4.0; 4]).unwrap());
        let traj =
            crate::scenario::rollout(&task.dynamics, &task.x0, &vec![vec![1.0, 0.0]; 3]).unwrap();
        let demos = [traj.clone()];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let (cert, _) = certify_local_opt(&traj, &theta, &task, &model, 1e-6);
            let robust = robust_box_consistent(
                &AxisBox::singleton(&theta),
                &demos,
                &task,
                &model,
                1e-6,
            );
            assert_eq!(cert, robust, "theta {theta:?}");
        }
    }

    #[test]
    fn robust_consistency_is_monotone_under_shrinking() {
        use rand::{Rng, SeedableRng};
        let u_val = 2.0f64;
        let task = Task {
            dynamics: Dynamics {
                kind: DynKind::SingleIntegrator,
                workspace_dim: 1,
                dt: 1.0,
                state_bounds: AxisBox::new(vec![-100.0], vec![100.0]).unwrap(),
                control_bounds: AxisBox::new(vec![-12.0], vec![12.0]).unwrap(),
            },
            horizon: 3,
            cost: CostKind::SumSquaredControl,
            x0: vec![0.0],
            xg: vec![2.0 * u_val],
            known_unsafe: BoxUnion::empty(1),
        };
        let block = ModelBlock {
            phi: PhiKind::ControlNormSquared,
            kdim: 1,
            n_obs: 1,
            theta_offset: 0,
            c_bounds: AxisBox::new(vec![0.0], vec![144.0]).unwrap(),
        };
        let model =
            ConstraintModel::new(vec![block], AxisBox::new(vec![0.0], vec![20.0]).unwrap())
                .unwrap();
        let traj =
            crate::scenario::rollout(&task.dynamics, &[0.0], &vec![vec![u_val]; 2]).unwrap();
        let demos = [traj];
        let parent = AxisBox::new(vec![4.0], vec![20.0]).unwrap();
        assert!(robust_box_consistent(&parent, &demos, &task, &model, 1e-6));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = rng.gen_range(4.0..20.0);
            let b = rng.gen_range(a..20.0);
            let child = AxisBox::new(vec![a], vec![b]).unwrap();
            assert!(robust_box_consistent(&child, &demos, &task, &model, 1e-6));
        }
    }
}
