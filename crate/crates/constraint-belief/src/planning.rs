//! Open-loop planners.
//!
//! A time-indexed lattice search stands in for a trajectory optimizer: it is
//! optimal on the lattice and honors forbidden regions by sampling every edge
//! at half-resolution spacing. On top of it sit the chance-constrained
//! planner (greedy accumulation of belief-support boxes), its epsilon-min and
//! cost/safety-ratio variants, and the guaranteed-safe / scenario / optimistic
//! baselines.

use crate::belief::Belief;
use crate::extraction::{ExtractionResult, GuaranteedSets};
use crate::geometry::{AxisBox, BoxUnion};
use crate::scenario::{ConstraintModel, DynKind, PhiKind, Task, Trajectory, TAU_STRICT};
use ordered_float::NotNan;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("belief has no probability mass")]
    EmptyBelief,
}

/// Forbidden constraint-space regions, one union per model block.
#[derive(Debug, Clone)]
pub struct Forbidden {
    pub per_block: Vec<BoxUnion>,
}

impl Forbidden {
    pub fn empty(model: &ConstraintModel) -> Self {
        Self {
            per_block: model.blocks.iter().map(|b| BoxUnion::empty(b.kdim)).collect(),
        }
    }

    /// The unsafe regions induced by every theta in `theta_box`.
    pub fn from_model(model: &ConstraintModel, theta_box: &AxisBox) -> Self {
        Self { per_block: model.unsafe_regions(theta_box) }
    }

    /// Union of the unsafe regions of several theta boxes.
    pub fn from_theta_boxes(model: &ConstraintModel, boxes: &[AxisBox]) -> Self {
        let mut f = Self::empty(model);
        for b in boxes {
            f.add_theta_box(model, b);
        }
        f
    }

    pub fn add_theta_box(&mut self, model: &ConstraintModel, theta_box: &AxisBox) {
        for (bi, region) in model.unsafe_regions(theta_box).into_iter().enumerate() {
            self.merge_block(bi, region);
        }
    }

    pub fn merge(&mut self, other: &Forbidden) {
        for (bi, region) in other.per_block.iter().enumerate() {
            self.merge_block(bi, region.clone());
        }
    }

    fn merge_block(&mut self, block: usize, region: BoxUnion) {
        let mut all: Vec<AxisBox> = self.per_block[block].boxes().to_vec();
        all.extend(region.boxes().iter().cloned());
        self.per_block[block] = BoxUnion::from_overlapping(self.per_block[block].dim(), &all);
    }

    /// True if the point is strictly inside some forbidden box of the block.
    pub fn point_blocked(&self, block: usize, kappa: &[f64]) -> bool {
        strictly_inside_any(&self.per_block[block], kappa)
    }

    /// Edge-sampled clearance of a whole trajectory, including the task's
    /// known unsafe set.
    pub fn trajectory_clear(&self, traj: &Trajectory, task: &Task, model: &ConstraintModel) -> bool {
        let spacing = default_spacing(task);
        trajectory_clear_sampled(self, traj, task, model, spacing)
    }
}

fn default_spacing(task: &Task) -> f64 {
    let d = task.dynamics.workspace_dim;
    let span: f64 = (0..d)
        .map(|i| task.dynamics.state_bounds.hi()[i] - task.dynamics.state_bounds.lo()[i])
        .fold(f64::INFINITY, f64::min);
    span / 64.0
}

fn strictly_inside_any(union: &BoxUnion, p: &[f64]) -> bool {
    union.boxes().iter().any(|b| {
        b.lo()
            .iter()
            .zip(b.hi())
            .zip(p)
            .all(|((l, h), x)| *x > l + TAU_STRICT && *x < h - TAU_STRICT)
    })
}

pub(crate) fn trajectory_clear_sampled(
    forbidden: &Forbidden,
    traj: &Trajectory,
    task: &Task,
    model: &ConstraintModel,
    spacing: f64,
) -> bool {
    let dynamics = &task.dynamics;
    for w in traj.states.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let len: f64 = (0..dynamics.workspace_dim)
            .map(|i| (b[i] - a[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        let n = ((len / spacing).ceil() as usize).max(1);
        for s in 0..=n {
            let frac = s as f64 / n as f64;
            let x: Vec<f64> = a.iter().zip(b).map(|(p, q)| p + frac * (q - p)).collect();
            let pos = dynamics.position(&x);
            if strictly_inside_any(&task.known_unsafe, pos) {
                return false;
            }
            for (bi, block) in model.blocks.iter().enumerate() {
                match block.phi {
                    PhiKind::StateProjection => {
                        if forbidden.point_blocked(bi, pos) {
                            return false;
                        }
                    }
                    PhiKind::Identity => {
                        if forbidden.point_blocked(bi, &x) {
                            return false;
                        }
                    }
                    PhiKind::ControlNormSquared => {}
                }
            }
        }
    }
    for (bi, block) in model.blocks.iter().enumerate() {
        if block.phi == PhiKind::ControlNormSquared {
            for u in &traj.controls {
                let k = [u.iter().map(|v| v * v).sum::<f64>()];
                if forbidden.point_blocked(bi, &k) {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Axis,
    AxisDiagonal,
}

/// A regular grid over workspace positions with motion primitives matching the
/// task dynamics. Double-integrator nodes carry quantized velocity levels so
/// every primitive lands back on the grid.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub resolution: Vec<f64>,
    pub origin: Vec<f64>,
    pub connectivity: Connectivity,
    /// Velocity levels per dimension for double-integrator lattices
    /// (level `l` means velocity `l * resolution / dt`).
    pub vel_levels: i64,
    /// Edge sample spacing as a fraction of the smallest resolution.
    pub sample_fraction: f64,
}

impl Lattice {
    pub fn regular(task: &Task, cells: usize) -> Self {
        let d = task.dynamics.workspace_dim;
        let resolution: Vec<f64> = (0..d)
            .map(|i| {
                (task.dynamics.state_bounds.hi()[i] - task.dynamics.state_bounds.lo()[i])
                    / cells as f64
            })
            .collect();
        Self {
            resolution,
            origin: task.dynamics.state_bounds.lo()[..d].to_vec(),
            connectivity: Connectivity::AxisDiagonal,
            vel_levels: 2,
            sample_fraction: 0.5,
        }
    }

    pub fn snap_position(&self, p: &[f64]) -> Vec<i64> {
        p.iter()
            .zip(&self.origin)
            .zip(&self.resolution)
            .map(|((x, o), r)| ((x - o) / r).round() as i64)
            .collect()
    }

    pub fn position_of(&self, idx: &[i64]) -> Vec<f64> {
        idx.iter()
            .zip(&self.origin)
            .zip(&self.resolution)
            .map(|((i, o), r)| o + *i as f64 * r)
            .collect()
    }

    /// Distance from a point to its snapped lattice position.
    pub fn snap_distance(&self, p: &[f64]) -> f64 {
        let snapped = self.position_of(&self.snap_position(p));
        p.iter()
            .zip(&snapped)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn moves(&self, d: usize) -> Vec<Vec<i64>> {
        let mut out = vec![vec![0; d]];
        let mut stack = vec![vec![]];
        while let Some(prefix) = stack.pop() {
            if prefix.len() == d {
                if prefix.iter().any(|&v: &i64| v != 0) {
                    out.push(prefix);
                }
                continue;
            }
            for v in [-1i64, 0, 1] {
                let mut next = prefix.clone();
                next.push(v);
                stack.push(next);
            }
        }
        out.retain(|m| {
            let nonzero = m.iter().filter(|&&v| v != 0).count();
            match self.connectivity {
                Connectivity::Axis => nonzero <= 1,
                Connectivity::AxisDiagonal => true,
            }
        });
        out.sort();
        out
    }

    /// The distinct `||u||^2` values of single-integrator primitives, used as
    /// split candidates for control-norm constraint coordinates.
    pub fn control_kappa_values(&self, task: &Task) -> Vec<f64> {
        let d = task.dynamics.workspace_dim;
        let dt = task.dynamics.dt;
        let mut vals: Vec<f64> = self
            .moves(d)
            .iter()
            .map(|m| {
                m.iter()
                    .zip(&self.resolution)
                    .map(|(k, r)| (*k as f64 * r / dt).powi(2))
                    .sum::<f64>()
            })
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        vals
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Node {
    pos: Vec<i64>,
    vel: Vec<i64>,
}

/// Minimum-cost lattice trajectory from the task start to its goal that avoids
/// the forbidden regions and the known unsafe set, within the task horizon.
/// Start and goal are snapped to the lattice. Dijkstra over (node, timestep),
/// so the result is optimal with respect to the lattice.
pub fn lattice_plan(
    task: &Task,
    model: &ConstraintModel,
    forbidden: &Forbidden,
    lattice: &Lattice,
) -> Result<Trajectory, PlanError> {
    let dynamics = &task.dynamics;
    let d = dynamics.workspace_dim;
    let dt = dynamics.dt;
    let start = Node {
        pos: lattice.snap_position(dynamics.position(&task.x0)),
        vel: match dynamics.kind {
            DynKind::SingleIntegrator => vec![],
            DynKind::DoubleIntegrator => task.x0[d..]
                .iter()
                .zip(&lattice.resolution)
                .map(|(v, r)| (v * dt / r).round() as i64)
                .collect(),
        },
    };
    let goal = Node {
        pos: lattice.snap_position(dynamics.position(&task.xg)),
        vel: match dynamics.kind {
            DynKind::SingleIntegrator => vec![],
            DynKind::DoubleIntegrator => task.xg[d..]
                .iter()
                .zip(&lattice.resolution)
                .map(|(v, r)| (v * dt / r).round() as i64)
                .collect(),
        },
    };

    let state_of = |n: &Node| -> Vec<f64> {
        let mut x = lattice.position_of(&n.pos);
        if dynamics.kind == DynKind::DoubleIntegrator {
            x.extend(n.vel.iter().zip(&lattice.resolution).map(|(l, r)| *l as f64 * r / dt));
        }
        x
    };

    let in_bounds = |n: &Node| -> bool {
        let x = state_of(n);
        dynamics.state_bounds.contains_with_tol(&x, 1e-9)
    };
    if !in_bounds(&start) {
        return Err(PlanError::Infeasible("snapped start is out of bounds".into()));
    }

    let spacing = lattice
        .resolution
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        * lattice.sample_fraction;

    // (control, successor) pairs from a node
    let moves = lattice.moves(d);
    let successors = |n: &Node| -> Vec<(Vec<f64>, Node)> {
        let mut out = Vec::new();
        match dynamics.kind {
            DynKind::SingleIntegrator => {
                for m in &moves {
                    let u: Vec<f64> = m
                        .iter()
                        .zip(&lattice.resolution)
                        .map(|(k, r)| *k as f64 * r / dt)
                        .collect();
                    if !dynamics.control_bounds.contains_with_tol(&u, 1e-9) {
                        continue;
                    }
                    let pos = n.pos.iter().zip(m).map(|(p, k)| p + k).collect();
                    let next = Node { pos, vel: vec![] };
                    if in_bounds(&next) {
                        out.push((u, next));
                    }
                }
            }
            DynKind::DoubleIntegrator => {
                for m in &moves {
                    let u: Vec<f64> = m
                        .iter()
                        .zip(&lattice.resolution)
                        .map(|(k, r)| *k as f64 * r / (dt * dt))
                        .collect();
                    if !dynamics.control_bounds.contains_with_tol(&u, 1e-9) {
                        continue;
                    }
                    let vel: Vec<i64> = n.vel.iter().zip(m).map(|(l, k)| l + k).collect();
                    if vel.iter().any(|l| l.abs() > lattice.vel_levels) {
                        continue;
                    }
                    // Euler: position advances by the current velocity
                    let pos = n.pos.iter().zip(&n.vel).map(|(p, l)| p + l).collect();
                    let next = Node { pos, vel };
                    if in_bounds(&next) {
                        out.push((u, next));
                    }
                }
            }
        }
        out
    };

    let edge_clear = |from: &Node, u: &[f64], to: &Node| -> bool {
        let a = state_of(from);
        let b = state_of(to);
        let edge = Trajectory { states: vec![a, b], controls: vec![u.to_vec()] };
        trajectory_clear_sampled(forbidden, &edge, task, model, spacing)
    };

    let edge_cost = |from: &Node, u: &[f64], to: &Node| -> f64 {
        match task.cost {
            crate::scenario::CostKind::SumSquaredControl => u.iter().map(|v| v * v).sum(),
            crate::scenario::CostKind::PathLength => {
                let a = state_of(from);
                let b = state_of(to);
                (0..d).map(|i| (b[i] - a[i]).powi(2)).sum::<f64>().sqrt()
            }
        }
    };

    // Dijkstra over (node, timestep)
    let mut node_ids: HashMap<Node, usize> = HashMap::new();
    let mut nodes: Vec<Node> = Vec::new();
    let mut id_of = |n: Node, nodes: &mut Vec<Node>, node_ids: &mut HashMap<Node, usize>| -> usize {
        if let Some(&id) = node_ids.get(&n) {
            return id;
        }
        let id = nodes.len();
        node_ids.insert(n.clone(), id);
        nodes.push(n);
        id
    };
    let start_id = id_of(start.clone(), &mut nodes, &mut node_ids);
    let mut best: HashMap<(usize, usize), f64> = HashMap::new();
    let mut parent: HashMap<(usize, usize), (usize, Vec<f64>)> = HashMap::new();
    let mut heap: BinaryHeap<Reverse<(NotNan<f64>, usize, usize)>> = BinaryHeap::new();
    best.insert((start_id, 0), 0.0);
    heap.push(Reverse((NotNan::new(0.0).unwrap(), start_id, 0)));
    let max_t = task.horizon - 1;
    let mut goal_state: Option<(usize, usize)> = None;

    while let Some(Reverse((cost, id, t))) = heap.pop() {
        let cost = cost.into_inner();
        if best.get(&(id, t)).map_or(true, |&c| cost > c + 1e-12) {
            continue;
        }
        if nodes[id] == goal {
            goal_state = Some((id, t));
            break;
        }
        if t == max_t {
            continue;
        }
        let node = nodes[id].clone();
        for (u, next) in successors(&node) {
            if !edge_clear(&node, &u, &next) {
                continue;
            }
            let c = cost + edge_cost(&node, &u, &next);
            let nid = id_of(next, &mut nodes, &mut node_ids);
            let key = (nid, t + 1);
            if best.get(&key).map_or(true, |&old| c < old - 1e-12) {
                best.insert(key, c);
                parent.insert(key, (id, u));
                heap.push(Reverse((NotNan::new(c).unwrap(), nid, t + 1)));
            }
        }
    }

    let Some((gid, gt)) = goal_state else {
        return Err(PlanError::Infeasible(format!(
            "no lattice path to the goal within {} steps",
            max_t
        )));
    };

    // reconstruct and pad with waits to the full horizon
    let mut controls_rev: Vec<Vec<f64>> = Vec::new();
    let mut cursor = (gid, gt);
    while cursor.1 > 0 {
        let (pid, u) = parent[&cursor].clone();
        controls_rev.push(u);
        cursor = (pid, cursor.1 - 1);
    }
    controls_rev.reverse();
    let nu = dynamics.control_dim();
    while controls_rev.len() < task.horizon - 1 {
        controls_rev.push(vec![0.0; nu]);
    }
    let x0 = state_of(&start);
    crate::scenario::rollout(dynamics, &x0, &controls_rev)
        .map_err(|e| PlanError::Infeasible(format!("lattice rollout failed: {e}")))
}

/// An open-loop plan with its probabilistic bookkeeping.
#[derive(Debug, Clone)]
pub struct Plan {
    pub traj: Trajectory,
    pub chosen_boxes: Vec<AxisBox>,
    pub covered_prob: f64,
    pub cost: f64,
    pub epsilon_achieved: f64,
}

/// How many times each atom may be split per dimension when it cannot be
/// honored whole.
pub const K_SPLIT: usize = 2;

struct Atom {
    theta_box: AxisBox,
    mass: f64,
    splits: Vec<usize>,
}

struct GreedyState<'a> {
    belief: &'a Belief,
    task: &'a Task,
    model: &'a ConstraintModel,
    lattice: &'a Lattice,
    committed: Forbidden,
    chosen: Vec<AxisBox>,
    covered: f64,
    current: Option<(Trajectory, f64)>,
    frontier: Vec<Plan>,
}

impl<'a> GreedyState<'a> {
    fn new(
        belief: &'a Belief,
        task: &'a Task,
        model: &'a ConstraintModel,
        lattice: &'a Lattice,
    ) -> Result<Self, PlanError> {
        if belief.is_empty() {
            return Err(PlanError::EmptyBelief);
        }
        Ok(Self {
            belief,
            task,
            model,
            lattice,
            committed: Forbidden::empty(model),
            chosen: Vec::new(),
            covered: 0.0,
            current: None,
            frontier: Vec::new(),
        })
    }

    fn atoms(&self) -> Vec<Atom> {
        let d = self.model.theta_dim();
        let mut atoms: Vec<Atom> = self
            .belief
            .support()
            .boxes()
            .iter()
            .filter(|b| b.volume() > 0.0)
            .map(|b| Atom { theta_box: b.clone(), mass: b.volume(), splits: vec![0; d] })
            .collect();
        sort_atoms(&mut atoms);
        atoms
    }

    fn try_commit(&mut self, atom: &Atom) -> Option<(Trajectory, f64)> {
        let mut candidate = self.committed.clone();
        candidate.add_theta_box(self.model, &atom.theta_box);
        match lattice_plan(self.task, self.model, &candidate, self.lattice) {
            Ok(traj) => {
                let cost = self.task.cost_of(&traj);
                self.committed = candidate;
                self.chosen.push(atom.theta_box.clone());
                self.covered += atom.mass / self.belief.total_volume();
                self.current = Some((traj.clone(), cost));
                self.frontier.push(self.plan());
                Some((traj, cost))
            }
            Err(_) => None,
        }
    }

    /// Split candidate values for a theta coordinate: lattice half-grid
    /// coordinates for spatial facets, primitive control norms for the
    /// control block, midpoint as a fallback.
    fn split_values(&self, coord: usize, interval: (f64, f64)) -> Vec<f64> {
        let mut values = Vec::new();
        for f in self.model.all_facets() {
            if f.theta_coord != coord {
                continue;
            }
            let block = &self.model.blocks[f.block];
            match block.phi {
                PhiKind::StateProjection | PhiKind::Identity => {
                    if f.kappa_dim < self.lattice.resolution.len() {
                        let res = self.lattice.resolution[f.kappa_dim] * 0.5;
                        let o = self.lattice.origin[f.kappa_dim];
                        let mut k = ((interval.0 - o) / res).ceil() as i64;
                        loop {
                            let v = o + k as f64 * res;
                            if v >= interval.1 - 1e-12 {
                                break;
                            }
                            if v > interval.0 + 1e-12 {
                                values.push(v);
                            }
                            k += 1;
                        }
                    }
                }
                PhiKind::ControlNormSquared => {
                    for v in self.lattice.control_kappa_values(self.task) {
                        if v > interval.0 + 1e-12 && v < interval.1 - 1e-12 {
                            values.push(v);
                        }
                    }
                }
            }
            break;
        }
        let mid = 0.5 * (interval.0 + interval.1);
        if values.iter().all(|v| (v - mid).abs() > 1e-12) {
            values.push(mid);
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values
    }

    /// Attempts to split an infeasible atom so that one child can be honored.
    /// Returns the children to re-queue (committing the feasible one).
    fn split_atom(&mut self, atom: Atom) -> Vec<Atom> {
        let d = self.model.theta_dim();
        for coord in 0..d {
            if atom.splits[coord] >= K_SPLIT || atom.theta_box.width(coord) <= 1e-9 {
                continue;
            }
            let lower_facet = self
                .model
                .all_facets()
                .into_iter()
                .find(|f| f.theta_coord == coord)
                .map(|f| f.lower)
                .unwrap_or(true);
            let interval = (atom.theta_box.lo()[coord], atom.theta_box.hi()[coord]);
            let mut values = self.split_values(coord, interval);
            // the feasible child shrinks the obstacle: for a lower facet that
            // is the upper part of the interval, so try small values first
            if !lower_facet {
                values.reverse();
            }
            for v in values {
                let clipped = |low: Option<f64>, high: Option<f64>| {
                    let mut lo = atom.theta_box.lo().to_vec();
                    let mut hi = atom.theta_box.hi().to_vec();
                    if let Some(l) = low {
                        lo[coord] = l;
                    }
                    if let Some(h) = high {
                        hi[coord] = h;
                    }
                    AxisBox::new(lo, hi).unwrap()
                };
                // the feasible child shrinks the obstacle: the upper part for a
                // lower facet, the lower part for an upper facet
                let (child_good, child_rest) = if lower_facet {
                    (clipped(Some(v), None), clipped(None, Some(v)))
                } else {
                    (clipped(None, Some(v)), clipped(Some(v), None))
                };
                let mut splits = atom.splits.clone();
                splits[coord] += 1;
                let good_atom =
                    Atom { mass: child_good.volume(), theta_box: child_good, splits: splits.clone() };
                if self.try_commit(&good_atom).is_some() {
                    return vec![Atom {
                        mass: child_rest.volume(),
                        theta_box: child_rest,
                        splits,
                    }];
                }
            }
        }
        Vec::new()
    }

    fn plan(&self) -> Plan {
        let (traj, cost) = self.current.clone().expect("plan exists");
        Plan {
            traj,
            chosen_boxes: self.chosen.clone(),
            covered_prob: self.covered,
            cost,
            epsilon_achieved: 1.0 - self.covered,
        }
    }

    /// Greedy accumulation: atoms by mass, split when infeasible, stop when
    /// `target` coverage is reached (or atoms run out).
    fn run(&mut self, target: f64, n_box_budget: usize) -> Result<(), PlanError> {
        let mut queue = self.atoms();
        if self.covered >= target - 1e-12 && self.current.is_none() {
            // even the zero-coverage plan must exist
            let traj = lattice_plan(self.task, self.model, &self.committed, self.lattice)?;
            let cost = self.task.cost_of(&traj);
            self.current = Some((traj, cost));
        }
        while self.covered < target - 1e-12 && !queue.is_empty() {
            if self.chosen.len() >= n_box_budget {
                break;
            }
            let atom = queue.remove(0);
            if atom.mass <= 0.0 {
                continue;
            }
            if self.try_commit(&atom).is_none() {
                let rest = self.split_atom(atom);
                queue.extend(rest);
                sort_atoms(&mut queue);
            }
        }
        if self.current.is_none() {
            let traj = lattice_plan(self.task, self.model, &self.committed, self.lattice)?;
            let cost = self.task.cost_of(&traj);
            self.current = Some((traj, cost));
        }
        Ok(())
    }
}

fn sort_atoms(atoms: &mut [Atom]) {
    atoms.sort_by(|a, b| {
        b.mass
            .partial_cmp(&a.mass)
            .unwrap()
            .then_with(|| {
                a.theta_box
                    .lo()
                    .iter()
                    .zip(b.theta_box.lo())
                    .map(|(x, y)| x.partial_cmp(y).unwrap())
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
}

/// Riemann-sum chance-constrained plan: greedy accumulation of disjoint
/// support boxes until the covered probability reaches `1 - eps`. Any returned
/// plan satisfies `Pr(traj safe) >= covered_prob >= 1 - eps`.
pub fn plan_cc(
    belief: &Belief,
    task: &Task,
    model: &ConstraintModel,
    eps: f64,
    n_box_budget: usize,
    lattice: &Lattice,
) -> Result<Plan, PlanError> {
    let mut state = GreedyState::new(belief, task, model, lattice)?;
    let target = 1.0 - eps;
    state.run(target, n_box_budget)?;
    if state.covered < target - 1e-12 {
        return Err(PlanError::Infeasible(format!(
            "covered probability {:.4} below target {:.4} after splitting",
            state.covered, target
        )));
    }
    Ok(state.plan())
}

/// Smallest-epsilon variant: accumulates as much probability mass as the
/// lattice can honor and returns the plan with maximal coverage
/// (ties broken toward lower cost by construction of the greedy frontier).
pub fn plan_eps_min(
    belief: &Belief,
    task: &Task,
    model: &ConstraintModel,
    n_box_budget: usize,
    lattice: &Lattice,
) -> Result<Plan, PlanError> {
    let mut state = GreedyState::new(belief, task, model, lattice)?;
    state.run(1.0 + 1e-9, n_box_budget)?;
    Ok(state.plan())
}

/// Cost/safety-ratio variant: the greedy frontier is enumerated and the plan
/// minimizing `cost / covered_prob` is returned; zero-coverage plans are
/// excluded because the ratio is undefined there.
pub fn plan_ratio(
    belief: &Belief,
    task: &Task,
    model: &ConstraintModel,
    n_box_budget: usize,
    lattice: &Lattice,
) -> Result<Plan, PlanError> {
    let mut state = GreedyState::new(belief, task, model, lattice)?;
    state.run(1.0 + 1e-9, n_box_budget)?;
    let best = state
        .frontier
        .iter()
        .filter(|p| p.covered_prob > 0.0)
        .min_by(|a, b| {
            let ra = a.cost / a.covered_prob;
            let rb = b.cost / b.covered_prob;
            ra.partial_cmp(&rb).unwrap()
        })
        .cloned();
    best.ok_or_else(|| {
        PlanError::Infeasible("no plan with positive covered probability".into())
    })
}

/// Avoids everything that is unsafe for any consistent theta (the conservative
/// baseline; infeasibility here is the motivating failure mode).
pub fn plan_guaranteed_safe(
    extraction: &ExtractionResult,
    task: &Task,
    model: &ConstraintModel,
    lattice: &Lattice,
) -> Result<Trajectory, PlanError> {
    let forbidden =
        Forbidden::from_theta_boxes(model, extraction.f_theta.boxes());
    lattice_plan(task, model, &forbidden, lattice)
}

/// Scenario baseline: samples constraints one at a time, enforcing each, and
/// returns the last feasible plan once the problem becomes infeasible (or the
/// sample budget is exhausted). Also returns the enforced samples.
pub fn plan_scenario(
    belief: &Belief,
    task: &Task,
    model: &ConstraintModel,
    lattice: &Lattice,
    seed: u64,
    max_samples: usize,
) -> Result<(Plan, Vec<Vec<f64>>), PlanError> {
    if belief.is_empty() {
        return Err(PlanError::EmptyBelief);
    }
    let samples = belief
        .sample(max_samples, seed)
        .map_err(|_| PlanError::EmptyBelief)?;
    let mut forbidden = Forbidden::empty(model);
    let mut enforced: Vec<Vec<f64>> = Vec::new();
    let mut current: Option<Trajectory> = None;
    for theta in &samples {
        let mut candidate = forbidden.clone();
        candidate.add_theta_box(model, &AxisBox::singleton(theta));
        match lattice_plan(task, model, &candidate, lattice) {
            Ok(traj) => {
                forbidden = candidate;
                enforced.push(theta.clone());
                current = Some(traj);
            }
            Err(_) => break,
        }
    }
    let traj = match current {
        Some(t) => t,
        None => lattice_plan(task, model, &forbidden, lattice)?,
    };
    let cost = task.cost_of(&traj);
    let chosen: Vec<AxisBox> = enforced.iter().map(|t| AxisBox::singleton(t)).collect();
    Ok((
        Plan {
            traj,
            covered_prob: 0.0,
            cost,
            epsilon_achieved: 1.0,
            chosen_boxes: chosen,
        },
        enforced,
    ))
}

/// Optimistic baseline: avoids only the guaranteed-unsafe set, buffered by
/// `buffer` in the uncertain dimensions.
pub fn plan_optimistic(
    guaranteed: &GuaranteedSets,
    task: &Task,
    model: &ConstraintModel,
    lattice: &Lattice,
    buffer: f64,
) -> Result<Trajectory, PlanError> {
    let mut forbidden = Forbidden::empty(model);
    for (bi, region) in guaranteed.g_unsafe.iter().enumerate() {
        let dims = &guaranteed.uncertain_dims[bi];
        let inflated: Vec<AxisBox> = region
            .boxes()
            .iter()
            .map(|b| b.inflate(dims, buffer, Some(&model.blocks[bi].c_bounds)))
            .collect();
        forbidden.merge_block(bi, BoxUnion::from_overlapping(region.dim(), &inflated));
    }
    lattice_plan(task, model, &forbidden, lattice)
}
