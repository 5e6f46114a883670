//! A small dense two-phase simplex solver.
//!
//! Sized for the multiplier-feasibility programs in [`crate::kkt`]: a few
//! hundred rows and columns. Entering variable by Dantzig's rule with a
//! deterministic tie-break, switching to Bland's rule if an iteration budget
//! is exceeded, so the solver cannot cycle.

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
}

/// `minimize c^T x` subject to sparse rows `a x (<=|=) b`; variables are
/// nonnegative unless flagged free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<(Vec<(usize, f64)>, Relation, f64)>,
    pub free: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpStatus {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
            free: vec![false; num_vars],
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, rel: Relation, rhs: f64) {
        self.rows.push((coeffs, rel, rhs));
    }

    pub fn solve(&self) -> LpStatus {
        Tableau::build(self).solve()
    }
}

struct Tableau {
    /// m x (n + 1) dense matrix; last column is the RHS.
    a: Vec<Vec<f64>>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    m: usize,
    n: usize,
    num_structural: usize,
    art_start: usize,
    /// maps structural columns back to (variable, sign) of the original LP
    col_map: Vec<(usize, f64)>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        // split free variables into plus/minus parts
        let mut col_map = Vec::new();
        for v in 0..lp.num_vars {
            col_map.push((v, 1.0));
        }
        for v in 0..lp.num_vars {
            if lp.free[v] {
                col_map.push((v, -1.0));
            }
        }
        let num_structural = col_map.len();
        let m = lp.rows.len();
        let num_slack = lp.rows.iter().filter(|(_, rel, _)| *rel == Relation::Le).count();
        let n = num_structural + num_slack + m; // + artificials
        let art_start = num_structural + num_slack;

        let mut a = vec![vec![0.0; n + 1]; m];
        let mut basis = vec![0usize; m];
        let mut slack_idx = num_structural;
        for (r, (coeffs, rel, rhs)) in lp.rows.iter().enumerate() {
            let mut dense = vec![0.0; num_structural];
            for &(v, c) in coeffs {
                for (col, &(var, sign)) in col_map.iter().enumerate() {
                    if var == v {
                        dense[col] += sign * c;
                    }
                }
            }
            let mut rhs = *rhs;
            let mut flip = 1.0;
            if rhs < 0.0 {
                flip = -1.0;
                rhs = -rhs;
            }
            for (col, val) in dense.iter().enumerate() {
                a[r][col] = flip * val;
            }
            a[r][n] = rhs;
            if *rel == Relation::Le {
                a[r][slack_idx] = flip;
                slack_idx += 1;
            }
            // artificial always added; unnecessary ones price out in phase 1
            a[r][art_start + r] = 1.0;
            basis[r] = art_start + r;
        }

        let mut cost = vec![0.0; n];
        for (col, &(var, sign)) in col_map.iter().enumerate() {
            cost[col] = sign * lp.objective[var];
        }

        Tableau { a, cost, basis, m, n, num_structural, art_start, col_map }
    }

    fn solve(mut self) -> LpStatus {
        // phase 1: minimize the sum of artificials
        let phase1: Vec<f64> = (0..self.n)
            .map(|j| if j >= self.art_start { 1.0 } else { 0.0 })
            .collect();
        match self.optimize(&phase1, usize::MAX) {
            SimplexOutcome::Optimal => {}
            SimplexOutcome::Unbounded => return LpStatus::Infeasible,
        }
        if self.objective_value(&phase1) > 1e-7 {
            return LpStatus::Infeasible;
        }
        // drive artificials out of the basis where possible
        for r in 0..self.m {
            if self.basis[r] >= self.art_start {
                if let Some(j) = (0..self.art_start).find(|&j| self.a[r][j].abs() > EPS) {
                    self.pivot(r, j);
                }
            }
        }
        // phase 2 forbids re-entering artificials by pricing them at infinity
        let mut phase2 = self.cost.clone();
        for c in phase2.iter_mut().skip(self.art_start) {
            *c = f64::INFINITY;
        }
        match self.optimize(&phase2, self.art_start) {
            SimplexOutcome::Optimal => {}
            SimplexOutcome::Unbounded => return LpStatus::Unbounded,
        }
        let mut x = vec![0.0; self.col_map.len()];
        for r in 0..self.m {
            if self.basis[r] < self.num_structural {
                x[self.basis[r]] += self.a[r][self.n];
            }
        }
        let mut out = vec![0.0; self.col_map.iter().map(|&(v, _)| v + 1).max().unwrap_or(0)];
        for (col, &(var, sign)) in self.col_map.iter().enumerate() {
            out[var] += sign * x[col];
        }
        let value = self.objective_value(&self.cost.clone());
        LpStatus::Optimal { x: out, value }
    }

    fn objective_value(&self, cost: &[f64]) -> f64 {
        (0..self.m)
            .map(|r| {
                let c = cost[self.basis[r]];
                if c == 0.0 {
                    0.0
                } else {
                    c * self.a[r][self.n]
                }
            })
            .sum()
    }

    fn optimize(&mut self, cost: &[f64], col_limit: usize) -> SimplexOutcome {
        let limit = col_limit.min(self.n);
        let budget = 50 * (self.m + self.n);
        let mut iterations = 0usize;
        loop {
            iterations += 1;
            let bland = iterations > budget;
            // reduced costs: c_j - c_B B^-1 A_j  (tableau is already B^-1 A)
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..limit {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut red = cost[j];
                for r in 0..self.m {
                    let cb = cost[self.basis[r]];
                    if cb != 0.0 && cb.is_finite() {
                        red -= cb * self.a[r][j];
                    }
                }
                if red < -EPS {
                    if bland {
                        entering = Some((j, red));
                        break;
                    }
                    match entering {
                        Some((_, best)) if red >= best => {}
                        _ => entering = Some((j, red)),
                    }
                }
            }
            let Some((j, _)) = entering else {
                return SimplexOutcome::Optimal;
            };
            // ratio test, ties to the lowest basis index (lexicographic safety)
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let coef = self.a[r][j];
                if coef > EPS {
                    let ratio = self.a[r][self.n] / coef;
                    match leave {
                        Some((lr, lratio)) => {
                            if ratio < lratio - EPS
                                || (ratio < lratio + EPS && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                        None => leave = Some((r, ratio)),
                    }
                }
            }
            let Some((r, _)) = leave else {
                return SimplexOutcome::Unbounded;
            };
            self.pivot(r, j);
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.a[row][col];
        debug_assert!(piv.abs() > 1e-12);
        for v in self.a[row].iter_mut() {
            *v /= piv;
        }
        for r in 0..self.m {
            if r != row {
                let factor = self.a[r][col];
                if factor != 0.0 {
                    for j in 0..=self.n {
                        self.a[r][j] -= factor * self.a[row][j];
                    }
                }
            }
        }
        self.basis[row] = col;
    }
}

enum SimplexOutcome {
    Optimal,
    Unbounded,
}
