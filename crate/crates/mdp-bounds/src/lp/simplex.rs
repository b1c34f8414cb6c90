//! Two-phase revised simplex for standard-form problems
//! `max d'x  s.t.  G x = rhs,  x >= 0`
//! with an explicitly maintained basis inverse, periodic refactorization,
//! and a Bland-rule fallback that engages after a run of degenerate pivots.
//!
//! Artificial variables carry the start basis of phase 1; after phase 1 they
//! are pivoted out, and any row whose artificial cannot leave the basis is
//! linearly dependent and gets dropped from the system.

use nalgebra::DMatrix;

/// Absolute reduced-cost threshold for entering candidates.
const COST_TOL: f64 = 1e-9;
/// Smallest pivot magnitude accepted in the ratio test.
const PIVOT_TOL: f64 = 1e-9;
/// Pivot magnitude required when forcing an artificial out of the basis.
const DRIVE_OUT_TOL: f64 = 1e-7;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 400;
/// Pivots between basis refactorizations.
const REFACTOR_EVERY: usize = 64;
/// Confirmation rounds after tentative optimality (refactor + reprice).
const CONFIRM_ROUNDS: usize = 6;

#[derive(Debug, Clone)]
pub(crate) struct StandardLp {
    pub num_rows: usize,
    /// Sparse columns of `G`: `(row, value)` pairs, rows strictly increasing.
    pub cols: Vec<Vec<(u32, f64)>>,
    /// Maximization objective, one entry per column.
    pub obj: Vec<f64>,
    pub rhs: Vec<f64>,
}

#[derive(Debug)]
pub(crate) enum StandardOutcome {
    Optimal {
        /// Variable values, one per column.
        x: Vec<f64>,
        /// Row multipliers `y` with `G_B' y = d_B`; for dropped (dependent)
        /// rows the multiplier is zero.
        multipliers: Vec<f64>,
        objective: f64,
        iterations: usize,
    },
    /// The objective is unbounded along `ray >= 0` with `G ray = 0` and
    /// `d' ray > 0`.
    Unbounded { ray: Vec<f64>, iterations: usize },
    /// Phase 1 could not reach `G x = rhs`; `residual` is the remaining
    /// infeasibility mass.
    Infeasible { residual: f64, iterations: usize },
}

#[derive(Debug)]
pub(crate) enum EngineError {
    IterationLimit {
        iterations: usize,
        phase: u8,
        best_infeasibility: f64,
    },
    Numerical(String),
}

enum LoopExit {
    Optimal,
    Unbounded { entering: usize },
}

pub(crate) struct Engine {
    k: usize,
    cols: Vec<Vec<(u32, f64)>>,
    obj: Vec<f64>,
    rhs: Vec<f64>,
    row_flipped: Vec<bool>,
    /// Original index of each active row (rows shrink when dependents drop).
    row_ids: Vec<usize>,
    costs: Vec<f64>,
    /// Basis column per row position; artificials are `k + original_row`.
    basis: Vec<usize>,
    /// Basis position of each original column, or -1.
    position: Vec<i64>,
    binv: DMatrix<f64>,
    x_b: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    bland: bool,
    degenerate_run: usize,
    pivots_since_refactor: usize,
}

impl Engine {
    pub(crate) fn new(problem: &StandardLp, max_iterations: usize) -> Self {
        let n = problem.num_rows;
        let k = problem.cols.len();
        let mut row_flipped = vec![false; n];
        let mut rhs = problem.rhs.clone();
        for (r, flag) in row_flipped.iter_mut().enumerate() {
            if rhs[r] < 0.0 {
                rhs[r] = -rhs[r];
                *flag = true;
            }
        }
        let cols: Vec<Vec<(u32, f64)>> = problem
            .cols
            .iter()
            .map(|col| {
                col.iter()
                    .map(|&(r, v)| {
                        if row_flipped[r as usize] {
                            (r, -v)
                        } else {
                            (r, v)
                        }
                    })
                    .collect()
            })
            .collect();
        Engine {
            k,
            cols,
            obj: problem.obj.clone(),
            rhs,
            row_flipped,
            row_ids: (0..n).collect(),
            costs: Vec::new(),
            basis: Vec::new(),
            position: vec![-1; k],
            binv: DMatrix::identity(n, n),
            x_b: Vec::new(),
            iterations: 0,
            max_iterations,
            bland: false,
            degenerate_run: 0,
            pivots_since_refactor: 0,
        }
    }

    fn n(&self) -> usize {
        self.basis.len()
    }

    fn is_artificial(&self, col: usize) -> bool {
        col >= self.k
    }

    /// Entry `(row_position, value)` pairs of a column in the active system.
    fn column_entries(&self, col: usize) -> Vec<(usize, f64)> {
        if self.is_artificial(col) {
            let original_row = col - self.k;
            match self.row_ids.iter().position(|&r| r == original_row) {
                Some(pos) => vec![(pos, 1.0)],
                None => Vec::new(),
            }
        } else {
            // Active rows are a subsequence of original rows; map by merge.
            let mut out = Vec::new();
            let mut pos = 0usize;
            for &(r, v) in &self.cols[col] {
                let r = r as usize;
                while pos < self.row_ids.len() && self.row_ids[pos] < r {
                    pos += 1;
                }
                if pos == self.row_ids.len() {
                    break;
                }
                if self.row_ids[pos] == r {
                    out.push((pos, v));
                }
            }
            out
        }
    }

    fn active_rhs(&self) -> Vec<f64> {
        self.row_ids.iter().map(|&r| self.rhs[r]).collect()
    }

    /// Rebuild the basis inverse and basic values from scratch.
    fn refactor(&mut self) -> Result<(), EngineError> {
        let n = self.n();
        let mut b = DMatrix::<f64>::zeros(n, n);
        for (pos, &col) in self.basis.iter().enumerate() {
            for (row_pos, v) in self.column_entries(col) {
                b[(row_pos, pos)] = v;
            }
        }
        let inv = b
            .lu()
            .try_inverse()
            .ok_or_else(|| EngineError::Numerical("singular basis".into()))?;
        self.binv = inv;
        let rhs = self.active_rhs();
        let mut x_b = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &r) in rhs.iter().enumerate() {
                acc += self.binv[(i, j)] * r;
            }
            x_b[i] = acc;
        }
        for v in x_b.iter_mut() {
            if *v < 0.0 && *v > -1e-7 {
                *v = 0.0;
            }
        }
        self.x_b = x_b;
        self.pivots_since_refactor = 0;
        Ok(())
    }

    fn multipliers(&self) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        for (pos, &col) in self.basis.iter().enumerate() {
            let c = self.costs[col];
            if c == 0.0 {
                continue;
            }
            for i in 0..n {
                y[i] += c * self.binv[(pos, i)];
            }
        }
        y
    }

    fn reduced_cost(&self, col: usize, y: &[f64]) -> f64 {
        let mut v = self.costs[col];
        for (row_pos, g) in self.column_entries(col) {
            v -= y[row_pos] * g;
        }
        v
    }

    /// Pick an entering column among nonbasic originals, or None at optimal.
    fn price(&self, y: &[f64]) -> Option<usize> {
        if self.bland {
            (0..self.k).find(|&j| self.position[j] < 0 && self.reduced_cost(j, y) > COST_TOL)
        } else {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.k {
                if self.position[j] >= 0 {
                    continue;
                }
                let d = self.reduced_cost(j, y);
                if d > COST_TOL && best.map_or(true, |(_, bd)| d > bd) {
                    best = Some((j, d));
                }
            }
            best.map(|(j, _)| j)
        }
    }

    /// Direction `alpha = B^-1 g_enter` in basis coordinates.
    fn direction(&self, entering: usize) -> Vec<f64> {
        let n = self.n();
        let mut alpha = vec![0.0; n];
        for (row_pos, g) in self.column_entries(entering) {
            if g == 0.0 {
                continue;
            }
            for i in 0..n {
                alpha[i] += self.binv[(i, row_pos)] * g;
            }
        }
        alpha
    }

    /// Standard primal ratio test. Ties prefer the smallest basis variable
    /// under Bland's rule and the largest pivot magnitude otherwise.
    fn ratio_test(&self, alpha: &[f64]) -> Option<usize> {
        let mut leave: Option<(usize, f64)> = None; // (position, theta)
        for (i, &a) in alpha.iter().enumerate() {
            if a <= PIVOT_TOL {
                continue;
            }
            let theta = (self.x_b[i].max(0.0)) / a;
            match leave {
                None => leave = Some((i, theta)),
                Some((best_i, best_theta)) => {
                    let tie = (theta - best_theta).abs() <= 1e-12 * (1.0 + best_theta.abs());
                    if theta < best_theta - 1e-12 * (1.0 + best_theta.abs()) {
                        leave = Some((i, theta));
                    } else if tie {
                        let better = if self.bland {
                            self.basis[i] < self.basis[best_i]
                        } else {
                            alpha[i].abs() > alpha[best_i].abs()
                        };
                        if better {
                            leave = Some((i, theta));
                        }
                    }
                }
            }
        }
        leave.map(|(i, _)| i)
    }

    fn pivot(&mut self, entering: usize, leave_pos: usize, alpha: &[f64]) {
        let n = self.n();
        let theta = (self.x_b[leave_pos].max(0.0)) / alpha[leave_pos];
        for i in 0..n {
            if i != leave_pos {
                self.x_b[i] -= theta * alpha[i];
                if self.x_b[i] < 0.0 && self.x_b[i] > -1e-9 {
                    self.x_b[i] = 0.0;
                }
            }
        }
        self.x_b[leave_pos] = theta;

        let pivot_val = alpha[leave_pos];
        // Row ops on the explicit inverse: normalize the pivot row, then
        // eliminate the entering column from every other row.
        for c in 0..n {
            self.binv[(leave_pos, c)] /= pivot_val;
        }
        for i in 0..n {
            if i == leave_pos {
                continue;
            }
            let f = alpha[i];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                let delta = f * self.binv[(leave_pos, c)];
                self.binv[(i, c)] -= delta;
            }
        }

        let leaving = self.basis[leave_pos];
        if !self.is_artificial(leaving) {
            self.position[leaving] = -1;
        }
        self.basis[leave_pos] = entering;
        if !self.is_artificial(entering) {
            self.position[entering] = leave_pos as i64;
        }

        if theta <= 1e-12 {
            self.degenerate_run += 1;
            if self.degenerate_run > DEGENERATE_SWITCH {
                self.bland = true;
            }
        } else {
            self.degenerate_run = 0;
        }
        self.pivots_since_refactor += 1;
        self.iterations += 1;
    }

    fn run_phase(&mut self, phase: u8) -> Result<LoopExit, EngineError> {
        let mut confirm_rounds = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                let infeas: f64 = if phase == 1 { self.infeasibility() } else { 0.0 };
                return Err(EngineError::IterationLimit {
                    iterations: self.iterations,
                    phase,
                    best_infeasibility: infeas,
                });
            }
            if self.pivots_since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let y = self.multipliers();
            let entering = match self.price(&y) {
                Some(j) => j,
                None => {
                    // Confirm on a fresh factorization before declaring
                    // optimality; accumulated drift can hide candidates.
                    if confirm_rounds >= CONFIRM_ROUNDS {
                        return Ok(LoopExit::Optimal);
                    }
                    confirm_rounds += 1;
                    self.refactor()?;
                    let y = self.multipliers();
                    match self.price(&y) {
                        None => return Ok(LoopExit::Optimal),
                        Some(j) => j
                    }
                }
            };
            let alpha = self.direction(entering);
            match self.ratio_test(&alpha) {
                Some(leave_pos) => self.pivot(entering, leave_pos, &alpha),
                None => return Ok(LoopExit::Unbounded { entering }),
            }
        }
    }

    fn infeasibility(&self) -> f64 {
        let mut total = 0.0;
        for (pos, &col) in self.basis.iter().enumerate() {
            if self.is_artificial(col) {
                total += self.x_b[pos].max(0.0);
            }
        }
        total
    }

    /// Pivot remaining artificials out of the basis; drop rows whose
    /// artificial cannot leave (they are linearly dependent).
    fn drive_out_artificials(&mut self) -> Result<(), EngineError> {
        loop {
            let Some(pos) = self
                .basis
                .iter()
                .position(|&col| self.is_artificial(col))
            else {
                return Ok(());
            };
            let mut pivoted = false;
            for j in 0..self.k {
                if self.position[j] >= 0 {
                    continue;
                }
                // Transformed entry of column j in the artificial's row.
                let mut val = 0.0;
                for (row_pos, g) in self.column_entries(j) {
                    val += self.binv[(pos, row_pos)] * g;
                }
                if val.abs() > DRIVE_OUT_TOL {
                    // Degenerate pivot: the artificial sits at zero, so the
                    // ratio is zero whatever the pivot element's sign.
                    let alpha = self.direction(j);
                    self.pivot(j, pos, &alpha);
                    pivoted = true;
                    break;
                }
            }
            if !pivoted {
                // Row is dependent: delete it and its artificial.
                let row_id = self.basis[pos] - self.k;
                self.row_ids.retain(|&r| r != row_id);
                self.basis.remove(pos);
                for p in self.position.iter_mut() {
                    if *p > pos as i64 {
                        *p -= 1;
                    }
                }
                self.refactor()?;
            }
        }
    }

    fn objective_value(&self) -> f64 {
        self.basis
            .iter()
            .enumerate()
            .map(|(pos, &col)| self.costs[col] * self.x_b[pos])
            .sum()
    }

    pub(crate) fn solve(&mut self) -> Result<StandardOutcome, EngineError> {
        let n_start = self.rhs.len();

        // Phase 1: artificial start basis, costs -1 on artificials.
        self.basis = (0..n_start).map(|r| self.k + r).collect();
        self.x_b = self.active_rhs();
        self.binv = DMatrix::identity(n_start, n_start);
        self.costs = vec![0.0; self.k + n_start];
        for r in 0..n_start {
            self.costs[self.k + r] = -1.0;
        }
        let rhs_scale = 1.0 + self.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        match self.run_phase(1)? {
            LoopExit::Unbounded { .. } => {
                return Err(EngineError::Numerical(
                    "phase 1 cannot be unbounded".into(),
                ));
            }
            LoopExit::Optimal => {}
        }
        self.refactor()?;
        let residual = self.infeasibility();
        if residual > 1e-9 * rhs_scale {
            return Ok(StandardOutcome::Infeasible {
                residual,
                iterations: self.iterations,
            });
        }
        self.drive_out_artificials()?;

        // Phase 2: true objective, artificials are gone.
        self.costs = self.obj.clone();
        self.costs.resize(self.k + n_start, 0.0);
        self.bland = false;
        self.degenerate_run = 0;
        match self.run_phase(2)? {
            LoopExit::Optimal => {
                self.refactor()?;
                let mut x = vec![0.0; self.k];
                for (pos, &col) in self.basis.iter().enumerate() {
                    if !self.is_artificial(col) {
                        x[col] = self.x_b[pos].max(0.0);
                    }
                }
                let y_active = self.multipliers();
                let mut multipliers = vec![0.0; self.rhs.len()];
                for (pos, &row_id) in self.row_ids.iter().enumerate() {
                    multipliers[row_id] = if self.row_flipped[row_id] {
                        -y_active[pos]
                    } else {
                        y_active[pos]
                    };
                }
                Ok(StandardOutcome::Optimal {
                    x,
                    multipliers,
                    objective: self.objective_value(),
                    iterations: self.iterations,
                })
            }
            LoopExit::Unbounded { entering } => {
                let alpha = self.direction(entering);
                let mut ray = vec![0.0; self.k];
                ray[entering] = 1.0;
                for (pos, &col) in self.basis.iter().enumerate() {
                    if !self.is_artificial(col) {
                        ray[col] = (-alpha[pos]).max(0.0);
                    }
                }
                Ok(StandardOutcome::Unbounded {
                    ray,
                    iterations: self.iterations,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(problem: &StandardLp) -> StandardOutcome {
        Engine::new(problem, 100_000).solve().unwrap()
    }

    #[test]
    fn solves_a_simple_equality_program() {
        // max x0 + 2 x1  s.t.  x0 + x1 = 4, x1 <= 3 via x1 + x2 = 3.
        let p = StandardLp {
            num_rows: 2,
            cols: vec![
                vec![(0, 1.0)],
                vec![(0, 1.0), (1, 1.0)],
                vec![(1, 1.0)],
            ],
            obj: vec![1.0, 2.0, 0.0],
            rhs: vec![4.0, 3.0],
        };
        match solve(&p) {
            StandardOutcome::Optimal { x, objective, .. } => {
                assert!((x[0] - 1.0).abs() < 1e-9);
                assert!((x[1] - 3.0).abs() < 1e-9);
                assert!((objective - 7.0).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn reports_infeasibility_mass() {
        // x0 = 1 and x0 = 2 cannot both hold with one variable.
        let p = StandardLp {
            num_rows: 2,
            cols: vec![vec![(0, 1.0), (1, 1.0)]],
            obj: vec![0.0],
            rhs: vec![1.0, 2.0],
        };
        match solve(&p) {
            StandardOutcome::Infeasible { residual, .. } => {
                assert!(residual > 0.4, "residual {residual}");
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn reports_an_unbounded_ray() {
        // max x0 with x0 - x1 = 0: both can grow together.
        let p = StandardLp {
            num_rows: 1,
            cols: vec![vec![(0, 1.0)], vec![(0, -1.0)]],
            obj: vec![1.0, 0.0],
            rhs: vec![0.0],
        };
        match solve(&p) {
            StandardOutcome::Unbounded { ray, .. } => {
                assert!(ray[0] > 0.5);
                assert!((ray[0] - ray[1]).abs() < 1e-9);
            }
            other => panic!("expected unbounded, got {other:?}"),
        }
    }

    #[test]
    fn drops_dependent_rows() {
        // Second row duplicates the first; the system is still feasible.
        let p = StandardLp {
            num_rows: 2,
            cols: vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]],
            obj: vec![1.0, 0.0],
            rhs: vec![2.0, 2.0],
        };
        match solve(&p) {
            StandardOutcome::Optimal { x, objective, .. } => {
                assert!((x[0] + x[1] - 2.0).abs() < 1e-9);
                assert!((objective - 2.0).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn handles_negative_rhs_by_row_flips() {
        // x0 - x1 = -3, x0 + x1 = 5 -> x0 = 1, x1 = 4.
        let p = StandardLp {
            num_rows: 2,
            cols: vec![
                vec![(0, 1.0), (1, 1.0)],
                vec![(0, -1.0), (1, 1.0)],
            ],
            obj: vec![0.0, 1.0],
            rhs: vec![-3.0, 5.0],
        };
        match solve(&p) {
            StandardOutcome::Optimal { x, multipliers, .. } => {
                assert!((x[0] - 1.0).abs() < 1e-9);
                assert!((x[1] - 4.0).abs() < 1e-9);
                // Multipliers satisfy G_B' y = d_B in unflipped terms.
                assert!((multipliers[0] - (-0.5)).abs() < 1e-9);
                assert!((multipliers[1] - 0.5).abs() < 1e-9);
            }
            other => panic!("expected optimal, got {other:?}"),
        }
    }
}
