//! Exact linear programming with primal and dual reporting.
//!
//! Problems are stated over free variables as `min c'v  s.t.  A v >= b`.
//! The solver runs a revised simplex on the equivalent standard form
//! `max b'mu  s.t.  A'mu = c, mu >= 0`; the optimal primal point is the
//! vector of simplex multipliers at the final basis and the dual values are
//! the standard-form variables, so strong duality and complementary
//! slackness hold at the reported solution by construction and are verified
//! before it is returned.
//!
//! The module also carries the MDP-specialized exact-LP solve: for the
//! one-step inequality relaxation of a discounted MDP, every nonnegative
//! cost vector yields the same optimal point (the optimal value function),
//! so the solve runs value iteration with a policy-evaluation polish and
//! recovers an optimal dual from the greedy policy's discounted occupancy.

mod simplex;

use crate::mdp::{
    bellman_inequality_residuals, greedy_policy, policy_evaluation, value_iteration, Mdp,
    MdpError, ValueFunction, DENSE_SOLVE_MAX_STATES,
};
use simplex::{Engine, EngineError, StandardLp, StandardOutcome};
use thiserror::Error;

/// Tolerance scale for the optimality invariants checked on every reported
/// solution (primal feasibility, dual feasibility, complementary slackness,
/// duality gap).
pub const OPT_TOL: f64 = 1e-8;

/// Stopping tolerance used by the MDP-specialized exact solve.
const EXACT_VI_TOL: f64 = 1e-11;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("cost entry {index} is negative ({value})")]
    NegativeCost { index: usize, value: f64 },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("numerical stall after {iterations} simplex iterations (phase {phase}, infeasibility {infeasibility:e})")]
    Stall {
        iterations: usize,
        phase: u8,
        infeasibility: f64,
    },
    #[error("solution failed validation: {0}")]
    ValidationFailed(String),
    #[error("internal solver error: {0}")]
    Internal(String),
}

impl From<EngineError> for LpError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::IterationLimit {
                iterations,
                phase,
                best_infeasibility,
            } => LpError::Stall {
                iterations,
                phase,
                infeasibility: best_infeasibility,
            },
            EngineError::Numerical(msg) => LpError::Internal(msg),
        }
    }
}

/// One inequality `coeffs . v >= rhs` with coefficients sorted by variable
/// index and duplicates merged.
#[derive(Debug, Clone, PartialEq)]
pub struct LpConstraint {
    coeffs: Vec<(u32, f64)>,
    rhs: f64,
}

impl LpConstraint {
    pub fn coeffs(&self) -> &[(u32, f64)] {
        &self.coeffs
    }

    pub fn rhs(&self) -> f64 {
        self.rhs
    }

    /// Evaluate `coeffs . v`.
    pub fn dot(&self, v: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .map(|&(i, a)| a * v[i as usize])
            .sum()
    }
}

/// `min objective . v  s.t.  every constraint holds`, `v` free.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    num_vars: usize,
    objective: Vec<f64>,
    constraints: Vec<LpConstraint>,
}

impl LpProblem {
    /// Normalize and validate a problem. Constraint coefficient lists are
    /// sorted by variable index with duplicate indices merged by summation;
    /// exact zeros are kept out of the stored rows.
    pub fn new(
        num_vars: usize,
        objective: Vec<f64>,
        constraints: Vec<(Vec<(usize, f64)>, f64)>,
    ) -> Result<Self, LpError> {
        if num_vars == 0 {
            return Err(LpError::Invalid("a problem needs at least one variable".into()));
        }
        if objective.len() != num_vars {
            return Err(LpError::Invalid(format!(
                "objective has {} entries for {num_vars} variables",
                objective.len()
            )));
        }
        if let Some(bad) = objective.iter().find(|c| !c.is_finite()) {
            return Err(LpError::Invalid(format!("non-finite objective entry {bad}")));
        }
        let mut rows = Vec::with_capacity(constraints.len());
        for (row_no, (coeffs, rhs)) in constraints.into_iter().enumerate() {
            if !rhs.is_finite() {
                return Err(LpError::Invalid(format!(
                    "constraint {row_no}: non-finite right-hand side"
                )));
            }
            let mut entries: Vec<(u32, f64)> = Vec::with_capacity(coeffs.len());
            for (i, a) in coeffs {
                if i >= num_vars {
                    return Err(LpError::Invalid(format!(
                        "constraint {row_no}: variable index {i} out of range"
                    )));
                }
                if !a.is_finite() {
                    return Err(LpError::Invalid(format!(
                        "constraint {row_no}: non-finite coefficient"
                    )));
                }
                entries.push((i as u32, a));
            }
            entries.sort_unstable_by_key(|&(i, _)| i);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
            for (i, a) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == i => last.1 += a,
                    _ => merged.push((i, a)),
                }
            }
            merged.retain(|&(_, a)| a != 0.0);
            rows.push(LpConstraint {
                coeffs: merged,
                rhs,
            });
        }
        Ok(LpProblem {
            num_vars,
            objective,
            constraints: rows,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[LpConstraint] {
        &self.constraints
    }

    /// Text form: `min c1 c2 ...`, then one `index:value ... >= rhs` line
    /// per constraint.
    pub fn to_text(&self) -> String {
        let mut out = String::from("min");
        for c in &self.objective {
            out.push_str(&format!(" {c}"));
        }
        out.push('\n');
        for row in &self.constraints {
            let mut line = String::new();
            for &(i, a) in &row.coeffs {
                if !line.is_empty() {
                    line.push(' ');
                }
                line.push_str(&format!("{i}:{a}"));
            }
            if line.is_empty() {
                line.push_str(">=");
            } else {
                line.push_str(" >=");
            }
            out.push_str(&format!("{line} {}\n", row.rhs));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LpError> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or(LpError::Parse {
                line: 1,
                message: "empty input".into(),
            })?;
        let mut head = first.split_whitespace();
        if head.next() != Some("min") {
            return Err(LpError::Parse {
                line: 1,
                message: "expected objective line starting with `min`".into(),
            });
        }
        let objective: Vec<f64> = head
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| LpError::Parse {
                    line: 1,
                    message: format!("bad objective entry {tok:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        let num_vars = objective.len();
        let mut constraints = Vec::new();
        for (line_no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut coeffs = Vec::new();
            let mut rhs: Option<f64> = None;
            let mut seen_ge = false;
            for tok in line.split_whitespace() {
                if tok == ">=" {
                    seen_ge = true;
                    continue;
                }
                if seen_ge {
                    if rhs.is_some() {
                        return Err(LpError::Parse {
                            line: line_no + 1,
                            message: "multiple right-hand sides".into(),
                        });
                    }
                    rhs = Some(tok.parse::<f64>().map_err(|_| LpError::Parse {
                        line: line_no + 1,
                        message: format!("bad right-hand side {tok:?}"),
                    })?);
                } else {
                    let (idx, val) = tok.split_once(':').ok_or_else(|| LpError::Parse {
                        line: line_no + 1,
                        message: format!("expected index:value, got {tok:?}"),
                    })?;
                    let idx: usize = idx.parse().map_err(|_| LpError::Parse {
                        line: line_no + 1,
                        message: format!("bad variable index {idx:?}"),
                    })?;
                    let val: f64 = val.parse().map_err(|_| LpError::Parse {
                        line: line_no + 1,
                        message: format!("bad coefficient {val:?}"),
                    })?;
                    coeffs.push((idx, val));
                }
            }
            let rhs = rhs.ok_or(LpError::Parse {
                line: line_no + 1,
                message: "missing `>= rhs`".into(),
            })?;
            constraints.push((coeffs, rhs));
        }
        LpProblem::new(num_vars, objective, constraints)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

/// Solver report. `primal`, `dual`, and `objective_value` are meaningful
/// only for [`LpStatus::Optimal`]; an unbounded problem carries an
/// improving `ray` (`A ray >= 0`, `c . ray < 0`), an infeasible one a
/// `farkas` certificate (`A' farkas = 0`, `farkas >= 0`, `b . farkas > 0`)
/// when one was produced.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    pub dual: Vec<f64>,
    pub objective_value: f64,
    pub ray: Option<Vec<f64>>,
    pub farkas: Option<Vec<f64>>,
    pub iterations: usize,
}

/// Solver knobs; the defaults suit every problem size in this crate.
#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub max_iterations: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            max_iterations: 500_000,
        }
    }
}

fn standard_form(problem: &LpProblem, obj_from_rhs: bool, zero_rhs: bool) -> StandardLp {
    // Columns of the standard form are the problem's constraints.
    let cols: Vec<Vec<(u32, f64)>> = problem
        .constraints
        .iter()
        .map(|c| c.coeffs.clone())
        .collect();
    let obj: Vec<f64> = if obj_from_rhs {
        problem.constraints.iter().map(|c| c.rhs).collect()
    } else {
        vec![0.0; problem.constraints.len()]
    };
    let rhs: Vec<f64> = if zero_rhs {
        vec![0.0; problem.num_vars]
    } else {
        problem.objective.clone()
    };
    StandardLp {
        num_rows: problem.num_vars,
        cols,
        obj,
        rhs,
    }
}

/// Measure how far a reported optimal pair is from the optimality
/// conditions; returns a human-readable violation description if any
/// tolerance is exceeded.
pub fn check_optimality(problem: &LpProblem, solution: &LpSolution) -> Result<(), LpError> {
    if solution.primal.len() != problem.num_vars
        || solution.dual.len() != problem.num_constraints()
    {
        return Err(LpError::ValidationFailed("dimension mismatch".into()));
    }
    let b_scale = 1.0
        + problem
            .constraints
            .iter()
            .fold(0.0f64, |m, c| m.max(c.rhs.abs()));
    let c_scale = 1.0 + problem.objective.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let obj = solution.objective_value;

    let mut primal_violation: f64 = 0.0;
    let mut cs_violation: f64 = 0.0;
    let mut dual_objective = 0.0;
    let mut a_t_mu = vec![0.0f64; problem.num_vars];
    for (j, row) in problem.constraints.iter().enumerate() {
        let slack = row.dot(&solution.primal) - row.rhs;
        primal_violation = primal_violation.max(-slack);
        let mu = solution.dual[j];
        if mu < -1e-12 {
            return Err(LpError::ValidationFailed(format!(
                "negative dual {mu} on constraint {j}"
            )));
        }
        cs_violation = cs_violation.max(mu * slack.abs());
        dual_objective += mu * row.rhs;
        for &(i, a) in &row.coeffs {
            a_t_mu[i as usize] += a * mu;
        }
    }
    if primal_violation > OPT_TOL * b_scale {
        return Err(LpError::ValidationFailed(format!(
            "primal infeasibility {primal_violation:e}"
        )));
    }
    let dual_violation = a_t_mu
        .iter()
        .zip(&problem.objective)
        .fold(0.0f64, |m, (lhs, c)| m.max((lhs - c).abs()));
    if dual_violation > OPT_TOL * c_scale {
        return Err(LpError::ValidationFailed(format!(
            "dual infeasibility {dual_violation:e}"
        )));
    }
    if cs_violation > OPT_TOL * (1.0 + obj.abs() + b_scale) {
        return Err(LpError::ValidationFailed(format!(
            "complementary slackness violation {cs_violation:e}"
        )));
    }
    let gap = (obj - dual_objective).abs();
    if gap > OPT_TOL * (1.0 + obj.abs()) {
        return Err(LpError::ValidationFailed(format!("duality gap {gap:e}")));
    }
    Ok(())
}

/// Solve `min c'v  s.t.  A v >= b` exactly, reporting primal and dual
/// solutions for optimal problems and a certificate otherwise.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    solve_lp_with(problem, &LpOptions::default())
}

pub fn solve_lp_with(problem: &LpProblem, options: &LpOptions) -> Result<LpSolution, LpError> {
    let standard = standard_form(problem, true, false);
    let outcome = Engine::new(&standard, options.max_iterations).solve()?;
    match outcome {
        StandardOutcome::Optimal {
            x,
            multipliers,
            objective: dual_objective,
            iterations,
        } => {
            let primal = multipliers;
            let objective_value: f64 = problem
                .objective
                .iter()
                .zip(&primal)
                .map(|(c, v)| c * v)
                .sum();
            if (objective_value - dual_objective).abs()
                > OPT_TOL * (1.0 + objective_value.abs())
            {
                return Err(LpError::ValidationFailed(format!(
                    "primal/dual objective mismatch: {objective_value} vs {dual_objective}"
                )));
            }
            let solution = LpSolution {
                status: LpStatus::Optimal,
                primal,
                dual: x.into_iter().map(|v| v.max(0.0)).collect(),
                objective_value,
                ray: None,
                farkas: None,
                iterations,
            };
            check_optimality(problem, &solution)?;
            Ok(solution)
        }
        StandardOutcome::Unbounded { ray, iterations } => {
            // The standard form is the dual of the stated problem, so an
            // improving ray there is a certificate that the stated problem
            // is infeasible.
            Ok(LpSolution {
                status: LpStatus::Infeasible,
                primal: Vec::new(),
                dual: Vec::new(),
                objective_value: f64::NAN,
                ray: None,
                farkas: Some(ray),
                iterations,
            })
        }
        StandardOutcome::Infeasible { iterations, .. } => {
            disambiguate_unbounded_or_infeasible(problem, options, iterations)
        }
    }
}

/// The standard form was infeasible, so the stated problem is unbounded or
/// infeasible. A homogeneous certificate search separates the two cases.
fn disambiguate_unbounded_or_infeasible(
    problem: &LpProblem,
    options: &LpOptions,
    iterations_so_far: usize,
) -> Result<LpSolution, LpError> {
    // Search for mu >= 0 with A'mu = 0 and b'mu > 0: a witness that
    // A v >= b has no solution.
    let homogeneous = standard_form(problem, true, true);
    match Engine::new(&homogeneous, options.max_iterations).solve()? {
        StandardOutcome::Unbounded { ray, iterations } => {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                primal: Vec::new(),
                dual: Vec::new(),
                objective_value: f64::NAN,
                ray: None,
                farkas: Some(ray),
                iterations: iterations_so_far + iterations,
            });
        }
        StandardOutcome::Optimal { objective, iterations, .. } => {
            if objective > 1e-7 {
                return Err(LpError::Internal(format!(
                    "homogeneous program ended optimal with positive value {objective}"
                )));
            }
            // No witness: the problem is feasible, hence unbounded. Recover
            // an improving ray from `min c'd  s.t.  A d >= 0, c'd >= -1`.
            let mut ray_constraints: Vec<(Vec<(usize, f64)>, f64)> = problem
                .constraints
                .iter()
                .map(|c| {
                    (
                        c.coeffs.iter().map(|&(i, a)| (i as usize, a)).collect(),
                        0.0,
                    )
                })
                .collect();
            ray_constraints.push((
                problem
                    .objective
                    .iter()
                    .enumerate()
                    .filter(|&(_, c)| *c != 0.0)
                    .map(|(i, &c)| (i, c))
                    .collect(),
                -1.0,
            ));
            let ray_problem =
                LpProblem::new(problem.num_vars, problem.objective.clone(), ray_constraints)?;
            let standard = standard_form(&ray_problem, true, false);
            match Engine::new(&standard, options.max_iterations).solve()? {
                StandardOutcome::Optimal {
                    multipliers,
                    objective,
                    iterations: ray_iters,
                    ..
                } => {
                    if objective > -0.5 {
                        return Err(LpError::Internal(format!(
                            "ray search ended with objective {objective}, expected -1"
                        )));
                    }
                    Ok(LpSolution {
                        status: LpStatus::Unbounded,
                        primal: Vec::new(),
                        dual: Vec::new(),
                        objective_value: f64::NAN,
                        ray: Some(multipliers),
                        farkas: None,
                        iterations: iterations_so_far + iterations + ray_iters,
                    })
                }
                other => Err(LpError::Internal(format!(
                    "ray search ended unexpectedly: {other:?}"
                ))),
            }
        }
        StandardOutcome::Infeasible { residual, .. } => Err(LpError::Internal(format!(
            "homogeneous program reported infeasible (residual {residual:e})"
        ))),
    }
}

/// Materialize the one-step inequality relaxation of an MDP as an
/// [`LpProblem`]: variables are states, and for every state-action pair
/// (states ascending, actions in canonical order) the constraint
/// `v(x) - discount * sum_y P(y|x,a) v(y) >= R(x,a)`.
pub fn exact_lp_problem(mdp: &Mdp, c: &[f64]) -> Result<LpProblem, LpError> {
    check_cost_vector(mdp, c)?;
    let mut constraints = Vec::with_capacity(mdp.num_state_actions());
    for x in 0..mdp.num_states() {
        for a in 0..mdp.num_actions(x) {
            let mut coeffs: Vec<(usize, f64)> = vec![(x, 1.0)];
            for &(y, p) in mdp.row(x, a) {
                coeffs.push((y as usize, -mdp.discount() * p));
            }
            constraints.push((coeffs, mdp.reward(x, a)));
        }
    }
    LpProblem::new(mdp.num_states(), c.to_vec(), constraints)
}

fn check_cost_vector(mdp: &Mdp, c: &[f64]) -> Result<(), LpError> {
    if c.len() != mdp.num_states() {
        return Err(LpError::Invalid(format!(
            "cost vector has {} entries for {} states",
            c.len(),
            mdp.num_states()
        )));
    }
    for (i, &v) in c.iter().enumerate() {
        if !v.is_finite() {
            return Err(LpError::Invalid(format!("non-finite cost entry {i}")));
        }
        if v < 0.0 {
            return Err(LpError::NegativeCost { index: i, value: v });
        }
    }
    Ok(())
}

/// Exact-LP solve specialized to MDPs.
///
/// For any nonnegative cost vector the optimal point of the one-step
/// inequality relaxation is the optimal value function, so the primal side
/// is computed by value iteration polished with a policy evaluation of the
/// greedy policy. The dual side is the discounted occupancy of that policy
/// seeded by the cost vector, scattered over the constraint order of
/// [`exact_lp_problem`]; it is nonnegative, complementary, and achieves the
/// primal objective. With an all-zero cost vector the objective no longer
/// pins the solution; the returned primal is still the optimal value
/// function and the dual is identically zero.
pub fn solve_mdp_exact_lp(mdp: &Mdp, c: &[f64]) -> Result<LpSolution, LpError> {
    check_cost_vector(mdp, c)?;
    let n = mdp.num_states();
    let lambda = mdp.discount();

    let (v0, mut iterations) = value_iteration(mdp, EXACT_VI_TOL, 2_000_000)?;
    let policy = greedy_policy(mdp, &v0)?;
    let vstar = policy_evaluation(mdp, &policy)?;
    // The polished value must still satisfy the one-step inequalities; if
    // the greedy policy were not optimal this residual would be positive.
    let report = bellman_inequality_residuals(mdp, &vstar)?;
    let scale = 1.0 + vstar.sup_norm();
    if report.max_residual > 1e-8 * scale {
        return Err(LpError::ValidationFailed(format!(
            "polished value violates one-step inequalities by {:e} at state {}",
            report.max_residual, report.state
        )));
    }

    // Occupancy dual: solve (I - lambda P_pi)' mu = c.
    let mu_pi = if n <= DENSE_SOLVE_MAX_STATES {
        let mut a = nalgebra::DMatrix::<f64>::identity(n, n);
        for x in 0..n {
            for &(y, p) in mdp.row(x, policy.action_index(x)) {
                a[(y as usize, x)] -= lambda * p;
            }
        }
        let b = nalgebra::DVector::from_column_slice(c);
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| LpError::Internal("occupancy solve failed".into()))?;
        sol.iter().copied().collect::<Vec<f64>>()
    } else {
        // Fixed-point iteration mu <- c + lambda P' mu; contraction in the
        // l1 norm with modulus lambda.
        let mut mu = c.to_vec();
        let max_rounds = 2_000_000usize;
        let c_mass: f64 = c.iter().sum();
        let tol = 1e-12 * (1.0 + c_mass);
        let mut converged = false;
        for _ in 0..max_rounds {
            iterations += 1;
            let mut next = c.to_vec();
            for x in 0..n {
                let m = mu[x];
                if m == 0.0 {
                    continue;
                }
                for &(y, p) in mdp.row(x, policy.action_index(x)) {
                    next[y as usize] += lambda * p * m;
                }
            }
            let delta: f64 = next
                .iter()
                .zip(&mu)
                .map(|(a, b)| (a - b).abs())
                .sum();
            mu = next;
            if delta <= tol * (1.0 - lambda) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(LpError::Internal("occupancy iteration stalled".into()));
        }
        mu
    };

    // Scatter over the exact-LP constraint order and verify nonnegativity.
    let mut dual = vec![0.0f64; mdp.num_state_actions()];
    let mut offset = 0usize;
    let mut dual_objective = 0.0;
    for x in 0..n {
        let ai = policy.action_index(x);
        let m = mu_pi[x];
        if m < -1e-9 * (1.0 + c.iter().fold(0.0f64, |s, v| s.max(*v))) {
            return Err(LpError::ValidationFailed(format!(
                "negative occupancy {m} at state {x}"
            )));
        }
        dual[offset + ai] = m.max(0.0);
        dual_objective += m.max(0.0) * mdp.reward(x, ai);
        offset += mdp.num_actions(x);
    }

    let objective_value: f64 = c.iter().zip(vstar.as_slice()).map(|(a, b)| a * b).sum();
    if (objective_value - dual_objective).abs() > OPT_TOL * (1.0 + objective_value.abs()) {
        return Err(LpError::ValidationFailed(format!(
            "objective mismatch between value and occupancy sides: {objective_value} vs {dual_objective}"
        )));
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        primal: vstar.into_vec(),
        dual,
        objective_value,
        ray: None,
        farkas: None,
        iterations,
    })
}

/// Convenience: the optimal value function via the specialized exact solve.
pub fn exact_optimal_value(mdp: &Mdp) -> Result<ValueFunction, LpError> {
    let c = vec![1.0; mdp.num_states()];
    let solution = solve_mdp_exact_lp(mdp, &c)?;
    Ok(ValueFunction::new(solution.primal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpBuilder;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn two_cycle() -> Mdp {
        let mut b = MdpBuilder::new(2, 0.5);
        b.add_action(0, 0, 1.0, &[(1, 1.0)]).unwrap();
        b.add_action(1, 0, 0.0, &[(0, 1.0)]).unwrap();
        b.build().unwrap()
    }

    #[test]
    fn scalar_bound_is_tight() {
        let p = LpProblem::new(1, vec![1.0], vec![(vec![(0, 1.0)], 3.0)]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_close(s.primal[0], 3.0, 1e-10);
        assert_close(s.dual[0], 1.0, 1e-10);
        assert_close(s.objective_value, 3.0, 1e-10);
    }

    #[test]
    fn two_variable_vertex_solution() {
        let p = LpProblem::new(
            2,
            vec![1.0, 1.0],
            vec![
                (vec![(0, 1.0)], 1.0),
                (vec![(1, 1.0)], 2.0),
                (vec![(0, 1.0), (1, 1.0)], 4.0),
            ],
        )
        .unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_close(s.objective_value, 4.0, 1e-10);
        // Any optimal vertex satisfies the binding sum constraint.
        assert_close(s.primal[0] + s.primal[1], 4.0, 1e-10);
        assert!(s.primal[0] >= 1.0 - 1e-10 && s.primal[1] >= 2.0 - 1e-10);
        check_optimality(&p, &s).unwrap();
    }

    #[test]
    fn negative_optimum_with_free_variables() {
        let p = LpProblem::new(1, vec![1.0], vec![(vec![(0, 1.0)], -5.0)]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_close(s.primal[0], -5.0, 1e-10);
    }

    #[test]
    fn detects_infeasibility_with_certificate() {
        // v >= 3 and -v >= -2 clash.
        let p = LpProblem::new(
            1,
            vec![1.0],
            vec![(vec![(0, 1.0)], 3.0), (vec![(0, -1.0)], -2.0)],
        )
        .unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Infeasible);
        let w = s.farkas.expect("certificate");
        // A'w = 0 and b'w > 0.
        assert_close(w[0] - w[1], 0.0, 1e-9);
        assert!(3.0 * w[0] - 2.0 * w[1] > 1e-6);
    }

    #[test]
    fn detects_unboundedness_with_ray() {
        // min -v with v >= 0 runs off to +infinity.
        let p = LpProblem::new(1, vec![-1.0], vec![(vec![(0, 1.0)], 0.0)]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Unbounded);
        let ray = s.ray.expect("ray");
        assert!(ray[0] > 1e-9);
    }

    #[test]
    fn zero_objective_returns_a_feasible_point() {
        let p = LpProblem::new(1, vec![0.0], vec![(vec![(0, 1.0)], 3.0)]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(s.primal[0] >= 3.0 - 1e-9);
        assert_close(s.objective_value, 0.0, 1e-12);
    }

    #[test]
    fn unconstrained_variable_with_zero_cost_is_tolerated() {
        // Variable 1 appears nowhere; its dual equality row is dependent.
        let p = LpProblem::new(2, vec![1.0, 0.0], vec![(vec![(0, 1.0)], 1.0)]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_close(s.objective_value, 1.0, 1e-10);
        assert_close(s.primal[0], 1.0, 1e-10);
    }

    #[test]
    fn degenerate_duplicate_constraints() {
        let p = LpProblem::new(
            1,
            vec![1.0],
            vec![
                (vec![(0, 1.0)], 3.0),
                (vec![(0, 1.0)], 3.0),
                (vec![(0, 2.0)], 6.0),
            ],
        )
        .unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_close(s.primal[0], 3.0, 1e-10);
        check_optimality(&p, &s).unwrap();
    }

    #[test]
    fn cycle_mdp_through_generic_solver() {
        let mdp = two_cycle();
        let p = exact_lp_problem(&mdp, &[1.0, 1.0]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_close(s.primal[0], 4.0 / 3.0, 1e-9);
        assert_close(s.primal[1], 2.0 / 3.0, 1e-9);

        // A cost vector with a zero entry still pins the same unique vertex.
        let p = exact_lp_problem(&mdp, &[1.0, 0.0]).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_close(s.primal[0], 4.0 / 3.0, 1e-9);
        assert_close(s.primal[1], 2.0 / 3.0, 1e-9);
    }

    #[test]
    fn specialized_solve_agrees_with_generic_route() {
        let mut b = MdpBuilder::new(3, 0.8);
        b.add_action(0, 0, 0.5, &[(1, 0.6), (2, 0.4)]).unwrap();
        b.add_action(0, 1, 0.2, &[(0, 1.0)]).unwrap();
        b.add_action(1, 0, -0.3, &[(2, 1.0)]).unwrap();
        b.add_action(1, 1, 0.1, &[(0, 0.5), (1, 0.5)]).unwrap();
        b.add_action(2, 0, 1.0, &[(0, 0.9), (2, 0.1)]).unwrap();
        let mdp = b.build().unwrap();
        let c = vec![0.7, 1.3, 0.5];

        let fast = solve_mdp_exact_lp(&mdp, &c).unwrap();
        let problem = exact_lp_problem(&mdp, &c).unwrap();
        let slow = solve_lp(&problem).unwrap();

        for x in 0..3 {
            assert_close(fast.primal[x], slow.primal[x], 1e-7);
        }
        assert_close(fast.objective_value, slow.objective_value, 1e-7);
        // The occupancy dual must pass the same optimality audit.
        check_optimality(&problem, &fast).unwrap();
        check_optimality(&problem, &slow).unwrap();
    }

    #[test]
    fn specialized_solve_zero_cost_degenerate_case() {
        let mdp = two_cycle();
        let s = solve_mdp_exact_lp(&mdp, &[0.0, 0.0]).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_close(s.primal[0], 4.0 / 3.0, 1e-9);
        assert!(s.dual.iter().all(|&m| m == 0.0));
        assert_close(s.objective_value, 0.0, 1e-12);
    }

    #[test]
    fn negative_cost_entries_are_rejected() {
        let mdp = two_cycle();
        let err = solve_mdp_exact_lp(&mdp, &[1.0, -0.1]).unwrap_err();
        assert!(matches!(err, LpError::NegativeCost { index: 1, .. }));
    }

    #[test]
    fn text_format_round_trips() {
        let p = LpProblem::new(
            3,
            vec![1.0, 0.0, 2.5],
            vec![
                (vec![(0, 1.0)], 3.0),
                (vec![(0, 1.0), (2, -0.9)], 1.2),
                (vec![], -1.0),
            ],
        )
        .unwrap();
        let text = p.to_text();
        let back = LpProblem::from_text(&text).unwrap();
        assert_eq!(p, back);

        assert!(matches!(
            LpProblem::from_text("max 1 2\n"),
            Err(LpError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            LpProblem::from_text("min 1\n0:1 1.0\n"),
            Err(LpError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_constraint_semantics() {
        // `0 >= 1` is infeasible on its own.
        let p = LpProblem::new(1, vec![1.0], vec![(vec![], 1.0), (vec![(0, 1.0)], 0.0)])
            .unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Infeasible);

        // `0 >= -1` is vacuous.
        let p = LpProblem::new(1, vec![1.0], vec![(vec![], -1.0), (vec![(0, 1.0)], 0.0)])
            .unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_close(s.primal[0], 0.0, 1e-10);
    }
}
