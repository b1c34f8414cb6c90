//! Hard state aggregation and the value bounds it induces.
//!
//! A [`Partitioning`] groups states into blocks. Requiring a value function
//! to be constant on each block turns the one-step inequality relaxation
//! into a smaller program over block values whose optimum, lifted back to
//! states, dominates the optimal value function from above. This module
//! builds and solves that block-restricted program, condenses its optimal
//! duals into a reduced model over blocks whose exact solve reproduces the
//! restricted optimum, forms the cyclic multi-copy variant of the
//! restricted program, and runs an exhaustive selection oracle for the
//! disjunctive lower-bound program driven by the per-block successor-tuple
//! structure.

use crate::lp::{solve_lp, solve_mdp_exact_lp, LpError, LpProblem, LpStatus};
use crate::mdp::{Mdp, MdpBuilder, MdpError, ValueFunction};
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

/// Largest number of tuple selections the brute-force oracle will
/// enumerate by default.
pub const DEFAULT_SELECTION_CAP: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error("partitioning covers {got} states but the model has {expected}")]
    StateCountMismatch { expected: usize, got: usize },
    #[error("block label {label} out of range for {num_blocks} blocks")]
    BlockOutOfRange { label: u32, num_blocks: usize },
    #[error("block {index} has no member states")]
    EmptyBlock { index: usize },
    #[error("cost vector has {got} entries for {expected} states")]
    CostLengthMismatch { expected: usize, got: usize },
    #[error("cost entry {index} is negative or not finite ({value})")]
    BadCost { index: usize, value: f64 },
    #[error("weight vector has {got} entries for {expected} state-action pairs")]
    DualLengthMismatch { expected: usize, got: usize },
    #[error("weight entry {index} is negative or not finite ({value})")]
    BadDual { index: usize, value: f64 },
    #[error("every action of block {partition} has zero aggregated weight")]
    ZeroDualMass { partition: usize },
    #[error(
        "states {state_a} and {state_b} of block {partition} declare different action lists"
    )]
    MixedActionSets {
        partition: usize,
        state_a: usize,
        state_b: usize,
    },
    #[error("successor-tuple construction needs a model built from a disturbance table")]
    MissingDisturbanceTable,
    #[error(
        "{total} tuple selections exceed the cap of {cap}; \
         build the collapsed lower-bound model instead of enumerating"
    )]
    SelectionCapExceeded { total: u128, cap: u64 },
    #[error("selection sweeps disagree: {forward} (forward) vs {reversed} (reversed)")]
    EnumerationMismatch { forward: f64, reversed: f64 },
    #[error("cycle length must be at least 2, got {0}")]
    CycleTooShort(usize),
    #[error("expected an optimal solve, got {status:?}")]
    UnexpectedStatus { status: LpStatus },
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// A surjective map from states onto blocks `0..M`, with every block
/// nonempty and member lists sorted by state index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    block_of: Vec<u32>,
    members: Vec<Vec<u32>>,
}

impl Partitioning {
    /// Build from an explicit state-to-block assignment. Every label must
    /// be below `num_blocks` and every block must receive at least one
    /// state.
    pub fn from_assignment(
        block_of: Vec<u32>,
        num_blocks: usize,
    ) -> Result<Self, AggregationError> {
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); num_blocks];
        for (x, &i) in block_of.iter().enumerate() {
            let slot = members
                .get_mut(i as usize)
                .ok_or(AggregationError::BlockOutOfRange {
                    label: i,
                    num_blocks,
                })?;
            slot.push(x as u32);
        }
        for (index, m) in members.iter().enumerate() {
            if m.is_empty() {
                return Err(AggregationError::EmptyBlock { index });
            }
        }
        Ok(Partitioning { block_of, members })
    }

    /// Every state in its own block.
    pub fn identity(num_states: usize) -> Self {
        Partitioning {
            block_of: (0..num_states as u32).collect(),
            members: (0..num_states as u32).map(|x| vec![x]).collect(),
        }
    }

    /// All states in one block.
    pub fn single_block(num_states: usize) -> Self {
        Partitioning {
            block_of: vec![0; num_states],
            members: vec![(0..num_states as u32).collect()],
        }
    }

    pub fn num_states(&self) -> usize {
        self.block_of.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.members.len()
    }

    pub fn block_of(&self, state: usize) -> usize {
        self.block_of[state] as usize
    }

    /// Member states of a block, ascending.
    pub fn members(&self, block: usize) -> &[u32] {
        &self.members[block]
    }

    /// Per-block sums of a per-state cost vector.
    pub fn aggregate_costs(&self, c: &[f64]) -> Result<Vec<f64>, AggregationError> {
        if c.len() != self.num_states() {
            return Err(AggregationError::CostLengthMismatch {
                expected: self.num_states(),
                got: c.len(),
            });
        }
        let mut out = vec![0.0; self.num_blocks()];
        for (x, &v) in c.iter().enumerate() {
            out[self.block_of(x)] += v;
        }
        Ok(out)
    }
}

/// Group states by an arbitrary key; blocks are numbered in order of first
/// appearance as states are scanned in index order.
pub fn build_partitioning<K, F>(mdp: &Mdp, mut key: F) -> Partitioning
where
    K: Eq + std::hash::Hash,
    F: FnMut(usize) -> K,
{
    let n = mdp.num_states();
    let mut index: HashMap<K, u32> = HashMap::new();
    let mut block_of = Vec::with_capacity(n);
    for x in 0..n {
        let next = index.len() as u32;
        let i = *index.entry(key(x)).or_insert(next);
        block_of.push(i);
    }
    let num_blocks = index.len();
    Partitioning::from_assignment(block_of, num_blocks)
        .expect("labels are dense by construction")
}

/// One value per block; lifts to a state-space [`ValueFunction`] that is
/// constant on every block.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateValue {
    values: Vec<f64>,
}

impl AggregateValue {
    pub fn new(values: Vec<f64>) -> Self {
        AggregateValue { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, block: usize) -> f64 {
        self.values[block]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Sup-norm distance to another block vector of the same length.
    pub fn sup_distance(&self, other: &AggregateValue) -> f64 {
        assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Expand to state space: state `x` takes the value of its block.
    pub fn lift(&self, part: &Partitioning) -> Result<ValueFunction, AggregationError> {
        if self.len() != part.num_blocks() {
            return Err(AggregationError::StateCountMismatch {
                expected: part.num_blocks(),
                got: self.len(),
            });
        }
        Ok(ValueFunction::new(
            (0..part.num_states())
                .map(|x| self.values[part.block_of(x)])
                .collect(),
        ))
    }

    /// CSV with header `partition_index,value` (values in shortest
    /// round-trippable decimal form, so output is byte-deterministic).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("partition_index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self, AggregationError> {
        let mut values = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line_no == 0 {
                if line.trim() != "partition_index,value" {
                    return Err(AggregationError::Csv {
                        line: 1,
                        message: format!("bad header {line:?}"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, ',');
            let idx: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| AggregationError::Csv {
                    line: line_no + 1,
                    message: "bad partition index".into(),
                })?;
            let value: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| AggregationError::Csv {
                    line: line_no + 1,
                    message: "bad value".into(),
                })?;
            if idx != values.len() {
                return Err(AggregationError::Csv {
                    line: line_no + 1,
                    message: format!("expected partition index {}, got {idx}", values.len()),
                });
            }
            values.push(value);
        }
        Ok(AggregateValue { values })
    }
}

fn check_pair(mdp: &Mdp, part: &Partitioning) -> Result<(), AggregationError> {
    if part.num_states() != mdp.num_states() {
        return Err(AggregationError::StateCountMismatch {
            expected: mdp.num_states(),
            got: part.num_states(),
        });
    }
    Ok(())
}

fn check_costs(num_states: usize, c: &[f64]) -> Result<(), AggregationError> {
    if c.len() != num_states {
        return Err(AggregationError::CostLengthMismatch {
            expected: num_states,
            got: c.len(),
        });
    }
    for (index, &value) in c.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(AggregationError::BadCost { index, value });
        }
    }
    Ok(())
}

/// Constraint offsets of the canonical state-action order: states
/// ascending, each state's actions in declaration order.
fn constraint_offsets(mdp: &Mdp) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(mdp.num_states());
    let mut acc = 0usize;
    for x in 0..mdp.num_states() {
        offsets.push(acc);
        acc += mdp.num_actions(x);
    }
    offsets
}

/// The block-restricted relaxation: one variable per block, one constraint
/// per state-action pair (canonical order) of
/// `v(i(x)) - discount * sum_y P(y|x,u) v(i(y)) >= R(x,u)`, minimizing the
/// per-block sums of the state cost vector.
pub fn build_rlp(
    mdp: &Mdp,
    part: &Partitioning,
    c: &[f64],
) -> Result<LpProblem, AggregationError> {
    check_pair(mdp, part)?;
    check_costs(mdp.num_states(), c)?;
    let cbar = part.aggregate_costs(c)?;
    let lambda = mdp.discount();
    let mut constraints = Vec::with_capacity(mdp.num_state_actions());
    for x in 0..mdp.num_states() {
        for a in 0..mdp.num_actions(x) {
            let mut coeffs: Vec<(usize, f64)> = vec![(part.block_of(x), 1.0)];
            for &(y, p) in mdp.row(x, a) {
                coeffs.push((part.block_of(y as usize), -lambda * p));
            }
            constraints.push((coeffs, mdp.reward(x, a)));
        }
    }
    Ok(LpProblem::new(part.num_blocks(), cbar, constraints)?)
}

/// Optimal block values and constraint duals of the block-restricted
/// relaxation. `duals` follows the canonical state-action constraint order.
#[derive(Debug, Clone)]
pub struct RlpSolution {
    pub values: AggregateValue,
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

pub fn solve_rlp(
    mdp: &Mdp,
    part: &Partitioning,
    c: &[f64],
) -> Result<RlpSolution, AggregationError> {
    let problem = build_rlp(mdp, part, c)?;
    let solution = solve_lp(&problem)?;
    if solution.status != LpStatus::Optimal {
        return Err(AggregationError::UnexpectedStatus {
            status: solution.status,
        });
    }
    Ok(RlpSolution {
        values: AggregateValue::new(solution.primal),
        duals: solution.dual,
        objective: solution.objective_value,
        iterations: solution.iterations,
    })
}

/// Condense a model onto the blocks of a partitioning using one
/// nonnegative weight per state-action pair (canonical constraint order).
///
/// Block `i` keeps exactly the action labels that carry positive total
/// weight among its members; each kept action's reward and transition row
/// are the weight-proportional mixtures of the members' rewards and rows,
/// with successor probabilities accumulated per block. Solving the result
/// exactly reproduces the block-restricted optimum when the weights are
/// optimal duals of that program.
pub fn build_surrogate_mdp(
    mdp: &Mdp,
    part: &Partitioning,
    weights: &[f64],
) -> Result<Mdp, AggregationError> {
    check_pair(mdp, part)?;
    if weights.len() != mdp.num_state_actions() {
        return Err(AggregationError::DualLengthMismatch {
            expected: mdp.num_state_actions(),
            got: weights.len(),
        });
    }
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(AggregationError::BadDual { index, value });
        }
    }
    let offsets = constraint_offsets(mdp);
    let m = part.num_blocks();
    let mut builder = MdpBuilder::new(m, mdp.discount());
    for i in 0..m {
        // Label order: first occurrence across members in member order.
        let mut labels: Vec<i32> = Vec::new();
        let mut masses: Vec<f64> = Vec::new();
        for &x in part.members(i) {
            let x = x as usize;
            for (a, &label) in mdp.actions(x).iter().enumerate() {
                let w = weights[offsets[x] + a];
                match labels.iter().position(|&l| l == label) {
                    Some(k) => masses[k] += w,
                    None => {
                        labels.push(label);
                        masses.push(w);
                    }
                }
            }
        }
        let mut kept_any = false;
        for (k, &label) in labels.iter().enumerate() {
            if masses[k] <= 0.0 {
                continue;
            }
            kept_any = true;
            let mut acc = vec![0.0f64; m];
            let mut reward = 0.0;
            for &x in part.members(i) {
                let x = x as usize;
                if let Some(a) = mdp.action_index(x, label) {
                    let h = weights[offsets[x] + a] / masses[k];
                    if h == 0.0 {
                        continue;
                    }
                    reward += h * mdp.reward(x, a);
                    for &(y, p) in mdp.row(x, a) {
                        acc[part.block_of(y as usize)] += h * p;
                    }
                }
            }
            // The mixture of unit-sum rows has unit sum up to accumulation
            // dust; rescale within a tight band so construction stays exact.
            let sum: f64 = acc.iter().sum();
            let scale = if (sum - 1.0).abs() <= 1e-9 { 1.0 / sum } else { 1.0 };
            let row: Vec<(usize, f64)> = acc
                .iter()
                .enumerate()
                .filter(|&(_, &p)| p > 0.0)
                .map(|(j, &p)| (j, p * scale))
                .collect();
            builder.add_action(i, label, reward, &row)?;
        }
        if !kept_any {
            return Err(AggregationError::ZeroDualMass { partition: i });
        }
    }
    Ok(builder.build()?)
}

/// The cyclic multi-copy variant of the block-restricted relaxation:
/// `cycle_len` copies of the block variables, with each state-action
/// constraint binding one copy to its predecessor and the first copy to
/// the last, minimizing the per-block cost sums over every copy.
///
/// Copy `t` occupies variables `t*M .. (t+1)*M`. Constraint blocks appear
/// in cycle order: copy 1 against copy 0, copy 2 against copy 1, ...,
/// and finally copy 0 against the last copy; within a block the canonical
/// state-action order is kept.
pub fn build_iterated_bellman_lp(
    mdp: &Mdp,
    part: &Partitioning,
    c: &[f64],
    cycle_len: usize,
) -> Result<LpProblem, AggregationError> {
    if cycle_len < 2 {
        return Err(AggregationError::CycleTooShort(cycle_len));
    }
    check_pair(mdp, part)?;
    check_costs(mdp.num_states(), c)?;
    let cbar = part.aggregate_costs(c)?;
    let m = part.num_blocks();
    let lambda = mdp.discount();
    let num_vars = cycle_len * m;
    let mut objective = Vec::with_capacity(num_vars);
    for _ in 0..cycle_len {
        objective.extend_from_slice(&cbar);
    }
    let mut edges: Vec<(usize, usize)> = (1..cycle_len).map(|t| (t, t - 1)).collect();
    edges.push((0, cycle_len - 1));
    let mut constraints = Vec::with_capacity(cycle_len * mdp.num_state_actions());
    for (target, source) in edges {
        for x in 0..mdp.num_states() {
            for a in 0..mdp.num_actions(x) {
                let mut coeffs: Vec<(usize, f64)> =
                    vec![(target * m + part.block_of(x), 1.0)];
                for &(y, p) in mdp.row(x, a) {
                    coeffs.push((source * m + part.block_of(y as usize), -lambda * p));
                }
                constraints.push((coeffs, mdp.reward(x, a)));
            }
        }
    }
    Ok(LpProblem::new(num_vars, objective, constraints)?)
}

/// Split the stacked solution of the cyclic multi-copy program into one
/// block vector per copy.
pub fn split_cyclic_solution(stacked: &[f64], num_blocks: usize) -> Vec<AggregateValue> {
    assert!(num_blocks > 0 && stacked.len() % num_blocks == 0);
    stacked
        .chunks(num_blocks)
        .map(|chunk| AggregateValue::new(chunk.to_vec()))
        .collect()
}

/// One distinct successor-block tuple of a (block, action) pair: the block
/// of each disturbance outcome's successor, the first member state
/// realizing the tuple, and the weakest reward among realizing members
/// (so the tuple's constraint is implied by each of those members').
#[derive(Debug, Clone, PartialEq)]
pub struct TupleEntry {
    pub tuple: Vec<u32>,
    pub witness: u32,
    pub reward: f64,
}

/// Per (block, action): the distinct successor-block tuples across the
/// block's members, in order of first realization.
#[derive(Debug, Clone)]
pub struct TupleTable {
    num_outcomes: usize,
    actions: Vec<Vec<i32>>,
    entries: Vec<Vec<Vec<TupleEntry>>>,
}

impl TupleTable {
    pub fn num_blocks(&self) -> usize {
        self.actions.len()
    }

    /// Number of disturbance outcomes, i.e. components per tuple.
    pub fn num_outcomes(&self) -> usize {
        self.num_outcomes
    }

    /// Common action labels of a block's members.
    pub fn actions(&self, block: usize) -> &[i32] {
        &self.actions[block]
    }

    pub fn entries(&self, block: usize, action_pos: usize) -> &[TupleEntry] {
        &self.entries[block][action_pos]
    }

    pub fn cardinality(&self, block: usize, action_pos: usize) -> usize {
        self.entries[block][action_pos].len()
    }

    /// CSV with header
    /// `partition,action,tuple_id,k0,..,k{m},witness_state,cardinality`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("partition,action,tuple_id");
        for l in 0..self.num_outcomes {
            out.push_str(&format!(",k{l}"));
        }
        out.push_str(",witness_state,cardinality\n");
        for i in 0..self.num_blocks() {
            for (a, &label) in self.actions[i].iter().enumerate() {
                let list = &self.entries[i][a];
                for (t, entry) in list.iter().enumerate() {
                    out.push_str(&format!("{i},{label},{t}"));
                    for &k in &entry.tuple {
                        out.push_str(&format!(",{k}"));
                    }
                    out.push_str(&format!(",{},{}\n", entry.witness, list.len()));
                }
            }
        }
        out
    }
}

/// Enumerate the distinct successor-block tuples of every (block, action)
/// pair. Requires the model to carry a disturbance table (tuples are
/// indexed by outcome) and every block's members to declare identical
/// action lists.
pub fn build_tuple_table(
    mdp: &Mdp,
    part: &Partitioning,
) -> Result<TupleTable, AggregationError> {
    check_pair(mdp, part)?;
    let table = mdp
        .disturbance()
        .ok_or(AggregationError::MissingDisturbanceTable)?;
    let m = part.num_blocks();
    let mut actions = Vec::with_capacity(m);
    let mut entries = Vec::with_capacity(m);
    for i in 0..m {
        let members = part.members(i);
        let first = members[0] as usize;
        let labels = mdp.actions(first).to_vec();
        for &x in &members[1..] {
            if mdp.actions(x as usize) != labels.as_slice() {
                return Err(AggregationError::MixedActionSets {
                    partition: i,
                    state_a: first,
                    state_b: x as usize,
                });
            }
        }
        let mut per_action = Vec::with_capacity(labels.len());
        for a in 0..labels.len() {
            let mut list: Vec<TupleEntry> = Vec::new();
            for &x in members {
                let x = x as usize;
                let tuple: Vec<u32> = table
                    .successors(x, a)
                    .iter()
                    .map(|&y| part.block_of(y as usize) as u32)
                    .collect();
                let reward = mdp.reward(x, a);
                match list.iter_mut().find(|e| e.tuple == tuple) {
                    Some(entry) => entry.reward = entry.reward.min(reward),
                    None => list.push(TupleEntry {
                        tuple,
                        witness: x as u32,
                        reward,
                    }),
                }
            }
            per_action.push(list);
        }
        actions.push(labels);
        entries.push(per_action);
    }
    Ok(TupleTable {
        num_outcomes: table.num_outcomes(),
        actions,
        entries,
    })
}

/// Result of the exhaustive disjunctive-program oracle: the best block
/// values found, their objective, and the winning choice of one tuple per
/// (block, action) slot in canonical order.
#[derive(Debug, Clone)]
pub struct NlpOracleResult {
    pub values: AggregateValue,
    pub objective: f64,
    pub selection: Vec<u32>,
    pub num_selections: u64,
}

struct SelectionSpace<'a> {
    table: &'a TupleTable,
    probs: Vec<f64>,
    slots: Vec<(usize, usize)>,
    radices: Vec<u64>,
    discount: f64,
}

impl SelectionSpace<'_> {
    /// Decode a lexicographic rank: the first slot is most significant.
    fn decode_forward(&self, id: u64) -> Vec<u32> {
        let mut rem = id;
        let mut sel = vec![0u32; self.slots.len()];
        for k in (0..self.slots.len()).rev() {
            sel[k] = (rem % self.radices[k]) as u32;
            rem /= self.radices[k];
        }
        sel
    }

    /// Decode with the last slot most significant (independent sweep order).
    fn decode_reversed(&self, id: u64) -> Vec<u32> {
        let mut rem = id;
        let mut sel = vec![0u32; self.slots.len()];
        for k in 0..self.slots.len() {
            sel[k] = (rem % self.radices[k]) as u32;
            rem /= self.radices[k];
        }
        sel
    }

    /// Build the reduced model a selection defines and solve it exactly.
    fn evaluate(
        &self,
        selection: &[u32],
        cbar: &[f64],
    ) -> Result<(f64, Vec<f64>), AggregationError> {
        let m = self.table.num_blocks();
        let mut builder = MdpBuilder::new(m, self.discount);
        for (k, &(i, a)) in self.slots.iter().enumerate() {
            let entry = &self.table.entries(i, a)[selection[k] as usize];
            let row: Vec<(usize, f64)> = entry
                .tuple
                .iter()
                .zip(&self.probs)
                .map(|(&block, &p)| (block as usize, p))
                .collect();
            builder.add_action(i, self.table.actions(i)[a], entry.reward, &row)?;
        }
        let reduced = builder.build()?;
        let solution = solve_mdp_exact_lp(&reduced, cbar)?;
        Ok((solution.objective_value, solution.primal))
    }
}

fn better(a: (f64, u64), b: (f64, u64)) -> (f64, u64) {
    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// Exhaustive oracle for the disjunctive lower-bound program with the
/// default selection cap. See [`solve_nlp_bruteforce_with_cap`].
pub fn solve_nlp_bruteforce(
    mdp: &Mdp,
    part: &Partitioning,
    c: &[f64],
) -> Result<NlpOracleResult, AggregationError> {
    solve_nlp_bruteforce_with_cap(mdp, part, c, DEFAULT_SELECTION_CAP)
}

/// Enumerate every choice of one successor-block tuple per (block, action)
/// slot, solve the reduced model each choice defines exactly, and return
/// the minimum objective over all choices.
///
/// Every choice is solved (no incumbent pruning) and the sweep is repeated
/// in an independent enumeration order as a self-check; ties in objective
/// are broken by the smallest lexicographic rank, so the result is
/// deterministic. The product of tuple counts must not exceed `cap`.
pub fn solve_nlp_bruteforce_with_cap(
    mdp: &Mdp,
    part: &Partitioning,
    c: &[f64],
    cap: u64,
) -> Result<NlpOracleResult, AggregationError> {
    check_costs(mdp.num_states(), c)?;
    let table = build_tuple_table(mdp, part)?;
    let cbar = part.aggregate_costs(c)?;

    let mut slots = Vec::new();
    let mut radices = Vec::new();
    let mut total: u128 = 1;
    for i in 0..table.num_blocks() {
        for a in 0..table.actions(i).len() {
            slots.push((i, a));
            let r = table.cardinality(i, a) as u64;
            radices.push(r);
            total = total.saturating_mul(r as u128);
        }
    }
    if total > cap as u128 {
        return Err(AggregationError::SelectionCapExceeded { total, cap });
    }
    let total = total as u64;
    let space = SelectionSpace {
        table: &table,
        probs: mdp
            .disturbance()
            .expect("checked by build_tuple_table")
            .probs()
            .to_vec(),
        slots,
        radices,
        discount: mdp.discount(),
    };

    let forward = (0..total)
        .into_par_iter()
        .map(|id| {
            let sel = space.decode_forward(id);
            space.evaluate(&sel, &cbar).map(|(obj, _)| (obj, id))
        })
        .try_reduce(|| (f64::INFINITY, u64::MAX), |a, b| Ok(better(a, b)))?;

    let reversed = (0..total)
        .into_par_iter()
        .map(|id| {
            let sel = space.decode_reversed(id);
            space.evaluate(&sel, &cbar).map(|(obj, _)| obj)
        })
        .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))?;

    if (forward.0 - reversed).abs() > 1e-9 * (1.0 + forward.0.abs()) {
        return Err(AggregationError::EnumerationMismatch {
            forward: forward.0,
            reversed,
        });
    }

    let selection = space.decode_forward(forward.1);
    let (objective, values) = space.evaluate(&selection, &cbar)?;
    Ok(NlpOracleResult {
        values: AggregateValue::new(values),
        objective,
        selection,
        num_selections: total,
    })
}
