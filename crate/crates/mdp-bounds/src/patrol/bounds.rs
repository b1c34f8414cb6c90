//! Collapsed block-level bound models.
//!
//! Every (block, action) pair has a single successor-block tuple except
//! loitering at an alerted station while another station is alerted, where
//! the members' hidden delay spread produces several tuples. Picking the
//! tuple with the smallest successor maximum delay per pair yields a block
//! model whose exact solution matches the full block-restricted relaxation
//! (an upper bound on the optimum); picking the largest yields a model
//! whose solution lower-bounds the optimum blockwise. Large instances are
//! served by streaming sweeps that never materialize the transition table.

use super::partition::{KeySpace, PartitionKey, Representative};
use super::space::{PatrolState, StateSpace};
use super::PatrolError;
use crate::aggregation::AggregateValue;
use crate::lp::solve_mdp_exact_lp;
use crate::mdp::{Mdp, MdpBuilder};
use rayon::prelude::*;

/// Which side of the optimum a collapsed model bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Upper,
    Lower,
}

/// A block-level model together with the key enumeration it is indexed by.
#[derive(Debug)]
pub struct ReducedModel {
    kind: BoundKind,
    mdp: Mdp,
    keys: KeySpace,
}

impl ReducedModel {
    pub fn kind(&self) -> BoundKind {
        self.kind
    }

    /// The block-level model; state `i` is the block with key index `i`.
    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn keys(&self) -> &KeySpace {
        &self.keys
    }

    /// Exact optimal values of the block model.
    pub fn solve_values(&self) -> Result<AggregateValue, PatrolError> {
        let ones = vec![1.0; self.mdp.num_states()];
        let solution = solve_mdp_exact_lp(&self.mdp, &ones)?;
        Ok(AggregateValue::new(solution.primal))
    }
}

/// Collapsed model whose exact solution upper-bounds the optimal value on
/// every block: ties each loiter at a type-1 block to the members whose
/// other alerted stations are freshest (successor maximum delay 2).
pub fn build_ublp(config: &super::PatrolConfig) -> Result<ReducedModel, PatrolError> {
    build_reduced(config, BoundKind::Upper)
}

/// Collapsed model whose exact solution lower-bounds the block minimum of
/// the optimal value: ties each loiter at a type-1 block to the members
/// whose other alerted stations are stalest (successor maximum delay
/// `min(max_delay + 1, cap)`).
pub fn build_lblp(config: &super::PatrolConfig) -> Result<ReducedModel, PatrolError> {
    build_reduced(config, BoundKind::Lower)
}

fn successor_tuple(
    space: &StateSpace,
    keys: &KeySpace,
    member: &PatrolState,
    u: i32,
    scratch: &mut PatrolState,
) -> Vec<u64> {
    (0..space.num_outcomes())
        .map(|l| {
            space.transition_into(member, u, l, scratch);
            keys.index_of_key(&keys.key_of_state(scratch))
        })
        .collect()
}

fn build_reduced(
    config: &super::PatrolConfig,
    kind: BoundKind,
) -> Result<ReducedModel, PatrolError> {
    let space = StateSpace::new(config)?;
    let keys = KeySpace::new(config)?;
    let m = keys.num_keys() as usize;
    let mut builder = MdpBuilder::new(m, config.lambda);
    builder.set_disturbance_probs(space.alert_probabilities().to_vec());
    let mut scratch = space.state_of(0);
    for i in 0..m {
        let key = keys.key_of_index(i as u64);
        let stale = keys.representative(&key, Representative::AllAtMax);
        let fresh = keys.representative(&key, Representative::LocalMaxOthersMin);
        for &u in keys.admissible_actions(&key).as_slice() {
            let stale_tuple = successor_tuple(&space, &keys, &stale, u, &mut scratch);
            let fresh_tuple = successor_tuple(&space, &keys, &fresh, u, &mut scratch);
            let cardinality = keys.tuple_cardinality(&key, u);
            if cardinality == 1 && stale_tuple != fresh_tuple {
                return Err(PatrolError::StructureViolation {
                    block: i as u64,
                    action: u,
                    detail: format!(
                        "expected one successor tuple, representatives disagree: \
                         {stale_tuple:?} vs {fresh_tuple:?}"
                    ),
                });
            }
            if cardinality > 1 && stale_tuple == fresh_tuple {
                return Err(PatrolError::StructureViolation {
                    block: i as u64,
                    action: u,
                    detail: format!(
                        "expected {cardinality} successor tuples, representatives coincide"
                    ),
                });
            }
            let (chosen, expected_max) = match kind {
                BoundKind::Upper if cardinality > 1 => (&fresh_tuple, 2),
                BoundKind::Lower if cardinality > 1 => (
                    &stale_tuple,
                    (key.max_delay + 1).min(config.max_delay),
                ),
                _ => (&stale_tuple, keys.key_of_index(stale_tuple[0]).max_delay),
            };
            let successor_max = keys.key_of_index(chosen[0]).max_delay;
            if successor_max != expected_max {
                return Err(PatrolError::StructureViolation {
                    block: i as u64,
                    action: u,
                    detail: format!(
                        "selected tuple has successor maximum delay {successor_max}, \
                         expected {expected_max}"
                    ),
                });
            }
            let outcomes: Vec<usize> = chosen.iter().map(|&k| k as usize).collect();
            builder.add_action_outcomes(i, u, space.reward(&stale, u), &outcomes)?;
        }
    }
    Ok(ReducedModel {
        kind,
        mdp: builder.build()?,
        keys,
    })
}

const STREAM_CHUNK: usize = 4096;

fn stream_sweep<F>(space: &StateSpace, out: &mut [f64], per_state: F)
where
    F: Fn(&StateSpace, u64, &PatrolState, &mut PatrolState) -> f64 + Sync,
{
    out.par_chunks_mut(STREAM_CHUNK)
        .enumerate()
        .for_each(|(chunk, slot)| {
            let base = (chunk * STREAM_CHUNK) as u64;
            let mut state = space.state_of(0);
            let mut scratch = state.clone();
            for (k, value) in slot.iter_mut().enumerate() {
                let x = base + k as u64;
                space.state_of_into(x, &mut state);
                *value = per_state(space, x, &state, &mut scratch);
            }
        });
}

fn backup_value(
    space: &StateSpace,
    state: &PatrolState,
    values: &[f64],
    scratch: &mut PatrolState,
) -> f64 {
    let probs = space.alert_probabilities();
    let lambda = space.config().lambda;
    let mut best = f64::NEG_INFINITY;
    for &u in space.admissible_actions(state).as_slice() {
        let mut next = 0.0;
        for (l, &p) in probs.iter().enumerate() {
            next += p * values[space.successor_index(state, u, l, scratch) as usize];
        }
        best = best.max(space.reward(state, u) + lambda * next);
    }
    best
}

/// Optimal values over the full state enumeration by fixed-point sweeps
/// that recompute transitions on the fly. Memory is two value vectors; the
/// explicit model is never built. Returns the values and the sweep count.
pub fn optimal_values_streaming(
    space: &StateSpace,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize), PatrolError> {
    let n = space.num_states() as usize;
    let mut values = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    for iter in 1..=max_iters {
        {
            let current = &values[..];
            stream_sweep(space, &mut next, |space, _x, state, scratch| {
                backup_value(space, state, current, scratch)
            });
        }
        let residual = values
            .par_iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            return Ok((values, iter));
        }
    }
    Err(PatrolError::NonConvergence {
        iterations: max_iters,
        detail: "optimal-value sweeps did not reach the tolerance".into(),
    })
}

/// Greedy action labels with respect to arbitrary per-state continuation
/// values, computed streaming. Ties prefer the canonical order
/// `[0, +1, -1]`.
pub fn greedy_labels_from_values(space: &StateSpace, values: &[f64]) -> Vec<i32> {
    assert_eq!(values.len(), space.num_states() as usize);
    let probs = space.alert_probabilities();
    let lambda = space.config().lambda;
    let mut labels_f = vec![0.0f64; values.len()];
    stream_sweep(space, &mut labels_f, |space, _x, state, scratch| {
        let mut best_u = 0i32;
        let mut best_q = f64::NEG_INFINITY;
        for &u in space.admissible_actions(state).as_slice() {
            let mut next = 0.0;
            for (l, &p) in probs.iter().enumerate() {
                next += p * values[space.successor_index(state, u, l, scratch) as usize];
            }
            let q = space.reward(state, u) + lambda * next;
            if q > best_q {
                best_q = q;
                best_u = u;
            }
        }
        best_u as f64
    });
    labels_f.into_iter().map(|v| v as i32).collect()
}

/// Greedy labels with respect to block values lifted to states.
pub fn greedy_labels_from_block_values(
    space: &StateSpace,
    keys: &KeySpace,
    block_values: &AggregateValue,
) -> Vec<i32> {
    assert_eq!(block_values.len(), keys.num_keys() as usize);
    let probs = space.alert_probabilities();
    let lambda = space.config().lambda;
    let mut labels_f = vec![0.0f64; space.num_states() as usize];
    stream_sweep(space, &mut labels_f, |space, _x, state, scratch| {
        let mut best_u = 0i32;
        let mut best_q = f64::NEG_INFINITY;
        for &u in space.admissible_actions(state).as_slice() {
            let mut next = 0.0;
            for (l, &p) in probs.iter().enumerate() {
                space.transition_into(state, u, l, scratch);
                let block = keys.index_of_key(&keys.key_of_state(scratch));
                next += p * block_values.value(block as usize);
            }
            let q = space.reward(state, u) + lambda * next;
            if q > best_q {
                best_q = q;
                best_u = u;
            }
        }
        best_u as f64
    });
    labels_f.into_iter().map(|v| v as i32).collect()
}

/// Value of the stationary policy given by per-state action labels,
/// computed by streaming fixed-point sweeps.
pub fn policy_values_streaming(
    space: &StateSpace,
    labels: &[i32],
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize), PatrolError> {
    let n = space.num_states() as usize;
    assert_eq!(labels.len(), n);
    let probs = space.alert_probabilities();
    let lambda = space.config().lambda;
    let mut values = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    for iter in 1..=max_iters {
        {
            let current = &values[..];
            stream_sweep(space, &mut next, |space, x, state, scratch| {
                let u = labels[x as usize];
                debug_assert!(space.is_admissible(state, u));
                let mut cont = 0.0;
                for (l, &p) in probs.iter().enumerate() {
                    cont += p * current[space.successor_index(state, u, l, scratch) as usize];
                }
                space.reward(state, u) + lambda * cont
            });
        }
        let residual = values
            .par_iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            return Ok((values, iter));
        }
    }
    Err(PatrolError::NonConvergence {
        iterations: max_iters,
        detail: "policy-value sweeps did not reach the tolerance".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{build_tuple_table, solve_rlp};
    use crate::mdp::{greedy_policy, value_iteration};
    use crate::patrol::partition::build_reward_partitioning;
    use crate::patrol::test_fixtures::{desk_config, desk_space, tiny_config};

    #[test]
    fn reduced_models_mirror_the_enumerated_tuple_structure() {
        let config = desk_config();
        let space = desk_space();
        let mdp = space.build_mdp().unwrap();
        let (keys, partitioning) = build_reward_partitioning(&space).unwrap();
        let table = build_tuple_table(&mdp, &partitioning).unwrap();

        for model in [build_ublp(&config).unwrap(), build_lblp(&config).unwrap()] {
            let reduced = model.mdp();
            assert_eq!(reduced.num_states(), 216);
            for i in 0..reduced.num_states() {
                let key = keys.key_of_index(i as u64);
                assert_eq!(reduced.actions(i), table.actions(i));
                for (a, &label) in reduced.actions(i).iter().enumerate() {
                    // Predicted counts equal the enumerated counts.
                    assert_eq!(
                        keys.tuple_cardinality(&key, label),
                        table.cardinality(i, a) as u64,
                        "block {i} action {label}"
                    );
                    // The selected tuple is one of the enumerated tuples,
                    // and it is the extreme one for this bound side.
                    let chosen: Vec<u32> = reduced
                        .disturbance()
                        .unwrap()
                        .successors(i, a)
                        .to_vec();
                    let entries = table.entries(i, a);
                    assert!(
                        entries.iter().any(|e| e.tuple == chosen),
                        "block {i} action {label}: tuple not realized by any member"
                    );
                    let max_of = |tuple: &[u32]| {
                        keys.key_of_index(tuple[0] as u64).max_delay
                    };
                    let extreme = entries
                        .iter()
                        .map(|e| max_of(&e.tuple))
                        .fold(
                            match model.kind() {
                                BoundKind::Upper => u32::MAX,
                                BoundKind::Lower => 0,
                            },
                            |acc, v| match model.kind() {
                                BoundKind::Upper => acc.min(v),
                                BoundKind::Lower => acc.max(v),
                            },
                        );
                    assert_eq!(max_of(&chosen), extreme, "block {i} action {label}");
                }
            }
        }
    }

    #[test]
    fn upper_model_matches_the_restricted_relaxation() {
        let config = desk_config();
        let space = desk_space();
        let mdp = space.build_mdp().unwrap();
        let (_, partitioning) = build_reward_partitioning(&space).unwrap();
        let rlp = solve_rlp(&mdp, &partitioning, &vec![1.0; mdp.num_states()]).unwrap();
        let upper = build_ublp(&config).unwrap().solve_values().unwrap();
        assert!(
            rlp.values.sup_distance(&upper) <= 1e-6,
            "collapse mismatch: {}",
            rlp.values.sup_distance(&upper)
        );
    }

    #[test]
    fn bound_models_sandwich_the_optimal_value() {
        let config = desk_config();
        let space = desk_space();
        let mdp = space.build_mdp().unwrap();
        let (_, partitioning) = build_reward_partitioning(&space).unwrap();
        let (vstar, _) = value_iteration(&mdp, 1e-11, 1_000_000).unwrap();

        let upper = build_ublp(&config).unwrap().solve_values().unwrap();
        let lower = build_lblp(&config).unwrap().solve_values().unwrap();
        let lifted_upper = upper.lift(&partitioning).unwrap();
        let lifted_lower = lower.lift(&partitioning).unwrap();
        assert!(lifted_upper.dominates(&vstar, 1e-6));
        assert!(vstar.dominates(&lifted_lower, 1e-6));
    }

    #[test]
    fn single_station_instances_collapse_trivially() {
        // With one station there are no type-1 blocks, so both bound
        // models coincide with each other and with the restricted
        // relaxation.
        let mut config = tiny_config();
        config.stations = vec![0];
        let space = StateSpace::new(&config).unwrap();
        let mdp = space.build_mdp().unwrap();
        let (_, partitioning) = build_reward_partitioning(&space).unwrap();
        let rlp = solve_rlp(&mdp, &partitioning, &vec![1.0; mdp.num_states()]).unwrap();
        let upper = build_ublp(&config).unwrap().solve_values().unwrap();
        let lower = build_lblp(&config).unwrap().solve_values().unwrap();
        assert!(upper.sup_distance(&lower) <= 1e-7);
        assert!(rlp.values.sup_distance(&upper) <= 1e-6);
    }

    #[test]
    fn streaming_sweeps_agree_with_the_explicit_model() {
        let space = desk_space();
        let mdp = space.build_mdp().unwrap();
        let (vstar, _) = value_iteration(&mdp, 1e-11, 1_000_000).unwrap();
        let (streamed, _) = optimal_values_streaming(&space, 1e-11, 1_000_000).unwrap();
        let worst = vstar
            .as_slice()
            .iter()
            .zip(&streamed)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1e-9, "streamed values diverge by {worst}");

        let policy = greedy_policy(&mdp, &vstar).unwrap();
        let labels = greedy_labels_from_values(&space, &streamed);
        for x in 0..mdp.num_states() {
            assert_eq!(labels[x], policy.action_label(&mdp, x), "state {x}");
        }

        let (pol_values, _) =
            policy_values_streaming(&space, &labels, 1e-12, 1_000_000).unwrap();
        let eval = crate::mdp::policy_evaluation(&mdp, &policy).unwrap();
        let worst = eval
            .as_slice()
            .iter()
            .zip(&pol_values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1e-8, "policy values diverge by {worst}");
    }

    #[test]
    fn block_greedy_labels_match_lifted_value_greedy() {
        let config = desk_config();
        let space = desk_space();
        let (keys, partitioning) = build_reward_partitioning(&space).unwrap();
        let lower = build_lblp(&config).unwrap().solve_values().unwrap();
        let from_blocks = greedy_labels_from_block_values(&space, &keys, &lower);
        let lifted = lower.lift(&partitioning).unwrap();
        let from_values = greedy_labels_from_values(&space, lifted.as_slice());
        assert_eq!(from_blocks, from_values);
    }
}
