//! Componentwise dominance orders on states and blocks. A state dominates
//! another when both agree on location, direction, and dwell and every
//! station's delay is at least as large; larger delays can only hurt, so
//! dominance reverses the optimal-value order.

use super::partition::PartitionKey;
use super::space::PatrolState;

/// Outcome of comparing two states or two blocks in the dominance order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderVerdict {
    Equal,
    /// The first argument dominates (is at least as delayed as) the second.
    FirstDominates,
    SecondDominates,
    Incomparable,
}

/// Compare two states: comparable only with equal location, direction, and
/// dwell; then ordered by componentwise delay dominance.
pub fn state_partial_order(x1: &PatrolState, x2: &PatrolState) -> OrderVerdict {
    assert_eq!(x1.delays.len(), x2.delays.len(), "states from different models");
    if x1.location != x2.location || x1.direction != x2.direction || x1.dwell != x2.dwell {
        return OrderVerdict::Incomparable;
    }
    let mut ge = true;
    let mut le = true;
    for (&a, &b) in x1.delays.iter().zip(&x2.delays) {
        ge &= a >= b;
        le &= a <= b;
    }
    match (ge, le) {
        (true, true) => OrderVerdict::Equal,
        (true, false) => OrderVerdict::FirstDominates,
        (false, true) => OrderVerdict::SecondDominates,
        (false, false) => OrderVerdict::Incomparable,
    }
}

/// Compare two blocks: `S_i` dominates `S_j` when every member of `S_j` is
/// dominated by some member of `S_i`. Over aggregation keys this holds
/// exactly when the blocks agree on (location, direction, dwell), the
/// first alert set contains the second, and the first maximum delay is at
/// least the second.
pub fn partition_partial_order(k1: &PartitionKey, k2: &PartitionKey) -> OrderVerdict {
    if k1.location != k2.location || k1.direction != k2.direction || k1.dwell != k2.dwell {
        return OrderVerdict::Incomparable;
    }
    let ge = k1.alert_mask & k2.alert_mask == k2.alert_mask && k1.max_delay >= k2.max_delay;
    let le = k2.alert_mask & k1.alert_mask == k1.alert_mask && k2.max_delay >= k1.max_delay;
    match (ge, le) {
        (true, true) => OrderVerdict::Equal,
        (true, false) => OrderVerdict::FirstDominates,
        (false, true) => OrderVerdict::SecondDominates,
        (false, false) => OrderVerdict::Incomparable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patrol::partition::build_reward_partitioning;
    use crate::patrol::test_fixtures::desk_space;

    fn travel(location: u32, direction: i32, delays: Vec<u32>) -> PatrolState {
        PatrolState {
            location,
            direction,
            dwell: 0,
            delays,
        }
    }

    #[test]
    fn state_order_verdicts() {
        let base = travel(2, 1, vec![2, 1]);
        assert_eq!(state_partial_order(&base, &base.clone()), OrderVerdict::Equal);
        assert_eq!(
            state_partial_order(&travel(2, 1, vec![3, 1]), &base),
            OrderVerdict::FirstDominates
        );
        assert_eq!(
            state_partial_order(&base, &travel(2, 1, vec![3, 1])),
            OrderVerdict::SecondDominates
        );
        assert_eq!(
            state_partial_order(&travel(2, 1, vec![3, 0]), &travel(2, 1, vec![2, 1])),
            OrderVerdict::Incomparable
        );
        assert_eq!(
            state_partial_order(&travel(3, 1, vec![2, 1]), &base),
            OrderVerdict::Incomparable
        );
        assert_eq!(
            state_partial_order(&travel(2, -1, vec![2, 1]), &base),
            OrderVerdict::Incomparable
        );
    }

    #[test]
    fn block_order_matches_the_memberwise_definition() {
        // Exhaustive cross-check on the desk instance: the key-based
        // verdict must agree with "every member of the second block is
        // dominated by some member of the first".
        let space = desk_space();
        let (keys, partitioning) = build_reward_partitioning(&space).unwrap();
        let members: Vec<Vec<PatrolState>> = (0..partitioning.num_blocks())
            .map(|i| {
                partitioning
                    .members(i)
                    .iter()
                    .map(|&x| space.state_of(x as u64))
                    .collect()
            })
            .collect();
        let dominates_memberwise = |i: usize, j: usize| -> bool {
            members[j].iter().all(|z| {
                members[i].iter().any(|x| {
                    matches!(
                        state_partial_order(x, z),
                        OrderVerdict::FirstDominates | OrderVerdict::Equal
                    )
                })
            })
        };
        let mut ordered_pairs = 0u32;
        for i in 0..partitioning.num_blocks() {
            let ki = keys.key_of_index(i as u64);
            for j in 0..partitioning.num_blocks() {
                if i == j {
                    continue;
                }
                let kj = keys.key_of_index(j as u64);
                let fast = matches!(
                    partition_partial_order(&ki, &kj),
                    OrderVerdict::FirstDominates | OrderVerdict::Equal
                );
                assert_eq!(fast, dominates_memberwise(i, j), "blocks {i} vs {j}");
                ordered_pairs += fast as u32;
            }
        }
        assert!(ordered_pairs > 100, "expected a rich order, got {ordered_pairs}");
    }
}
