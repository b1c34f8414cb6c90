//! Reward-compatible state aggregation: states sharing location,
//! direction, dwell, per-station alert status, and maximum delay form one
//! block, and the block key pins everything the one-step reward and the
//! admissible action set depend on.

use super::config::PatrolConfig;
use super::space::{ActionList, PatrolState, StateSpace};
use super::PatrolError;
use crate::aggregation::Partitioning;

/// Aggregation key: all states with equal fields land in the same block.
/// `alert_mask` has bit `k` set when the station at position `k` of the
/// configured order holds a pending alert; `max_delay` is the largest
/// tracked delay (zero exactly when the mask is empty).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PartitionKey {
    pub location: u32,
    pub direction: i32,
    pub dwell: u32,
    pub alert_mask: u32,
    pub max_delay: u32,
}

/// Closed-form block count
/// `2N (1 + (2^m - 1) Gamma) + m D (1 + (2^(m-1) - 1) Gamma)`.
pub fn partition_count(config: &PatrolConfig) -> u128 {
    let m = config.num_stations() as u32;
    let gamma = config.max_delay as u128;
    let travel_cell = 1 + ((1u128 << m) - 1) * gamma;
    let dwell_cell = 1 + ((1u128 << (m - 1)) - 1) * gamma;
    2 * config.n as u128 * travel_cell
        + m as u128 * config.max_dwell as u128 * dwell_cell
}

/// Dense enumeration of every realizable [`PartitionKey`]: travel keys
/// first, ordered by (direction, location, alert mask, max delay), then
/// dwell keys by (station position, dwell, mask over the other stations,
/// max delay). Clockwise sorts before counter-clockwise, the empty mask
/// (max delay zero) leads each cell.
#[derive(Debug, Clone)]
pub struct KeySpace {
    config: PatrolConfig,
    m: usize,
    station_pos: Vec<Option<u8>>,
    travel_cell: u64,
    dwell_cell: u64,
    travel_total: u64,
    total: u64,
}

impl KeySpace {
    pub fn new(config: &PatrolConfig) -> Result<Self, PatrolError> {
        config.validate()?;
        let wide = partition_count(config);
        if wide > u32::MAX as u128 {
            return Err(PatrolError::TooLarge {
                states: wide,
                limit: u32::MAX as u64,
            });
        }
        let m = config.num_stations();
        let gamma = config.max_delay as u64;
        let mut station_pos = vec![None; config.n as usize];
        for (k, &s) in config.stations.iter().enumerate() {
            station_pos[s as usize] = Some(k as u8);
        }
        let travel_cell = 1 + ((1u64 << m) - 1) * gamma;
        let dwell_cell = 1 + ((1u64 << (m - 1)) - 1) * gamma;
        Ok(KeySpace {
            m,
            station_pos,
            travel_cell,
            dwell_cell,
            travel_total: 2 * config.n as u64 * travel_cell,
            total: wide as u64,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &PatrolConfig {
        &self.config
    }

    pub fn num_keys(&self) -> u64 {
        self.total
    }

    pub fn key_of_state(&self, state: &PatrolState) -> PartitionKey {
        PartitionKey {
            location: state.location,
            direction: state.direction,
            dwell: state.dwell,
            alert_mask: state.alert_mask(),
            max_delay: state.max_delay(),
        }
    }

    /// Bit rank of an "other" station position once the serviced position
    /// is dropped from the mask.
    fn compress_mask(&self, mask: u32, serviced: usize) -> u64 {
        let below = mask & ((1u32 << serviced) - 1);
        let above = mask >> (serviced + 1);
        (below | (above << serviced)) as u64
    }

    fn expand_mask(&self, compact: u64, serviced: usize) -> u32 {
        let compact = compact as u32;
        let below = compact & ((1u32 << serviced) - 1);
        let above = compact >> serviced;
        below | (above << (serviced + 1))
    }

    pub fn index_of_key(&self, key: &PartitionKey) -> u64 {
        debug_assert!(self.is_valid_key(key), "invalid key {key:?}");
        let gamma = self.config.max_delay as u64;
        if key.dwell == 0 {
            let w = if key.direction == 1 { 0u64 } else { 1u64 };
            let cell = w * self.config.n as u64 + key.location as u64;
            let within = if key.alert_mask == 0 {
                0
            } else {
                1 + (key.alert_mask as u64 - 1) * gamma + (key.max_delay as u64 - 1)
            };
            cell * self.travel_cell + within
        } else {
            let s = self.station_pos[key.location as usize].expect("dwell at a station")
                as usize;
            let cell =
                s as u64 * self.config.max_dwell as u64 + (key.dwell as u64 - 1);
            let compact = self.compress_mask(key.alert_mask, s);
            let within = if compact == 0 {
                0
            } else {
                1 + (compact - 1) * gamma + (key.max_delay as u64 - 1)
            };
            self.travel_total + cell * self.dwell_cell + within
        }
    }

    pub fn key_of_index(&self, index: u64) -> PartitionKey {
        debug_assert!(index < self.total);
        let gamma = self.config.max_delay as u64;
        if index < self.travel_total {
            let cell = index / self.travel_cell;
            let within = index % self.travel_cell;
            let (mask, tau) = if within == 0 {
                (0, 0)
            } else {
                let mask = (within - 1) / gamma + 1;
                let tau = (within - 1) % gamma + 1;
                (mask as u32, tau as u32)
            };
            PartitionKey {
                location: (cell % self.config.n as u64) as u32,
                direction: if cell / self.config.n as u64 == 0 { 1 } else { -1 },
                dwell: 0,
                alert_mask: mask,
                max_delay: tau,
            }
        } else {
            let local = index - self.travel_total;
            let cell = local / self.dwell_cell;
            let within = local % self.dwell_cell;
            let s = (cell / self.config.max_dwell as u64) as usize;
            let d = (cell % self.config.max_dwell as u64) as u32 + 1;
            let (mask, tau) = if within == 0 {
                (0, 0)
            } else {
                let compact = (within - 1) / gamma + 1;
                let tau = (within - 1) % gamma + 1;
                (self.expand_mask(compact, s), tau as u32)
            };
            PartitionKey {
                location: self.config.stations[s],
                direction: 1,
                dwell: d,
                alert_mask: mask,
                max_delay: tau,
            }
        }
    }

    pub fn is_valid_key(&self, key: &PartitionKey) -> bool {
        let m = self.m as u32;
        if key.location >= self.config.n
            || !(key.direction == 1 || key.direction == -1)
            || key.dwell > self.config.max_dwell
            || key.alert_mask >= (1u32 << m)
            || key.max_delay > self.config.max_delay
            || (key.alert_mask == 0) != (key.max_delay == 0)
        {
            return false;
        }
        if key.dwell >= 1 {
            match self.station_pos[key.location as usize] {
                Some(pos) => {
                    key.direction == 1 && key.alert_mask & (1 << pos) == 0
                }
                None => false,
            }
        } else {
            true
        }
    }

    /// Block-level admissible actions; well defined because admissibility
    /// depends only on key fields.
    pub fn admissible_actions(&self, key: &PartitionKey) -> ActionList {
        let loiter = match self.station_pos[key.location as usize] {
            Some(pos) => {
                key.dwell < self.config.max_dwell
                    && (key.alert_mask & (1 << pos) != 0 || key.dwell >= 1)
            }
            None => false,
        };
        if loiter {
            ActionList::full()
        } else {
            ActionList::travel_only()
        }
    }

    /// A block member realizing the key, with free delay digits chosen by
    /// `style`.
    pub fn representative(&self, key: &PartitionKey, style: Representative) -> PatrolState {
        let mut delays = vec![0u32; self.m];
        let local = self.station_pos[key.location as usize].map(usize::from);
        let mut placed_max = false;
        for k in 0..self.m {
            if key.alert_mask & (1 << k) == 0 {
                continue;
            }
            delays[k] = match style {
                Representative::AllAtMax => key.max_delay,
                Representative::LocalMaxOthersMin => {
                    if Some(k) == local {
                        key.max_delay
                    } else {
                        1
                    }
                }
            };
            if delays[k] == key.max_delay {
                placed_max = true;
            }
        }
        if !placed_max && key.alert_mask != 0 {
            // No alert at the vehicle's node: put the maximum on the first
            // alerted station so the key is still realized.
            let first = (0..self.m)
                .find(|k| key.alert_mask & (1 << k) != 0)
                .expect("mask nonempty");
            delays[first] = key.max_delay;
        }
        PatrolState {
            location: key.location,
            direction: key.direction,
            dwell: key.dwell,
            delays,
        }
    }

    /// Whether the block is the one shape with several successor-block
    /// tuples: vehicle at an alerted station, dwell zero, and at least one
    /// other station alerted.
    pub fn is_type1(&self, key: &PartitionKey) -> bool {
        if key.dwell != 0 {
            return false;
        }
        match self.station_pos[key.location as usize] {
            Some(pos) => {
                let local = 1u32 << pos;
                key.alert_mask & local != 0 && key.alert_mask & !local != 0
            }
            None => false,
        }
    }

    /// Number of distinct successor-block tuples of `(block, u)`.
    ///
    /// Loitering at a type-1 block leaves the other alerted stations'
    /// maximum free to be any of `1..=max_delay`, and each choice advances
    /// to a distinct successor maximum except that the cap collapses the
    /// top two; every other case evolves identically from all members.
    /// Callers must pass an admissible action.
    pub fn tuple_cardinality(&self, key: &PartitionKey, u: i32) -> u64 {
        assert!(
            self.admissible_actions(key).contains(u),
            "action {u} not admissible for {key:?}"
        );
        if u == 0 && self.is_type1(key) {
            u64::from(key.max_delay.min(self.config.max_delay - 1))
        } else {
            1
        }
    }
}

/// Delay-digit placement for [`KeySpace::representative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representative {
    /// Every alerted station at the block maximum.
    AllAtMax,
    /// The vehicle's own station at the block maximum, every other alerted
    /// station at delay 1.
    LocalMaxOthersMin,
}

/// Group the full state enumeration by [`PartitionKey`], numbering blocks
/// in the canonical key order. Every key is realized by at least one
/// state, so the block count equals [`partition_count`].
pub fn build_reward_partitioning(
    space: &StateSpace,
) -> Result<(KeySpace, Partitioning), PatrolError> {
    let keys = KeySpace::new(space.config())?;
    let n = space.num_states() as usize;
    let mut block_of = Vec::with_capacity(n);
    let mut state = space.state_of(0);
    for x in 0..n {
        space.state_of_into(x as u64, &mut state);
        block_of.push(keys.index_of_key(&keys.key_of_state(&state)) as u32);
    }
    let partitioning = Partitioning::from_assignment(block_of, keys.num_keys() as usize)
        .map_err(|e| PatrolError::Partitioning(e.to_string()))?;
    Ok((keys, partitioning))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patrol::test_fixtures::{desk_config, desk_space, tiny_config};

    #[test]
    fn partition_counts_match_the_closed_form() {
        assert_eq!(partition_count(&desk_config()), 216);
        assert_eq!(partition_count(&tiny_config()), 88);

        let mut paper = desk_config();
        paper.n = 15;
        paper.stations = vec![0, 3, 7, 11];
        paper.max_dwell = 5;
        paper.max_delay = 15;
        assert_eq!(partition_count(&paper), 8_900);

        let mut single = desk_config();
        single.n = 1;
        single.stations = vec![0];
        single.max_dwell = 1;
        single.max_delay = 2;
        assert_eq!(partition_count(&single), 7);
    }

    #[test]
    fn key_indexing_round_trips_and_orders_canonically() {
        let keys = KeySpace::new(&desk_config()).unwrap();
        assert_eq!(keys.num_keys(), 216);
        for i in 0..keys.num_keys() {
            let key = keys.key_of_index(i);
            assert!(keys.is_valid_key(&key), "decoded invalid key {key:?}");
            assert_eq!(keys.index_of_key(&key), i);
        }
        // The first key is the quiet clockwise state at node 0.
        let first = keys.key_of_index(0);
        assert_eq!(
            first,
            PartitionKey {
                location: 0,
                direction: 1,
                dwell: 0,
                alert_mask: 0,
                max_delay: 0
            }
        );
    }

    #[test]
    fn every_key_is_realized_and_blocks_agree_with_state_keys() {
        let space = desk_space();
        let (keys, partitioning) = build_reward_partitioning(&space).unwrap();
        assert_eq!(partitioning.num_blocks(), 216);
        assert_eq!(partitioning.num_states(), 456);
        for i in 0..partitioning.num_blocks() {
            let key = keys.key_of_index(i as u64);
            for &x in partitioning.members(i) {
                let state = space.state_of(x as u64);
                assert_eq!(keys.key_of_state(&state), key);
            }
        }
    }

    #[test]
    fn block_action_sets_agree_with_member_action_sets() {
        let space = desk_space();
        let (keys, partitioning) = build_reward_partitioning(&space).unwrap();
        for i in 0..partitioning.num_blocks() {
            let key = keys.key_of_index(i as u64);
            let block_actions = keys.admissible_actions(&key);
            for &x in partitioning.members(i) {
                let state = space.state_of(x as u64);
                assert_eq!(
                    space.admissible_actions(&state).as_slice(),
                    block_actions.as_slice()
                );
            }
        }
    }

    #[test]
    fn representatives_realize_their_keys() {
        let space = desk_space();
        let keys = KeySpace::new(&desk_config()).unwrap();
        for i in 0..keys.num_keys() {
            let key = keys.key_of_index(i);
            for style in [Representative::AllAtMax, Representative::LocalMaxOthersMin] {
                let member = keys.representative(&key, style);
                assert!(space.is_valid(&member), "{member:?} invalid for {key:?}");
                assert_eq!(keys.key_of_state(&member), key, "style {style:?}");
            }
        }
    }

    #[test]
    fn type1_blocks_are_alerted_stations_with_company() {
        let keys = KeySpace::new(&desk_config()).unwrap();
        let mut type1 = 0u64;
        for i in 0..keys.num_keys() {
            let key = keys.key_of_index(i);
            if keys.is_type1(&key) {
                type1 += 1;
                assert_eq!(key.dwell, 0);
                assert!(key.alert_mask.count_ones() >= 2);
            }
        }
        // Desk scale: both stations alerted, vehicle at either, both
        // directions, max delay 1..=5.
        assert_eq!(type1, 2 * 2 * 5);
    }

    #[test]
    fn loiter_tuple_count_tracks_the_block_maximum_until_the_cap() {
        let keys = KeySpace::new(&desk_config()).unwrap();
        let key = |tau: u32| PartitionKey {
            location: 0,
            direction: 1,
            dwell: 0,
            alert_mask: 0b11,
            max_delay: tau,
        };
        assert_eq!(keys.tuple_cardinality(&key(1), 0), 1);
        assert_eq!(keys.tuple_cardinality(&key(2), 0), 2);
        assert_eq!(keys.tuple_cardinality(&key(4), 0), 4);
        // The cap collapses the two largest member maxima onto one tuple.
        assert_eq!(keys.tuple_cardinality(&key(5), 0), 4);
        assert_eq!(keys.tuple_cardinality(&key(5), 1), 1);

        // A lone alert under the vehicle: singleton block, single tuple.
        let lone = PartitionKey {
            alert_mask: 0b01,
            max_delay: 3,
            ..key(3)
        };
        assert_eq!(keys.tuple_cardinality(&lone, 0), 1);
    }
}
