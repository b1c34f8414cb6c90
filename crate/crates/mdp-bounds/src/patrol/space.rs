//! State enumeration and one-step dynamics of the patrol system.

use super::config::PatrolConfig;
use super::PatrolError;
use crate::mdp::{Mdp, MdpBuilder};

/// One system state: vehicle node, travel direction, completed loiter
/// orbits at the current station, and the tracked (capped) alert delay per
/// station, indexed by station position in the configured order.
///
/// Invariants: `dwell >= 1` implies the location is a station, the
/// direction is `+1`, and the serviced station's delay is zero; every
/// delay is at most the configured cap.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatrolState {
    pub location: u32,
    pub direction: i32,
    pub dwell: u32,
    pub delays: Vec<u32>,
}

impl PatrolState {
    /// Largest tracked delay across stations.
    pub fn max_delay(&self) -> u32 {
        self.delays.iter().copied().max().unwrap_or(0)
    }

    /// Whether the station at the given position has a pending alert.
    pub fn alerted(&self, station_pos: usize) -> bool {
        self.delays[station_pos] > 0
    }

    /// Bitmask of alerted station positions (bit `k` for position `k`).
    pub fn alert_mask(&self) -> u32 {
        self.delays
            .iter()
            .enumerate()
            .fold(0, |m, (k, &t)| if t > 0 { m | (1 << k) } else { m })
    }
}

/// The admissible subset of the canonical action order `[0, +1, -1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionList {
    items: [i32; 3],
    len: u8,
}

impl ActionList {
    /// All three actions, loiter first.
    pub fn full() -> Self {
        ActionList {
            items: [0, 1, -1],
            len: 3,
        }
    }

    /// Travel moves only.
    pub fn travel_only() -> Self {
        ActionList {
            items: [1, -1, 0],
            len: 2,
        }
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.items[..self.len as usize]
    }

    pub fn contains(&self, u: i32) -> bool {
        self.as_slice().contains(&u)
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Closed-form state count `2 N (Gamma+1)^m + D m (Gamma+1)^(m-1)`,
/// computed wide so oversized configurations are reportable rather than a
/// panic.
pub fn state_count(config: &PatrolConfig) -> u128 {
    let m = config.num_stations() as u32;
    let radix = (config.max_delay + 1) as u128;
    let tau_all = radix.pow(m);
    let tau_rest = radix.pow(m - 1);
    2 * config.n as u128 * tau_all
        + config.max_dwell as u128 * m as u128 * tau_rest
}

/// Indexed enumeration of every admissible [`PatrolState`] plus the
/// one-step dynamics, rewards, and action sets of the patrol model.
///
/// The index layout is mixed-radix and dense: travel states first, ordered
/// by (direction, location, delay vector little-endian base `Gamma+1`, with
/// the first configured station as the least significant digit); then dwell
/// states ordered by (station position, dwell, remaining delays
/// little-endian). Clockwise (`+1`) sorts before counter-clockwise.
#[derive(Debug, Clone)]
pub struct StateSpace {
    config: PatrolConfig,
    m: usize,
    /// `(Gamma+1)^k` for `k = 0..=m`.
    pow: Vec<u64>,
    /// Station position of each perimeter node, if any.
    station_pos: Vec<Option<u8>>,
    travel_states: u64,
    total: u64,
    probs: Vec<f64>,
    /// Information increment of the `(d+1)`-th orbit for `d = 0..D-1`.
    info_increment: Vec<f64>,
}

impl StateSpace {
    pub fn new(config: &PatrolConfig) -> Result<Self, PatrolError> {
        config.validate()?;
        let wide = state_count(config);
        if wide > u32::MAX as u128 {
            return Err(PatrolError::TooLarge {
                states: wide,
                limit: u32::MAX as u64,
            });
        }
        let m = config.num_stations();
        let radix = (config.max_delay + 1) as u64;
        let mut pow = Vec::with_capacity(m + 1);
        pow.push(1u64);
        for _ in 0..m {
            pow.push(pow.last().unwrap() * radix);
        }
        let mut station_pos = vec![None; config.n as usize];
        for (k, &s) in config.stations.iter().enumerate() {
            station_pos[s as usize] = Some(k as u8);
        }
        let info_increment = (0..config.max_dwell)
            .map(|d| config.info_increment(d))
            .collect();
        Ok(StateSpace {
            m,
            pow,
            station_pos,
            travel_states: 2 * config.n as u64 * radix.pow(m as u32),
            total: wide as u64,
            probs: config.alert_probabilities(),
            info_increment,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &PatrolConfig {
        &self.config
    }

    pub fn num_states(&self) -> u64 {
        self.total
    }

    pub fn num_stations(&self) -> usize {
        self.m
    }

    /// Number of disturbance outcomes `m + 1`.
    pub fn num_outcomes(&self) -> usize {
        self.m + 1
    }

    pub fn alert_probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Station position of a node, if the node hosts a station.
    pub fn station_pos(&self, node: u32) -> Option<usize> {
        self.station_pos[node as usize].map(usize::from)
    }

    pub fn index_of(&self, state: &PatrolState) -> u64 {
        debug_assert!(self.is_valid(state), "invalid state {state:?}");
        if state.dwell == 0 {
            let w = if state.direction == 1 { 0u64 } else { 1u64 };
            let mut idx = (w * self.config.n as u64 + state.location as u64) * self.pow[self.m];
            for (k, &t) in state.delays.iter().enumerate() {
                idx += t as u64 * self.pow[k];
            }
            idx
        } else {
            let s = self.station_pos[state.location as usize].expect("dwell at a station")
                as u64;
            let d = state.dwell as u64;
            let mut idx = self.travel_states
                + (s * self.config.max_dwell as u64 + (d - 1)) * self.pow[self.m - 1];
            let mut r = 0usize;
            for (k, &t) in state.delays.iter().enumerate() {
                if k as u64 != s {
                    idx += t as u64 * self.pow[r];
                    r += 1;
                }
            }
            idx
        }
    }

    pub fn state_of(&self, index: u64) -> PatrolState {
        let mut state = PatrolState {
            location: 0,
            direction: 1,
            dwell: 0,
            delays: vec![0; self.m],
        };
        self.state_of_into(index, &mut state);
        state
    }

    /// Decode an index into a caller-owned state, reusing its delay buffer.
    pub fn state_of_into(&self, index: u64, out: &mut PatrolState) {
        debug_assert!(index < self.total);
        out.delays.resize(self.m, 0);
        let radix = (self.config.max_delay + 1) as u64;
        if index < self.travel_states {
            let tau = index % self.pow[self.m];
            let rest = index / self.pow[self.m];
            out.location = (rest % self.config.n as u64) as u32;
            out.direction = if rest / self.config.n as u64 == 0 { 1 } else { -1 };
            out.dwell = 0;
            let mut tau = tau;
            for k in 0..self.m {
                out.delays[k] = (tau % radix) as u32;
                tau /= radix;
            }
        } else {
            let local = index - self.travel_states;
            let tau = local % self.pow[self.m - 1];
            let rest = local / self.pow[self.m - 1];
            let s = (rest / self.config.max_dwell as u64) as usize;
            let d = (rest % self.config.max_dwell as u64) + 1;
            out.location = self.config.stations[s];
            out.direction = 1;
            out.dwell = d as u32;
            let mut tau = tau;
            for k in 0..self.m {
                if k == s {
                    out.delays[k] = 0;
                } else {
                    out.delays[k] = (tau % radix) as u32;
                    tau /= radix;
                }
            }
        }
    }

    /// Whether the state satisfies the representation invariants.
    pub fn is_valid(&self, state: &PatrolState) -> bool {
        if state.location >= self.config.n
            || !(state.direction == 1 || state.direction == -1)
            || state.dwell > self.config.max_dwell
            || state.delays.len() != self.m
            || state.delays.iter().any(|&t| t > self.config.max_delay)
        {
            return false;
        }
        if state.dwell >= 1 {
            match self.station_pos[state.location as usize] {
                Some(pos) => state.direction == 1 && state.delays[pos as usize] == 0,
                None => false,
            }
        } else {
            true
        }
    }

    /// Admissible actions in canonical order `[0, +1, -1]`: loitering
    /// requires being at a station below the dwell cap with either a
    /// pending alert there or a service already in progress; both travel
    /// moves are always allowed.
    pub fn admissible_actions(&self, state: &PatrolState) -> ActionList {
        let loiter = match self.station_pos[state.location as usize] {
            Some(pos) => {
                state.dwell < self.config.max_dwell
                    && (state.delays[pos as usize] > 0 || state.dwell >= 1)
            }
            None => false,
        };
        if loiter {
            ActionList::full()
        } else {
            ActionList::travel_only()
        }
    }

    pub fn is_admissible(&self, state: &PatrolState, u: i32) -> bool {
        self.admissible_actions(state).contains(u)
    }

    /// Apply the one-step dynamics under action `u` and disturbance
    /// outcome `l` (0 = no alert, `l >= 1` = alert at the `l`-th configured
    /// station). Delays saturate at the cap.
    pub fn transition(
        &self,
        state: &PatrolState,
        u: i32,
        l: usize,
    ) -> Result<PatrolState, PatrolError> {
        if !self.is_admissible(state, u) {
            return Err(PatrolError::InadmissibleAction {
                action: u,
                detail: format!(
                    "location {} dwell {} alerts {:#b}",
                    state.location,
                    state.dwell,
                    state.alert_mask()
                ),
            });
        }
        let mut out = state.clone();
        self.transition_into(state, u, l, &mut out);
        Ok(out)
    }

    /// Allocation-free transition; the caller guarantees `u` is admissible
    /// and `l <= m`.
    pub fn transition_into(&self, state: &PatrolState, u: i32, l: usize, out: &mut PatrolState) {
        debug_assert!(self.is_admissible(state, u));
        debug_assert!(l <= self.m);
        let n = self.config.n as i64;
        out.location =
            (state.location as i64 + state.direction as i64 * u as i64).rem_euclid(n) as u32;
        out.direction = if u == 0 { 1 } else { state.direction * u };
        out.dwell = if u == 0 { state.dwell + 1 } else { 0 };
        out.delays.resize(self.m, 0);
        let serviced = if u == 0 {
            self.station_pos[state.location as usize].map(usize::from)
        } else {
            None
        };
        for k in 0..self.m {
            let t = state.delays[k];
            out.delays[k] = if Some(k) == serviced {
                0
            } else if t > 0 {
                (t + 1).min(self.config.max_delay)
            } else if l == k + 1 {
                1
            } else {
                0
            };
        }
    }

    /// Successor index without materializing the successor for the caller;
    /// `scratch` provides the delay buffer.
    pub fn successor_index(
        &self,
        state: &PatrolState,
        u: i32,
        l: usize,
        scratch: &mut PatrolState,
    ) -> u64 {
        self.transition_into(state, u, l, scratch);
        self.index_of(scratch)
    }

    /// One-step reward: the information increment of the next orbit when
    /// loitering, minus the delay penalty `rho * min(max delay, cap)`.
    pub fn reward(&self, state: &PatrolState, u: i32) -> f64 {
        let gain = if u == 0 {
            self.info_increment[state.dwell as usize]
        } else {
            0.0
        };
        gain - self.config.rho * state.max_delay().min(self.config.max_delay) as f64
    }

    /// Build the explicit sparse model over the full state enumeration,
    /// with the disturbance table retained for successor-tuple analysis.
    pub fn build_mdp(&self) -> Result<Mdp, PatrolError> {
        let n = self.total as usize;
        let mut builder = MdpBuilder::new(n, self.config.lambda);
        builder.set_disturbance_probs(self.probs.clone());
        let mut state = self.state_of(0);
        let mut scratch = state.clone();
        let mut outcomes = vec![0usize; self.m + 1];
        for x in 0..n {
            self.state_of_into(x as u64, &mut state);
            for &u in self.admissible_actions(&state).as_slice() {
                for (l, slot) in outcomes.iter_mut().enumerate() {
                    *slot = self.successor_index(&state, u, l, &mut scratch) as usize;
                }
                builder.add_action_outcomes(x, u, self.reward(&state, u), &outcomes)?;
            }
        }
        Ok(builder.build()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::value_iteration;
    use crate::patrol::test_fixtures::{desk_config, desk_space, tiny_config};

    #[test]
    fn state_counts_match_the_closed_form() {
        let desk = desk_config();
        assert_eq!(state_count(&desk), 456);
        assert_eq!(StateSpace::new(&desk).unwrap().num_states(), 456);

        assert_eq!(state_count(&tiny_config()), 136);

        let mut paper = desk_config();
        paper.n = 15;
        paper.stations = vec![0, 3, 7, 11];
        paper.max_dwell = 5;
        paper.max_delay = 15;
        assert_eq!(state_count(&paper), 2_048_000);

        let mut single = desk_config();
        single.n = 1;
        single.stations = vec![0];
        single.max_dwell = 1;
        single.max_delay = 2;
        assert_eq!(state_count(&single), 7);
    }

    #[test]
    fn oversized_spaces_are_rejected_with_the_count() {
        let mut config = desk_config();
        config.stations = vec![0, 1, 2, 3, 4, 5];
        config.max_delay = 500;
        let err = StateSpace::new(&config).unwrap_err();
        match err {
            PatrolError::TooLarge { states, .. } => {
                assert_eq!(states, state_count(&config));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn indexing_round_trips_over_the_whole_space() {
        let space = desk_space();
        let mut seen_dwell = 0u32;
        for idx in 0..space.num_states() {
            let state = space.state_of(idx);
            assert!(space.is_valid(&state), "decoded invalid state {state:?}");
            assert_eq!(space.index_of(&state), idx);
            if state.dwell >= 1 {
                seen_dwell += 1;
            }
        }
        assert_eq!(seen_dwell, 24);
    }

    #[test]
    fn travel_advances_location_and_delays() {
        let space = desk_space();
        let state = PatrolState {
            location: 2,
            direction: 1,
            dwell: 0,
            delays: vec![0, 4],
        };
        let next = space.transition(&state, 1, 0).unwrap();
        assert_eq!(
            next,
            PatrolState {
                location: 3,
                direction: 1,
                dwell: 0,
                delays: vec![0, 5],
            }
        );
        // Another step saturates the tracked delay at the cap.
        let again = space.transition(&next, 1, 0).unwrap();
        assert_eq!(again.delays, vec![0, 5]);
    }

    #[test]
    fn loitering_resets_the_serviced_delay_and_absorbs_its_alerts() {
        let space = desk_space();
        let state = PatrolState {
            location: 0,
            direction: 1,
            dwell: 0,
            delays: vec![2, 1],
        };
        // Outcome 1 is a fresh alert at station 0, wiped by the loiter.
        let next = space.transition(&state, 0, 1).unwrap();
        assert_eq!(
            next,
            PatrolState {
                location: 0,
                direction: 1,
                dwell: 1,
                delays: vec![0, 2],
            }
        );
    }

    #[test]
    fn reversal_wraps_around_the_perimeter() {
        let space = desk_space();
        let state = PatrolState {
            location: 0,
            direction: -1,
            dwell: 0,
            delays: vec![0, 0],
        };
        let next = space.transition(&state, 1, 0).unwrap();
        assert_eq!(next.location, 5);
        assert_eq!(next.direction, -1);
        // Reversing flips the direction and moves the other way.
        let back = space.transition(&state, -1, 0).unwrap();
        assert_eq!(back.location, 1);
        assert_eq!(back.direction, 1);
    }

    #[test]
    fn loiter_admissibility_needs_an_alert_or_a_service_in_progress() {
        let space = desk_space();
        let mut state = PatrolState {
            location: 0,
            direction: 1,
            dwell: 0,
            delays: vec![0, 3],
        };
        // At a station without a local alert: travel only.
        assert_eq!(space.admissible_actions(&state).as_slice(), &[1, -1]);
        // With a local alert: loiter leads the canonical order.
        state.delays[0] = 1;
        assert_eq!(space.admissible_actions(&state).as_slice(), &[0, 1, -1]);
        // Off-station: travel only, alert or not.
        state.location = 1;
        assert_eq!(space.admissible_actions(&state).as_slice(), &[1, -1]);
        // Mid-service: may continue until the dwell cap.
        let dwelling = PatrolState {
            location: 3,
            direction: 1,
            dwell: 1,
            delays: vec![3, 0],
        };
        assert_eq!(space.admissible_actions(&dwelling).as_slice(), &[0, 1, -1]);
        let capped = PatrolState {
            dwell: 2,
            ..dwelling.clone()
        };
        assert_eq!(space.admissible_actions(&capped).as_slice(), &[1, -1]);
        assert!(space.transition(&capped, 0, 0).is_err());
    }

    #[test]
    fn reward_pays_the_orbit_increment_and_charges_the_worst_delay() {
        let config = desk_config();
        let space = desk_space();
        let state = PatrolState {
            location: 0,
            direction: 1,
            dwell: 0,
            delays: vec![1, 3],
        };
        let expected = config.info_gain(1) - config.info_gain(0) - 0.005 * 3.0;
        assert!((space.reward(&state, 0) - expected).abs() < 1e-15);
        assert!((space.reward(&state, 1) - (-0.005 * 3.0)).abs() < 1e-15);

        let quiet = PatrolState {
            location: 1,
            direction: 1,
            dwell: 0,
            delays: vec![0, 0],
        };
        assert_eq!(space.reward(&quiet, 1), 0.0);
    }

    #[test]
    fn built_model_rows_are_stochastic_and_undiscounted_limit_is_greedy() {
        let space = desk_space();
        let mdp = space.build_mdp().unwrap();
        assert_eq!(mdp.num_states(), 456);
        for x in 0..mdp.num_states() {
            for a in 0..mdp.num_actions(x) {
                let sum: f64 = mdp.row(x, a).iter().map(|&(_, p)| p).sum();
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }

        // With a zero discount the optimal value is the best one-step
        // reward at every state.
        let mut myopic = desk_config();
        myopic.lambda = 0.0;
        let space = StateSpace::new(&myopic).unwrap();
        let mdp = space.build_mdp().unwrap();
        let (v, _) = value_iteration(&mdp, 1e-12, 10).unwrap();
        for x in 0..mdp.num_states() {
            let state = space.state_of(x as u64);
            let best = space
                .admissible_actions(&state)
                .as_slice()
                .iter()
                .map(|&u| space.reward(&state, u))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((v.value(x) - best).abs() <= 1e-12);
        }
    }
}
