//! Solvers and bounding procedures for discounted finite Markov decision
//! processes, together with a perimeter patrol surveillance model used as the
//! main worked instance.
//!
//! The crate is organized around five layers:
//!
//! * [`mdp`] — core MDP types (transition model, value functions, policies)
//!   and the classical dynamic-programming operations: Bellman backups, value
//!   iteration, policy evaluation, greedy extraction, and elementary value
//!   bounds.
//! * [`lp`] — a small exact linear-programming layer: a revised simplex with
//!   Bland-rule anti-cycling that reports primal and dual solutions, plus an
//!   MDP-specialized exact-LP solve.
//! * [`aggregation`] — hard state aggregation: restricted LPs over a
//!   partition of the state space, surrogate reduced models recovered from
//!   optimal dual masses, iterated (cyclic) inequality LPs, successor-tuple
//!   tables, and a brute-force disjunctive lower-bound oracle.
//! * [`patrol`] — the perimeter patrol model: state space, dynamics, alert
//!   statistics, information-gain reward, the reward-respecting partition,
//!   and the reduced upper/lower bounding models that exploit its structure.
//! * [`sim`] — a seeded Monte Carlo harness for patrol policies with
//!   common-random-number policy comparison.

pub mod aggregation;
pub mod lp;
pub mod mdp;
pub mod patrol;
pub mod sim;
