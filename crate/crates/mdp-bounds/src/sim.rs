//! Monte Carlo policy simulation.
