//! Perimeter patrol model.
