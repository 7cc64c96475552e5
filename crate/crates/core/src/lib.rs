//! Held-Karp 1-tree bounds for the symmetric TSP, a graph attention model that
//! predicts Lagrangian multipliers, and an exact branch-and-bound solver that
//! uses the predicted multipliers as warm starts.

pub mod instance;
pub mod onetree;
pub mod heldkarp;
pub mod egat;
pub mod bnb;
pub mod bench;
pub mod train;
pub mod cli;
