//! Winfree-type oscillator ensembles on the rotation group SO(n).

pub mod geometry;
pub mod influence;
pub mod dynamics;
pub mod analysis;
pub mod equilibria;
pub mod harness;
