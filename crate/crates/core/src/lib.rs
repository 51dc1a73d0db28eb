//! Exact-arithmetic simulation and certification of instantaneous dynamic
//! equilibrium flows over time in the fluid queueing model.

pub mod engine;
pub mod flowstate;
pub mod instances;
pub mod labels;
pub mod network;
pub mod numerics;
pub mod simplex;
pub mod thinflow;
pub mod verify;
pub mod waterfill;
