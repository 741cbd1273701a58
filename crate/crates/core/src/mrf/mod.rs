//! Labeling energy and its minimization by graph cuts.

pub mod energy;
pub mod expansion;
pub mod maxflow;

pub use energy::{energy, write_energy_trace, DataCosts, EnergyBreakdown, EnergyParams};
pub use expansion::{alpha_expansion, alpha_expansion_with_mode, expansion_sweep, LabelCostMode};
pub use maxflow::{min_cut, FlowNetwork, MaxFlowGraph, MinCut};
