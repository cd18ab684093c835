//! Rate engine and pulse-level simulator for three-party coherent one-way
//! conference key agreement with twin-field style interference at a central
//! node.
//!
//! * [`model`]: parameter types and the gain/error/visibility formulas.
//! * [`keyrate`]: conference and two-party COW key rates, η_lim and the
//!   repeaterless bound.
//! * [`optimizer`]: genetic-algorithm optimization of `(t, μ)`, an exhaustive
//!   grid oracle, and distance sweeps.
//! * [`montecarlo`]: seeded, chunk-parallel protocol emulation.

pub mod keyrate;
pub mod model;
pub mod montecarlo;
pub mod optimizer;

pub use keyrate::{
    bounds_row, conference_key_rate, cow_key_rate, eta_lim_bound, repeaterless_bound, BoundsRow,
    CowInputs, RateInputs,
};
pub use model::{
    binary_entropy, channel_efficiency, pair_error_rate, pair_gain,
    sifted_gain_and_reference_error, time_basis_error, visibility, zeta, ExperimentParams,
    FreeParams, ModelError, RateBreakdown,
};
pub use montecarlo::{
    compare_with_analytic, empirical_key_rate, folding_equivalence_stats, run_protocol,
    run_protocol_recorded, FoldingComparison, SimError, SlotOutcome, TranscriptStats,
};
pub use optimizer::{
    grid_oracle, optimize, sweep, OptimizerConfig, OptimizerError, Optimum, OptimumStatus, SweepRow,
};
