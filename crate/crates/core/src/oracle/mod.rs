// SPDX-License-Identifier: Apache-2.0

//! Reference data: synthetic designs and a resistive-grid solver whose
//! worst drop over the sampled instants serves as the per-tile label.

mod generate;
mod pdn;
mod solve;


pub use generate::{check_regimes, cluster_peak_share, generate_design, ClusterInfo, GenParams, GeneratedDesign, Regime};
pub use pdn::{make_nonuniform_pdn, Block, PadLayout, PdnConfig, PdnModel, Variation};
pub use solve::{instant_current, label_design, solve_instant, solve_with, SolveStats, SolverOptions};
