//! Training-free, hardware-constrained architecture search for spiking
//! neural networks mapped onto RRAM crossbar accelerators.
//!
//! The pipeline per candidate: expand two cell configs into a network
//! ([`arch`]), draw seeded weights and quantize them ([`quant`]), run the
//! spiking forward pass on a minibatch ([`spike`]), score the binarized
//! activity ([`fitness`]), and cost the crossbar mapping ([`imc`]).
//! [`search`] drives the two-phase sweep; [`config`], [`report`] and
//! [`cli`] handle I/O.

pub mod arch;
pub mod batch;
pub mod cli;
pub mod config;
pub mod error;
pub mod fitness;
pub mod imc;
pub mod quant;
pub mod report;
pub mod search;
pub mod spike;

pub use arch::{build_network, enumerate_cells, CellConfig, NetworkArch, Operation};
pub use batch::{gen_synthetic_batch, load_batch, save_batch, Batch};
pub use config::{load_config, RunConfig};
pub use error::{Error, Phase, Result};
pub use fitness::{fitness_score, hamming_matrix, qafe_score, FitnessScore};
pub use imc::{evaluate_costs, map_network, CostReport, HardwareConfig};
pub use quant::{adjustment_factor, quantize, QuantSpec};
pub use report::{emit_report, Report};
pub use search::{hw_aware_search, score_candidate, Constraints, SearchOptions, SearchProblem, SearchResult};
pub use spike::{forward, LifParams};
