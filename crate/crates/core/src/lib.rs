#![no_std]
#![warn(missing_debug_implementations)]

//! Allocation-backed, `no_std` core of the equifl federated simulator.
//!
//! Everything here is a pure function of its inputs and seeds:
//!
//! - [`params`] and [`nn`]: a small fully connected network with ReLU hidden
//!   layers and a sigmoid head, trained with binary cross-entropy plus an
//!   optional soft demographic-parity penalty.
//! - [`adam`]: bias-corrected Adam.
//! - [`fairness`]: hard-decision ΔDP / ΔEO and the differentiable penalty.
//! - [`data`]: records, Dirichlet non-IID partitioning and 70:15:15 splits.
//! - [`fedsim`]: the round engine (client selection, local training,
//!   weighted aggregation and selective copy-back of global weights).
//! - [`eval`]: local/global metrics and cross-client statistics.
//!
//! File formats, CSV ingestion, parallel execution and the CLI live in the
//! `equifl` companion crate.

extern crate alloc;

pub mod adam;
pub mod data;
pub mod error;
pub mod eval;
pub mod fairness;
pub mod fedsim;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tensor;

pub use crate::adam::{adam_step, AdamConfig, AdamState};
pub use crate::data::{
    build_clients, dirichlet_partition, dirichlet_partition_indices, split, split_indices, ClientDataset,
    Dataset, PartitionSpec, Record,
};
pub use crate::error::{Error, Result};
pub use crate::eval::{
    evaluate_global, evaluate_local, evaluate_model, performance_fairness_stats, ClientMetrics,
    DistributionStats, GroupMetrics, LocalSummary, MetricsReport, Stat,
};
pub use crate::fairness::{delta_dp, delta_eo, soft_dp_penalty, GroupOutcomes, PenaltyKind};
pub use crate::fedsim::{
    aggregate, local_training, run_experiment, run_round, select_clients, selective_init, ClientExecutor,
    ClientState, ExperimentOutcome, FedConfig, Mode, RoundState, Sequential,
};
pub use crate::nn::{forward, loss_and_grad, Batch};
pub use crate::params::{init_params, Activation, LayerParams, ModelParams, NetConfig};
pub use crate::tensor::Matrix;
