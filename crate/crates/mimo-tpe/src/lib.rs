//! Simulation kit around `mimo-tpe-core`: configuration files, Monte-Carlo
//! evaluation of RZF, MRT and TPE precoding, parameter sweeps and CSV output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod report;
pub mod simkit;

pub use config::{CoefficientMode, ExperimentConfig, PhiRule, Profile, RunConfig};
pub use error::{Result, SimError, Stage};
pub use simkit::{
    average_rate, design_schemes, empirical_sinr, evaluate_drop, evaluate_point, optimize_only, run_experiment,
    theory_vs_empirical, CsvRow, Design, DropContext, Scheme, SinrEstimate, SinrReport, Sweep,
};
