// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataset;
pub mod estimator;
pub mod experiments;
pub mod io;
pub mod mechanism;
pub mod numerics;
pub mod oracle;
pub mod plot;
pub mod rng;
pub mod synth;
