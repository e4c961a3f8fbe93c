//! Library surface of the experiment harness, shared by the binary and the
//! acceptance tests.

pub mod config;
pub mod experiment;
pub mod figures;
pub mod plot;
pub mod report;
