pub mod config;
pub mod csv_io;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod service;
