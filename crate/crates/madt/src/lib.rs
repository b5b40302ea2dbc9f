//! CLI and HTTP service for multi-event temporal video retrieval over a
//! corpus built by [`madt_core`].

pub mod cli;
pub mod config;
pub mod engine;
pub mod service;
