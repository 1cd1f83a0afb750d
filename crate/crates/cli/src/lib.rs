//! Command-line front end for the pair-generation pipeline.
//!
//! The binary drives the library crate end to end: ingest corpora, build
//! the knowledge graph, sample training pairs, augment them across
//! languages, embed and evaluate retrieval, and test ranking significance.
//! This crate only parses flags, loads config, wires backends, and writes
//! artifacts; all pipeline behavior lives in the library.

pub mod backends;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod logging;

pub use cli::{run, Cli};
pub use error::CliError;
