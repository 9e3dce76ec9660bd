//! Experiment driver for the policy-optimization laboratory: TOML-configured
//! commands over the core crate's environments, exact baselines, and sampled
//! actor-critic loop, with deterministic CSV/SVG artifacts.

pub mod commands;
pub mod config;
pub mod runio;
pub mod svg;
