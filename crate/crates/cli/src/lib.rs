//! Orchestration of augmentation runs: configuration, manifests and the
//! `sqlaug` subcommands.

pub mod commands;
pub mod config;
pub mod manifest;
