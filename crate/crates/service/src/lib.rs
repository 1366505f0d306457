//! HTTP service, configuration and command-line plumbing for tradeslot.

pub mod api;
pub mod cli;
pub mod config;
