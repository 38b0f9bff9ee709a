//! Command-line front end for the MSSFC network.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
