//! Config loading and result emission for the `contagion` command-line tool.
//!
//! The binary itself lives in `main.rs`; everything testable sits here.

pub mod config;
pub mod emit;
