//! Files and command line for the kmrt compiler and key-loading simulator.

pub mod cli;
pub mod io;
