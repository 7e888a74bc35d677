//! Command-line front end for `clusteriv_core`: CSV input, JSON/CSV output
//! and multi-threaded Monte Carlo.

pub mod io;
pub mod output;
pub mod par;
