//! HTTP API, blocking client and operator CLI for the ualm control plane.

pub mod cli;
pub mod client;
pub mod config;
pub mod server;
pub mod wire;
