//! Command-line driver and session service for the PERM teaching pipeline.

pub mod server;

pub use server::{router, AppState, ServerConfig};
