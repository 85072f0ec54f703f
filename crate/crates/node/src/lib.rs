//! HTTP ledger node for conflate informetric chains, and a client for it.

pub mod api;
pub mod client;
pub mod server;

pub use client::{ClientError, NodeClient};
pub use server::{bind, serve, Node, NodeConfig, NodeError};
