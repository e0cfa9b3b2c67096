//! Distributed session-context management for stateless inference at the
//! edge.
//!
//! Each edge node runs a [`manager::ContextManager`] in front of an
//! inference [`engine::Engine`] and a replica of the
//! [`store::ReplicatedStore`]. Clients carry a turn counter; a node serves a
//! turn only once its replica holds exactly the preceding turns, retrying
//! briefly while replication from the previous node catches up. Context can
//! be stored as raw text or as token ids, or kept entirely on the client.
//!
//! [`sim::SimCluster`] runs the same node code on a virtual clock.

pub mod client;
pub mod codec;
pub mod context;
pub mod engine;
pub mod manager;
pub mod protocol;
pub mod sim;
pub mod store;
pub mod tokenizer;
pub mod transport;

pub use client::{ask, ClientSession, Schedule};
pub use context::{ContextKey, SessionContext};
pub use manager::{ConsistencyPolicy, ContextManager, NodeConfig, PolicyMode, Runtime};
pub use protocol::{CompletionRequest, CompletionResponse, Consistency, ContextMode};
pub use sim::SimCluster;
pub use tokenizer::{TokenSequence, Vocab};
