//! The long-running service: configuration, the shared engine and its HTTP front end.

pub mod config;
pub mod engine;
pub mod http;

pub use config::{ConfigError, ServiceConfig, ADMIN_TOKEN_ENV};
pub use engine::{Engine, EngineError, Health, RetrainReport, Snapshot};
pub use http::{router, serve, MessageReply};
