//! The network service: sessions, subscriptions, the device registry and schemas.

pub mod config;
pub mod protocol;
pub mod registry;
pub mod schema;
pub mod server;

pub use config::ServiceConfig;
pub use protocol::{Request, SubscribeMode, SubscribeSpec};
pub use server::{Server, Service};
