//! Network service and command-line front end for `dms-core`.

pub mod api;
pub mod config;
pub mod http;

pub use api::{ApiError, Service};
pub use config::ServiceConfig;
