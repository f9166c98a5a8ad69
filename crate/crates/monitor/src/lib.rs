//! Monitor service for body-area-network telemetry: TCP ingest, live
//! per-channel analytics, alert rules with SMS notification, flat-file
//! recordings and an HTTP/SSE API.

pub mod api;
pub mod config;
pub mod error;
pub mod hub;
pub mod pipeline;
pub mod recording;
pub mod rules;
pub mod service;
pub mod sms;

pub use config::{ServiceConfig, SignalKind};
pub use error::{MonitorError, Result};
pub use service::{start, start_with_state, ServiceHandle, ServiceState};
