//! Execution gateway service: persistence, quotas, execution backends,
//! per-user object storage, the REST surface and its command-line client.

pub mod backend;
pub mod cli;
pub mod client;
pub mod clock;
pub mod config;
pub mod directory;
pub mod executions;
pub mod experiments;
pub mod files;
pub mod paging;
pub mod quotas;
pub mod rest;
pub mod server;
pub mod services;
pub mod store;
