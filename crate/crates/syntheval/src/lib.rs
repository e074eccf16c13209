//! IO side of the workbench: JSONL store and run manifests, HTTP model
//! backends, local mock servers, pipeline stages, the REST service and
//! the CLI. The algorithms live in `syntheval_core`.

pub mod backend;
pub mod catalog;
pub mod cli;
pub mod mock_server;
pub mod pipeline;
pub mod report;
pub mod service;
pub mod store;
pub mod workflow;

pub use syntheval_core as core;
