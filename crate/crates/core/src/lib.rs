//! Purpose-aware privacy policy management for a simulated mobile device.
//!
//! The crate is split along the lines of the runtime it models:
//!
//! - [`schema`]: app policies, the purpose taxonomy and the dangerous-permission
//!   catalog, with strict/lenient parsing and canonical serialization.
//! - [`store`]: the time-ordered repository of user policies, organizational
//!   profiles and quick settings, backed by an append-only event log.
//! - [`engine`]: the tiered decision procedure, runtime prompts, silent
//!   notifications and privacy recommendations.
//! - [`generator`]: heuristic policy generation and auditing for apps that
//!   ship without an embedded policy.
//! - [`sim`]: a scenario-driven device runtime with a virtual clock, usage
//!   summaries and the device facade consumed by the HTTP service.

pub mod clock;
pub mod engine;
pub mod generator;
pub mod schema;
pub mod sim;
pub mod store;

pub use clock::{Clock, SystemClock, Timestamp, VirtualClock};
pub use schema::{AppPolicy, Catalog, Permission, PolicyClause, Provenance, Purpose};
