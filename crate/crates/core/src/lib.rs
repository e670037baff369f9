//! Mining and enforcing monitoring rules over traced RPC/REST events of a distributed system,
//! without relying on propagated session identifiers.
//!
//! Pipeline: [`fields`] picks correlation fields, [`mining`] groups correlated events into
//! chains and drafts, [`classify`] turns drafts into ORD/OCC/COUNT [`rules`], and [`monitor`]
//! enforces them on a live or replayed stream. [`baselines`], [`sim`] and [`eval`] support the
//! comparative evaluation.

pub mod alert;
pub mod baselines;
pub mod classify;
pub mod error;
pub mod eval;
pub mod event;
pub mod fields;
pub mod io;
pub mod mining;
pub mod monitor;
pub mod pipeline;
pub mod rules;
pub mod sim;

pub use error::{Error, Result};
