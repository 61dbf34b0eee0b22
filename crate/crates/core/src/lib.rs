//! Desk-scale transdermal alcohol sensing pipeline.

// NaN-rejecting range checks are written as `!(x >= 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod physio;
pub mod device;
pub mod clock;
pub mod gateway;
pub mod schema;
pub mod service;
pub mod analytics;
pub mod harness;
