//! Discrete-event simulator and closed-form models for the cost of a DTLS
//! handshake over duty-cycled 802.15.4 link layers.

// Negated float comparisons are how inputs reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod analytic;
pub mod dtls;
pub mod energy;
pub mod error;
pub mod mac;
pub mod runner;
pub mod scenario;
pub mod session;
pub mod sim;
pub mod stats;
