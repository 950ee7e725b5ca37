//! Test support shared by the sanne crates: an independent reference forward pass and small
//! synthetic graphs.

pub mod graphs;
pub mod reference;
