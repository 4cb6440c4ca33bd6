//! Testbed orchestration and a simulated O-RAN stack for a rural wireless
//! living lab.

pub mod e2;
pub mod inventory;
pub mod metrics;
pub mod ransim;
pub mod lease;
pub mod provisioner;
pub mod ric;
pub mod runtime;
pub mod telemetry;
pub mod lab;
