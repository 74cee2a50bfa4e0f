//! Batch runner commands and the realtime teleoperation service.

pub mod protocol;
pub mod session;
pub mod service;
