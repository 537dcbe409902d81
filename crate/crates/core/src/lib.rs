//! Kernel for multi-agent mobile GUI automation.

pub mod action;
pub mod calibration;
pub mod dispatch;
pub mod ensemble;
pub mod experience;
pub mod grpo;
pub mod harness;
pub mod memory;
pub mod planner;
pub mod policy;
pub mod screen;
