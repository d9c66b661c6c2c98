//! Reference implementations used only as test oracles. Everything here is
//! written independently of the main code paths it checks: plain loops, no
//! cache, no graph.

pub mod reference;

pub use reference::*;
