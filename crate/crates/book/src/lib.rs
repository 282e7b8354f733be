//! The guide's chapters, compiled so `cargo test` runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/fabric.md")]
pub mod fabric {}
#[doc = include_str!("../../../book/src/scheduler.md")]
pub mod scheduler {}
#[doc = include_str!("../../../book/src/routing.md")]
pub mod routing {}
#[doc = include_str!("../../../book/src/clocks.md")]
pub mod clocks {}
#[doc = include_str!("../../../book/src/runtime.md")]
pub mod runtime {}
#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
