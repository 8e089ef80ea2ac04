//! Chapters of the guide in `book/src`, included as module docs so that
//! `cargo test --doc` runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}
#[doc = include_str!("../../../book/src/problems.md")]
pub mod problems {}
#[doc = include_str!("../../../book/src/sgld.md")]
pub mod sgld {}
#[doc = include_str!("../../../book/src/hypergrad.md")]
pub mod hypergrad {}
#[doc = include_str!("../../../book/src/outer.md")]
pub mod outer {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
