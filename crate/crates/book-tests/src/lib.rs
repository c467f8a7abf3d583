//! The guide's chapters as doc comments, so `cargo test` runs every listing.
//! One module per chapter keeps failures traceable to their file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/networks.md")]
pub mod networks {}

#[doc = include_str!("../../../book/src/oracles.md")]
pub mod oracles {}

#[doc = include_str!("../../../book/src/generators.md")]
pub mod generators {}

#[doc = include_str!("../../../book/src/brackets.md")]
pub mod brackets {}

#[doc = include_str!("../../../book/src/streamlines.md")]
pub mod streamlines {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
