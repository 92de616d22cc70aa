//! Doc-test bridge for the book.
//!
//! mdbook cannot run snippets against crate dependencies, so each chapter
//! is included here as a module doc; `cargo test --doc` then compiles and
//! runs every ```rust block in the book, keeping prose and code in sync.

#[doc = include_str!("../../../book/src/playback.md")]
pub mod playback {}

#[doc = include_str!("../../../book/src/selection.md")]
pub mod selection {}

#[doc = include_str!("../../../book/src/scoring.md")]
pub mod scoring {}

#[doc = include_str!("../../../book/src/users.md")]
pub mod users {}

#[doc = include_str!("../../../book/src/prediction.md")]
pub mod prediction {}

#[doc = include_str!("../../../book/src/rollouts.md")]
pub mod rollouts {}

#[doc = include_str!("../../../book/src/tuning.md")]
pub mod tuning {}
