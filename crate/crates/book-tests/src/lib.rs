//! Compiles the guide's code blocks as doc-tests, one module per chapter,
//! so `cargo test` fails when the book drifts from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../book/src/planner.md")]
pub mod planner {}
#[doc = include_str!("../../../book/src/simworld.md")]
pub mod simworld {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/backends.md")]
pub mod backends {}
#[doc = include_str!("../../../book/src/runner.md")]
pub mod runner {}
#[doc = include_str!("../../../book/src/cost.md")]
pub mod cost {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
