//! Generate, plan, edit.
//!
//! `grape` drives a three-stage loop for compositional text-to-image
//! synthesis: a generator produces an initial image from a text prompt, a
//! multimodal planner compares the prompt against that image and emits an
//! ordered list of atomic edit instructions, and an editing backend applies
//! those instructions one at a time. Every intermediate image is persisted
//! content-addressed so runs can be resumed and replayed.
//!
//! The crate is organised by role:
//!
//! - [`model`]: the value types shared by every stage (prompts, image handles,
//!   plans, traces, cost reports).
//! - [`backends`]: the four backend contracts (generation, editing, chat,
//!   yes/no VQA), HTTP clients speaking the documented wire formats, and the
//!   response cache.
//! - [`planner`]: prompt assembly, parsing of the four-section planner output,
//!   and the 1-100 alignment scorer.
//! - [`simworld`]: a deterministic scene-graph world that implements all four
//!   backend contracts so the whole loop can be checked without live models.
//! - [`pipeline`]: the generate-plan-edit loop itself, per-step scoring and
//!   cost accounting.
//! - [`eval`]: question graphs, DSG scoring with and without dependencies,
//!   and aggregate statistics.
//! - [`runner`]: the resumable benchmark runner and report builder behind the
//!   `grape` command-line tool.
//!
//! A guide with worked examples lives in the `book/` directory of the
//! repository.

pub mod backends;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod planner;
pub mod runner;
pub mod simworld;
pub mod store;

pub use model::content_id;
