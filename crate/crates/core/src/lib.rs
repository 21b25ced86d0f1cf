//! Tree-structured code-action agent engine.
//!
//! Each node of the search tree pairs one end-to-end program generated by a
//! language model with its sandboxed execution. Failed nodes are expanded
//! with diversified sampling profiles, successful nodes feed a candidate pool,
//! and a majority vote picks the final answer.

pub mod codegen;
pub mod decimal;
pub mod fingerprint;
pub mod gateway;
pub mod harness;
pub mod mock;
pub mod sandbox;
pub mod task;
pub mod text;
pub mod tree;
pub mod voting;
