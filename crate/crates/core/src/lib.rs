//! Building blocks for synthesizing code-reasoning training data and for
//! the group-relative policy optimization objective used to refine a
//! reasoning model on it.

pub mod case;
pub mod catalog;
pub mod decontam;
pub mod eval;
pub mod exec;
pub mod filter;
pub mod grpo;
pub mod jsonl;
pub mod literal;
pub mod pipeline;
pub mod pool;
pub mod rng;
pub mod teacher;
