//! A desk-scale laboratory for exposure bias in autoregressive models.
//!
//! A tiny character-level transformer is trained on synthetic tasks with
//! exact answers under four regimes: plain supervised fine-tuning, online
//! scheduled sampling, offline batch-scheduled sampling (mixed continuations
//! built between iterations from a frozen snapshot) and reference-answer
//! correction (greedy relabelling of the model's own responses under a
//! prompt that exposes the reference answer).

pub mod corpus;
pub mod model;
pub mod rng;
pub mod losses;
pub mod mixing;
pub mod parallel;
pub mod rac;
pub mod sampler;
pub mod trainer;
pub mod eval;
