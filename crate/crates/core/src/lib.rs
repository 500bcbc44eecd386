//! Evaluation pipeline for traffic-accident detection with multimodal LLMs.

pub mod detection;
pub mod digest;
pub mod eval;
pub mod gateway;
pub mod metrics;
pub mod prompt;
pub mod render;
pub mod scenario;
pub mod synthetic;
pub mod tracker;
