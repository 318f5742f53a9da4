pub mod benchmark;
pub mod engine;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod stats;
