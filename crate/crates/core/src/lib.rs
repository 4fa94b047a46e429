pub mod analysis;
pub mod config;
pub mod controls;
pub mod dashboard;
pub mod demo;
pub mod evaluator;
pub mod experiment;
pub mod image;
pub mod math;
pub mod orchestrator;
pub mod scene;
pub mod policy;
pub mod protocol;
pub mod render;
