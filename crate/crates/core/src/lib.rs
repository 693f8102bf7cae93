pub mod batch;
pub mod builtins;
pub mod canonical;
pub mod cli;
pub mod engine;
pub mod graph;
pub mod module;
pub mod raster;
pub mod seed;
pub mod server;
pub mod value;
