pub mod cli;
pub mod config;
pub mod dataset;
pub mod depth;
pub mod error;
pub mod geometry;
pub mod map;
pub mod meshing;
pub mod oracle;
pub mod pooling;
pub mod query;
pub mod sensor;
pub mod integrator;
