pub mod annotation;
pub mod backends;
pub mod cli;
pub mod geometry;
pub mod gors;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod suite;
mod util;
