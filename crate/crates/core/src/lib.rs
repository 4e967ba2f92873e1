pub mod cli;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod signals;
pub mod stats;
pub mod theory;
