pub mod backend;
pub mod dataset;
pub mod eval;
pub mod labels;
pub mod report;
pub mod pipeline;
pub mod prompt;
pub mod runner;
pub mod sampling;
