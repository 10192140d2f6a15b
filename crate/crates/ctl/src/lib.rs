//! Pipeline orchestration and the synthetic crowd behind `pelctl`.

pub mod pipeline;
pub mod sim;

pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, Stage};
pub use sim::{simulate_crowd, SimProfile};
