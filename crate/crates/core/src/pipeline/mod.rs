//! Pipeline driver: configuration, frame input, the per-frame
//! render/register/fuse loop, output files and the filter and memory
//! experiments.

mod config;
mod experiments;
mod run;
mod source;

pub use config::{
    FiltersSection, FusionSection, GridSection, InputSection, MatchSection, MemorySection, NoiseSection, OutputSection,
    PipelineConfig, PrecisionSetting, TrackingMode,
};
pub use experiments::{
    experiment_filters, experiment_memory, filter_trial, matched_process_variance, parse_sweep, ramp_sigma,
    write_filter_experiment, write_memory_experiment, FilterExperiment, FilterSummary, FilterTrace, MemoryRow,
    Scenario,
};
pub use run::{
    run, run_source, summary_text, write_metrics, write_outputs, FrameRow, MeshError, RunMetrics, RunOutput, RunStatus,
    RunSummary, StageTimes, METRICS_HEADER,
};
pub use source::{frame_seed, FrameSource};
