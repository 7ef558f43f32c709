//! Attention reports, FLOPs accounting, the exposure-bias harness and
//! distributional metrics.

mod attention;
mod exposure;
mod flops;
mod mmd;
mod report;

pub use attention::{attention_report, AttentionReport};
pub use exposure::{
    evaluate, exposure_harness, exposure_paths, reference_bandwidth, reference_samples, ExposureCurve, MetricReport,
};
pub use flops::{flops_model, student_param_count, ArchDims, FlopsBreakdown, FlopsMode, LayerFlops, StepFlops};
pub use mmd::{median_distance, mmd2, mmd2_biased};
pub use report::{bar_chart_svg, exposure_csv, line_chart_svg};
