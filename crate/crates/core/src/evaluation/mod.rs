//! Map-quality metrics and the test protocols.

mod metrics;
mod protocol;

pub use metrics::{
    evaluate_maps, mean_sd, pooled_rmse, psnr, rmse, ssim, MetricReport, MetricSet, PARAM_NAMES,
    SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use protocol::{
    evaluate_selection, predict_maps, rows_to_csv, run_ablation, run_protocol, split_evenly,
    ss_selection, summarize, ExperimentSpec, Protocol, ReportRow, CSV_HEADER, FLEXIBLE_SCHEMES,
    SWEEP_TOTALS,
};
