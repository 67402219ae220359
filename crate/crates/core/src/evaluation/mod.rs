//! Accuracy metrics, surface distances, group differences and the
//! downstream classification task.

pub mod downstream;
pub mod group;
pub mod metrics;
pub mod report;
pub mod surface;

pub use downstream::{classify_downstream, stratified_folds, DownstreamConfig, DownstreamResult};
pub use group::{group_difference, support_region, GroupDifference};
pub use metrics::{per_point_rmse, rmse_eq8};
pub use report::{
    evaluate_predictions, group_difference_csv, heatmap_csv, write_group_difference, write_heatmaps, EvalReport, SampleEval,
    EVAL_REPORT_FILE, GROUPDIFF_FILE,
};
pub use surface::{chamfer_distance, surface_distance, surface_distance_from_points, SurfaceDistance};
