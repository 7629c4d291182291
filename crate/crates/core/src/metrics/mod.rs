//! Evaluation protocols: OKS-based keypoint AP/AR and PCK, segmentation
//! mIoU/mAcc, aligned relative-depth errors, and normal angular statistics.

mod dense;
mod keypoints;
mod report;

pub(crate) use dense::summarize_angles;

pub use dense::{
    align_scale_shift, angular_errors_deg, depth_metrics, normal_metrics, seg_metrics, DepthReport, NormalReport,
    SegAccumulator, SegReport,
};
pub use keypoints::{greedy_match, keypoint_ap_ar, oks, pck, ApAr, ImageDetections};
pub use report::{EvalProtocol, MetricReport};
