//! Two-view geometry for evaluation: homography correct-match counting,
//! essential-matrix RANSAC, pose decomposition and angular pose metrics.

mod essential;
mod homography;
mod io;
mod pose;

pub use essential::{
    decompose_essential, eight_point, estimate_essential_ransac, project_essential, symmetric_epipolar_distance,
    triangulate_depths, EssentialEstimate, NormalizedPair, RansacConfig, MIN_CORRESPONDENCES,
};
pub use homography::{
    evaluate_homography_matches, validate_thresholds, Homography, HomographyEvaluation, HOMOGRAPHY_EPS,
};
pub use io::{
    format_homography, format_pose, load_homography, load_pose, parse_homography, parse_pose, read_text, write_text,
    PoseRecord,
};
pub use pose::{
    axis_angle, normalized_to_pixels, pixels_to_normalized, pose_accuracy, pose_errors, skew, CameraIntrinsics,
    PoseAccuracy, RelativePose,
};
