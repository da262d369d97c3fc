//! Desk-scale monocular autonomy stack: pseudo-stereo metric depth
//! recovery, ego-centric occupancy mapping and fast-marching path
//! planning, plus the synthetic scene source used to exercise the whole
//! loop deterministically.

pub mod camera;
pub mod depth;
pub mod grid;
pub mod matching;
pub mod planner;
pub mod raster;
pub mod source;

pub use camera::{
    build_triangulation_matrix, compose_projection, refine_point, reprojection_residuals,
    soft_l1, triangulate, CameraIntrinsics, CameraPose, GeometryError, PixelMatch,
    ProjectionMatrix, RefineConfig, ScenePoint,
};
pub use depth::{
    apply_min_depth_shift, estimate_metric_depth, scale_disparity, DepthAnchor, DepthError,
    DepthEstimate, DepthMap, DepthParams, DepthPipelineState, DisparityMap, SmoothingWindow,
};
pub use grid::{bin_points, depth_to_pointcloud, pad_obstacles, GridDims, OccupancyGrid, PointCloud};
pub use matching::{
    lowe_ratio_filter, min_disparity_correspondence, select_top_n, FeatureMatch, GrayImage,
    MatchError, SearchRegion,
};
pub use planner::{
    commit_actions, extract_path, fmm_solve, project_goal, ActionPlan, ArrivalTimeField,
    PlanError, SpeedField,
};
pub use raster::{Raster, RasterError, DEPTH_MAGIC, DISPARITY_MAGIC};
pub use source::{
    camera_pose, observe, raycast_depth, synthetic_matches, Aabb, DirSource, FrameObservation,
    NoiseConfig, Scene, SourceError, SyntheticSource,
};
