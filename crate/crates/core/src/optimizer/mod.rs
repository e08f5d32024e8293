//! Robust nonlinear least squares for tracking and mapping.

mod ba;
pub mod dump;
mod pose_only;
mod residuals;
mod robust;

use thiserror::Error;

pub use ba::{
    object_local_ba, object_pose_index, BaCamera, BaObjectPose, BaObservation, BaPoint, BaProblem, LmParams,
    PointKind, SolveReport, Termination, VariableClass,
};
pub use pose_only::{optimize_pose_only, PoseOnlyParams, PoseOnlyResult};
pub use residuals::{
    residual_bg, residual_bg_jacobians, residual_fg, residual_fg_jacobians, BackgroundJacobians, BehindCamera,
    ForegroundJacobians,
};
pub use robust::{huber_rho, RobustKernel, DEFAULT_HUBER_DELTA};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("{found} matches, at least {required} required")]
    InsufficientMatches { found: usize, required: usize },
    #[error("{found} inliers after outlier rejection, at least {required} required")]
    InsufficientInliers { found: usize, required: usize },
    #[error("normal equations are rank deficient in {class} #{index}")]
    RankDeficient { class: VariableClass, index: usize },
    #[error("no camera pose is fixed; the gauge is free")]
    NoGaugeAnchor,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// Solves with the foreground term switched off, for comparisons against the
/// joint problem.
pub fn background_only_ba(
    problem: &mut BaProblem,
    kernel: Option<&RobustKernel>,
    lm: &LmParams,
) -> Result<SolveReport, OptimizerError> {
    ba::solve(problem, kernel, lm, ba::SolveOptions { include_foreground: false, require_gauge: true })
}
