use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::ba::{solve, BaCamera, BaObservation, BaPoint, BaProblem, LmParams, PointKind, SolveOptions, SolveReport};
use super::robust::RobustKernel;
use super::OptimizerError;
use crate::geometry::{Intrinsics, Pose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseOnlyParams {
    pub min_matches: usize,
    /// Optimise / reclassify rounds.
    pub rounds: usize,
    pub iterations_per_round: usize,
    /// Squared pixel error above which a match is an outlier for the next round.
    pub outlier_chi2: f64,
}

impl Default for PoseOnlyParams {
    fn default() -> Self {
        Self { min_matches: 6, rounds: 4, iterations_per_round: 10, outlier_chi2: 5.991 }
    }
}

#[derive(Debug, Clone)]
pub struct PoseOnlyResult {
    /// World-to-camera pose.
    pub pose: Pose,
    /// Report of the final round.
    pub report: SolveReport,
    pub inliers: Vec<bool>,
}

impl PoseOnlyResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Camera pose from fixed world points and their pixels, robust to outliers:
/// each round optimises on the current inlier set, then every match is
/// reclassified against the chi-square gate.
pub fn optimize_pose_only(
    initial: &Pose,
    matches: &[(Vector3<f64>, Vector2<f64>)],
    k: &Intrinsics,
    kernel: Option<&RobustKernel>,
    params: &PoseOnlyParams,
    lm: &LmParams,
) -> Result<PoseOnlyResult, OptimizerError> {
    if matches.len() < params.min_matches {
        return Err(OptimizerError::InsufficientMatches { found: matches.len(), required: params.min_matches });
    }
    let lm = LmParams { max_iterations: params.iterations_per_round, ..lm.clone() };
    let mut pose = *initial;
    let mut inliers = vec![true; matches.len()];
    let mut report = None;

    for _ in 0..params.rounds.max(1) {
        let mut problem = BaProblem::new(*k);
        problem.cameras.push(BaCamera { keyframe: 0, pose, fixed: false });
        for (i, (p, z)) in matches.iter().enumerate() {
            if !inliers[i] {
                continue;
            }
            problem.observations.push(BaObservation {
                camera: 0,
                object_pose: None,
                point: problem.points.len(),
                pixel: *z,
            });
            problem.points.push(BaPoint { id: i as u64, kind: PointKind::Background, position: *p, fixed: true });
        }
        if problem.observations.len() < params.min_matches {
            return Err(OptimizerError::InsufficientInliers {
                found: problem.observations.len(),
                required: params.min_matches,
            });
        }
        let r = solve(&mut problem, kernel, &lm, SolveOptions { include_foreground: false, require_gauge: false })?;
        pose = problem.cameras[0].pose;
        report = Some(r);

        for (flag, (p, z)) in inliers.iter_mut().zip(matches) {
            let pc = pose.transform_point(p);
            *flag = pc.z > 0.0 && (z - k.project_unchecked(&pc)).norm_squared() <= params.outlier_chi2;
        }
    }

    let found = inliers.iter().filter(|&&b| b).count();
    if found < params.min_matches {
        return Err(OptimizerError::InsufficientInliers { found, required: params.min_matches });
    }
    Ok(PoseOnlyResult { pose, report: report.expect("at least one round"), inliers })
}
