//! The per-frame loop: detection filtering, multi-object tracking, static-only
//! camera tracking, object lifting, map point creation, foreground
//! association and object local bundle adjustment.
//!
//! The pipeline reads only [`FrameInput`]; ground truth never reaches it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use nalgebra::{Matrix6, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{TrackRow, Trajectory};
use crate::geometry::{parallax, Intrinsics, Pose};
use crate::mapping::{
    associate_foreground, create_background_point, create_background_point_from_depth, create_foreground_point,
    greedy_one_to_one, object_covisibility_neighbors, FeatureObs, ImageSize, Keyframe, KeyframeId, Map, MappingParams,
    PointId, PointMatch,
};
use crate::mot::{Box2D, MotParams, Tracker};
use crate::objects::{filter_detections, init_object, label_features, merge_2d_3d, Detection, Mask, OrientedBox3D, BACKGROUND};
use crate::optimizer::{
    object_local_ba, optimize_pose_only, BaCamera, BaObjectPose, BaObservation, BaPoint, BaProblem, LmParams,
    OptimizerError, PointKind, PoseOnlyParams, RobustKernel, SolveReport, Termination, VariableClass,
    residual_fg_jacobians, DEFAULT_HUBER_DELTA,
};
use crate::simulator::{FrameInput, SceneConfig, SequenceHeader};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectParams {
    /// Detections below this confidence are dropped.
    pub confidence_min: f64,
    /// 2D and 3D detections are paired above this IoU.
    pub merge_iou: f64,
    /// When false every feature is treated as static (ablation control).
    pub static_only: bool,
}

impl Default for ObjectParams {
    fn default() -> Self {
        Self { confidence_min: 0.9, merge_iou: 0.8, static_only: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingParams {
    #[serde(flatten)]
    pub pose_only: PoseOnlyParams,
    /// Search radius of the second matching pass, after the first pose estimate.
    pub refine_radius: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self { pose_only: PoseOnlyParams::default(), refine_radius: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerParams {
    pub huber_delta: f64,
    pub local_ba: LmParams,
    pub pose: LmParams,
    /// Rank-deficient variables are fixed and the solve retried this many times.
    pub rank_retries: usize,
    /// An object pose whose weakest direction has a standard deviation above
    /// this (metres or radians, at the mapping pixel sigma, points held
    /// fixed) keeps its current value in bundle adjustment.
    pub object_pose_max_sigma: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            huber_delta: DEFAULT_HUBER_DELTA,
            local_ba: LmParams::default(),
            pose: LmParams::default(),
            rank_retries: 8,
            object_pose_max_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationParams {
    pub threshold_2d: f64,
    pub threshold_3d: f64,
    pub ap_overlap: f64,
    /// Frame gap of the relative pose error.
    pub rpe_delta: usize,
}

impl Default for EvaluationParams {
    fn default() -> Self {
        Self { threshold_2d: 0.5, threshold_3d: 0.25, ap_overlap: 0.25, rpe_delta: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub sequence: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Every tunable of a run, read from one TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub scene: SceneConfig,
    pub objects: ObjectParams,
    pub mot: MotParams,
    pub mapping: MappingParams,
    pub tracking: TrackingParams,
    pub optimizer: OptimizerParams,
    pub evaluation: EvaluationParams,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if !(0.0..=1.0).contains(&self.objects.confidence_min) || !(0.0..=1.0).contains(&self.objects.merge_iou) {
            return bad("objects thresholds must lie in [0, 1]");
        }
        if self.mapping.keyframe_stride == 0 {
            return bad("mapping.keyframe_stride must be positive");
        }
        if self.mapping.local_window < 2 {
            return bad("mapping.local_window must be at least 2");
        }
        if RobustKernel::new(self.optimizer.huber_delta).is_none() {
            return bad("optimizer.huber_delta must be positive");
        }
        if self.evaluation.rpe_delta == 0 {
            return bad("evaluation.rpe_delta must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid camera: {0}")]
    Camera(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackingStatus {
    /// First frame; defines the world frame.
    Bootstrap,
    Tracked { matches: usize, inliers: usize },
    /// Pose optimisation failed; the motion-model prediction was kept.
    Carried { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaStatus {
    Skipped,
    Solved { iterations: usize, termination: Termination, initial_cost: f64, final_cost: f64, culled: usize },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLog {
    pub detections: usize,
    pub tracks: usize,
    pub tracking: TrackingStatus,
    pub background_created: usize,
    pub foreground_created: usize,
    pub foreground_associated: usize,
    pub ba: BaStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub box2d: Box2D,
    pub score: f64,
}

/// Everything the pipeline settled on for one frame. Keyframe entries are
/// revised by later bundle adjustments.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub timestamp: f64,
    /// World-to-camera pose.
    pub pose: Pose,
    pub keyframe: Option<KeyframeId>,
    pub tracks: Vec<TrackOutput>,
    /// Object-to-world poses.
    pub object_poses: BTreeMap<u64, Pose>,
    pub log: FrameLog,
}

impl fmt::Display for FrameLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "detections={} tracks={} ", self.detections, self.tracks)?;
        match &self.tracking {
            TrackingStatus::Bootstrap => write!(f, "tracking=bootstrap")?,
            TrackingStatus::Tracked { matches, inliers } => write!(f, "tracking=ok matches={matches} inliers={inliers}")?,
            TrackingStatus::Carried { reason } => write!(f, "tracking=LOST carried_forward reason=\"{reason}\"")?,
        }
        write!(
            f,
            " new_bg={} new_fg={} fg_assoc={} ",
            self.background_created, self.foreground_created, self.foreground_associated
        )?;
        match &self.ba {
            BaStatus::Skipped => write!(f, "ba=skipped"),
            BaStatus::Solved { iterations, termination, initial_cost, final_cost, culled } => write!(
                f,
                "ba={termination:?} iterations={iterations} cost={initial_cost:.6e}->{final_cost:.6e} culled={culled}"
            ),
            BaStatus::Failed(e) => write!(f, "ba=failed reason=\"{e}\""),
        }
    }
}

struct ObjectTrack {
    dimensions: Vector3<f64>,
    /// Object-to-world pose by frame.
    poses: BTreeMap<usize, Pose>,
}

impl ObjectTrack {
    /// Pose at `frame`: the stored one, or a constant-velocity extrapolation
    /// of the last two consecutive poses, or the last pose.
    fn pose_at(&self, frame: usize) -> Option<Pose> {
        if let Some(p) = self.poses.get(&frame) {
            return Some(*p);
        }
        let mut it = self.poses.range(..frame).rev();
        let (&fb, b) = it.next()?;
        match it.next() {
            Some((&fa, a)) if fa + 1 == fb => {
                let step = b.compose(&a.inverse());
                let mut p = *b;
                for _ in fb..frame {
                    p = step.compose(&p);
                }
                Some(p)
            }
            _ => Some(*b),
        }
    }
}

/// Final products of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Camera-to-world poses.
    pub trajectory: Trajectory,
    pub tracks: Vec<TrackRow>,
    pub log: Vec<String>,
}

pub struct System {
    config: PipelineConfig,
    k: Intrinsics,
    image: ImageSize,
    kernel: RobustKernel,
    tracker: Tracker,
    map: Map,
    objects: BTreeMap<u64, ObjectTrack>,
    frames: Vec<FrameRecord>,
    next_keyframe: KeyframeId,
}

impl System {
    pub fn new(config: PipelineConfig, header: &SequenceHeader) -> Result<Self, PipelineError> {
        config.validate()?;
        let k = header.intrinsics()?;
        let kernel = RobustKernel::new(config.optimizer.huber_delta).expect("validated");
        Ok(Self {
            tracker: Tracker::new(config.mot.clone()),
            config,
            k,
            image: header.image(),
            kernel,
            map: Map::new(),
            objects: BTreeMap::new(),
            frames: Vec::new(),
            next_keyframe: 0,
        })
    }

    pub fn map(&self) -> &Map {
        &self.map
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn process(&mut self, input: &FrameInput) -> &FrameRecord {
        let f = self.frames.len();
        let cfg = &self.config.objects;

        let dets2d = filter_detections(&input.detections, cfg.confidence_min);
        let dets3d: Vec<Detection> = input
            .detections3d
            .iter()
            .filter(|d| d.confidence >= cfg.confidence_min)
            .map(|d| d.to_detection())
            .collect();
        let dets = merge_2d_3d(&dets2d, &dets3d, cfg.merge_iou);

        let boxes: Vec<Box2D> = dets.iter().map(|d| d.box2d).collect();
        let step = self.tracker.step(&boxes);
        let ids = step.detection_ids(dets.len());

        // Coasting tracks keep their predicted box as a mask so their
        // features are not mistaken for background.
        let mut masks: Vec<(u64, Mask)> = Vec::new();
        for (d, id) in dets.iter().zip(&ids) {
            if let Some(id) = id {
                masks.push((*id, d.mask.clone().unwrap_or(Mask::Box(d.box2d))));
            }
        }
        for id in &step.unmatched_tracks {
            if let Some(b) = self.tracker.track(*id).and_then(|t| t.current_box()) {
                masks.push((*id, Mask::Box(b)));
            }
        }
        let pixels: Vec<Vector2<f64>> = input.observations.iter().map(|o| o.pixel).collect();
        let labels =
            if cfg.static_only { label_features(&pixels, &masks) } else { vec![BACKGROUND; pixels.len()] };

        let (pose, tracking, links) = self.track_camera(f, input, &labels);

        // Lift 3D detections into the world; the newest detection sets the pose.
        let cam_to_world = pose.inverse();
        for (d, id) in dets.iter().zip(&ids) {
            let (Some(id), Some(_)) = (id, d.box3d) else { continue };
            let lifted = Detection { box3d: d.box3d.map(|b| b.transformed(&cam_to_world)), ..d.clone() };
            let Ok(state) = init_object(&lifted, *id, f) else { continue };
            self.objects
                .entry(*id)
                .or_insert_with(|| ObjectTrack { dimensions: state.box3d.dimensions, poses: BTreeMap::new() })
                .poses
                .insert(f, state.box3d.pose);
        }
        let present: BTreeSet<u64> = ids.iter().flatten().chain(&step.unmatched_tracks).copied().collect();
        let mut object_poses = BTreeMap::new();
        for id in &present {
            if let Some(p) = self.objects.get_mut(id).and_then(|o| {
                let p = o.pose_at(f)?;
                o.poses.insert(f, p);
                Some(p)
            }) {
                object_poses.insert(*id, p);
            }
        }

        let tracks = dets
            .iter()
            .zip(&ids)
            .filter_map(|(d, id)| id.map(|id| TrackOutput { id, box2d: d.box2d, score: d.confidence }))
            .collect();
        let mut log = FrameLog {
            detections: dets.len(),
            tracks: self.tracker.tracks().len(),
            tracking,
            background_created: 0,
            foreground_created: 0,
            foreground_associated: 0,
            ba: BaStatus::Skipped,
        };

        let is_keyframe = f % self.config.mapping.keyframe_stride == 0;
        let keyframe = is_keyframe.then(|| {
            let id = self.next_keyframe;
            self.next_keyframe += 1;
            id
        });
        if let Some(kf_id) = keyframe {
            let observations = input
                .observations
                .iter()
                .zip(&labels)
                .map(|(o, &label)| FeatureObs { pixel: o.pixel, pool: o.pool, label, point: None })
                .collect();
            let mut kf = Keyframe::new(kf_id, f, pose, observations, input.depth.clone());
            kf.objects = labels.iter().copied().filter(|&l| l != BACKGROUND).chain(object_poses.keys().copied()).collect();
            kf.object_poses = object_poses.clone();
            self.map.insert_keyframe(kf);
            for (i, pid) in links {
                self.map.add_observation(pid, kf_id, i);
            }
            log.foreground_associated = self.associate(kf_id);
            let (bg, fg) = self.create_points(kf_id);
            log.background_created = bg;
            log.foreground_created = fg;
        }

        self.frames.push(FrameRecord {
            frame: input.index,
            timestamp: input.timestamp,
            pose,
            keyframe,
            tracks,
            object_poses,
            log,
        });
        if keyframe.is_some() {
            self.frames[f].log.ba = self.local_ba();
        }
        &self.frames[f]
    }

    /// Constant-velocity prediction of the next world-to-camera pose.
    fn predict(&self) -> Pose {
        match self.frames.as_slice() {
            [] => Pose::identity(),
            [only] => only.pose,
            [.., a, b] => b.pose.compose(&a.pose.inverse()).compose(&b.pose),
        }
    }

    /// Static-only pose estimation. Returns the pose, its status and the
    /// inlier links `(observation index, point)`.
    fn track_camera(&self, f: usize, input: &FrameInput, labels: &[u64]) -> (Pose, TrackingStatus, Vec<(usize, PointId)>) {
        if f == 0 {
            return (Pose::identity(), TrackingStatus::Bootstrap, Vec::new());
        }
        let predicted = self.predict();
        let pools = self.map.background_pools();
        let params = &self.config.tracking;
        let mut pose = predicted;
        let mut radius = self.config.mapping.tracking_radius;
        let mut result = Err(String::from("no background points"));
        for _ in 0..2 {
            let matches = self.match_background(&pose, input, labels, &pools, radius);
            let pairs: Vec<(Vector3<f64>, Vector2<f64>)> = matches
                .iter()
                .map(|m| (self.map.points[&m.point].position, input.observations[m.observation].pixel))
                .collect();
            match optimize_pose_only(&pose, &pairs, &self.k, Some(&self.kernel), &params.pose_only, &self.config.optimizer.pose)
            {
                Ok(r) => {
                    pose = r.pose;
                    let links: Vec<(usize, PointId)> = matches
                        .iter()
                        .zip(&r.inliers)
                        .filter(|(_, &ok)| ok)
                        .map(|(m, _)| (m.observation, m.point))
                        .collect();
                    result = Ok((matches.len(), links));
                }
                Err(e) => {
                    result = Err(e.to_string());
                    break;
                }
            }
            radius = params.refine_radius;
        }
        match result {
            Ok((matches, links)) => (pose, TrackingStatus::Tracked { matches, inliers: links.len() }, links),
            Err(reason) => (predicted, TrackingStatus::Carried { reason }, Vec::new()),
        }
    }

    /// Matches background-labelled observations to map points of the same
    /// pool, nearest projection within `radius`, one to one.
    fn match_background(
        &self,
        pose: &Pose,
        input: &FrameInput,
        labels: &[u64],
        pools: &BTreeMap<u64, Vec<PointId>>,
        radius: f64,
    ) -> Vec<PointMatch> {
        let mut pairs = Vec::new();
        for (i, o) in input.observations.iter().enumerate() {
            if labels[i] != BACKGROUND {
                continue;
            }
            let Some(candidates) = pools.get(&o.pool) else { continue };
            for pid in candidates {
                let pc = pose.transform_point(&self.map.points[pid].position);
                if pc.z <= 0.0 {
                    continue;
                }
                let d = (self.k.project_unchecked(&pc) - o.pixel).norm();
                if d <= radius {
                    pairs.push(PointMatch { point: *pid, observation: i, distance: d });
                }
            }
        }
        greedy_one_to_one(pairs)
    }

    fn window(&self) -> Vec<KeyframeId> {
        self.map.recent_keyframes(self.config.mapping.local_window)
    }

    /// Foreground association of the keyframe against its object co-visible
    /// neighbours in the local window.
    fn associate(&mut self, kf_id: KeyframeId) -> usize {
        let window = self.window();
        let kf = &self.map.keyframes[&kf_id];
        let neighbors = object_covisibility_neighbors(kf, window.iter().filter_map(|id| self.map.keyframe(*id)));
        let matches = associate_foreground(
            &self.map,
            kf,
            &neighbors,
            &self.k,
            Some(&self.image),
            self.config.mapping.association_radius,
        );
        matches.iter().filter(|m| self.map.add_observation(m.point, kf_id, m.observation)).count()
    }

    /// Creates background points by triangulation against the window (from
    /// depth on the first keyframe) and foreground points from depth.
    fn create_points(&mut self, kf_id: KeyframeId) -> (usize, usize) {
        let params = self.config.mapping.clone();
        let first = self.map.keyframes.len() == 1;
        let bg_pools = self.map.background_pools();
        let fg_pools: BTreeSet<(u64, u64)> =
            self.map.points.values().filter(|p| p.is_foreground()).map(|p| (p.object_id, p.pool)).collect();
        let window: Vec<KeyframeId> = self.window().into_iter().filter(|id| *id != kf_id).collect();
        let pool_index = |kf: &Keyframe| {
            let mut m: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, o) in kf.observations.iter().enumerate() {
                m.entry(o.pool).or_default().push(i);
            }
            m
        };
        let partners: Vec<(KeyframeId, BTreeMap<u64, Vec<usize>>)> =
            window.iter().map(|id| (*id, pool_index(&self.map.keyframes[id]))).collect();

        let kf = &self.map.keyframes[&kf_id];
        let own = pool_index(kf);
        let mut created = Vec::new();
        for o in &kf.observations {
            if o.point.is_some() || own[&o.pool].len() != 1 {
                continue;
            }
            if o.label == BACKGROUND {
                if bg_pools.contains_key(&o.pool) {
                    continue;
                }
                if first {
                    if let Ok(p) = create_background_point_from_depth(&self.k, kf, o) {
                        created.push(p);
                    }
                    continue;
                }
                let mut best: Option<(f64, &Keyframe, &FeatureObs)> = None;
                for (pid, index) in &partners {
                    let Some([j]) = index.get(&o.pool).map(Vec::as_slice) else { continue };
                    let other = &self.map.keyframes[pid];
                    let zb = &other.observations[*j];
                    if zb.label != BACKGROUND || zb.point.is_some() {
                        continue;
                    }
                    let angle = parallax(&self.k, &other.pose, &kf.pose, &zb.pixel, &o.pixel);
                    if best.is_none_or(|(a, _, _)| angle > a) {
                        best = Some((angle, other, zb));
                    }
                }
                if let Some((_, other, zb)) = best {
                    if let Ok(p) = create_background_point(&self.k, other, zb, kf, o, &params) {
                        created.push(p);
                    }
                }
            } else if let Some(object_pose) = kf.object_poses.get(&o.label) {
                if fg_pools.contains(&(o.label, o.pool)) {
                    continue;
                }
                if let Ok(p) = create_foreground_point(&self.k, kf, o, o.label, object_pose) {
                    created.push(p);
                }
            }
        }
        let fg = created.iter().filter(|p| p.is_foreground()).count();
        let bg = created.len() - fg;
        for p in created {
            self.map.insert_point(p);
        }
        (bg, fg)
    }

    /// Object local bundle adjustment over the window, followed by removal
    /// of observations that fail the chi-square gate.
    fn local_ba(&mut self) -> BaStatus {
        let window = self.window();
        if window.len() < 2 {
            return BaStatus::Skipped;
        }
        let (mut problem, links) = self.build_problem(&window);
        if problem.observations.is_empty() {
            return BaStatus::Skipped;
        }
        let mut result = object_local_ba(&mut problem, Some(&self.kernel), &self.config.optimizer.local_ba);
        for _ in 0..self.config.optimizer.rank_retries {
            let Err(OptimizerError::RankDeficient { class, index }) = &result else { break };
            match class {
                VariableClass::Camera => problem.cameras[*index].fixed = true,
                VariableClass::ObjectPose => problem.object_poses[*index].fixed = true,
                VariableClass::Point => problem.points[*index].fixed = true,
            }
            result = object_local_ba(&mut problem, Some(&self.kernel), &self.config.optimizer.local_ba);
        }
        let report: SolveReport = match result {
            Ok(r) => r,
            Err(e) => return BaStatus::Failed(e.to_string()),
        };
        self.write_back(&problem);
        let culled = self.cull(&problem, &links);
        BaStatus::Solved {
            iterations: report.iterations,
            termination: report.termination,
            initial_cost: report.initial_cost,
            final_cost: report.final_cost,
            culled,
        }
    }

    /// Builds the window problem. Keyframes outside the window that observe
    /// window points join as fixed cameras. The two oldest window cameras and
    /// each object's oldest pose are fixed; so are object poses with fewer
    /// than three observations and points whose viewing rays (in the point's
    /// own frame) span less than the triangulation parallax.
    fn build_problem(&self, window: &[KeyframeId]) -> (BaProblem, Vec<(PointId, KeyframeId)>) {
        let mut problem = BaProblem::new(self.k);
        let mut cam_index = BTreeMap::new();
        for (i, id) in window.iter().enumerate() {
            cam_index.insert(*id, i);
            problem.cameras.push(BaCamera { keyframe: *id, pose: self.map.keyframes[id].pose, fixed: i < 2 });
        }
        let mut point_ids = BTreeSet::new();
        for id in window {
            point_ids.extend(self.map.keyframes[id].observations.iter().filter_map(|o| o.point));
        }
        let mut object_index: BTreeMap<(u64, KeyframeId), usize> = BTreeMap::new();
        let mut links = Vec::new();
        for pid in point_ids {
            let point = &self.map.points[&pid];
            let p_index = problem.points.len();
            let mut count = 0;
            let mut centers = Vec::new();
            for (kf_id, pixel) in &point.observations {
                let kf = &self.map.keyframes[kf_id];
                let center = kf.pose.inverse().translation().clone_owned();
                let object_pose = if point.is_foreground() {
                    let Some(pose) = kf.object_poses.get(&point.object_id) else { continue };
                    centers.push(pose.inverse().transform_point(&center));
                    let next = problem.object_poses.len();
                    let index = *object_index.entry((point.object_id, *kf_id)).or_insert(next);
                    if index == next {
                        problem.object_poses.push(BaObjectPose {
                            object: point.object_id,
                            keyframe: *kf_id,
                            pose: *pose,
                            fixed: !cam_index.contains_key(kf_id),
                        });
                    }
                    Some(index)
                } else {
                    centers.push(center);
                    None
                };
                let c = *cam_index.entry(*kf_id).or_insert_with(|| {
                    problem.cameras.push(BaCamera { keyframe: *kf_id, pose: kf.pose, fixed: true });
                    problem.cameras.len() - 1
                });
                problem.observations.push(BaObservation { camera: c, object_pose, point: p_index, pixel: *pixel });
                links.push((pid, *kf_id));
                count += 1;
            }
            if count == 0 {
                continue;
            }
            let kind = if point.is_foreground() {
                PointKind::Foreground { object: point.object_id }
            } else {
                PointKind::Background
            };
            let min_parallax = self.config.mapping.min_parallax_deg.to_radians();
            let fixed = count < 2 || max_parallax(&point.position, &centers) < min_parallax;
            problem.points.push(BaPoint { id: pid, kind, position: point.position, fixed });
        }

        let mut counts = vec![0usize; problem.object_poses.len()];
        let mut information = vec![Matrix6::zeros(); problem.object_poses.len()];
        for o in &problem.observations {
            let Some(i) = o.object_pose else { continue };
            counts[i] += 1;
            let (cam, obj) = (&problem.cameras[o.camera].pose, &problem.object_poses[i].pose);
            if let Ok((_, j)) = residual_fg_jacobians(cam, obj, &problem.points[o.point].position, &o.pixel, &self.k) {
                information[i] += j.object.transpose() * j.object;
            }
        }
        let sigma = self.config.mapping.pixel_sigma;
        let weak = |h: &Matrix6<f64>| {
            let min = h.symmetric_eigenvalues().min();
            !(min > 0.0) || sigma / min.sqrt() > self.config.optimizer.object_pose_max_sigma
        };
        let mut oldest: BTreeMap<u64, KeyframeId> = BTreeMap::new();
        for op in &problem.object_poses {
            let e = oldest.entry(op.object).or_insert(op.keyframe);
            *e = (*e).min(op.keyframe);
        }
        for (i, op) in problem.object_poses.iter_mut().enumerate() {
            op.fixed |= oldest[&op.object] == op.keyframe || counts[i] < 3 || weak(&information[i]);
        }
        (problem, links)
    }

    fn write_back(&mut self, problem: &BaProblem) {
        for c in problem.cameras.iter().filter(|c| !c.fixed) {
            let kf = self.map.keyframes.get_mut(&c.keyframe).expect("window keyframe");
            kf.pose = c.pose;
            self.frames[kf.frame].pose = c.pose;
        }
        for op in problem.object_poses.iter().filter(|o| !o.fixed) {
            let kf = self.map.keyframes.get_mut(&op.keyframe).expect("window keyframe");
            kf.object_poses.insert(op.object, op.pose);
            self.frames[kf.frame].object_poses.insert(op.object, op.pose);
            if let Some(track) = self.objects.get_mut(&op.object) {
                track.poses.insert(kf.frame, op.pose);
            }
        }
        for p in &problem.points {
            if let Some(mp) = self.map.points.get_mut(&p.id) {
                mp.position = p.position;
            }
        }
    }

    fn cull(&mut self, problem: &BaProblem, links: &[(PointId, KeyframeId)]) -> usize {
        let max = self.config.mapping.max_squared_error();
        let mut culled = 0;
        for (o, (pid, kf)) in problem.observations.iter().zip(links) {
            let bad = problem.residual(o).map_or(true, |r| r.norm_squared() > max);
            if bad {
                self.map.remove_observation(*pid, *kf);
                culled += 1;
            }
        }
        let empty: Vec<PointId> =
            self.map.points.values().filter(|p| p.observations.is_empty()).map(|p| p.id).collect();
        for id in empty {
            self.map.remove_point(id);
        }
        culled
    }

    /// Trajectory, KITTI tracks and log lines from the current state.
    pub fn output(&self) -> RunOutput {
        let samples = self.frames.iter().map(|r| (r.timestamp, r.pose.inverse())).collect();
        let trajectory = Trajectory::new(samples).unwrap_or_default();
        let mut tracks = Vec::new();
        for r in &self.frames {
            for t in &r.tracks {
                let cam_box = r.object_poses.get(&t.id).and_then(|pose| {
                    let dims = self.objects.get(&t.id)?.dimensions;
                    Some(OrientedBox3D { pose: r.pose.compose(pose), dimensions: dims })
                });
                tracks.push(TrackRow::from_box(r.frame, t.id, t.box2d, cam_box.as_ref(), t.score));
            }
        }
        let log = self.frames.iter().map(|r| format!("frame={} {}", r.frame, r.log)).collect();
        RunOutput { trajectory, tracks, log }
    }
}

/// Largest angle between rays from `centers` to `p`.
fn max_parallax(p: &Vector3<f64>, centers: &[Vector3<f64>]) -> f64 {
    let rays: Vec<Vector3<f64>> = centers.iter().filter_map(|c| (p - c).try_normalize(1e-12)).collect();
    let mut best = 0.0f64;
    for (i, a) in rays.iter().enumerate() {
        for b in &rays[i + 1..] {
            best = best.max(a.dot(b).clamp(-1.0, 1.0).acos());
        }
    }
    best
}

/// Runs the pipeline over every frame of a sequence.
pub fn run_frames<'a>(
    config: &PipelineConfig,
    header: &SequenceHeader,
    frames: impl IntoIterator<Item = &'a FrameInput>,
) -> Result<RunOutput, PipelineError> {
    let mut system = System::new(config.clone(), header)?;
    for f in frames {
        system.process(f);
    }
    Ok(system.output())
}
