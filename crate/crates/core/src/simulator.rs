//! Deterministic synthetic driving scenes: a camera on a parametric path,
//! box-shaped objects with rigid surface landmarks, static background
//! landmarks, and noisy detections, depth and feature observations.
//!
//! The pipeline only ever sees [`FrameInput`]. Ground truth lives in
//! [`FrameTruth`] and [`LandmarkTruth`], which evaluation reads.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rot_y, Intrinsics, Pose};
use crate::mapping::{DepthMap, DepthSample, ImageSize};
use crate::mot::Box2D;
use crate::objects::{Detection, Mask, OrientedBox3D};
use crate::textio::{records, Fields, Float, ParseError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Camera path. Yaw is the heading about the (downward) y axis; yaw 0 looks
/// and drives along world +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Line { start: [f64; 3], yaw: f64, speed: f64 },
    Arc { start: [f64; 3], yaw: f64, speed: f64, yaw_rate: f64 },
    /// `[x, y, z, yaw]` samples spread evenly over the sequence and linearly interpolated.
    Waypoints { points: Vec<[f64; 4]> },
}

impl TrajectorySpec {
    /// Camera-to-world pose at time `t` seconds, given the sequence duration.
    fn pose(&self, t: f64, duration: f64) -> Pose {
        let (p, yaw) = match self {
            TrajectorySpec::Line { start, yaw, speed } => {
                let d = Vector3::new(yaw.sin(), 0.0, yaw.cos());
                (Vector3::from(*start) + d * (speed * t), *yaw)
            }
            TrajectorySpec::Arc { start, yaw, speed, yaw_rate } => {
                let p = Vector3::from(*start) + arc_offset(*yaw, *speed, *yaw_rate, t, |h| (h.sin(), h.cos()));
                (p, yaw + yaw_rate * t)
            }
            TrajectorySpec::Waypoints { points } => {
                let s = if duration > 0.0 { (t / duration).clamp(0.0, 1.0) } else { 0.0 };
                let x = s * (points.len() - 1) as f64;
                let i = (x.floor() as usize).min(points.len() - 2);
                let f = x - i as f64;
                let a = points[i];
                let b = points[i + 1];
                let lerp = |k: usize| a[k] + (b[k] - a[k]) * f;
                (Vector3::new(lerp(0), lerp(1), lerp(2)), lerp(3))
            }
        };
        Pose::new(rot_y(yaw), p)
    }

    fn validate(&self) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            TrajectorySpec::Line { start, yaw, speed } | TrajectorySpec::Arc { start, yaw, speed, .. } => {
                if !finite(start) || !yaw.is_finite() || !speed.is_finite() {
                    return Err("trajectory values must be finite".into());
                }
                if *speed <= 0.0 {
                    return Err("trajectory speed must be positive".into());
                }
                if let TrajectorySpec::Arc { yaw_rate, .. } = self {
                    if !yaw_rate.is_finite() {
                        return Err("trajectory yaw_rate must be finite".into());
                    }
                }
            }
            TrajectorySpec::Waypoints { points } => {
                if points.len() < 2 {
                    return Err("waypoint trajectory needs at least two points".into());
                }
                if !points.iter().all(|p| finite(p)) {
                    return Err("waypoints must be finite".into());
                }
                if points.windows(2).all(|w| w[0][..3] == w[1][..3]) {
                    return Err("waypoint trajectory does not move".into());
                }
            }
        }
        Ok(())
    }
}

/// Displacement after `t` seconds at constant speed and turn rate, starting
/// with heading `yaw`. `dir` maps a heading to its (lateral, forward) unit direction.
fn arc_offset(yaw: f64, speed: f64, yaw_rate: f64, t: f64, dir: impl Fn(f64) -> (f64, f64)) -> Vector3<f64> {
    if yaw_rate.abs() < 1e-12 {
        let (a, b) = dir(yaw);
        return Vector3::new(a, 0.0, b) * speed * t;
    }
    // integral of dir(yaw + w s) ds
    let r = speed / yaw_rate;
    let (a0, b0) = dir(yaw + std::f64::consts::FRAC_PI_2);
    let (a1, b1) = dir(yaw + yaw_rate * t + std::f64::consts::FRAC_PI_2);
    Vector3::new(a0 - a1, 0.0, b0 - b1) * r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSpec {
    Static,
    /// Speed in m/s along the object's heading (its x axis).
    ConstantVelocity { speed: f64 },
    Turning { speed: f64, yaw_rate: f64 },
    /// Constant world-frame velocity, independent of the heading.
    Drift { velocity: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// Box centre at time 0, world frame.
    pub position: [f64; 3],
    /// Rotation about y; the object's x axis points along `(cos yaw, 0, -sin yaw)`.
    pub yaw: f64,
    /// `(length, height, width)`.
    pub dimensions: [f64; 3],
    pub motion: MotionSpec,
    pub surface_points: usize,
}

impl ObjectSpec {
    /// A car on a lane parallel to a camera path that starts at the origin
    /// heading +z and turns at `yaw_rate`. `lateral` is the lane offset
    /// (+x is right), `ahead` the arc distance in front of the camera.
    pub fn on_lane(camera_speed: f64, yaw_rate: f64, lateral: f64, ahead: f64, speed: f64) -> Self {
        let (position, yaw, motion) = if yaw_rate.abs() < 1e-12 {
            ([lateral, 0.8, ahead], -FRAC_PI_2, MotionSpec::ConstantVelocity { speed })
        } else {
            let r = camera_speed / yaw_rate;
            let phi = ahead / r;
            let radius = r - lateral;
            let position = [r - radius * phi.cos(), 0.8, radius * phi.sin()];
            (position, phi - FRAC_PI_2, MotionSpec::Turning { speed, yaw_rate: speed / radius })
        };
        Self { position, yaw, dimensions: [4.2, 1.5, 1.8], motion, surface_points: 30 }
    }

    fn pose(&self, t: f64) -> Pose {
        let p0 = Vector3::from(self.position);
        let heading = |h: f64| (h.cos(), -h.sin());
        let (p, yaw) = match &self.motion {
            MotionSpec::Static => (p0, self.yaw),
            MotionSpec::ConstantVelocity { speed } => (p0 + arc_offset(self.yaw, *speed, 0.0, t, heading), self.yaw),
            MotionSpec::Turning { speed, yaw_rate } => {
                (p0 + arc_offset(self.yaw, *speed, *yaw_rate, t, heading), self.yaw + yaw_rate * t)
            }
            MotionSpec::Drift { velocity } => (p0 + Vector3::from(*velocity) * t, self.yaw),
        };
        Pose::new(rot_y(yaw), p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub pixel_sigma: f64,
    /// Relative depth noise: `d * (1 + N(0, sigma))`.
    pub depth_sigma: f64,
    pub depth_invalid_rate: f64,
    /// Probability that a visible object gets no 2D detection.
    pub detection_fn_rate: f64,
    /// Probability that a 2D-detected object gets no 3D detection.
    pub detection3d_fn_rate: f64,
    /// Probability of one spurious 2D detection per frame.
    pub detection_fp_rate: f64,
    /// Confidence range of true detections.
    pub confidence: [f64; 2],
    /// Confidence range of spurious detections.
    pub fp_confidence: [f64; 2],
    /// Per-edge 2D box noise in pixels.
    pub box_sigma: f64,
    pub box3d_translation_sigma: f64,
    pub box3d_yaw_sigma: f64,
    pub box3d_dimension_sigma: f64,
    /// Probability that an observation comes with a decoy in the same pool.
    pub outlier_rate: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.0,
            depth_sigma: 0.0,
            depth_invalid_rate: 0.0,
            detection_fn_rate: 0.0,
            detection3d_fn_rate: 0.0,
            detection_fp_rate: 0.0,
            confidence: [0.95, 1.0],
            fp_confidence: [0.3, 0.95],
            box_sigma: 0.0,
            box3d_translation_sigma: 0.0,
            box3d_yaw_sigma: 0.0,
            box3d_dimension_sigma: 0.0,
            outlier_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub seed: u64,
    pub frames: usize,
    /// Seconds between frames.
    pub frame_interval: f64,
    /// `[fx, fy, cx, cy]`.
    pub intrinsics: [f64; 4],
    /// `[width, height]` in pixels.
    pub image_size: [f64; 2],
    pub trajectory: TrajectorySpec,
    pub objects: Vec<ObjectSpec>,
    pub background_points: usize,
    /// Depth range of background landmarks when seeded along the path.
    pub background_depth: [f64; 2],
    /// Boxes smaller than this (px^2) after clipping count as not visible.
    pub min_box_area: f64,
    pub noise: NoiseSpec,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let (speed, yaw_rate) = (6.0, 0.03);
        Self {
            seed: 1,
            frames: 100,
            frame_interval: 0.1,
            intrinsics: [700.0, 700.0, 640.0, 360.0],
            image_size: [1280.0, 720.0],
            trajectory: TrajectorySpec::Arc { start: [0.0, 0.0, 0.0], yaw: 0.0, speed, yaw_rate },
            objects: vec![
                ObjectSpec::on_lane(speed, yaw_rate, -3.5, 14.0, 6.3),
                ObjectSpec::on_lane(speed, yaw_rate, 3.5, 20.0, 5.8),
            ],
            background_points: 300,
            background_depth: [8.0, 60.0],
            min_box_area: 100.0,
            noise: NoiseSpec::default(),
        }
    }
}

impl SceneConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics, SimError> {
        let [fx, fy, cx, cy] = self.intrinsics;
        Intrinsics::new(fx, fy, cx, cy).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }

    pub fn image(&self) -> ImageSize {
        ImageSize { width: self.image_size[0], height: self.image_size[1] }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.frames == 0 {
            return bad("frames must be positive".into());
        }
        if !(self.frame_interval > 0.0) {
            return bad("frame_interval must be positive".into());
        }
        self.intrinsics()?;
        if !(self.image_size[0] > 0.0 && self.image_size[1] > 0.0) {
            return bad("image_size must be positive".into());
        }
        self.trajectory.validate().map_err(SimError::InvalidConfig)?;
        let [near, far] = self.background_depth;
        if !(near > 0.0 && far > near) {
            return bad("background_depth must be an increasing positive range".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.dimensions.iter().any(|d| !(*d > 0.0)) {
                return bad(format!("object {i}: dimensions must be positive"));
            }
            if o.surface_points == 0 {
                return bad(format!("object {i}: surface_points must be positive"));
            }
        }
        let n = &self.noise;
        for (name, rate) in [
            ("depth_invalid_rate", n.depth_invalid_rate),
            ("detection_fn_rate", n.detection_fn_rate),
            ("detection3d_fn_rate", n.detection3d_fn_rate),
            ("detection_fp_rate", n.detection_fp_rate),
            ("outlier_rate", n.outlier_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("noise.{name} must lie in [0, 1]"));
            }
        }
        for (name, s) in [
            ("pixel_sigma", n.pixel_sigma),
            ("depth_sigma", n.depth_sigma),
            ("box_sigma", n.box_sigma),
            ("box3d_translation_sigma", n.box3d_translation_sigma),
            ("box3d_yaw_sigma", n.box3d_yaw_sigma),
            ("box3d_dimension_sigma", n.box3d_dimension_sigma),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("noise.{name} must be a finite non-negative number"));
            }
        }
        for (name, [lo, hi]) in [("confidence", n.confidence), ("fp_confidence", n.fp_confidence)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(format!("noise.{name} must be a sub-range of [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Pose as written to sequence files. Keeping the quaternion makes
/// load/emit round trips exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    /// `[x, y, z, w]`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(p: &Pose) -> Self {
        let t = p.translation();
        Self { rotation: p.quaternion(), translation: [t.x, t.y, t.z] }
    }

    pub fn pose(&self) -> Pose {
        Pose::from_quaternion(self.rotation, Vector3::from(self.translation))
    }
}

/// 3D detection in the camera frame, with the 2D box of its projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection3D {
    pub box2d: Box2D,
    pub confidence: f64,
    /// Object-to-camera pose.
    pub pose: PoseRecord,
    pub dimensions: [f64; 3],
}

impl Detection3D {
    pub fn to_detection(&self) -> Detection {
        Detection {
            box2d: self.box2d,
            confidence: self.confidence,
            mask: None,
            box3d: OrientedBox3D::new(self.pose.pose(), Vector3::from(self.dimensions)).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub pixel: Vector2<f64>,
    pub pool: u64,
}

/// Everything the pipeline may read for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub index: usize,
    pub timestamp: f64,
    pub detections: Vec<Detection>,
    pub detections3d: Vec<Detection3D>,
    pub depth: DepthMap,
    pub observations: Vec<RawObservation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTruth {
    pub id: u64,
    /// Object-to-world pose.
    pub pose: PoseRecord,
    pub dimensions: [f64; 3],
    /// Clipped projected box; `None` when the object is not visible.
    pub box2d: Option<Box2D>,
}

impl ObjectTruth {
    pub fn box3d(&self) -> OrientedBox3D {
        OrientedBox3D { pose: self.pose.pose(), dimensions: Vector3::from(self.dimensions) }
    }
}

/// Source of an observation: landmark id and owning object (0 for
/// background). Decoys have no landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationTruth {
    pub landmark: Option<u64>,
    pub object: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    /// World-to-camera pose.
    pub camera: PoseRecord,
    pub objects: Vec<ObjectTruth>,
    /// Parallel to `FrameInput::observations`.
    pub observations: Vec<ObservationTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub input: FrameInput,
    pub truth: FrameTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTruth {
    pub id: u64,
    pub object: u64,
    /// World frame for background landmarks, object frame otherwise.
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceHeader {
    pub intrinsics: [f64; 4],
    pub image_size: [f64; 2],
    /// Scene config that produced the sequence, as JSON.
    pub config: String,
}

impl SequenceHeader {
    pub fn intrinsics(&self) -> Result<Intrinsics, crate::geometry::GeometryError> {
        let [fx, fy, cx, cy] = self.intrinsics;
        Intrinsics::new(fx, fy, cx, cy)
    }

    pub fn image(&self) -> ImageSize {
        ImageSize { width: self.image_size[0], height: self.image_size[1] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub header: SequenceHeader,
    pub landmarks: Vec<LandmarkTruth>,
    pub frames: Vec<FrameBundle>,
}

struct Landmark {
    id: u64,
    object: u64,
    position: Vector3<f64>,
    /// Outward face normal in the object frame; zero for background.
    normal: Vector3<f64>,
}

// Independent random streams, so changing one noise source leaves the others alone.
const STREAM_SCENE: u64 = 1;
const STREAM_FRAME: u64 = 1 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Samples a point on the five faces other than the bottom (+y), area weighted.
fn sample_surface(rng: &mut impl Rng, dims: &[f64; 3]) -> (Vector3<f64>, Vector3<f64>) {
    let h = Vector3::from(*dims) * 0.5;
    // faces: +x, -x, +z, -z, -y (top)
    let areas = [dims[1] * dims[2], dims[1] * dims[2], dims[0] * dims[1], dims[0] * dims[1], dims[0] * dims[2]];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut face = 0;
    while face < 4 && pick >= areas[face] {
        pick -= areas[face];
        face += 1;
    }
    let mut p = Vector3::new(rng.random_range(-h.x..h.x), rng.random_range(-h.y..h.y), rng.random_range(-h.z..h.z));
    let (axis, sign) = [(0, 1.0), (0, -1.0), (2, 1.0), (2, -1.0), (1, -1.0)][face];
    p[axis] = sign * h[axis];
    let mut n = Vector3::zeros();
    n[axis] = sign;
    (p, n)
}

fn project_box(k: &Intrinsics, image: &ImageSize, cam_from_box: &Pose, dims: &[f64; 3], min_area: f64) -> Option<Box2D> {
    let b = OrientedBox3D { pose: *cam_from_box, dimensions: Vector3::from(*dims) };
    let corners = b.corners();
    if corners.iter().any(|c| c.z <= 0.1) {
        return None;
    }
    let full = Box2D::enclosing(corners.iter().map(|c| {
        let z = k.project_unchecked(c);
        (z.x, z.y)
    }))?;
    let clipped = full.intersection(&Box2D::new(0.0, 0.0, image.width, image.height)?)?;
    (clipped.area() >= min_area).then_some(clipped)
}

/// Generates a full sequence. The same config always produces the same sequence.
pub fn generate(config: &SceneConfig) -> Result<Sequence, SimError> {
    config.validate()?;
    let k = config.intrinsics()?;
    let image = config.image();
    let duration = (config.frames - 1) as f64 * config.frame_interval;
    let time = |f: usize| f as f64 * config.frame_interval;
    let mut rng = stream(config.seed, STREAM_SCENE);

    let camera_to_world: Vec<Pose> = (0..config.frames).map(|f| config.trajectory.pose(time(f), duration)).collect();

    // Landmarks: object surfaces first, then background seeded inside the
    // view frustum of a random frame.
    let mut landmarks = Vec::new();
    for (i, o) in config.objects.iter().enumerate() {
        for _ in 0..o.surface_points {
            let (position, normal) = sample_surface(&mut rng, &o.dimensions);
            landmarks.push(Landmark { id: landmarks.len() as u64 + 1, object: i as u64 + 1, position, normal });
        }
    }
    for _ in 0..config.background_points {
        let f = rng.random_range(0..config.frames);
        let z = Vector2::new(rng.random_range(0.0..image.width), rng.random_range(0.0..image.height));
        let depth = uniform(&mut rng, config.background_depth);
        let pc = k.unproject(&z) * depth;
        let position = camera_to_world[f].transform_point(&pc);
        landmarks.push(Landmark { id: landmarks.len() as u64 + 1, object: 0, position, normal: Vector3::zeros() });
    }
    let mut pools: Vec<u64> = (1..=landmarks.len() as u64).collect();
    pools.shuffle(&mut rng);

    let header = SequenceHeader {
        intrinsics: config.intrinsics,
        image_size: config.image_size,
        config: serde_json::to_string(config).expect("config serialises"),
    };
    let landmark_truth = landmarks
        .iter()
        .map(|l| LandmarkTruth { id: l.id, object: l.object, position: [l.position.x, l.position.y, l.position.z] })
        .collect();

    let frames = (0..config.frames)
        .map(|f| {
            let mut rng = stream(config.seed, STREAM_FRAME + f as u64);
            generate_frame(config, &k, &image, f, time(f), &camera_to_world[f], &landmarks, &pools, &mut rng)
        })
        .collect();
    Ok(Sequence { header, landmarks: landmark_truth, frames })
}

#[allow(clippy::too_many_arguments)]
fn generate_frame(
    config: &SceneConfig,
    k: &Intrinsics,
    image: &ImageSize,
    index: usize,
    t: f64,
    camera_to_world: &Pose,
    landmarks: &[Landmark],
    pools: &[u64],
    rng: &mut ChaCha8Rng,
) -> FrameBundle {
    let noise = &config.noise;
    let camera = PoseRecord::from_pose(&camera_to_world.inverse());
    let cam = camera.pose();
    let cam_center = cam.inverse().transform_point(&Vector3::zeros());

    let objects: Vec<ObjectTruth> = config
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let pose = PoseRecord::from_pose(&o.pose(t));
            let box2d = project_box(k, image, &cam.compose(&pose.pose()), &o.dimensions, config.min_box_area);
            ObjectTruth { id: i as u64 + 1, pose, dimensions: o.dimensions, box2d }
        })
        .collect();

    // Detections.
    let mut detections = Vec::new();
    let mut detections3d = Vec::new();
    for o in &objects {
        let Some(gt) = o.box2d else { continue };
        if rng.random_bool(noise.detection_fn_rate) {
            continue;
        }
        let mut e = [0.0; 4];
        for v in &mut e {
            *v = gaussian(rng, noise.box_sigma);
        }
        let box2d = Box2D::new(gt.x1 + e[0], gt.y1 + e[1], gt.x2 + e[2], gt.y2 + e[3]).unwrap_or(gt);
        let mask = gt.intersection(&box2d).unwrap_or(gt);
        detections.push(Detection {
            box2d,
            confidence: uniform(rng, noise.confidence),
            mask: Some(Mask::Box(mask)),
            box3d: None,
        });

        if rng.random_bool(noise.detection3d_fn_rate) {
            continue;
        }
        let cam_from_object = cam.compose(&o.pose.pose());
        let d_yaw = gaussian(rng, noise.box3d_yaw_sigma);
        let d_t = Vector3::from_fn(|_, _| gaussian(rng, noise.box3d_translation_sigma));
        let noisy = Pose::new(cam_from_object.rotation() * rot_y(d_yaw), cam_from_object.translation() + d_t);
        let pose = PoseRecord::from_pose(&noisy);
        let dims = o.dimensions.map(|d| (d * (1.0 + gaussian(rng, noise.box3d_dimension_sigma))).max(0.05));
        let Some(box2d) = project_box(k, image, &pose.pose(), &dims, 1.0) else { continue };
        detections3d.push(Detection3D { box2d, confidence: uniform(rng, noise.confidence), pose, dimensions: dims });
    }
    if rng.random_bool(noise.detection_fp_rate) {
        let w = rng.random_range(40.0..200.0);
        let h = rng.random_range(40.0..160.0);
        let x = rng.random_range(0.0..(image.width - w).max(1.0));
        let y = rng.random_range(0.0..(image.height - h).max(1.0));
        if let Some(b) = Box2D::new(x, y, x + w, y + h) {
            detections.push(Detection {
                box2d: b,
                confidence: uniform(rng, noise.fp_confidence),
                mask: Some(Mask::Box(b)),
                box3d: None,
            });
        }
    }

    // Feature observations.
    let object_poses: Vec<Pose> = objects.iter().map(|o| o.pose.pose()).collect();
    let mut observed: Vec<(RawObservation, ObservationTruth, f64)> = Vec::new();
    for l in landmarks {
        let (world, visible_face) = if l.object == 0 {
            (l.position, true)
        } else {
            let pose = &object_poses[l.object as usize - 1];
            let world = pose.transform_point(&l.position);
            let normal = pose.rotation() * l.normal;
            (world, normal.dot(&(cam_center - world)) > 0.0)
        };
        if !visible_face {
            continue;
        }
        let pc = cam.transform_point(&world);
        if pc.z <= 0.1 {
            continue;
        }
        let exact = k.project_unchecked(&pc);
        if !image.contains(&exact) {
            continue;
        }
        if l.object == 0 && objects.iter().any(|o| o.box2d.is_some_and(|b| b.contains(exact.x, exact.y))) {
            // hidden behind an object
            continue;
        }
        let pixel = exact + Vector2::new(gaussian(rng, noise.pixel_sigma), gaussian(rng, noise.pixel_sigma));
        let pool = pools[l.id as usize - 1];
        let truth = ObservationTruth { landmark: Some(l.id), object: l.object };
        observed.push((RawObservation { pixel, pool }, truth, pc.z));
        if rng.random_bool(noise.outlier_rate) {
            let angle = rng.random_range(0.0..TAU);
            let r = rng.random_range(1.0..10.0);
            let decoy = pixel + r * Vector2::new(angle.cos(), angle.sin());
            if image.contains(&decoy) {
                observed.push((RawObservation { pixel: decoy, pool }, ObservationTruth { landmark: None, object: l.object }, pc.z));
            }
        }
    }
    observed.shuffle(rng);

    let mut samples = Vec::with_capacity(observed.len());
    for (o, _, z) in &observed {
        let valid = !rng.random_bool(noise.depth_invalid_rate);
        let depth = z * (1.0 + gaussian(rng, noise.depth_sigma));
        samples.push(DepthSample { pixel: o.pixel, depth, valid: valid && depth > 0.0 });
    }
    let (observations, truth): (Vec<_>, Vec<_>) = observed.into_iter().map(|(o, t, _)| (o, t)).unzip();

    FrameBundle {
        input: FrameInput { index, timestamp: t, detections, detections3d, depth: DepthMap::new(samples), observations },
        truth: FrameTruth { camera, objects, observations: truth },
    }
}

// ---------------------------------------------------------------------------
// Sequence files

const MAGIC: &str = "dynslam-sequence";
const VERSION: u32 = 1;

fn put(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, " {}", Float(*v));
    }
}

fn put_box(out: &mut String, b: &Box2D) {
    put(out, &[b.x1, b.y1, b.x2, b.y2]);
}

fn put_pose(out: &mut String, p: &PoseRecord) {
    put(out, &p.rotation);
    put(out, &p.translation);
}

impl Sequence {
    /// Line-oriented text form: a magic line, a header, the config echo,
    /// ground-truth landmarks, then one block per frame closed by `end`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        out.push_str("header");
        put(&mut out, &self.header.intrinsics);
        put(&mut out, &self.header.image_size);
        let _ = writeln!(out, " {} {}", self.frames.len(), self.landmarks.len());
        let _ = writeln!(out, "config {}", self.header.config);
        for l in &self.landmarks {
            let _ = write!(out, "gtlandmark {} {}", l.id, l.object);
            put(&mut out, &l.position);
            out.push('\n');
        }
        for f in &self.frames {
            let input = &f.input;
            let _ = write!(out, "frame {}", input.index);
            put(&mut out, &[input.timestamp]);
            out.push('\n');
            out.push_str("gtcam");
            put_pose(&mut out, &f.truth.camera);
            out.push('\n');
            for o in &f.truth.objects {
                let _ = write!(out, "gtobj {}", o.id);
                put_pose(&mut out, &o.pose);
                put(&mut out, &o.dimensions);
                match &o.box2d {
                    Some(b) => put_box(&mut out, b),
                    None => out.push_str(" -"),
                }
                out.push('\n');
            }
            for d in &input.detections {
                out.push_str("det2d");
                put_box(&mut out, &d.box2d);
                put(&mut out, &[d.confidence]);
                match d.mask.as_ref().and_then(|m| m.bounding_box()) {
                    Some(b) => put_box(&mut out, &b),
                    None => out.push_str(" -"),
                }
                out.push('\n');
            }
            for d in &input.detections3d {
                out.push_str("det3d");
                put_box(&mut out, &d.box2d);
                put(&mut out, &[d.confidence]);
                put_pose(&mut out, &d.pose);
                put(&mut out, &d.dimensions);
                out.push('\n');
            }
            for s in input.depth.samples() {
                out.push_str("depth");
                put(&mut out, &[s.pixel.x, s.pixel.y, s.depth]);
                let _ = writeln!(out, " {}", s.valid as u8);
            }
            for (o, t) in input.observations.iter().zip(&f.truth.observations) {
                out.push_str("obs");
                put(&mut out, &[o.pixel.x, o.pixel.y]);
                let _ = write!(out, " {} ", o.pool);
                match t.landmark {
                    Some(l) => {
                        let _ = writeln!(out, "{l} {}", t.object);
                    }
                    None => {
                        let _ = writeln!(out, "- {}", t.object);
                    }
                }
            }
            out.push_str("end\n");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Sequence, ParseError> {
        let mut lines = records(text).peekable();
        let (line, magic) = lines.next().ok_or_else(|| ParseError::new(1, "magic", "empty file"))?;
        let mut f = Fields::new(line, magic);
        if f.next_str("magic")? != MAGIC {
            return Err(ParseError::new(line, "magic", format!("expected {MAGIC}")));
        }
        let version: u32 = f.parse("version")?;
        if version != VERSION {
            return Err(ParseError::new(line, "version", format!("unsupported version {version}")));
        }
        f.finish()?;

        let (line, text) = lines.next().ok_or_else(|| ParseError::new(line + 1, "header", "missing header"))?;
        let mut f = Fields::new(line, text);
        expect_tag(&mut f, "header")?;
        let intrinsics = f.floats::<4>("intrinsics")?;
        let image_size = f.floats::<2>("image_size")?;
        let n_frames: usize = f.parse("frames")?;
        let n_landmarks: usize = f.parse("landmarks")?;
        f.finish()?;

        let (line, text) = lines.next().ok_or_else(|| ParseError::new(line + 1, "config", "missing config"))?;
        let config = text
            .strip_prefix("config ")
            .ok_or_else(|| ParseError::new(line, "config", "expected config record"))?
            .to_string();
        let header = SequenceHeader { intrinsics, image_size, config };

        let mut last_line = line;
        let mut landmarks = Vec::with_capacity(n_landmarks);
        for _ in 0..n_landmarks {
            let (line, text) = lines
                .next()
                .ok_or_else(|| ParseError::new(last_line + 1, "gtlandmark", "file ends before all landmarks"))?;
            last_line = line;
            let mut f = Fields::new(line, text);
            expect_tag(&mut f, "gtlandmark")?;
            let id = f.parse("id")?;
            let object = f.parse("object")?;
            let position = f.floats::<3>("position")?;
            f.finish()?;
            landmarks.push(LandmarkTruth { id, object, position });
        }

        let mut frames = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let (line, text) =
                lines.next().ok_or_else(|| ParseError::new(last_line + 1, "frame", "file ends before all frames"))?;
            let mut f = Fields::new(line, text);
            expect_tag(&mut f, "frame")?;
            let index = f.parse("index")?;
            let timestamp = f.parse("timestamp")?;
            f.finish()?;

            let mut camera = None;
            let mut objects = Vec::new();
            let mut detections = Vec::new();
            let mut detections3d = Vec::new();
            let mut samples = Vec::new();
            let mut observations = Vec::new();
            let mut truth = Vec::new();
            last_line = line;
            loop {
                let (line, text) =
                    lines.next().ok_or_else(|| ParseError::new(last_line + 1, "end", "frame is not terminated"))?;
                last_line = line;
                let mut f = Fields::new(line, text);
                match f.next_str("record")? {
                    "end" => {
                        f.finish()?;
                        break;
                    }
                    "gtcam" => camera = Some(parse_pose(&mut f, "camera")?),
                    "gtobj" => {
                        let id = f.parse("id")?;
                        let pose = parse_pose(&mut f, "pose")?;
                        let dimensions = f.floats::<3>("dimensions")?;
                        let box2d = parse_opt_box(&mut f, "box")?;
                        objects.push(ObjectTruth { id, pose, dimensions, box2d });
                    }
                    "det2d" => {
                        let box2d = parse_box(&mut f, "box")?;
                        let confidence = f.parse("confidence")?;
                        let mask = parse_opt_box(&mut f, "mask")?.map(Mask::Box);
                        detections.push(Detection { box2d, confidence, mask, box3d: None });
                    }
                    "det3d" => {
                        let box2d = parse_box(&mut f, "box")?;
                        let confidence = f.parse("confidence")?;
                        let pose = parse_pose(&mut f, "pose")?;
                        let dimensions = f.floats::<3>("dimensions")?;
                        detections3d.push(Detection3D { box2d, confidence, pose, dimensions });
                    }
                    "depth" => {
                        let [u, v, depth] = f.floats::<3>("depth")?;
                        let valid = f.flag("valid")?;
                        samples.push(DepthSample { pixel: Vector2::new(u, v), depth, valid });
                    }
                    "obs" => {
                        let [u, v] = f.floats::<2>("pixel")?;
                        let pool = f.parse("pool")?;
                        let landmark = match f.next_str("landmark")? {
                            "-" => None,
                            tok => Some(tok.parse().map_err(|e| ParseError::new(line, "landmark", format!("{e}")))?),
                        };
                        let object = f.parse("object")?;
                        observations.push(RawObservation { pixel: Vector2::new(u, v), pool });
                        truth.push(ObservationTruth { landmark, object });
                    }
                    other => return Err(ParseError::new(line, "record", format!("unknown record {other:?}"))),
                }
                f.finish()?;
            }
            let camera = camera.ok_or_else(|| ParseError::new(line, "gtcam", "frame has no camera pose"))?;
            frames.push(FrameBundle {
                input: FrameInput { index, timestamp, detections, detections3d, depth: DepthMap::new(samples), observations },
                truth: FrameTruth { camera, objects, observations: truth },
            });
        }
        if let Some((line, _)) = lines.next() {
            return Err(ParseError::new(line, "record", "data after the last declared frame"));
        }
        Ok(Sequence { header, landmarks, frames })
    }

    /// Ground-truth landmarks by id.
    pub fn landmark_map(&self) -> BTreeMap<u64, &LandmarkTruth> {
        self.landmarks.iter().map(|l| (l.id, l)).collect()
    }
}

fn expect_tag(f: &mut Fields<'_>, tag: &str) -> Result<(), ParseError> {
    let got = f.next_str("record")?;
    if got == tag {
        Ok(())
    } else {
        Err(ParseError::new(f.line(), "record", format!("expected {tag}, found {got:?}")))
    }
}

fn parse_pose(f: &mut Fields<'_>, field: &str) -> Result<PoseRecord, ParseError> {
    let rotation = f.floats::<4>(&format!("{field}.rotation"))?;
    let translation = f.floats::<3>(&format!("{field}.translation"))?;
    let norm = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.5 && norm < 2.0) {
        return Err(ParseError::new(f.line(), field, "quaternion is not normalised"));
    }
    Ok(PoseRecord { rotation, translation })
}

fn parse_box(f: &mut Fields<'_>, field: &str) -> Result<Box2D, ParseError> {
    let [x1, y1, x2, y2] = f.floats::<4>(field)?;
    Box2D::new(x1, y1, x2, y2).ok_or_else(|| ParseError::new(f.line(), field, "box corners out of order"))
}

fn parse_opt_box(f: &mut Fields<'_>, field: &str) -> Result<Option<Box2D>, ParseError> {
    let first = f.next_str(field)?;
    if first == "-" {
        return Ok(None);
    }
    let x1: f64 = first.parse().map_err(|e| ParseError::new(f.line(), field, format!("{e}")))?;
    let [y1, x2, y2] = f.floats::<3>(field)?;
    Box2D::new(x1, y1, x2, y2).map(Some).ok_or_else(|| ParseError::new(f.line(), field, "box corners out of order"))
}

pub fn emit_sequence(sequence: &Sequence, path: &Path) -> Result<(), SequenceError> {
    std::fs::write(path, sequence.to_text())
        .map_err(|source| SequenceError::Io { path: path.display().to_string(), source })
}

pub fn load_sequence(path: &Path) -> Result<Sequence, SequenceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SequenceError::Io { path: path.display().to_string(), source })?;
    Ok(Sequence::from_text(&text)?)
}
