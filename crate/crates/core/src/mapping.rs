//! Keyframes, map points and the two co-visibility graphs, plus point
//! creation and re-projection based foreground association.
//!
//! Background points live in the world frame. Foreground points are stored
//! once in their object's frame and never move with the object.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{backproject, triangulate_with_parallax, GeometryError, Intrinsics, Pose};
use crate::objects::BACKGROUND;

pub type KeyframeId = u64;
pub type PointId = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MappingError {
    #[error("observation labeled {label} where {expected} was required")]
    WrongLabel { label: u64, expected: u64 },
    #[error("background point creation needs two background observations, got label {label}")]
    ForegroundLabel { label: u64 },
    #[error("no valid depth at ({u:.2}, {v:.2})")]
    MissingDepth { u: f64, v: f64 },
    #[error("point is not visible: {0}")]
    NotVisible(&'static str),
    #[error("reprojection error {error:.3} px exceeds the gate")]
    Reprojection { error: f64 },
    #[error("expected a foreground point")]
    NotForeground,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingParams {
    /// Foreground association search radius in pixels.
    pub association_radius: f64,
    /// Background tracking search radius around the predicted projection.
    pub tracking_radius: f64,
    pub min_parallax_deg: f64,
    /// Squared-error gate in units of `pixel_sigma^2`.
    pub reprojection_chi2: f64,
    pub pixel_sigma: f64,
    /// Every n-th frame becomes a keyframe.
    pub keyframe_stride: usize,
    /// Keyframes searched for a triangulation partner and kept in the local window.
    pub local_window: usize,
}

impl Default for MappingParams {
    fn default() -> Self {
        Self {
            association_radius: 4.0,
            tracking_radius: 15.0,
            min_parallax_deg: 1.0,
            reprojection_chi2: 5.991,
            pixel_sigma: 1.0,
            keyframe_stride: 1,
            local_window: 10,
        }
    }
}

impl MappingParams {
    pub fn max_squared_error(&self) -> f64 {
        self.reprojection_chi2 * self.pixel_sigma * self.pixel_sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

impl ImageSize {
    pub fn contains(&self, z: &Vector2<f64>) -> bool {
        z.x >= 0.0 && z.y >= 0.0 && z.x < self.width && z.y < self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapPointKind {
    Background,
    Foreground,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub id: PointId,
    /// 0 for background, otherwise the owning object's track id.
    pub object_id: u64,
    /// World frame for background points, object frame for foreground ones.
    pub position: Vector3<f64>,
    /// Candidate pool of the observation that created the point.
    pub pool: u64,
    pub observations: BTreeMap<KeyframeId, Vector2<f64>>,
}

impl MapPoint {
    pub fn kind(&self) -> MapPointKind {
        if self.object_id == BACKGROUND {
            MapPointKind::Background
        } else {
            MapPointKind::Foreground
        }
    }

    pub fn is_foreground(&self) -> bool {
        self.kind() == MapPointKind::Foreground
    }
}

/// A feature observation in a keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureObs {
    pub pixel: Vector2<f64>,
    pub pool: u64,
    /// Object id from the masks, 0 for background.
    pub label: u64,
    pub point: Option<PointId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub valid: bool,
}

/// Sparse depth map, read at the nearest stored pixel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DepthMap {
    samples: Vec<DepthSample>,
    cells: BTreeMap<(i64, i64), Vec<usize>>,
}

const DEPTH_RADIUS: f64 = 0.5;

impl DepthMap {
    pub fn new(samples: Vec<DepthSample>) -> Self {
        let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            cells.entry(Self::cell(&s.pixel)).or_default().push(i);
        }
        Self { samples, cells }
    }

    fn cell(z: &Vector2<f64>) -> (i64, i64) {
        (z.x.floor() as i64, z.y.floor() as i64)
    }

    pub fn samples(&self) -> &[DepthSample] {
        &self.samples
    }

    /// Depth at the nearest sample within half a pixel; `None` when there is
    /// no such sample or it is flagged invalid.
    pub fn lookup(&self, z: &Vector2<f64>) -> Option<f64> {
        let (cx, cy) = Self::cell(z);
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &i in self.cells.get(&(cx + dx, cy + dy)).into_iter().flatten() {
                    let d = (self.samples[i].pixel - z).norm();
                    if d <= DEPTH_RADIUS && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, i));
                    }
                }
            }
        }
        let s = &self.samples[best?.1];
        (s.valid && s.depth > 0.0).then_some(s.depth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: KeyframeId,
    pub frame: usize,
    /// World-to-camera pose.
    pub pose: Pose,
    pub observations: Vec<FeatureObs>,
    pub depth: DepthMap,
    /// Objects whose masks appear in the keyframe.
    pub objects: BTreeSet<u64>,
    /// Object-to-world poses of the objects with a 3D estimate here.
    pub object_poses: BTreeMap<u64, Pose>,
}

impl Keyframe {
    pub fn new(id: KeyframeId, frame: usize, pose: Pose, observations: Vec<FeatureObs>, depth: DepthMap) -> Self {
        let objects = observations.iter().map(|o| o.label).filter(|&l| l != BACKGROUND).collect();
        Self { id, frame, pose, observations, depth, objects, object_poses: BTreeMap::new() }
    }

    /// Number of observations in this keyframe from candidate pool `pool`.
    pub fn pool_count(&self, pool: u64) -> usize {
        self.observations.iter().filter(|o| o.pool == pool).count()
    }

    pub fn check_invariants(&self) -> bool {
        self.observations.iter().all(|o| o.label == BACKGROUND || self.objects.contains(&o.label))
            && self.object_poses.keys().all(|id| self.objects.contains(id))
    }
}

/// Triangulates a background point from two keyframes, applying parallax,
/// cheirality and reprojection gates.
pub fn create_background_point(
    k: &Intrinsics,
    kfa: &Keyframe,
    za: &FeatureObs,
    kfb: &Keyframe,
    zb: &FeatureObs,
    params: &MappingParams,
) -> Result<MapPoint, MappingError> {
    for z in [za, zb] {
        if z.label != BACKGROUND {
            return Err(MappingError::ForegroundLabel { label: z.label });
        }
    }
    let p = triangulate_with_parallax(k, &kfa.pose, &kfb.pose, &za.pixel, &zb.pixel, params.min_parallax_deg.to_radians())?;
    for (kf, z) in [(kfa, za), (kfb, zb)] {
        let pc = kf.pose.transform_point(&p);
        let error = (z.pixel - k.project_unchecked(&pc)).norm_squared();
        if error > params.max_squared_error() {
            return Err(MappingError::Reprojection { error: error.sqrt() });
        }
    }
    Ok(MapPoint {
        id: 0,
        object_id: BACKGROUND,
        position: p,
        pool: za.pool,
        observations: BTreeMap::from([(kfa.id, za.pixel), (kfb.id, zb.pixel)]),
    })
}

/// Background point from the depth map, used to bootstrap the first keyframe.
pub fn create_background_point_from_depth(k: &Intrinsics, kf: &Keyframe, z: &FeatureObs) -> Result<MapPoint, MappingError> {
    if z.label != BACKGROUND {
        return Err(MappingError::ForegroundLabel { label: z.label });
    }
    let depth = kf.depth.lookup(&z.pixel).ok_or(MappingError::MissingDepth { u: z.pixel.x, v: z.pixel.y })?;
    let pc = backproject(k, &z.pixel, depth)?;
    Ok(MapPoint {
        id: 0,
        object_id: BACKGROUND,
        position: kf.pose.inverse().transform_point(&pc),
        pool: z.pool,
        observations: BTreeMap::from([(kf.id, z.pixel)]),
    })
}

/// Foreground point from the depth map, stored in the object frame:
/// `T_ow * T_wc * backproject(z, D(z))`.
pub fn create_foreground_point(
    k: &Intrinsics,
    kf: &Keyframe,
    z: &FeatureObs,
    object_id: u64,
    object_pose: &Pose,
) -> Result<MapPoint, MappingError> {
    if object_id == BACKGROUND || z.label != object_id {
        return Err(MappingError::WrongLabel { label: z.label, expected: object_id });
    }
    let depth = kf.depth.lookup(&z.pixel).ok_or(MappingError::MissingDepth { u: z.pixel.x, v: z.pixel.y })?;
    let pc = backproject(k, &z.pixel, depth)?;
    let pw = kf.pose.inverse().transform_point(&pc);
    Ok(MapPoint {
        id: 0,
        object_id,
        position: object_pose.inverse().transform_point(&pw),
        pool: z.pool,
        observations: BTreeMap::from([(kf.id, z.pixel)]),
    })
}

/// Projects a foreground point into a frame given the object pose there:
/// `K * T_cw * T_wo * p_o`.
pub fn reproject_foreground(
    point: &MapPoint,
    object_pose: &Pose,
    cam: &Pose,
    k: &Intrinsics,
    image: Option<&ImageSize>,
) -> Result<Vector2<f64>, MappingError> {
    if !point.is_foreground() {
        return Err(MappingError::NotForeground);
    }
    let pc = cam.transform_point(&object_pose.transform_point(&point.position));
    if !(pc.z > 0.0) {
        return Err(MappingError::NotVisible("behind the camera"));
    }
    let z = k.project_unchecked(&pc);
    match image {
        Some(size) if !size.contains(&z) => Err(MappingError::NotVisible("outside the image")),
        _ => Ok(z),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMatch {
    pub point: PointId,
    /// Index into the keyframe's observations.
    pub observation: usize,
    pub distance: f64,
}

/// Re-projects the foreground points seen in `neighbors` into `kf` and
/// matches each to the nearest unmatched observation with the same object
/// label and candidate pool within `radius`. One-to-one; closer pairs win.
pub fn associate_foreground(
    map: &Map,
    kf: &Keyframe,
    neighbors: &[KeyframeId],
    k: &Intrinsics,
    image: Option<&ImageSize>,
    radius: f64,
) -> Vec<PointMatch> {
    let mut candidates: BTreeSet<PointId> = BTreeSet::new();
    for id in neighbors {
        if let Some(n) = map.keyframe(*id) {
            candidates.extend(n.observations.iter().filter_map(|o| o.point));
        }
    }
    let mut pairs = Vec::new();
    for pid in candidates {
        let Some(point) = map.point(pid) else { continue };
        if !point.is_foreground() || point.observations.contains_key(&kf.id) {
            continue;
        }
        let Some(object_pose) = kf.object_poses.get(&point.object_id) else { continue };
        let Ok(z) = reproject_foreground(point, object_pose, &kf.pose, k, image) else { continue };
        for (i, o) in kf.observations.iter().enumerate() {
            if o.point.is_some() || o.label != point.object_id || o.pool != point.pool {
                continue;
            }
            let d = (o.pixel - z).norm();
            if d <= radius {
                pairs.push(PointMatch { point: pid, observation: i, distance: d });
            }
        }
    }
    greedy_one_to_one(pairs)
}

/// Accepts pairs in increasing distance while both sides are free.
pub fn greedy_one_to_one(mut pairs: Vec<PointMatch>) -> Vec<PointMatch> {
    pairs.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.point.cmp(&b.point)).then(a.observation.cmp(&b.observation)));
    let mut used_points = BTreeSet::new();
    let mut used_obs = BTreeSet::new();
    let mut out = Vec::new();
    for p in pairs {
        if !used_points.contains(&p.point) && !used_obs.contains(&p.observation) {
            used_points.insert(p.point);
            used_obs.insert(p.observation);
            out.push(p);
        }
    }
    out.sort_by_key(|p| p.observation);
    out
}

/// Keyframes other than `kf` that share at least one visible object with it.
pub fn object_covisibility_neighbors<'a>(kf: &Keyframe, all: impl IntoIterator<Item = &'a Keyframe>) -> Vec<KeyframeId> {
    all.into_iter()
        .filter(|other| other.id != kf.id && !other.objects.is_disjoint(&kf.objects))
        .map(|other| other.id)
        .collect()
}

/// Weighted, symmetric adjacency over keyframes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovisibilityGraph {
    edges: BTreeMap<KeyframeId, BTreeMap<KeyframeId, usize>>,
}

impl CovisibilityGraph {
    /// Edge weight = number of map points observed in both keyframes.
    pub fn from_points(map: &Map) -> Self {
        let mut g = Self::default();
        for kf in map.keyframes.keys() {
            g.edges.entry(*kf).or_default();
        }
        for p in map.points.values() {
            let kfs: Vec<_> = p.observations.keys().copied().collect();
            for (i, a) in kfs.iter().enumerate() {
                for b in &kfs[i + 1..] {
                    g.add(*a, *b, 1);
                }
            }
        }
        g
    }

    /// Edge weight = number of objects visible in both keyframes.
    pub fn from_objects(map: &Map) -> Self {
        let mut g = Self::default();
        let kfs: Vec<&Keyframe> = map.keyframes.values().collect();
        for (i, a) in kfs.iter().enumerate() {
            g.edges.entry(a.id).or_default();
            for b in &kfs[i + 1..] {
                let shared = a.objects.intersection(&b.objects).count();
                if shared > 0 {
                    g.add(a.id, b.id, shared);
                }
            }
        }
        g
    }

    fn add(&mut self, a: KeyframeId, b: KeyframeId, w: usize) {
        *self.edges.entry(a).or_default().entry(b).or_default() += w;
        *self.edges.entry(b).or_default().entry(a).or_default() += w;
    }

    pub fn weight(&self, a: KeyframeId, b: KeyframeId) -> usize {
        self.edges.get(&a).and_then(|e| e.get(&b)).copied().unwrap_or(0)
    }

    pub fn neighbors(&self, kf: KeyframeId, min_weight: usize) -> Vec<KeyframeId> {
        self.edges
            .get(&kf)
            .map(|e| e.iter().filter(|(_, &w)| w >= min_weight.max(1)).map(|(&id, _)| id).collect())
            .unwrap_or_default()
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|(a, e)| e.iter().all(|(b, w)| self.weight(*b, *a) == *w))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Map {
    pub keyframes: BTreeMap<KeyframeId, Keyframe>,
    pub points: BTreeMap<PointId, MapPoint>,
    next_point: PointId,
}

impl Map {
    pub fn new() -> Self {
        Self { next_point: 1, ..Self::default() }
    }

    pub fn keyframe(&self, id: KeyframeId) -> Option<&Keyframe> {
        self.keyframes.get(&id)
    }

    pub fn point(&self, id: PointId) -> Option<&MapPoint> {
        self.points.get(&id)
    }

    pub fn insert_keyframe(&mut self, kf: Keyframe) {
        self.keyframes.insert(kf.id, kf);
    }

    /// Adds a point, assigns its id and links every observation it carries to
    /// the matching keyframe feature (same pixel).
    pub fn insert_point(&mut self, mut point: MapPoint) -> PointId {
        let id = self.next_point.max(1);
        self.next_point = id + 1;
        point.id = id;
        for (kf, z) in &point.observations {
            if let Some(kf) = self.keyframes.get_mut(kf) {
                if let Some(o) = kf.observations.iter_mut().find(|o| o.point.is_none() && o.pixel == *z) {
                    o.point = Some(id);
                }
            }
        }
        self.points.insert(id, point);
        id
    }

    /// Records that observation `index` of keyframe `kf` sees `point`.
    pub fn add_observation(&mut self, point: PointId, kf: KeyframeId, index: usize) -> bool {
        let Some(frame) = self.keyframes.get_mut(&kf) else { return false };
        let Some(o) = frame.observations.get_mut(index) else { return false };
        let Some(p) = self.points.get_mut(&point) else { return false };
        if o.point.is_some() || p.observations.contains_key(&kf) {
            return false;
        }
        o.point = Some(point);
        p.observations.insert(kf, o.pixel);
        true
    }

    /// Unlinks `point` from keyframe `kf`.
    pub fn remove_observation(&mut self, point: PointId, kf: KeyframeId) {
        if let Some(p) = self.points.get_mut(&point) {
            p.observations.remove(&kf);
        }
        if let Some(frame) = self.keyframes.get_mut(&kf) {
            for o in frame.observations.iter_mut().filter(|o| o.point == Some(point)) {
                o.point = None;
            }
        }
    }

    pub fn remove_point(&mut self, point: PointId) {
        if let Some(p) = self.points.remove(&point) {
            for kf in p.observations.keys() {
                if let Some(frame) = self.keyframes.get_mut(kf) {
                    for o in frame.observations.iter_mut().filter(|o| o.point == Some(point)) {
                        o.point = None;
                    }
                }
            }
        }
    }

    /// Most recent keyframes, newest last.
    pub fn recent_keyframes(&self, n: usize) -> Vec<KeyframeId> {
        let mut ids: Vec<_> = self.keyframes.keys().rev().take(n).copied().collect();
        ids.reverse();
        ids
    }

    /// Background points indexed by candidate pool.
    pub fn background_pools(&self) -> BTreeMap<u64, Vec<PointId>> {
        let mut m: BTreeMap<u64, Vec<PointId>> = BTreeMap::new();
        for p in self.points.values().filter(|p| !p.is_foreground()) {
            m.entry(p.pool).or_default().push(p.id);
        }
        m
    }

    /// Checks that point and keyframe links agree in both directions.
    pub fn check_links(&self) -> bool {
        let forward = self.points.values().all(|p| {
            p.observations.iter().all(|(kf, z)| {
                self.keyframes
                    .get(kf)
                    .is_some_and(|f| f.observations.iter().any(|o| o.point == Some(p.id) && o.pixel == *z))
            })
        });
        let backward = self.keyframes.values().all(|f| {
            f.observations.iter().all(|o| match o.point {
                Some(id) => self.points.get(&id).is_some_and(|p| p.observations.get(&f.id) == Some(&o.pixel)),
                None => true,
            })
        });
        forward && backward
    }
}
