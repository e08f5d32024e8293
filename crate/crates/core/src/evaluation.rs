//! Trajectory and tracking metrics: Umeyama alignment, APE/RPE, 3D IoU,
//! CLEAR MOT and detection AP, plus TUM and KITTI-tracking text I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{rot_y, Pose};
use crate::mot::{hungarian, Box2D};
use crate::objects::OrientedBox3D;
use crate::textio::{records, Fields, Float, ParseError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("timestamps must be strictly increasing (sample {0})")]
    UnorderedTimestamps(usize),
    #[error("no associated poses between the trajectories")]
    EmptyAssociation,
    #[error("alignment needs at least 3 non-collinear positions, got {0}")]
    Degenerate(usize),
    #[error("trajectory has {have} associated poses, relative error with gap {delta} needs more")]
    TooShort { have: usize, delta: usize },
}

/// Camera-to-world poses ordered by timestamp.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(EvalError::UnorderedTimestamps(i + 1));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|(_, p)| *p.translation()).collect()
    }

    /// Applies `x -> s R x + t` to every pose.
    pub fn transformed(&self, sim: &Similarity) -> Trajectory {
        let samples = self
            .samples
            .iter()
            .map(|(t, p)| (*t, Pose::new(sim.rotation * p.rotation(), sim.apply(p.translation()))))
            .collect();
        Trajectory { samples }
    }
}

/// Pairs of poses with equal timestamps (to within 1e-6 s).
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Vec<(Pose, Pose)> {
    const TOL: f64 = 1e-6;
    let mut out = Vec::new();
    let mut j = 0;
    for (t, p) in &est.samples {
        while j < gt.samples.len() && gt.samples[j].0 < t - TOL {
            j += 1;
        }
        if j < gt.samples.len() && (gt.samples[j].0 - t).abs() <= TOL {
            out.push((*p, gt.samples[j].1));
            j += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Least-squares similarity taking `src` onto `dst`, minimising
/// `sum |dst_i - (s R src_i + t)|^2`.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<Similarity, EvalError> {
    let n = src.len().min(dst.len());
    if n < 3 {
        return Err(EvalError::Degenerate(n));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = src[..n].iter().sum::<Vector3<f64>>() * inv_n;
    let mu_d = dst[..n].iter().sum::<Vector3<f64>>() * inv_n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    let mut spread = Matrix3::zeros();
    for (s, d) in src[..n].iter().zip(&dst[..n]) {
        let a = s - mu_s;
        cov += (d - mu_d) * a.transpose();
        var_s += a.norm_squared();
        spread += a * a.transpose();
    }
    cov *= inv_n;
    var_s *= inv_n;

    // Collinear sources leave the rotation about their line unconstrained.
    let ev = spread.symmetric_eigenvalues();
    let (lo, hi) = sorted2(&ev);
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(EvalError::Degenerate(n));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v");
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        (svd.singular_values.component_mul(&s.diagonal())).sum() / var_s
    } else {
        1.0
    };
    let translation = mu_d - scale * (rotation * mu_s);
    Ok(Similarity { scale, rotation, translation })
}

/// Middle and largest of three eigenvalues.
fn sorted2(ev: &Vector3<f64>) -> (f64, f64) {
    let mut v = [ev.x, ev.y, ev.z];
    v.sort_by(f64::total_cmp);
    (v[1], v[2])
}

/// Similarity taking the estimated positions onto ground truth.
pub fn umeyama_align(est: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<Similarity, EvalError> {
    let pairs = associate(est, gt);
    if pairs.is_empty() {
        return Err(EvalError::EmptyAssociation);
    }
    let src: Vec<_> = pairs.iter().map(|(e, _)| *e.translation()).collect();
    let dst: Vec<_> = pairs.iter().map(|(_, g)| *g.translation()).collect();
    umeyama(&src, &dst, with_scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub min: f64,
    pub count: usize,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Self {
        if errors.is_empty() {
            return Self::default();
        }
        let n = errors.len() as f64;
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
        Self {
            rmse: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            mean: errors.iter().sum::<f64>() / n,
            median,
            max: sorted[m - 1],
            min: sorted[0],
            count: m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApeResult {
    pub alignment: Similarity,
    pub errors: Vec<f64>,
    pub stats: ErrorStats,
}

/// Translational error after aligning the estimate onto ground truth.
/// Monocular estimates need `with_scale`.
pub fn ape(est: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<ApeResult, EvalError> {
    let alignment = umeyama_align(est, gt, with_scale)?;
    let errors: Vec<f64> = associate(est, gt)
        .iter()
        .map(|(e, g)| (alignment.apply(e.translation()) - g.translation()).norm())
        .collect();
    let stats = ErrorStats::from_errors(&errors);
    Ok(ApeResult { alignment, errors, stats })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpeResult {
    /// Radians.
    pub rotation: ErrorStats,
    /// Metres, in the estimate's units.
    pub translation: ErrorStats,
}

/// Relative pose error over pose pairs `delta` samples apart.
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<RpeResult, EvalError> {
    let pairs = associate(est, gt);
    if delta == 0 || pairs.len() <= delta {
        return Err(EvalError::TooShort { have: pairs.len(), delta });
    }
    let mut rot = Vec::new();
    let mut trans = Vec::new();
    for i in 0..pairs.len() - delta {
        let (e0, g0) = &pairs[i];
        let (e1, g1) = &pairs[i + delta];
        let de = e0.inverse().compose(e1);
        let dg = g0.inverse().compose(g1);
        let err = dg.inverse().compose(&de);
        rot.push(err.rotation_angle());
        trans.push(err.translation().norm());
    }
    Ok(RpeResult { rotation: ErrorStats::from_errors(&rot), translation: ErrorStats::from_errors(&trans) })
}

// ---------------------------------------------------------------------------
// 3D IoU

/// Footprint of a gravity-aligned box in the x-z plane, counter-clockwise.
fn footprint(b: &OrientedBox3D) -> Vec<Vector2<f64>> {
    let c = b.corners();
    // corners 0,1,5,4 share the same y and walk the rectangle
    let mut poly: Vec<Vector2<f64>> = [0, 1, 5, 4].iter().map(|&i| Vector2::new(c[i].x, c[i].z)).collect();
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

fn signed_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].perp(&poly[(i + 1) % n])).sum::<f64>() * 0.5
}

/// Sutherland-Hodgman clip of `subject` against the convex counter-clockwise `clip`.
fn clip_polygon(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge = b - a;
        let side = |p: &Vector2<f64>| edge.perp(&(p - a));
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let (sp, sq) = (side(&p), side(&q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push(p + (q - p) * t);
            }
        }
    }
    out
}

fn vertical_extent(b: &OrientedBox3D) -> (f64, f64) {
    let ys = b.corners().map(|c| c.y);
    (ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Intersection over union of two boxes that rotate only about the vertical axis.
pub fn iou_3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let (a0, a1) = vertical_extent(a);
    let (b0, b1) = vertical_extent(b);
    let h = (a1.min(b1) - a0.max(b0)).max(0.0);
    if h == 0.0 {
        return 0.0;
    }
    let inter_poly = clip_polygon(&footprint(a), &footprint(b));
    let area = if inter_poly.len() < 3 { 0.0 } else { signed_area(&inter_poly).max(0.0) };
    let inter = area * h;
    let va = a.dimensions.product();
    let vb = b.dimensions.product();
    let union = va + vb - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

// ---------------------------------------------------------------------------
// CLEAR MOT

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClearReport {
    pub mota: f64,
    pub motp: f64,
    pub gt_count: usize,
    pub matches: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub id_switches: usize,
}

/// Boxes with their track id in one frame.
pub type Labeled<T> = Vec<(u64, T)>;

/// CLEAR MOT over a sequence of frames. Correspondences from the previous
/// frame are kept while their overlap stays at or above `threshold`; the
/// remaining boxes are matched by Hungarian assignment on `1 - overlap`.
/// An identity switch is counted when a ground-truth object is matched to a
/// different track than the one it was last matched to.
///
/// MOTA is `1 - (misses + fp + switches) / gt_count` (1 when there is nothing
/// to count); MOTP is the mean overlap of matched pairs (0 without matches).
pub fn clear_metrics<T>(
    est: &[Labeled<T>],
    gt: &[Labeled<T>],
    overlap: impl Fn(&T, &T) -> f64,
    threshold: f64,
) -> ClearReport {
    let mut report = ClearReport::default();
    let mut overlap_sum = 0.0;
    let mut previous: BTreeMap<u64, u64> = BTreeMap::new();
    let mut last_match: BTreeMap<u64, u64> = BTreeMap::new();
    let empty = Vec::new();
    for f in 0..est.len().max(gt.len()) {
        let e = est.get(f).unwrap_or(&empty);
        let g = gt.get(f).unwrap_or(&empty);
        report.gt_count += g.len();

        let mut matched: Vec<(usize, usize, f64)> = Vec::new();
        let mut used_g = BTreeSet::new();
        let mut used_e = BTreeSet::new();
        for (gi, (gid, gb)) in g.iter().enumerate() {
            let Some(eid) = previous.get(gid) else { continue };
            if let Some(ei) = e.iter().position(|(id, _)| id == eid) {
                let o = overlap(gb, &e[ei].1);
                if o >= threshold && !used_e.contains(&ei) {
                    matched.push((gi, ei, o));
                    used_g.insert(gi);
                    used_e.insert(ei);
                }
            }
        }
        let free_g: Vec<usize> = (0..g.len()).filter(|i| !used_g.contains(i)).collect();
        let free_e: Vec<usize> = (0..e.len()).filter(|i| !used_e.contains(i)).collect();
        if !free_g.is_empty() && !free_e.is_empty() {
            let ov: Vec<Vec<f64>> =
                free_g.iter().map(|&gi| free_e.iter().map(|&ei| overlap(&g[gi].1, &e[ei].1)).collect()).collect();
            let cost: Vec<Vec<f64>> =
                ov.iter().map(|row| row.iter().map(|&o| if o >= threshold { 1.0 - o } else { 2.0 }).collect()).collect();
            for (r, c) in hungarian(&cost) {
                if ov[r][c] >= threshold {
                    matched.push((free_g[r], free_e[c], ov[r][c]));
                }
            }
        }

        let mut current = BTreeMap::new();
        for &(gi, ei, o) in &matched {
            let (gid, eid) = (g[gi].0, e[ei].0);
            if last_match.get(&gid).is_some_and(|&prev| prev != eid) {
                report.id_switches += 1;
            }
            last_match.insert(gid, eid);
            current.insert(gid, eid);
            overlap_sum += o;
        }
        report.matches += matched.len();
        report.misses += g.len() - matched.len();
        report.false_positives += e.len() - matched.len();
        previous = current;
    }
    let errors = report.misses + report.false_positives + report.id_switches;
    report.mota = if errors == 0 { 1.0 } else { 1.0 - errors as f64 / report.gt_count.max(1) as f64 };
    report.motp = if report.matches == 0 { 0.0 } else { overlap_sum / report.matches as f64 };
    report
}

// ---------------------------------------------------------------------------
// Detection AP

/// Average precision with all-point interpolation (area under the
/// precision envelope). Detections are matched greedily in descending score
/// order to the unmatched ground-truth box of highest overlap in the same
/// frame.
pub fn detection_ap<T>(
    est: &[Vec<(T, f64)>],
    gt: &[Vec<T>],
    overlap: impl Fn(&T, &T) -> f64,
    threshold: f64,
) -> f64 {
    let total_gt: usize = gt.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<(usize, usize, f64)> = est
        .iter()
        .enumerate()
        .flat_map(|(f, dets)| dets.iter().enumerate().map(move |(i, (_, s))| (f, i, *s)))
        .collect();
    order.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut taken: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (k, &(f, i, _)) in order.iter().enumerate() {
        let det = &est[f][i].0;
        let mut best: Option<(usize, f64)> = None;
        if let Some(boxes) = gt.get(f) {
            for (j, g) in boxes.iter().enumerate() {
                let o = overlap(det, g);
                if !taken[f][j] && o >= threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
        }
        if let Some((j, _)) = best {
            taken[f][j] = true;
            tp += 1;
        }
        curve.push((tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope from the right
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..curve.len() {
        let (r, _) = curve[k];
        if r > prev_recall {
            let p = curve[k..].iter().map(|c| c.1).fold(0.0, f64::max);
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}

// ---------------------------------------------------------------------------
// File formats

/// TUM layout: `timestamp tx ty tz qx qy qz qw`.
pub fn write_tum(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (t, p) in &traj.samples {
        let q = p.quaternion();
        let x = p.translation();
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            Float(*t),
            Float(x.x),
            Float(x.y),
            Float(x.z),
            Float(q[0]),
            Float(q[1]),
            Float(q[2]),
            Float(q[3])
        );
    }
    out
}

pub fn read_tum(text: &str) -> Result<Trajectory, ParseError> {
    let mut samples = Vec::new();
    let mut last = 0;
    for (line, rec) in records(text) {
        let mut f = Fields::new(line, rec);
        let t: f64 = f.parse("timestamp")?;
        let x = f.floats::<3>("translation")?;
        let q = f.floats::<4>("quaternion")?;
        f.finish()?;
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-6) {
            return Err(ParseError::new(line, "quaternion", "zero quaternion"));
        }
        samples.push((t, Pose::from_quaternion(q, Vector3::from(x))));
        last = line;
    }
    Trajectory::new(samples).map_err(|e| ParseError::new(last, "timestamp", e.to_string()))
}

/// One line of KITTI tracking output. Boxes live in the camera frame of
/// their frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRow {
    pub frame: usize,
    pub id: u64,
    pub kind: String,
    pub box2d: Box2D,
    /// `(length, height, width)`; `None` when the track has no 3D state.
    pub dimensions: Option<[f64; 3]>,
    /// Bottom centre of the box in the camera frame.
    pub location: [f64; 3],
    /// Rotation about the camera y axis.
    pub rotation_y: f64,
    pub score: f64,
}

impl TrackRow {
    pub fn from_box(frame: usize, id: u64, box2d: Box2D, cam_box: Option<&OrientedBox3D>, score: f64) -> Self {
        let (dimensions, location, rotation_y) = match cam_box {
            Some(b) => {
                let d = b.dimensions;
                let bottom = b.pose.transform_point(&Vector3::new(0.0, d.y * 0.5, 0.0));
                (Some([d.x, d.y, d.z]), [bottom.x, bottom.y, bottom.z], b.yaw())
            }
            None => (None, [-1000.0; 3], -10.0),
        };
        Self { frame, id, kind: "Car".into(), box2d, dimensions, location, rotation_y, score }
    }

    /// The 3D box in the camera frame.
    pub fn box3d(&self) -> Option<OrientedBox3D> {
        let [l, h, w] = self.dimensions?;
        let center = Vector3::from(self.location) - Vector3::new(0.0, h * 0.5, 0.0);
        OrientedBox3D::new(Pose::new(rot_y(self.rotation_y), center), Vector3::new(l, h, w)).ok()
    }
}

/// KITTI tracking layout: `frame id type truncated occluded alpha x1 y1 x2
/// y2 h w l x y z rotation_y score`. Unknown 3D fields use -1 / -1000 / -10.
pub fn write_kitti_tracks(rows: &[TrackRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let [l, h, w] = r.dimensions.unwrap_or([-1.0; 3]);
        let b = &r.box2d;
        let _ = write!(out, "{} {} {} 0 0 -10", r.frame, r.id, r.kind);
        for v in [b.x1, b.y1, b.x2, b.y2, h, w, l, r.location[0], r.location[1], r.location[2], r.rotation_y, r.score] {
            let _ = write!(out, " {}", Float(v));
        }
        out.push('\n');
    }
    out
}

pub fn read_kitti_tracks(text: &str) -> Result<Vec<TrackRow>, ParseError> {
    let mut rows = Vec::new();
    for (line, rec) in records(text) {
        let mut f = Fields::new(line, rec);
        let frame = f.parse("frame")?;
        let id = f.parse("id")?;
        let kind = f.next_str("type")?.to_string();
        let _truncated: f64 = f.parse("truncated")?;
        let _occluded: f64 = f.parse("occluded")?;
        let _alpha: f64 = f.parse("alpha")?;
        let [x1, y1, x2, y2] = f.floats::<4>("bbox")?;
        let [h, w, l] = f.floats::<3>("dimensions")?;
        let location = f.floats::<3>("location")?;
        let rotation_y = f.parse("rotation_y")?;
        let score = f.parse("score")?;
        f.finish()?;
        let box2d = Box2D::new(x1, y1, x2, y2).ok_or_else(|| ParseError::new(line, "bbox", "corners out of order"))?;
        let dimensions = (h > 0.0 && w > 0.0 && l > 0.0).then_some([l, h, w]);
        rows.push(TrackRow { frame, id, kind, box2d, dimensions, location, rotation_y, score });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_x, rot_z};
    use crate::mot::iou_2d;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(center: [f64; 3], yaw: f64, dims: [f64; 3]) -> OrientedBox3D {
        OrientedBox3D::new(Pose::new(rot_y(yaw), Vector3::from(center)), Vector3::from(dims)).unwrap()
    }

    fn traj(poses: &[Pose]) -> Trajectory {
        Trajectory::new(poses.iter().enumerate().map(|(i, p)| (i as f64 * 0.1, *p)).collect()).unwrap()
    }

    fn wiggly(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                Pose::new(rot_y(0.05 * t) * rot_x(0.01 * t), Vector3::new(t.sin() * 2.0, 0.3 * (0.5 * t).cos(), 1.5 * t))
            })
            .collect()
    }

    #[test]
    fn identical_trajectories_give_zero_errors() {
        let t = traj(&wiggly(30));
        let a = ape(&t, &t, true).unwrap();
        assert!(a.stats.max < 1e-12);
        assert_relative_eq!(a.alignment.scale, 1.0, epsilon = 1e-12);
        let r = rpe(&t, &t, 1).unwrap();
        assert!(r.rotation.max < 1e-7 && r.translation.max < 1e-12);
    }

    #[test]
    fn constant_offset_is_absorbed() {
        let gt = wiggly(20);
        let shifted: Vec<Pose> = gt.iter().map(|p| Pose::new(*p.rotation(), p.translation() + Vector3::new(3.0, -1.0, 2.0))).collect();
        let a = ape(&traj(&shifted), &traj(&gt), false).unwrap();
        assert!(a.stats.max < 1e-12);
    }

    #[test]
    fn umeyama_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let src: Vec<Vector3<f64>> = (0..10).map(|_| Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0))).collect();
            let r = rot_z(rng.random_range(-3.0..3.0)) * rot_y(rng.random_range(-3.0..3.0)) * rot_x(rng.random_range(-3.0..3.0));
            let sim = Similarity {
                scale: rng.random_range(0.2..5.0),
                rotation: r,
                translation: Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0)),
            };
            let dst: Vec<_> = src.iter().map(|p| sim.apply(p)).collect();
            let got = umeyama(&src, &dst, true).unwrap();
            assert!((got.scale - sim.scale).abs() < 1e-9);
            assert!((got.rotation - sim.rotation).abs().max() < 1e-9);
            assert!((got.translation - sim.translation).abs().max() < 1e-9);
        }
    }

    #[test]
    fn degenerate_alignment_is_reported() {
        let two = [Vector3::zeros(), Vector3::x()];
        assert_eq!(umeyama(&two, &two, true), Err(EvalError::Degenerate(2)));
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(umeyama(&line, &line, true), Err(EvalError::Degenerate(5))));
        let a = traj(&wiggly(5));
        let b = Trajectory::new(vec![(100.0, Pose::identity())]).unwrap();
        assert_eq!(ape(&a, &b, true).unwrap_err(), EvalError::EmptyAssociation);
        assert!(Trajectory::new(vec![(1.0, Pose::identity()), (1.0, Pose::identity())]).is_err());
    }

    #[test]
    fn ape_matches_direct_recomputation() {
        let gt = wiggly(40);
        let est: Vec<Pose> =
            gt.iter().enumerate().map(|(i, p)| Pose::new(*p.rotation(), p.translation() * 1.0 + Vector3::new(0.01 * i as f64, 0.0, 0.0))).collect();
        let (e, g) = (traj(&est), traj(&gt));
        let a = ape(&e, &g, true).unwrap();
        let sim = umeyama(&e.positions(), &g.positions(), true).unwrap();
        let direct: f64 = est.iter().zip(&gt).map(|(x, y)| (sim.apply(x.translation()) - y.translation()).norm_squared()).sum::<f64>();
        assert_relative_eq!(a.stats.rmse, (direct / 40.0).sqrt(), epsilon = 1e-12);
        assert!(a.stats.rmse > 1e-3);
    }

    #[test]
    fn rpe_ignores_global_transform_and_matches_recomputation() {
        let gt = wiggly(25);
        let g = Pose::new(rot_z(0.4) * rot_y(1.0), Vector3::new(5.0, -2.0, 1.0));
        let moved: Vec<Pose> = gt.iter().map(|p| g.compose(p)).collect();
        let r = rpe(&traj(&moved), &traj(&gt), 2).unwrap();
        assert!(r.rotation.max < 1e-7 && r.translation.max < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy: Vec<Pose> = gt
            .iter()
            .map(|p| p.retract(&crate::geometry::Twist::new(Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01)), Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)))))
            .collect();
        let r = rpe(&traj(&noisy), &traj(&gt), 1).unwrap();
        let mut sq = 0.0;
        for i in 0..24 {
            let e = gt[i].inverse().compose(&gt[i + 1]).inverse().compose(&noisy[i].inverse().compose(&noisy[i + 1]));
            sq += e.translation().norm_squared();
        }
        assert_relative_eq!(r.translation.rmse, (sq / 24.0).sqrt(), epsilon = 1e-12);
        assert!(rpe(&traj(&gt[..2]), &traj(&gt[..2]), 2).is_err());
    }

    #[test]
    fn iou_axis_aligned_cases() {
        let a = cube([0.0; 3], 0.0, [1.0; 3]);
        assert_relative_eq!(iou_3d(&a, &a), 1.0, epsilon = 1e-12);
        assert_relative_eq!(iou_3d(&a, &cube([0.5, 0.0, 0.0], 0.0, [1.0; 3])), 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(iou_3d(&a, &cube([3.0, 0.0, 0.0], 0.0, [1.0; 3])), 0.0);
        assert_eq!(iou_3d(&a, &cube([0.0, 1.0, 0.0], 0.0, [1.0; 3])), 0.0);
        // 2D IoU times height overlap for equal-height boxes
        let b = cube([0.3, 0.0, 0.2], 0.0, [2.0, 1.0, 1.0]);
        let fa = Box2D::new(-0.5, -0.5, 0.5, 0.5).unwrap();
        let fb = Box2D::new(-0.7, -0.3, 1.3, 0.7).unwrap();
        assert_relative_eq!(iou_3d(&a, &b), iou_2d(&fa, &fb), epsilon = 1e-12);
    }

    fn monte_carlo_iou(a: &OrientedBox3D, b: &OrientedBox3D, n: usize, rng: &mut impl Rng) -> f64 {
        // sample the union's bounding box
        let corners: Vec<_> = a.corners().into_iter().chain(b.corners()).collect();
        let lo = corners.iter().fold(Vector3::repeat(f64::INFINITY), |m, c| m.inf(c));
        let hi = corners.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |m, c| m.sup(c));
        let inside = |bx: &OrientedBox3D, p: &Vector3<f64>| {
            let q = bx.pose.inverse().transform_point(p);
            (0..3).all(|k| q[k].abs() <= bx.dimensions[k] * 0.5)
        };
        let (mut i, mut u) = (0usize, 0usize);
        for _ in 0..n {
            let p = Vector3::from_fn(|k, _| rng.random_range(lo[k]..hi[k]));
            let (ia, ib) = (inside(a, &p), inside(b, &p));
            i += (ia && ib) as usize;
            u += (ia || ib) as usize;
        }
        i as f64 / u as f64
    }

    #[test]
    fn iou_yawed_cube_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = cube([0.0; 3], 0.0, [1.0; 3]);
        let b = cube([0.0; 3], std::f64::consts::FRAC_PI_4, [1.0; 3]);
        let exact = iou_3d(&a, &b);
        // octagon area 2(sqrt2 - 1) over 2 - that
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert_relative_eq!(exact, inter / (2.0 - inter), epsilon = 1e-12);
        assert!((exact - monte_carlo_iou(&a, &b, 200_000, &mut rng)).abs() < 1e-2);
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(
            ax in -2.0..2.0f64, az in -2.0..2.0f64, ay in -0.5..0.5f64, ayaw in -3.2..3.2f64,
            bx in -2.0..2.0f64, bz in -2.0..2.0f64, by in -0.5..0.5f64, byaw in -3.2..3.2f64,
            l in 0.5..4.0f64, h in 0.5..2.0f64, w in 0.5..2.0f64,
        ) {
            let a = cube([ax, ay, az], ayaw, [l, h, w]);
            let b = cube([bx, by, bz], byaw, [w, h, l]);
            let ab = iou_3d(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - iou_3d(&b, &a)).abs() < 1e-9);
        }

        #[test]
        fn mota_drops_with_more_false_positives(n in 1usize..10, extra in 0usize..4) {
            let gt: Vec<Labeled<Box2D>> = (0..n).map(|i| vec![(1, bx(i as f64 * 10.0))]).collect();
            let make = |k: usize| -> Vec<Labeled<Box2D>> {
                (0..n).map(|i| {
                    let mut v = vec![(7, bx(i as f64 * 10.0))];
                    if i < k { v.push((9, bx(500.0))); }
                    v
                }).collect()
            };
            let a = clear_metrics(&make(extra), &gt, iou_2d, 0.5);
            let b = clear_metrics(&make(extra + 1), &gt, iou_2d, 0.5);
            prop_assert!(a.mota <= 1.0);
            if extra < n { prop_assert!(b.mota < a.mota); }
        }
    }

    fn bx(x: f64) -> Box2D {
        Box2D::new(x, 0.0, x + 5.0, 5.0).unwrap()
    }

    #[test]
    fn clear_perfect_and_false_positive_fixture() {
        let gt: Vec<Labeled<Box2D>> = (0..6).map(|i| vec![(1, bx(i as f64)), (2, bx(100.0 + i as f64))]).collect();
        let perfect = clear_metrics(&gt, &gt, iou_2d, 0.5);
        assert_eq!(perfect.mota, 1.0);
        assert_eq!(perfect.motp, 1.0);
        let est: Vec<Labeled<Box2D>> = gt
            .iter()
            .map(|f| {
                let mut f = f.clone();
                f.push((50, bx(300.0)));
                f
            })
            .collect();
        let r = clear_metrics(&est, &gt, iou_2d, 0.5);
        assert_eq!(r.false_positives, 6);
        assert_eq!((r.misses, r.id_switches), (0, 0));
        assert_eq!(r.mota, 0.5);
    }

    #[test]
    fn clear_counts_one_switch() {
        let gt: Vec<Labeled<Box2D>> = (0..8).map(|i| vec![(1, bx(i as f64)), (2, bx(100.0))]).collect();
        let est: Vec<Labeled<Box2D>> = (0..8)
            .map(|i| vec![(if i < 4 { 10 } else { 11 }, bx(i as f64)), (20, bx(100.0))])
            .collect();
        let r = clear_metrics(&est, &gt, iou_2d, 0.5);
        assert_eq!(r.id_switches, 1);
        assert_eq!(r.matches, 16);
        assert_relative_eq!(r.mota, 1.0 - 1.0 / 16.0);
    }

    #[test]
    fn clear_keeps_previous_correspondence() {
        // Track 5 drifts slightly but stays above threshold; track 6 would
        // fit better but continuity keeps the existing pair.
        let gt: Vec<Labeled<Box2D>> = vec![vec![(1, bx(0.0))], vec![(1, bx(0.0))]];
        let est = vec![vec![(5, bx(0.0))], vec![(5, bx(1.0)), (6, bx(0.0))]];
        let r = clear_metrics(&est, &gt, iou_2d, 0.5);
        assert_eq!(r.id_switches, 0);
        assert_eq!(r.false_positives, 1);
    }

    #[test]
    fn ap_fixtures() {
        let gt = vec![vec![bx(0.0), bx(20.0)], vec![bx(40.0), bx(60.0)]];
        let exact: Vec<Vec<(Box2D, f64)>> = gt.iter().map(|f| f.iter().map(|b| (*b, 0.9)).collect()).collect();
        assert_relative_eq!(detection_ap(&exact, &gt, iou_2d, 0.25), 1.0);
        assert_eq!(detection_ap(&[vec![], vec![]], &gt, iou_2d, 0.25), 0.0);
        // scores 0.9 TP, 0.8 FP, 0.7 TP, 0.6 FP: recall 0.25, 0.25, 0.5, 0.5
        // precision 1, 0.5, 2/3, 0.5 -> AP = 0.25 * 1 + 0.25 * 2/3
        let est = vec![vec![(bx(0.0), 0.9), (bx(200.0), 0.8)], vec![(bx(40.0), 0.7), (bx(300.0), 0.6)]];
        assert_relative_eq!(detection_ap(&est, &gt, iou_2d, 0.25), 0.25 + 0.25 * 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn tum_round_trip() {
        let t = traj(&wiggly(10));
        let back = read_tum(&write_tum(&t)).unwrap();
        for ((ta, a), (tb, b)) in t.samples().iter().zip(back.samples()) {
            assert_eq!(ta, tb);
            assert!((a.to_matrix() - b.to_matrix()).abs().max() < 1e-14);
        }
        assert_eq!(read_tum("0 1 2 3 0 0 0 1\n1 x").unwrap_err().line, 2);
    }

    #[test]
    fn kitti_round_trip() {
        let cam_box = cube([1.0, 0.5, 12.0], 0.3, [4.0, 1.5, 1.8]);
        let rows = vec![
            TrackRow::from_box(0, 1, bx(3.0), Some(&cam_box), 0.97),
            TrackRow::from_box(1, 2, bx(8.0), None, 0.5),
        ];
        let back = read_kitti_tracks(&write_kitti_tracks(&rows)).unwrap();
        assert_eq!(back, rows);
        let b = back[0].box3d().unwrap();
        assert!((b.pose.to_matrix() - cam_box.pose.to_matrix()).abs().max() < 1e-12);
        assert_relative_eq!(back[0].location[1], 0.5 + 0.75, epsilon = 1e-12);
        assert!(back[1].box3d().is_none());
    }
}
