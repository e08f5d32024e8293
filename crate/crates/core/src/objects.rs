//! Object detections and per-object state: confidence filtering, 2D/3D
//! detection merging, mask-based feature labelling and object creation.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geometry::Pose;
use crate::mot::{iou_2d, Box2D};

/// Label carried by observations that fall in no instance mask.
pub const BACKGROUND: u64 = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectError {
    #[error("detection for track {track_id} has no 3D box; initialisation deferred")]
    DeferredInit { track_id: u64 },
    #[error("object dimensions must be positive, got {0:?}")]
    InvalidDimensions([f64; 3]),
}

/// Instance segmentation region.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    Box(Box2D),
    /// Simple polygon, vertices in order.
    Polygon(Vec<Vector2<f64>>),
}

impl Mask {
    /// Closed-region test: boundary pixels belong to the mask.
    pub fn contains(&self, z: &Vector2<f64>) -> bool {
        match self {
            Mask::Box(b) => b.contains(z.x, z.y),
            Mask::Polygon(pts) => polygon_contains(pts, z),
        }
    }

    pub fn bounding_box(&self) -> Option<Box2D> {
        match self {
            Mask::Box(b) => Some(*b),
            Mask::Polygon(pts) => Box2D::enclosing(pts.iter().map(|p| (p.x, p.y))),
        }
    }
}

fn polygon_contains(pts: &[Vector2<f64>], z: &Vector2<f64>) -> bool {
    let n = pts.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        // on-edge counts as inside
        let cross = (b - a).perp(&(z - a));
        if cross.abs() <= 1e-12 * (b - a).norm().max(1.0)
            && z.x >= a.x.min(b.x)
            && z.x <= a.x.max(b.x)
            && z.y >= a.y.min(b.y)
            && z.y <= a.y.max(b.y)
        {
            return true;
        }
        if (a.y > z.y) != (b.y > z.y) {
            let x = a.x + (z.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if z.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Gravity-aligned oriented box. The pose maps box coordinates (origin at the
/// box centre; x along length, y along height, z along width) into the
/// enclosing frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox3D {
    pub pose: Pose,
    /// `(length, height, width)` in metres.
    pub dimensions: Vector3<f64>,
}

impl OrientedBox3D {
    pub fn new(pose: Pose, dimensions: Vector3<f64>) -> Result<Self, ObjectError> {
        if dimensions.iter().any(|d| !(*d > 0.0)) {
            return Err(ObjectError::InvalidDimensions([dimensions.x, dimensions.y, dimensions.z]));
        }
        Ok(Self { pose, dimensions })
    }

    pub fn center(&self) -> Vector3<f64> {
        *self.pose.translation()
    }

    /// The same box expressed in another frame: `frame * pose`.
    pub fn transformed(&self, frame: &Pose) -> Self {
        Self { pose: frame.compose(&self.pose), dimensions: self.dimensions }
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let h = self.dimensions * 0.5;
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.pose.transform_point(&Vector3::new(sx * h.x, sy * h.y, sz * h.z));
        }
        out
    }

    /// Heading about the y axis, `atan2(-R[2][0], R[0][0])`.
    pub fn yaw(&self) -> f64 {
        let r = self.pose.rotation();
        (-r[(2, 0)]).atan2(r[(0, 0)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub box2d: Box2D,
    pub confidence: f64,
    pub mask: Option<Mask>,
    pub box3d: Option<OrientedBox3D>,
}

/// One tracked object with a metric 3D state.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub id: u64,
    /// Current object-to-world box.
    pub box3d: OrientedBox3D,
    /// Frame index the pose was last set from.
    pub frame: usize,
}

impl ObjectState {
    pub fn pose(&self) -> &Pose {
        &self.box3d.pose
    }
}

pub fn filter_detections(dets: &[Detection], conf_min: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.confidence >= conf_min).cloned().collect()
}

/// Pairs 2D detections with 3D detections whose projected boxes overlap by
/// more than `iou_min`, best pairs first. Each detection is used at most once.
pub fn merge_2d_3d(dets2d: &[Detection], dets3d: &[Detection], iou_min: f64) -> Vec<Detection> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in dets2d.iter().enumerate() {
        for (j, b) in dets3d.iter().enumerate() {
            if b.box3d.is_none() {
                continue;
            }
            let iou = iou_2d(&a.box2d, &b.box2d);
            if iou > iou_min {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut out: Vec<Detection> = dets2d.iter().map(|d| Detection { box3d: None, ..d.clone() }).collect();
    let mut used3d = vec![false; dets3d.len()];
    let mut used2d = vec![false; dets2d.len()];
    for (_, i, j) in pairs {
        if used2d[i] || used3d[j] {
            continue;
        }
        used2d[i] = true;
        used3d[j] = true;
        out[i].box3d = dets3d[j].box3d;
    }
    out
}

/// Object label for each observation: the id of the mask containing it, or
/// [`BACKGROUND`]. Overlaps go to the mask with the smallest bounding box.
pub fn label_features(observations: &[Vector2<f64>], masks: &[(u64, Mask)]) -> Vec<u64> {
    let areas: Vec<f64> =
        masks.iter().map(|(_, m)| m.bounding_box().map_or(f64::INFINITY, |b| b.area())).collect();
    observations
        .iter()
        .map(|z| {
            masks
                .iter()
                .zip(&areas)
                .filter(|((_, m), _)| m.contains(z))
                .min_by(|((ia, _), aa), ((ib, _), ab)| aa.total_cmp(ab).then(ia.cmp(ib)))
                .map_or(BACKGROUND, |((id, _), _)| *id)
        })
        .collect()
}

pub fn init_object(det: &Detection, track_id: u64, frame: usize) -> Result<ObjectState, ObjectError> {
    let box3d = det.box3d.ok_or(ObjectError::DeferredInit { track_id })?;
    Ok(ObjectState { id: track_id, box3d, frame })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_y;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> Box2D {
        Box2D::new(x1, y1, x2, y2).unwrap()
    }

    fn det(b: Box2D, conf: f64) -> Detection {
        Detection { box2d: b, confidence: conf, mask: Some(Mask::Box(b)), box3d: None }
    }

    fn det3d(b: Box2D, x: f64) -> Detection {
        let pose = Pose::from_translation(Vector3::new(x, 0.0, 10.0));
        Detection {
            box2d: b,
            confidence: 0.95,
            mask: None,
            box3d: Some(OrientedBox3D::new(pose, Vector3::new(4.0, 1.5, 1.8)).unwrap()),
        }
    }

    #[test]
    fn confidence_filter() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let kept = filter_detections(&[det(b, 0.95), det(b, 0.85)], 0.9);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.95);
        assert!(filter_detections(&[], 0.9).is_empty());
        assert_eq!(filter_detections(&[det(b, 0.95), det(b, 0.0)], 0.0).len(), 2);
    }

    #[test]
    fn merge_rules() {
        let a = bx(0.0, 0.0, 100.0, 100.0);
        // IoU 0.9
        let merged = merge_2d_3d(&[det(a, 0.95)], &[det3d(bx(0.0, 0.0, 100.0, 90.0), 1.0)], 0.8);
        assert!(merged[0].box3d.is_some());
        // IoU 0.7
        let merged = merge_2d_3d(&[det(a, 0.95)], &[det3d(bx(0.0, 0.0, 100.0, 70.0), 1.0)], 0.8);
        assert!(merged[0].box3d.is_none());
        // two 2D boxes compete for one 3D box; the 0.9 pair beats the 0.85 pair
        let b = bx(0.0, 0.0, 100.0, 85.0);
        let merged = merge_2d_3d(&[det(b, 0.95), det(bx(0.0, 0.0, 100.0, 90.0), 0.95)], &[det3d(a, 1.0)], 0.8);
        assert!(merged[0].box3d.is_none());
        assert!(merged[1].box3d.is_some());
    }

    #[test]
    fn labels() {
        let masks = vec![
            (5, Mask::Box(bx(10.0, 10.0, 20.0, 20.0))),
            (7, Mask::Box(bx(0.0, 0.0, 100.0, 100.0))),
            (9, Mask::Polygon(vec![Vector2::new(200.0, 200.0), Vector2::new(220.0, 200.0), Vector2::new(210.0, 220.0)])),
        ];
        let obs = [
            Vector2::new(15.0, 15.0),
            Vector2::new(150.0, 150.0),
            Vector2::new(20.0, 10.0),
            Vector2::new(50.0, 50.0),
            Vector2::new(210.0, 205.0),
            Vector2::new(210.0, 200.0),
            Vector2::new(201.0, 219.0),
        ];
        // the small mask wins the overlap; boundary pixels are inside
        assert_eq!(label_features(&obs, &masks), vec![5, 0, 5, 7, 9, 9, 0]);
    }

    #[test]
    fn init_copies_detection() {
        let pose = Pose::new(rot_y(0.4), Vector3::new(1.0, 2.0, 3.0));
        let d = Detection {
            box3d: Some(OrientedBox3D::new(pose, Vector3::new(4.0, 2.0, 1.5)).unwrap()),
            ..det(bx(0.0, 0.0, 1.0, 1.0), 1.0)
        };
        let o = init_object(&d, 4, 0).unwrap();
        assert_eq!(o.id, 4);
        assert_eq!(*o.pose(), pose);
        assert_eq!(o.box3d.dimensions, Vector3::new(4.0, 2.0, 1.5));
        assert_eq!(o.box3d.center(), pose.transform_point(&Vector3::zeros()));
        let missing = init_object(&det(bx(0.0, 0.0, 1.0, 1.0), 1.0), 4, 0);
        assert_eq!(missing, Err(ObjectError::DeferredInit { track_id: 4 }));
    }

    #[test]
    fn yaw_round_trip() {
        let b = OrientedBox3D::new(Pose::new(rot_y(-1.2), Vector3::zeros()), Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert!((b.yaw() + 1.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn labels_agree_with_membership(pts in prop::collection::vec((0.0f64..200.0, 0.0f64..200.0), 0..40),
                                        boxes in prop::collection::vec((0.0f64..150.0, 0.0f64..150.0, 5.0f64..60.0, 5.0f64..60.0), 0..5)) {
            let masks: Vec<(u64, Mask)> = boxes.iter().enumerate()
                .map(|(i, &(x, y, w, h))| (i as u64 + 1, Mask::Box(bx(x, y, x + w, y + h)))).collect();
            let obs: Vec<Vector2<f64>> = pts.iter().map(|&(u, v)| Vector2::new(u, v)).collect();
            for (z, label) in obs.iter().zip(label_features(&obs, &masks)) {
                if label == BACKGROUND {
                    prop_assert!(masks.iter().all(|(_, m)| !m.contains(z)));
                } else {
                    prop_assert!(masks.iter().any(|(id, m)| *id == label && m.contains(z)));
                }
            }
        }

        #[test]
        fn merge_is_injective_and_gated(twod in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..6),
                                       threed in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..6)) {
            let d2: Vec<Detection> = twod.iter().map(|&(x, y)| det(bx(x, y, x + 40.0, y + 30.0), 0.95)).collect();
            let d3: Vec<Detection> = threed.iter().enumerate()
                .map(|(j, &(x, y))| det3d(bx(x, y, x + 40.0, y + 30.0), j as f64)).collect();
            let merged = merge_2d_3d(&d2, &d3, 0.5);
            let mut seen = std::collections::BTreeSet::new();
            for m in &merged {
                if let Some(b3) = m.box3d {
                    let j = b3.center().x as usize;
                    prop_assert!(seen.insert(j));
                    prop_assert!(iou_2d(&m.box2d, &d3[j].box2d) > 0.5);
                }
            }
        }
    }
}
