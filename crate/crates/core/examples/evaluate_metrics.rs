//! Trajectory alignment, 3D box overlap and CLEAR MOT on small hand-made inputs.

use dynslam::evaluation::{ape, clear_metrics, iou_3d, rpe, Labeled, Trajectory};
use dynslam::geometry::{rot_y, Pose};
use dynslam::mot::{iou_2d, Box2D};
use dynslam::objects::OrientedBox3D;
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // ground truth on a circle; the estimate is scaled, rotated and a bit noisy
    let gt: Vec<(f64, Pose)> = (0..40)
        .map(|i| {
            let a = 0.05 * i as f64;
            (0.1 * i as f64, Pose::new(rot_y(a), Vector3::new(20.0 * a.sin(), 0.0, 20.0 * (1.0 - a.cos()))))
        })
        .collect();
    let frame = Pose::new(rot_y(0.7), Vector3::new(3.0, 1.0, -2.0));
    let est: Vec<(f64, Pose)> = gt
        .iter()
        .enumerate()
        .map(|(i, (t, p))| {
            let wobble = Vector3::new(0.02 * (i as f64).sin(), 0.0, 0.02 * (i as f64).cos());
            let q = frame.compose(p);
            (*t, Pose::new(*q.rotation(), q.translation() * 0.5 + wobble))
        })
        .collect();
    let (gt, est) = (Trajectory::new(gt)?, Trajectory::new(est)?);
    let a = ape(&est, &gt, true)?;
    println!("APE rmse {:.4} m after alignment (scale {:.4})", a.stats.rmse, a.alignment.scale);
    let r = rpe(&est, &gt, 1)?;
    println!("RPE rotation rmse {:.4} deg", r.rotation.rmse.to_degrees());

    let b = |x: f64, yaw: f64| OrientedBox3D::new(Pose::new(rot_y(yaw), Vector3::new(x, 0.0, 10.0)), Vector3::new(4.0, 1.5, 1.8));
    let reference = b(0.0, 0.0)?;
    for (x, yaw) in [(0.0, 0.0), (1.0, 0.0), (0.0, 0.3), (0.5, 1.2), (5.0, 0.0)] {
        println!("3D IoU at offset {x} m, yaw {yaw} rad: {:.4}", iou_3d(&reference, &b(x, yaw)?));
    }

    // one object, tracked under id 1 then id 2, plus a clutter box in frame 3
    let gt_box = Box2D::new(100.0, 100.0, 180.0, 160.0).unwrap();
    let clutter = Box2D::new(600.0, 300.0, 650.0, 340.0).unwrap();
    let truth: Vec<Labeled<Box2D>> = (0..6).map(|_| vec![(7, gt_box)]).collect();
    let tracks: Vec<Labeled<Box2D>> = (0..6)
        .map(|f| {
            let mut v = vec![(if f < 4 { 1 } else { 2 }, gt_box)];
            if f == 3 {
                v.push((9, clutter));
            }
            v
        })
        .collect();
    let c = clear_metrics(&tracks, &truth, iou_2d, 0.5);
    println!("MOTA {:.3} MOTP {:.3}: {} false positives, {} id switches", c.mota, c.motp, c.false_positives, c.id_switches);
    Ok(())
}
