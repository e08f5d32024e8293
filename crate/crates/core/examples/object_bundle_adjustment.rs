//! Joint bundle adjustment of cameras, a moving object and their points.

use dynslam::geometry::{rot_y, Intrinsics, Pose, Twist};
use dynslam::optimizer::{
    object_local_ba, BaCamera, BaObjectPose, BaObservation, BaPoint, BaProblem, LmParams, PointKind, RobustKernel,
};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = Intrinsics::new(700.0, 700.0, 640.0, 360.0)?;
    let mut problem = BaProblem::new(k);
    for i in 0..5u64 {
        let c_w = Pose::new(rot_y(0.02 * i as f64), Vector3::new(0.0, 0.0, i as f64));
        problem.cameras.push(BaCamera { keyframe: i, pose: c_w.inverse(), fixed: i < 2 });
        let o_w = Pose::new(rot_y(0.05 * i as f64), Vector3::new(2.5 + 0.3 * i as f64, 0.5, 15.0 + 1.3 * i as f64));
        problem.object_poses.push(BaObjectPose { object: 1, keyframe: i, pose: o_w, fixed: i == 0 });
    }
    for id in 0..80u64 {
        let (kind, position) = if id < 60 {
            (PointKind::Background, Vector3::new(rng.random_range(-12.0..12.0), rng.random_range(-4.0..4.0), rng.random_range(12.0..40.0)))
        } else {
            (PointKind::Foreground { object: 1 }, Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-0.7..0.7), rng.random_range(-0.9..0.9)))
        };
        problem.points.push(BaPoint { id, kind, position, fixed: false });
    }
    let truth = problem.clone();
    for c in 0..5 {
        for (pi, p) in truth.points.iter().enumerate() {
            let object_pose = matches!(p.kind, PointKind::Foreground { .. }).then_some(c);
            let w = object_pose.map_or(p.position, |o| truth.object_poses[o].pose.transform_point(&p.position));
            let pixel = k.project_unchecked(&truth.cameras[c].pose.transform_point(&w))
                + Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            problem.observations.push(BaObservation { camera: c, object_pose, point: pi, pixel });
        }
    }
    for o in problem.object_poses.iter_mut().filter(|o| !o.fixed) {
        o.pose = Pose::exp(&Twist::new(Vector3::new(0.0, 0.03, 0.0), Vector3::new(0.15, 0.0, -0.1))).compose(&o.pose);
    }
    for c in problem.cameras.iter_mut().filter(|c| !c.fixed) {
        c.pose = Pose::exp(&Twist::new(Vector3::zeros(), Vector3::new(0.05, 0.02, 0.0))).compose(&c.pose);
    }

    let object_error = |p: &BaProblem| {
        p.object_poses.iter().zip(&truth.object_poses).map(|(a, b)| (a.pose.translation() - b.pose.translation()).norm()).fold(0.0, f64::max)
    };
    println!("before: rms {:.3} px, worst object offset {:.3} m", problem.rms_error(), object_error(&problem));
    let report = object_local_ba(&mut problem, Some(&RobustKernel::default()), &LmParams::default())?;
    println!("after:  rms {:.3} px, worst object offset {:.3} m", problem.rms_error(), object_error(&problem));
    println!("{:?} after {} iterations, cost trace {:?}", report.termination, report.iterations, report.cost_trace);
    Ok(())
}
