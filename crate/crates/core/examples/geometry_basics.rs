//! SE(3) maps, projection and two-view triangulation.

use dynslam::geometry::{backproject, project, triangulate, Intrinsics, Pose, Twist};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = Intrinsics::new(700.0, 700.0, 640.0, 360.0)?;

    let xi = Twist::new(Vector3::new(0.0, 0.1, 0.0), Vector3::new(0.5, 0.0, 1.0));
    let pose = Pose::exp(&xi);
    let back = pose.log()?;
    println!("exp/log round trip error: {:.2e}", (back.to_vector() - xi.to_vector()).norm());

    // two cameras one metre apart looking down +z
    let cam_a = Pose::identity();
    let cam_b = Pose::from_translation(Vector3::new(-1.0, 0.0, 0.0));
    let point = Vector3::new(0.4, -0.2, 12.0);
    let za = project(&k, &cam_a.transform_point(&point))?;
    let zb = project(&k, &cam_b.transform_point(&point))?;
    println!("pixels: a = ({:.2}, {:.2}), b = ({:.2}, {:.2})", za.x, za.y, zb.x, zb.y);

    let estimate = triangulate(&k, &cam_a, &cam_b, &za, &zb)?;
    println!("triangulated {:?}, error {:.2e} m", estimate.as_slice(), (estimate - point).norm());

    let from_depth = backproject(&k, &za, 12.0)?;
    println!("back-projected at depth 12: {:?}", from_depth.as_slice());

    // too little baseline for a far point
    let cam_c = Pose::from_translation(Vector3::new(-0.01, 0.0, 0.0));
    let zc = project(&k, &cam_c.transform_point(&point))?;
    match triangulate(&k, &cam_a, &cam_c, &za, &zc) {
        Ok(p) => println!("unexpected success: {p:?}"),
        Err(e) => println!("short baseline rejected: {e}"),
    }
    Ok(())
}
