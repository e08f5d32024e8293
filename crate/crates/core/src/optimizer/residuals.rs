//! Reprojection residuals `z - K T_cw p` (background) and
//! `z - K T_cw T_wo p_o` (foreground) with analytic Jacobians.
//!
//! Pose Jacobians are taken with respect to a left perturbation
//! `exp(delta) * T`, rotational part first.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Matrix3x6, Vector2, Vector3};

use crate::geometry::{skew, Intrinsics, Pose};

/// The point ended up at non-positive depth; the residual is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehindCamera {
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundJacobians {
    pub camera: Matrix2x6<f64>,
    pub point: Matrix2x3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForegroundJacobians {
    pub camera: Matrix2x6<f64>,
    pub object: Matrix2x6<f64>,
    pub point: Matrix2x3<f64>,
}

fn projection_jacobian(k: &Intrinsics, pc: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    let iz2 = iz * iz;
    Matrix2x3::new(k.fx() * iz, 0.0, -k.fx() * pc.x * iz2, 0.0, k.fy() * iz, -k.fy() * pc.y * iz2)
}

/// `d(T p) / d delta` for a left perturbation at the transformed point `q = T p`.
fn left_point_jacobian(q: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(q)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    j
}

fn residual_at(k: &Intrinsics, pc: &Vector3<f64>, z: &Vector2<f64>) -> Result<Vector2<f64>, BehindCamera> {
    if !(pc.z > 0.0) {
        return Err(BehindCamera { depth: pc.z });
    }
    Ok(z - k.project_unchecked(pc))
}

pub fn residual_bg(cam: &Pose, p: &Vector3<f64>, z: &Vector2<f64>, k: &Intrinsics) -> Result<Vector2<f64>, BehindCamera> {
    residual_at(k, &cam.transform_point(p), z)
}

pub fn residual_fg(
    cam: &Pose,
    obj: &Pose,
    p_o: &Vector3<f64>,
    z: &Vector2<f64>,
    k: &Intrinsics,
) -> Result<Vector2<f64>, BehindCamera> {
    residual_at(k, &cam.transform_point(&obj.transform_point(p_o)), z)
}

pub fn residual_bg_jacobians(
    cam: &Pose,
    p: &Vector3<f64>,
    z: &Vector2<f64>,
    k: &Intrinsics,
) -> Result<(Vector2<f64>, BackgroundJacobians), BehindCamera> {
    let pc = cam.transform_point(p);
    let r = residual_at(k, &pc, z)?;
    let jp = -projection_jacobian(k, &pc);
    Ok((r, BackgroundJacobians { camera: jp * left_point_jacobian(&pc), point: jp * cam.rotation() }))
}

pub fn residual_fg_jacobians(
    cam: &Pose,
    obj: &Pose,
    p_o: &Vector3<f64>,
    z: &Vector2<f64>,
    k: &Intrinsics,
) -> Result<(Vector2<f64>, ForegroundJacobians), BehindCamera> {
    let pw = obj.transform_point(p_o);
    let pc = cam.transform_point(&pw);
    let r = residual_at(k, &pc, z)?;
    let jp = -projection_jacobian(k, &pc);
    let jr = jp * cam.rotation();
    Ok((
        r,
        ForegroundJacobians {
            camera: jp * left_point_jacobian(&pc),
            object: jr * left_point_jacobian(&pw),
            point: jr * obj.rotation(),
        },
    ))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::{project, Twist};
    use nalgebra::Vector6;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_pose(rng: &mut impl Rng, rot: f64, trans: f64) -> Pose {
        let w = Vector3::from_fn(|_, _| rng.random_range(-rot..rot));
        let t = Vector3::from_fn(|_, _| rng.random_range(-trans..trans));
        Pose::exp(&Twist::new(w, t))
    }

    pub(crate) fn rel_err<const C: usize>(a: &nalgebra::SMatrix<f64, 2, C>, b: &nalgebra::SMatrix<f64, 2, C>) -> f64 {
        (a - b).norm() / b.norm().max(1e-12)
    }

    /// Central differences of a residual function over a left pose perturbation.
    pub(crate) fn fd_pose(f: impl Fn(&Pose) -> Vector2<f64>, at: &Pose) -> Matrix2x6<f64> {
        let h = 1e-6;
        let mut j = Matrix2x6::zeros();
        for i in 0..6 {
            let mut d = Vector6::zeros();
            d[i] = h;
            let plus = f(&at.retract(&Twist::from_vector(&d)));
            let minus = f(&at.retract(&Twist::from_vector(&(-d))));
            j.set_column(i, &((plus - minus) / (2.0 * h)));
        }
        j
    }

    pub(crate) fn fd_point(f: impl Fn(&Vector3<f64>) -> Vector2<f64>, at: &Vector3<f64>) -> Matrix2x3<f64> {
        let h = 1e-6;
        let mut j = Matrix2x3::zeros();
        for i in 0..3 {
            let mut d = Vector3::zeros();
            d[i] = h;
            j.set_column(i, &((f(&(at + d)) - f(&(at - d))) / (2.0 * h)));
        }
        j
    }

    fn k() -> Intrinsics {
        Intrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn model_generated_observation_has_zero_residual() {
        let cam = Pose::new(crate::geometry::rot_y(0.2), Vector3::new(0.5, 0.1, -1.0));
        let p = Vector3::new(1.0, -0.5, 9.0);
        let z = project(&k(), &cam.transform_point(&p)).unwrap();
        assert!(residual_bg(&cam, &p, &z, &k()).unwrap().norm() < 1e-12);
        assert!(residual_bg(&Pose::identity(), &Vector3::new(0.0, 0.0, -2.0), &z, &k()).is_err());
    }

    #[test]
    fn foreground_with_identity_object_equals_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let cam = random_pose(&mut rng, 0.3, 1.0);
            let p = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..20.0));
            let z = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let bg = residual_bg(&cam, &p, &z, &k()).unwrap();
            let fg = residual_fg(&cam, &Pose::identity(), &p, &z, &k()).unwrap();
            assert!((bg - fg).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn first_order_prediction_on_point_perturbation() {
        let cam = Pose::new(crate::geometry::rot_y(0.1), Vector3::new(0.2, 0.0, 0.0));
        let p = Vector3::new(0.5, 0.3, 7.0);
        let z = Vector2::new(300.0, 250.0);
        let (r0, j) = residual_bg_jacobians(&cam, &p, &z, &k()).unwrap();
        for eps in [1e-2, 1e-3] {
            let d = Vector3::new(eps, 0.0, 0.0);
            let r1 = residual_bg(&cam, &(p + d), &z, &k()).unwrap();
            let err = (r1 - (r0 + j.point * d)).norm();
            assert!(err < 50.0 * eps * eps, "eps {eps}: {err}");
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let k = k();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let cam = random_pose(&mut rng, 0.3, 0.5);
            let obj = random_pose(&mut rng, 0.5, 0.5);
            let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(5.0..15.0));
            let z = Vector2::new(320.0, 240.0);
            let (_, jb) = residual_bg_jacobians(&cam, &p, &z, &k).unwrap();
            assert!(rel_err(&jb.camera, &fd_pose(|c| residual_bg(c, &p, &z, &k).unwrap(), &cam)) < 1e-5);
            assert!(rel_err(&jb.point, &fd_point(|q| residual_bg(&cam, q, &z, &k).unwrap(), &p)) < 1e-5);

            let (_, jf) = residual_fg_jacobians(&cam, &obj, &p, &z, &k).unwrap();
            assert!(rel_err(&jf.camera, &fd_pose(|c| residual_fg(c, &obj, &p, &z, &k).unwrap(), &cam)) < 1e-5);
            assert!(rel_err(&jf.object, &fd_pose(|o| residual_fg(&cam, o, &p, &z, &k).unwrap(), &obj)) < 1e-5);
            assert!(rel_err(&jf.point, &fd_point(|q| residual_fg(&cam, &obj, q, &z, &k).unwrap(), &p)) < 1e-5);
        }
    }
}
