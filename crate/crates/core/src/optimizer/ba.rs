//! Joint bundle adjustment over camera poses, per-keyframe object poses,
//! world-frame background points and object-frame foreground points.
//!
//! Levenberg-Marquardt on dense normal equations with the point blocks
//! eliminated by a Schur complement. Every summation runs in a fixed order,
//! so a given problem always produces the same report.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix2x6, Matrix3, Matrix6, Matrix6x3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::residuals::{residual_bg_jacobians, residual_fg_jacobians, BehindCamera};
use super::robust::{rho, RobustKernel};
use super::OptimizerError;
use crate::geometry::{Intrinsics, Pose, Twist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariableClass {
    Camera,
    ObjectPose,
    Point,
}

impl std::fmt::Display for VariableClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VariableClass::Camera => "camera pose",
            VariableClass::ObjectPose => "object pose",
            VariableClass::Point => "map point",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaCamera {
    pub keyframe: u64,
    /// World-to-camera pose.
    pub pose: Pose,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaObjectPose {
    pub object: u64,
    pub keyframe: u64,
    /// Object-to-world pose at that keyframe.
    pub pose: Pose,
    pub fixed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Background,
    Foreground { object: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaPoint {
    pub id: u64,
    pub kind: PointKind,
    /// World frame for background points, object frame for foreground ones.
    pub position: Vector3<f64>,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaObservation {
    pub camera: usize,
    /// Object pose index; present exactly for foreground points.
    pub object_pose: Option<usize>,
    pub point: usize,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaProblem {
    pub intrinsics: Intrinsics,
    pub cameras: Vec<BaCamera>,
    pub object_poses: Vec<BaObjectPose>,
    pub points: Vec<BaPoint>,
    pub observations: Vec<BaObservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmParams {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_iterations: usize,
    /// Relative cost decrease below which an accepted step ends the solve.
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Per-residual cost below which the problem counts as solved exactly.
    pub absolute_cost_tolerance: f64,
    pub max_damping: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 10.0,
            max_iterations: 20,
            cost_tolerance: 1e-8,
            step_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            absolute_cost_tolerance: 1e-20,
            max_damping: 1e16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    CostTolerance,
    StepTolerance,
    AbsoluteCost,
    MaxIterations,
    /// Damping grew past its limit without finding a decreasing step.
    Diverged,
    /// Nothing to optimise.
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Outer iterations, each one linearisation plus as many damping
    /// increases as it takes to find a decreasing step.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub termination: Termination,
    /// Robust cost at the start and after every accepted step.
    pub cost_trace: Vec<f64>,
    pub active_residuals: usize,
    /// Residuals dropped because their point was behind the camera at the start.
    pub excluded_residuals: usize,
}

impl SolveReport {
    pub fn is_monotone(&self) -> bool {
        self.cost_trace.windows(2).all(|w| w[1] <= w[0])
    }
}

impl BaProblem {
    pub fn new(intrinsics: Intrinsics) -> Self {
        Self { intrinsics, cameras: Vec::new(), object_poses: Vec::new(), points: Vec::new(), observations: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |msg: String| Err(OptimizerError::InvalidProblem(msg));
        for (i, o) in self.observations.iter().enumerate() {
            if o.camera >= self.cameras.len() {
                return bad(format!("observation {i} references camera {}", o.camera));
            }
            let Some(point) = self.points.get(o.point) else {
                return bad(format!("observation {i} references point {}", o.point));
            };
            match (point.kind, o.object_pose) {
                (PointKind::Background, None) => {}
                (PointKind::Foreground { object }, Some(op)) => match self.object_poses.get(op) {
                    Some(pose) if pose.object == object => {}
                    Some(pose) => {
                        return bad(format!(
                            "observation {i}: point of object {object} seen through pose of object {}",
                            pose.object
                        ))
                    }
                    None => return bad(format!("observation {i} references object pose {op}")),
                },
                (PointKind::Background, Some(_)) => {
                    return bad(format!("observation {i}: background point with an object pose"))
                }
                (PointKind::Foreground { .. }, None) => {
                    return bad(format!("observation {i}: foreground point without an object pose"))
                }
            }
        }
        Ok(())
    }

    pub fn has_gauge_anchor(&self) -> bool {
        self.cameras.iter().any(|c| c.fixed)
    }

    /// Copy without the foreground term: no object poses, foreground points
    /// or their observations.
    pub fn background_subset(&self) -> BaProblem {
        let mut remap = vec![None; self.points.len()];
        let mut points = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            if p.kind == PointKind::Background {
                remap[i] = Some(points.len());
                points.push(p.clone());
            }
        }
        let observations = self
            .observations
            .iter()
            .filter_map(|o| remap[o.point].map(|point| BaObservation { point, object_pose: None, ..o.clone() }))
            .collect();
        BaProblem {
            intrinsics: self.intrinsics,
            cameras: self.cameras.clone(),
            object_poses: Vec::new(),
            points,
            observations,
        }
    }

    /// Squared reprojection error of every observation at the current state
    /// (`None` when behind the camera).
    pub fn squared_errors(&self) -> Vec<Option<f64>> {
        self.observations.iter().map(|o| self.residual(o).ok().map(|r| r.norm_squared())).collect()
    }

    pub fn residual(&self, o: &BaObservation) -> Result<Vector2<f64>, BehindCamera> {
        let cam = &self.cameras[o.camera].pose;
        let p = &self.points[o.point].position;
        let pc = match o.object_pose {
            Some(op) => cam.transform_point(&self.object_poses[op].pose.transform_point(p)),
            None => cam.transform_point(p),
        };
        if !(pc.z > 0.0) {
            return Err(BehindCamera { depth: pc.z });
        }
        Ok(o.pixel - self.intrinsics.project_unchecked(&pc))
    }

    /// Root-mean-square reprojection error per image coordinate (pixels), over
    /// observations in front of their cameras. Comparable to the pixel noise sigma.
    pub fn rms_error(&self) -> f64 {
        let e: Vec<f64> = self.squared_errors().into_iter().flatten().collect();
        if e.is_empty() {
            return 0.0;
        }
        (e.iter().sum::<f64>() / (2 * e.len()) as f64).sqrt()
    }
}

/// Options shared by the joint and pose-only solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub include_foreground: bool,
    pub require_gauge: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { include_foreground: true, require_gauge: true }
    }
}

/// Object local bundle adjustment: minimises the robust background and
/// foreground reprojection costs jointly, in place. On error the problem
/// keeps its last accepted state.
pub fn object_local_ba(
    problem: &mut BaProblem,
    kernel: Option<&RobustKernel>,
    lm: &LmParams,
) -> Result<SolveReport, OptimizerError> {
    solve(problem, kernel, lm, SolveOptions::default())
}

struct Layout {
    cam_block: Vec<Option<usize>>,
    obj_block: Vec<Option<usize>>,
    point_slot: Vec<Option<usize>>,
    blocks: Vec<(VariableClass, usize)>,
    points: Vec<usize>,
}

impl Layout {
    fn new(problem: &BaProblem, include_foreground: bool) -> Self {
        let mut blocks = Vec::new();
        let cam_block = problem
            .cameras
            .iter()
            .enumerate()
            .map(|(i, c)| {
                (!c.fixed).then(|| {
                    blocks.push((VariableClass::Camera, i));
                    blocks.len() - 1
                })
            })
            .collect();
        let obj_block = problem
            .object_poses
            .iter()
            .enumerate()
            .map(|(i, o)| {
                (!o.fixed && include_foreground).then(|| {
                    blocks.push((VariableClass::ObjectPose, i));
                    blocks.len() - 1
                })
            })
            .collect();
        let mut points = Vec::new();
        let point_slot = problem
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let skip = !include_foreground && p.kind != PointKind::Background;
                (!p.fixed && !skip).then(|| {
                    points.push(i);
                    points.len() - 1
                })
            })
            .collect();
        Self { cam_block, obj_block, point_slot, blocks, points }
    }
}

struct Linearization {
    a: DMatrix<f64>,
    g_a: DVector<f64>,
    c: Vec<Matrix3<f64>>,
    g_p: Vec<Vector3<f64>>,
    /// Per point slot: `(pose block, W J_pose^T J_point)`, sorted by block.
    b: Vec<Vec<(usize, Matrix6x3<f64>)>>,
    grad_max: f64,
}

fn add_block(b: &mut Vec<(usize, Matrix6x3<f64>)>, block: usize, m: Matrix6x3<f64>) {
    match b.binary_search_by_key(&block, |e| e.0) {
        Ok(i) => b[i].1 += m,
        Err(i) => b.insert(i, (block, m)),
    }
}

struct ActiveResidual {
    obs: usize,
}

fn evaluate_cost(problem: &BaProblem, active: &[ActiveResidual], kernel: Option<&RobustKernel>) -> f64 {
    let mut cost = 0.0;
    for a in active {
        match problem.residual(&problem.observations[a.obs]) {
            Ok(r) => cost += rho(kernel, r.norm_squared()).0,
            Err(_) => return f64::INFINITY,
        }
    }
    cost
}

fn linearize(
    problem: &BaProblem,
    layout: &Layout,
    active: &[ActiveResidual],
    kernel: Option<&RobustKernel>,
) -> Linearization {
    let nb = layout.blocks.len();
    let np = layout.points.len();
    let mut a = DMatrix::zeros(6 * nb, 6 * nb);
    let mut g_a = DVector::zeros(6 * nb);
    let mut c = vec![Matrix3::zeros(); np];
    let mut g_p = vec![Vector3::zeros(); np];
    let mut b: Vec<Vec<(usize, Matrix6x3<f64>)>> = vec![Vec::new(); np];

    for act in active {
        let o = &problem.observations[act.obs];
        let cam = &problem.cameras[o.camera].pose;
        let point = &problem.points[o.point].position;
        let k = &problem.intrinsics;
        let (r, jc, jo, jp): (Vector2<f64>, Matrix2x6<f64>, Option<Matrix2x6<f64>>, Matrix2x3<f64>) =
            match o.object_pose {
                None => {
                    let (r, j) = residual_bg_jacobians(cam, point, &o.pixel, k).expect("active residual in front");
                    (r, j.camera, None, j.point)
                }
                Some(op) => {
                    let obj = &problem.object_poses[op].pose;
                    let (r, j) = residual_fg_jacobians(cam, obj, point, &o.pixel, k).expect("active residual in front");
                    (r, j.camera, Some(j.object), j.point)
                }
            };
        let w = rho(kernel, r.norm_squared()).1;

        let mut pose_terms: [(usize, Matrix2x6<f64>); 2] = [(usize::MAX, jc), (usize::MAX, jc)];
        let mut n_terms = 0;
        if let Some(bi) = layout.cam_block[o.camera] {
            pose_terms[n_terms] = (bi, jc);
            n_terms += 1;
        }
        if let (Some(op), Some(jo)) = (o.object_pose, jo) {
            if let Some(bi) = layout.obj_block[op] {
                pose_terms[n_terms] = (bi, jo);
                n_terms += 1;
            }
        }
        let terms = &pose_terms[..n_terms];
        for &(bi, ji) in terms {
            let gi: Vector6<f64> = -(ji.transpose() * r) * w;
            let mut seg = g_a.fixed_rows_mut::<6>(6 * bi);
            seg += gi;
            for &(bj, jj) in terms {
                let h: Matrix6<f64> = ji.transpose() * jj * w;
                let mut blk = a.fixed_view_mut::<6, 6>(6 * bi, 6 * bj);
                blk += h;
            }
        }
        if let Some(slot) = layout.point_slot[o.point] {
            c[slot] += jp.transpose() * jp * w;
            g_p[slot] -= jp.transpose() * r * w;
            for &(bi, ji) in terms {
                add_block(&mut b[slot], bi, ji.transpose() * jp * w);
            }
        }
    }

    let grad_max = g_a.iter().chain(g_p.iter().flat_map(|g| g.iter())).fold(0.0f64, |m, v| m.max(v.abs()));
    Linearization { a, g_a, c, g_p, b, grad_max }
}

fn min_diag(d: f64) -> f64 {
    d.clamp(1e-6, 1e32)
}

/// Solves the damped system; `None` when it is not positive definite.
fn damped_step(lin: &Linearization, lambda: f64) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
    let n = lin.a.nrows();
    let mut s = lin.a.clone();
    for i in 0..n {
        s[(i, i)] += lambda * min_diag(lin.a[(i, i)]);
    }
    let mut rhs = lin.g_a.clone();

    let mut c_inv = Vec::with_capacity(lin.c.len());
    for (slot, c) in lin.c.iter().enumerate() {
        let mut cd = *c;
        for i in 0..3 {
            cd[(i, i)] += lambda * min_diag(c[(i, i)]);
        }
        let ci = cd.try_inverse()?;
        let blocks = &lin.b[slot];
        for &(bi, ref bm) in blocks {
            let t: Matrix6x3<f64> = bm * ci;
            let mut seg = rhs.fixed_rows_mut::<6>(6 * bi);
            seg -= t * lin.g_p[slot];
            for &(bj, ref bn) in blocks {
                let mut blk = s.fixed_view_mut::<6, 6>(6 * bi, 6 * bj);
                blk -= t * bn.transpose();
            }
        }
        c_inv.push(ci);
    }

    let delta_a = if n > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };
    let delta_p = lin
        .c
        .iter()
        .enumerate()
        .map(|(slot, _)| {
            let mut r = lin.g_p[slot];
            for &(bi, ref bm) in &lin.b[slot] {
                r -= bm.transpose() * delta_a.fixed_rows::<6>(6 * bi);
            }
            c_inv[slot] * r
        })
        .collect();
    Some((delta_a, delta_p))
}

fn apply_step(problem: &BaProblem, layout: &Layout, da: &DVector<f64>, dp: &[Vector3<f64>]) -> BaProblem {
    let mut next = problem.clone();
    for (bi, &(class, idx)) in layout.blocks.iter().enumerate() {
        let xi = Twist::from_vector(&Vector6::from_iterator(da.fixed_rows::<6>(6 * bi).iter().copied()));
        match class {
            VariableClass::Camera => next.cameras[idx].pose = problem.cameras[idx].pose.retract(&xi),
            VariableClass::ObjectPose => next.object_poses[idx].pose = problem.object_poses[idx].pose.retract(&xi),
            VariableClass::Point => unreachable!(),
        }
    }
    for (slot, &idx) in layout.points.iter().enumerate() {
        next.points[idx].position += dp[slot];
    }
    next
}

fn state_norm(problem: &BaProblem, layout: &Layout) -> f64 {
    let mut s = 0.0;
    for &(class, idx) in &layout.blocks {
        let t = match class {
            VariableClass::Camera => problem.cameras[idx].pose.translation(),
            _ => problem.object_poses[idx].pose.translation(),
        };
        s += t.norm_squared();
    }
    for &idx in &layout.points {
        s += problem.points[idx].position.norm_squared();
    }
    s.sqrt()
}

fn check_rank(lin: &Linearization, layout: &Layout) -> Result<(), OptimizerError> {
    fn deficient(min: f64, max: f64) -> bool {
        !(max > 0.0) || min <= 1e-12 * max
    }
    for (bi, &(class, index)) in layout.blocks.iter().enumerate() {
        let m: Matrix6<f64> = lin.a.fixed_view::<6, 6>(6 * bi, 6 * bi).into_owned();
        let eig = m.symmetric_eigenvalues();
        if deficient(eig.min(), eig.max()) {
            return Err(OptimizerError::RankDeficient { class, index });
        }
    }
    for (slot, &index) in layout.points.iter().enumerate() {
        let eig = lin.c[slot].symmetric_eigenvalues();
        if deficient(eig.min(), eig.max()) {
            return Err(OptimizerError::RankDeficient { class: VariableClass::Point, index });
        }
    }
    Ok(())
}

pub(crate) fn solve(
    problem: &mut BaProblem,
    kernel: Option<&RobustKernel>,
    lm: &LmParams,
    options: SolveOptions,
) -> Result<SolveReport, OptimizerError> {
    problem.validate()?;
    if options.require_gauge && !problem.has_gauge_anchor() {
        return Err(OptimizerError::NoGaugeAnchor);
    }

    let mut active = Vec::new();
    let mut excluded = 0;
    for (i, o) in problem.observations.iter().enumerate() {
        if o.object_pose.is_some() && !options.include_foreground {
            continue;
        }
        if problem.residual(o).is_ok() {
            active.push(ActiveResidual { obs: i });
        } else {
            excluded += 1;
        }
    }

    let layout = Layout::new(problem, options.include_foreground);
    let initial_cost = evaluate_cost(problem, &active, kernel);
    let mut report = SolveReport {
        iterations: 0,
        initial_cost,
        final_cost: initial_cost,
        converged: false,
        termination: Termination::MaxIterations,
        cost_trace: vec![initial_cost],
        active_residuals: active.len(),
        excluded_residuals: excluded,
    };
    if active.is_empty() || (layout.blocks.is_empty() && layout.points.is_empty()) {
        report.converged = true;
        report.termination = Termination::Empty;
        return Ok(report);
    }

    let abs_tol = lm.absolute_cost_tolerance * active.len() as f64;
    let mut cost = initial_cost;
    let mut lambda = lm.initial_damping;
    let mut lin = linearize(problem, &layout, &active, kernel);
    check_rank(&lin, &layout)?;

    'outer: loop {
        if cost <= abs_tol {
            report.termination = Termination::AbsoluteCost;
            report.converged = true;
            break;
        }
        if lin.grad_max <= lm.gradient_tolerance {
            report.termination = Termination::GradientTolerance;
            report.converged = true;
            break;
        }
        if report.iterations >= lm.max_iterations {
            report.termination = Termination::MaxIterations;
            break;
        }
        report.iterations += 1;
        // Raise the damping until a step decreases the cost.
        loop {
            let Some((da, dp)) = damped_step(&lin, lambda) else {
                lambda *= lm.damping_up;
                if lambda > lm.max_damping {
                    report.termination = Termination::Diverged;
                    break 'outer;
                }
                continue;
            };
            let step_norm = (da.norm_squared() + dp.iter().map(|d| d.norm_squared()).sum::<f64>()).sqrt();
            if step_norm <= lm.step_tolerance * (state_norm(problem, &layout) + lm.step_tolerance) {
                report.termination = Termination::StepTolerance;
                report.converged = true;
                break 'outer;
            }
            let candidate = apply_step(problem, &layout, &da, &dp);
            let new_cost = evaluate_cost(&candidate, &active, kernel);
            if new_cost < cost {
                *problem = candidate;
                let decrease = (cost - new_cost) / cost;
                cost = new_cost;
                report.cost_trace.push(cost);
                lambda = (lambda / lm.damping_down).max(1e-15);
                if decrease < lm.cost_tolerance {
                    report.termination = Termination::CostTolerance;
                    report.converged = true;
                    break 'outer;
                }
                lin = linearize(problem, &layout, &active, kernel);
                continue 'outer;
            }
            lambda *= lm.damping_up;
            if lambda > lm.max_damping {
                report.termination = Termination::Diverged;
                break 'outer;
            }
        }
    }
    report.final_cost = cost;
    Ok(report)
}

/// Builds a map from `(object, keyframe)` to object pose index.
pub fn object_pose_index(problem: &BaProblem) -> BTreeMap<(u64, u64), usize> {
    problem.object_poses.iter().enumerate().map(|(i, o)| ((o.object, o.keyframe), i)).collect()
}
