//! Self-describing text dump of a [`BaProblem`], used for regression fixtures.
//!
//! ```text
//! ba_problem 1
//! intrinsics <fx> <fy> <cx> <cy>
//! camera <keyframe> <fixed> <r00 r01 r02 r10 r11 r12 r20 r21 r22> <tx ty tz>
//! object_pose <object> <keyframe> <fixed> <r00 .. r22> <tx ty tz>
//! point <id> <bg | fg:<object>> <fixed> <x y z>
//! observation <camera#> <object_pose# | -> <point#> <u v>
//! ```
//!
//! `#` columns are zero-based ordinals among records of that kind. Poses are
//! stored as full matrices so the round trip is exact.

use std::fmt::Write;

use nalgebra::{Matrix3, Vector2, Vector3};

use super::ba::{BaCamera, BaObjectPose, BaObservation, BaPoint, BaProblem, PointKind};
use crate::geometry::{Intrinsics, Pose};
use crate::textio::{records, Fields, Float, ParseError};

fn write_pose(out: &mut String, p: &Pose) {
    let r = p.rotation();
    for i in 0..3 {
        for j in 0..3 {
            let _ = write!(out, " {}", Float(r[(i, j)]));
        }
    }
    for v in p.translation().iter() {
        let _ = write!(out, " {}", Float(*v));
    }
}

fn read_pose(f: &mut Fields<'_>) -> Result<Pose, ParseError> {
    let r: [f64; 9] = f.floats("rotation")?;
    let t: [f64; 3] = f.floats("translation")?;
    Ok(Pose::from_parts_unchecked(Matrix3::from_row_slice(&r), Vector3::from(t)))
}

pub fn write_problem(problem: &BaProblem) -> String {
    let mut out = String::from("ba_problem 1\n");
    let k = &problem.intrinsics;
    let _ = writeln!(out, "intrinsics {} {} {} {}", Float(k.fx()), Float(k.fy()), Float(k.cx()), Float(k.cy()));
    for c in &problem.cameras {
        let _ = write!(out, "camera {} {}", c.keyframe, u8::from(c.fixed));
        write_pose(&mut out, &c.pose);
        out.push('\n');
    }
    for o in &problem.object_poses {
        let _ = write!(out, "object_pose {} {} {}", o.object, o.keyframe, u8::from(o.fixed));
        write_pose(&mut out, &o.pose);
        out.push('\n');
    }
    for p in &problem.points {
        let kind = match p.kind {
            PointKind::Background => "bg".to_string(),
            PointKind::Foreground { object } => format!("fg:{object}"),
        };
        let v = p.position;
        let _ = writeln!(out, "point {} {kind} {} {} {} {}", p.id, u8::from(p.fixed), Float(v.x), Float(v.y), Float(v.z));
    }
    for o in &problem.observations {
        let op = o.object_pose.map_or("-".to_string(), |i| i.to_string());
        let _ = writeln!(out, "observation {} {op} {} {} {}", o.camera, o.point, Float(o.pixel.x), Float(o.pixel.y));
    }
    out
}

pub fn read_problem(text: &str) -> Result<BaProblem, ParseError> {
    let mut lines = records(text);
    let (line, header) = lines.next().ok_or_else(|| ParseError::new(1, "header", "empty input"))?;
    if header.split_whitespace().collect::<Vec<_>>() != ["ba_problem", "1"] {
        return Err(ParseError::new(line, "header", "expected `ba_problem 1`"));
    }
    let mut problem: Option<BaProblem> = None;
    for (line, text) in lines {
        let mut f = Fields::new(line, text);
        let tag = f.next_str("record")?;
        if tag == "intrinsics" {
            let [fx, fy, cx, cy] = f.floats("intrinsics")?;
            let k = Intrinsics::new(fx, fy, cx, cy).map_err(|e| ParseError::new(line, "intrinsics", e.to_string()))?;
            f.finish()?;
            problem = Some(BaProblem::new(k));
            continue;
        }
        let p = problem.as_mut().ok_or_else(|| ParseError::new(line, "record", "intrinsics must come first"))?;
        match tag {
            "camera" => {
                let keyframe = f.parse("keyframe")?;
                let fixed = f.flag("fixed")?;
                let pose = read_pose(&mut f)?;
                p.cameras.push(BaCamera { keyframe, pose, fixed });
            }
            "object_pose" => {
                let object = f.parse("object")?;
                let keyframe = f.parse("keyframe")?;
                let fixed = f.flag("fixed")?;
                let pose = read_pose(&mut f)?;
                p.object_poses.push(BaObjectPose { object, keyframe, pose, fixed });
            }
            "point" => {
                let id = f.parse("id")?;
                let kind = match f.next_str("kind")? {
                    "bg" => PointKind::Background,
                    k => match k.strip_prefix("fg:").and_then(|o| o.parse().ok()) {
                        Some(object) => PointKind::Foreground { object },
                        None => return Err(ParseError::new(line, "kind", format!("expected bg or fg:<id>, got {k:?}"))),
                    },
                };
                let fixed = f.flag("fixed")?;
                let position = Vector3::from(f.floats::<3>("position")?);
                p.points.push(BaPoint { id, kind, position, fixed });
            }
            "observation" => {
                let camera = f.parse("camera")?;
                let object_pose = match f.next_str("object_pose")? {
                    "-" => None,
                    s => Some(s.parse().map_err(|_| ParseError::new(line, "object_pose", format!("bad index {s:?}")))?),
                };
                let point = f.parse("point")?;
                let pixel = Vector2::from(f.floats::<2>("pixel")?);
                p.observations.push(BaObservation { camera, object_pose, point, pixel });
            }
            other => return Err(ParseError::new(line, "record", format!("unknown record {other:?}"))),
        }
        f.finish()?;
    }
    let problem = problem.ok_or_else(|| ParseError::new(line, "intrinsics", "missing intrinsics record"))?;
    problem.validate().map_err(|e| ParseError::new(0, "problem", e.to_string()))?;
    Ok(problem)
}
