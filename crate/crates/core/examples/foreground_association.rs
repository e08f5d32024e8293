//! Object-frame map points re-projected into a later keyframe and matched
//! against candidates that include nearby decoys.

use dynslam::pipeline::{PipelineConfig, System};
use dynslam::simulator::{generate, NoiseSpec, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneConfig {
        frames: 30,
        noise: NoiseSpec { outlier_rate: 0.2, ..NoiseSpec::default() },
        ..SceneConfig::default()
    };
    let seq = generate(&scene)?;
    let mut system = System::new(PipelineConfig::default(), &seq.header)?;
    for f in &seq.frames {
        let record = system.process(&f.input);
        if record.keyframe.is_some() {
            println!("{}", record.log);
        }
    }

    // check every association against the simulator's correspondences
    let map = system.map();
    let (mut total, mut correct) = (0, 0);
    for (pid, point) in map.points.iter().filter(|(_, p)| p.is_foreground()) {
        let mut truths = point.observations.keys().map(|kf| {
            let kf = &map.keyframes[kf];
            let i = kf.observations.iter().position(|o| o.point == Some(*pid)).unwrap();
            seq.frames[kf.frame].truth.observations[i].landmark
        });
        let origin = truths.next().flatten();
        for t in truths {
            total += 1;
            correct += usize::from(t.is_some() && t == origin);
        }
    }
    println!("{correct}/{total} foreground associations hit the true landmark");
    Ok(())
}
