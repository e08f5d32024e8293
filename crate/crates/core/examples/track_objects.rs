//! 2D multi-object tracking on simulated detections.

use dynslam::mot::{Box2D, MotParams, Tracker};
use dynslam::simulator::{generate, NoiseSpec, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneConfig {
        frames: 30,
        noise: NoiseSpec { box_sigma: 2.0, detection_fn_rate: 0.1, detection_fp_rate: 0.1, ..NoiseSpec::default() },
        ..SceneConfig::default()
    };
    let seq = generate(&scene)?;
    let mut tracker = Tracker::new(MotParams::default());
    for f in &seq.frames {
        let boxes: Vec<Box2D> =
            f.input.detections.iter().filter(|d| d.confidence >= 0.9).map(|d| d.box2d).collect();
        let step = tracker.step(&boxes);
        let ids: Vec<String> = step
            .detection_ids(boxes.len())
            .iter()
            .map(|id| id.map_or("-".to_string(), |i| i.to_string()))
            .collect();
        println!(
            "frame {:3}: {} detections -> ids [{}], coasting {:?}, erased {:?}",
            f.input.index,
            boxes.len(),
            ids.join(" "),
            step.unmatched_tracks,
            step.erased
        );
    }
    Ok(())
}
