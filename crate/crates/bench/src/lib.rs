//! Shared fixtures for the pipeline benchmarks.

use wirecheck_core::synth::{generate, HarnessSpec};
use wirecheck_core::{train, GridDescriptor, OrientationSpec, RgbImage, Roi, TrainedProfile, TrainingConfig, TrainingSample, ViewSpec};

/// Eight wires on a 1280x720 frame.
pub fn hd_spec() -> HarnessSpec {
    HarnessSpec {
        frame_width: 1280,
        frame_height: 720,
        field: Roi::new(120, 300, 1040, 380),
        connector: Roi::new(140, 80, 1000, 180),
        wire_width: 100,
        gap: 20,
        slant: 4,
        ..HarnessSpec::eight_wire()
    }
}

pub fn frame(spec: &HarnessSpec) -> RgbImage {
    generate(spec).expect("valid spec").0
}

/// Profile trained on seeds 1 through 5 of `spec`.
pub fn profile(spec: &HarnessSpec) -> TrainedProfile {
    let mut view = ViewSpec::new("front", spec.field, spec.wire_count());
    view.orientation = Some(OrientationSpec::distinct(spec.connector));
    let config = TrainingConfig { profile_id: "bench".into(), harness_type: "bench".into(), views: vec![view] };
    let samples: Vec<_> = (1..=5u64)
        .map(|s| TrainingSample { name: format!("s{s}"), frames: vec![frame(&spec.clone().with_seed(s))] })
        .collect();
    train(&config, &samples, &GridDescriptor::default()).expect("training")
}
