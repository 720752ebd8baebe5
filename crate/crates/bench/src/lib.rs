//! Stage benchmarks on a 640x480 synthetic stereo stream.

use std::hint::black_box;

use criterion::{BatchSize, Criterion};
use overtake_core::config::PipelineConfig;
use overtake_core::detection::{detect_fiducial, match_stereo, FiducialConfig};
use overtake_core::pipeline::{Frame, Pipeline};
use overtake_core::ranging::{find_depth, RangingConfig};
use overtake_core::rectification::{remap, StereoMaps};
use overtake_core::synthsim::{render_stereo, RenderedPair, SyntheticScene, SyntheticTarget};
use overtake_core::{CameraIntrinsics, Distortion, StereoRig, WorldPoint};

pub const FRAME: (usize, usize) = (640, 480);

/// 60 degree field of view at 640 px, 9 cm baseline, mild distortion so
/// the remap tables are not trivial.
pub fn rig() -> StereoRig {
    let f = 320.0 * 3f64.sqrt();
    let intr = CameraIntrinsics::new(f, f, 320.0, 240.0).with_distortion(Distortion::radial(-0.05, 0.01, 0.0));
    StereoRig::ideal(intr, 9.0)
}

/// Three targets at different ranges.
pub fn scene() -> SyntheticScene {
    SyntheticScene::new(rig(), FRAME)
        .with_target(SyntheticTarget::disc(WorldPoint::new(4.5, 0.0, 150.0), 8.0, 255))
        .with_target(SyntheticTarget::disc(WorldPoint::new(-40.0, 10.0, 300.0), 12.0, 230))
        .with_target(SyntheticTarget::rect(
            WorldPoint::new(30.0, -15.0, 450.0),
            25.0,
            18.0,
            200,
        ))
}

pub fn rendered() -> RenderedPair {
    render_stereo(&scene()).expect("bench scene renders")
}

pub fn maps() -> StereoMaps {
    StereoMaps::from_rig(&rig(), FRAME).expect("bench rig rectifies")
}

pub fn benchmarks(c: &mut Criterion) {
    let pair = rendered();
    let maps = maps();
    let fid = FiducialConfig::default();

    c.bench_function("remap 640x480", |b| {
        b.iter(|| remap(black_box(&pair.left), &maps.left).unwrap())
    });

    let (left, right) = maps.rectify_pair(&pair.left, &pair.right).unwrap();
    c.bench_function("fiducial detect 640x480", |b| {
        b.iter(|| detect_fiducial(black_box(&left), &fid))
    });

    let (dl, dr) = (detect_fiducial(&left, &fid), detect_fiducial(&right, &fid));
    c.bench_function("match", |b| {
        b.iter(|| match_stereo(black_box(&dl), black_box(&dr), 10.0))
    });

    let pairs = match_stereo(&dl, &dr, 10.0);
    let ranging = RangingConfig::default();
    c.bench_function("find_depth", |b| {
        b.iter(|| find_depth(black_box(&pairs[0]), &ranging).unwrap())
    });

    let mut pipeline = Pipeline::from_config(&PipelineConfig::default(), Some(maps.clone())).unwrap();
    let mut idx = 0;
    c.bench_function("pipeline frame", |b| {
        b.iter_batched(
            || {
                idx += 1;
                Frame {
                    idx,
                    timestamp_ms: 0.0,
                    left: pair.left.clone(),
                    right: pair.right.clone(),
                }
            },
            |frame| pipeline.process(&frame).unwrap(),
            BatchSize::LargeInput,
        )
    });
}
