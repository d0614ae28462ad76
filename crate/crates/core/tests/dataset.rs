use std::path::Path;

use sss_core::dataset::synth::{generate, ground_truth, SynthConfig};
use sss_core::dataset::{Dataset, FrameEntry, LightStage, Manifest, Split};
use sss_core::fixtures;

fn small() -> SynthConfig {
    SynthConfig {
        gaussians: 40,
        frames: 12,
        train_frames: 9,
        resolution: 32,
        ..Default::default()
    }
}

#[test]
fn manifest_round_trips_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    generate(&small(), dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let m = Manifest::read(&path).unwrap();
    assert_eq!(m.to_json(), text);
    let again = Manifest::from_json(&m.to_json()).unwrap();
    assert_eq!(again, m);
    for (a, b) in m.frames.iter().zip(&again.frames) {
        let bits = |f: &FrameEntry| f.transform.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    let ds = Dataset::load(&path).unwrap();
    assert_eq!(ds.split(Split::Train).count(), 9);
    assert_eq!(ds.split(Split::Test).count(), 3);
}

#[test]
fn split_is_disjoint_and_covering() {
    let gt = ground_truth(&small()).unwrap();
    let train = gt.frames.iter().filter(|f| f.2 == Split::Train).count();
    let test = gt.frames.iter().filter(|f| f.2 == Split::Test).count();
    assert_eq!((train, test), (9, 3));
    assert_eq!(train + test, gt.frames.len());
    assert!(gt.frames.iter().all(|f| f.1 < gt.stage.len()));
}

#[test]
fn out_of_range_light_index_is_rejected() {
    let cam = fixtures::camera(0.0, 20.0, 16, 16);
    let m = Manifest {
        lights: LightStage::standard(3.0).unwrap().positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
        frames: vec![FrameEntry::from_camera("a.exr".into(), "a.png".into(), 112, &cam, Split::Train)],
    };
    let err = m.validate(Path::new(".")).unwrap_err().to_string();
    assert!(err.contains("light index 112"), "{err}");
}

#[test]
fn missing_frame_files_are_named() {
    let cam = fixtures::camera(0.0, 20.0, 16, 16);
    let m = Manifest {
        lights: vec![[0.0, 0.0, 3.0]],
        frames: vec![FrameEntry::from_camera("nope.exr".into(), "nope.png".into(), 0, &cam, Split::Test)],
    };
    let err = m.validate(Path::new("/nonexistent")).unwrap_err().to_string();
    assert!(err.contains("nope.exr"), "{err}");
}

#[test]
fn stage_is_invariant_under_one_azimuth_step() {
    let s = LightStage::standard(3.0).unwrap();
    let step = (360.0f64 / s.per_ring as f64).to_radians();
    let (sin, cos) = step.sin_cos();
    for ring in 0..s.rings {
        for j in 0..s.per_ring {
            let p = s.positions[ring * s.per_ring + j];
            let q = s.positions[ring * s.per_ring + (j + 1) % s.per_ring];
            let r = [p.x * cos - p.y * sin, p.x * sin + p.y * cos, p.z];
            assert!((r[0] - q.x).abs() < 1e-12 && (r[1] - q.y).abs() < 1e-12 && r[2] == q.z);
        }
    }
}
