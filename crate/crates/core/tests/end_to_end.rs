use std::path::Path;

use colnav_core::config::Config;
use colnav_core::evaluation::{compare_coverage, evaluate_hole_scenario, run_scan};
use colnav_core::io::FrameStream;
use colnav_core::metrics::CategoryLabel;
use colnav_core::replay::{run_replay, simulate, write_outputs, ReplayOptions};
use colnav_core::simulator::{scripted_trajectory, Injection, TrajectoryKind, TubeModel};

fn short_tube(length: f64) -> Config {
    let mut cfg = Config::default();
    cfg.tube.length = length;
    cfg
}

#[test]
fn spiral_clip_matches_oracle() {
    let cfg = short_tube(120.0);
    let model = TubeModel::new(cfg.tube.clone()).unwrap();
    let poses = scripted_trajectory(TrajectoryKind::Spiral, &model, &cfg.trajectory).unwrap();
    let run = run_scan(&model, &cfg.camera.intrinsics().unwrap(), &poses, &cfg, &[]).unwrap();
    let c = compare_coverage(&run.session, &model, &run.oracle).unwrap();
    assert!(c.engine_pct >= 99.0, "{c:?}");
    assert!((c.engine_pct - c.oracle_pct).abs() <= 2.0, "{c:?}");
}

#[test]
fn hole_scenario_is_detected_and_pointed_at() {
    let o = evaluate_hole_scenario(3, 8).unwrap();
    let c = &o.coverage;
    assert_eq!(c.engine_categories, c.oracle_categories, "{c:?}");
    assert!(c.engine_categories.iter().any(|x| *x != CategoryLabel::MostlyCovered), "{c:?}");
    assert!(o.ticks.precision() >= 0.9 && o.ticks.recall() >= 0.9, "{:?}", o.ticks);
    assert!(o.ticks.tp > 0);
    assert_eq!(o.roll_consistent, o.roll_checked);
}

#[test]
fn disturbed_clip_settles_to_rebuild() {
    let cfg = short_tube(160.0);
    let model = TubeModel::new(cfg.tube.clone()).unwrap();
    let poses = scripted_trajectory(TrajectoryKind::Pullback, &model, &cfg.trajectory).unwrap();
    let injections = [
        Injection::TrackingLoss {
            at_frame: 50,
            new_segment: 1,
            rotation_deg: 3.0,
            translation: [4.0, -2.0, 1.0],
        },
        Injection::LoopClosure { at_frame: 100 },
        Injection::PoseNoise {
            at_frame: 130,
            sigma_mm: 0.5,
            sigma_deg: 0.5,
            seed: 3,
        },
    ];
    let run = run_scan(&model, &cfg.camera.intrinsics().unwrap(), &poses, &cfg, &injections).unwrap();
    assert_eq!(run.session.segment_ids(), vec![0]);
    let fresh = run.session.rebuilt().unwrap();
    let (dc, dw) = run.session.image().max_difference(fresh.image());
    assert!(dc <= 1e-6 && dw <= 1e-6, "{dc} {dw}");
}

fn small_stream(dir: &Path) -> Config {
    let cfg = Config::parse(
        "camera.width = 80\ncamera.height = 60\ntube.length = 80\ntrajectory.step = 2\n\
         scan.injections = [{\"kind\":\"pose_noise\",\"at_frame\":20,\"sigma_mm\":0.3,\"sigma_deg\":0.3,\"seed\":5}]\n",
    )
    .unwrap();
    simulate(&cfg, dir).unwrap();
    cfg
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_and_replay_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_stream(a.path());
    small_stream(b.path());
    assert_eq!(read_all(a.path()), read_all(b.path()));

    let stream = FrameStream::open(a.path()).unwrap();
    let opts = ReplayOptions {
        compass: true,
        omit_timing: true,
    };
    let (o1, o2) = (a.path().join("r1"), a.path().join("r2"));
    write_outputs(&o1, &run_replay(&stream, &cfg, opts).unwrap()).unwrap();
    write_outputs(&o2, &run_replay(&stream, &cfg, opts).unwrap()).unwrap();
    assert_eq!(read_all(&o1), read_all(&o2));
    let report = std::fs::read_to_string(o1.join("report.json")).unwrap();
    assert!(report.contains("\"coverage_pct\"") && report.contains("\"category\""));
    assert!(!report.contains("\"fps\""));
}
