use colnav_client::{Client, ClientError};
use colnav_core::config::Config;
use colnav_core::evaluation::run_scan;
use colnav_core::replay::simulated_model;
use colnav_core::simulator::Pilot;
use colnav_proto::api::{ConfigSource, EvalRequest, ReplayRequest, SimulateRequest};
use colnav_proto::{Move, TileCanvas, WireMessage};
use colnav_server::interactive::pilot_move;

async fn start(cfg: Config) -> Client {
    let (addr, _) = colnav_server::spawn("127.0.0.1:0", cfg).await.unwrap();
    Client::new(format!("http://{addr}"))
}

fn small() -> Config {
    Config::parse("camera.width = 80\ncamera.height = 60\ntube.length = 60\ntrajectory.step = 2\nunfold.stride = 1\n").unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_operations() {
    let client = start(small()).await;
    assert_eq!(client.health().await.unwrap()["status"], "ok");
    assert_eq!(client.config().await.unwrap()["camera.width"], 80);

    let dir = tempfile::tempdir().unwrap();
    let sim = client
        .simulate(&SimulateRequest {
            out_dir: dir.path().to_string_lossy().into_owned(),
            config: ConfigSource::default(),
        })
        .await
        .unwrap();
    assert_eq!(sim["frames"], 30);

    let out = dir.path().join("out");
    let replay = |input: String, overrides: Vec<(String, String)>| ReplayRequest {
        input_dir: input,
        out_dir: Some(out.to_string_lossy().into_owned()),
        compass: true,
        omit_timing: true,
        config: ConfigSource {
            config_text: None,
            overrides,
        },
    };
    let report = client
        .replay(&replay(dir.path().to_string_lossy().into_owned(), vec![]))
        .await
        .unwrap();
    assert_eq!(report["frames"], 30);
    assert!(report["coverage_pct"].as_f64().unwrap() > 50.0);
    assert_eq!(report["quadrants"].as_array().unwrap().len(), 4);
    assert!(out.join("report.json").exists() && out.join("compass.jsonl").exists());

    let empty = tempfile::tempdir().unwrap();
    match client.replay(&replay(empty.path().to_string_lossy().into_owned(), vec![])).await {
        Err(ClientError::Input(m)) => assert_eq!(m, "no frames"),
        other => panic!("{other:?}"),
    }
    let bad = replay(dir.path().to_string_lossy().into_owned(), vec![("unfold.strde".into(), "2".into())]);
    assert!(matches!(client.replay(&bad).await, Err(ClientError::Input(_))));

    let table = client
        .eval(&EvalRequest {
            annotations_csv: "clip,quadrant,label\na,1,2\na,2,1\na,3,0\na,4,2\n".into(),
            predictions_csv: "a,1,2\na,2,1\na,3,0\na,4,2\n".into(),
        })
        .await
        .unwrap();
    for row in table.as_array().unwrap() {
        assert_eq!(row["kappa"], 1.0);
    }
    let broken = EvalRequest {
        annotations_csv: "a,9,2\n".into(),
        predictions_csv: String::new(),
    };
    assert!(matches!(client.eval(&broken).await, Err(ClientError::Input(_))));
}

fn stream_config() -> Config {
    Config::parse("camera.width = 160\ncamera.height = 120\ntube.length = 120\nunfold.stride = 2\npilot.start_s = 10\n").unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn handshake_and_near_inverse_motion() {
    let client = start(stream_config()).await;
    let mut s = client.stream().await.unwrap();
    let (info, first) = s.hello("test").await.unwrap();
    assert_eq!((info.n_theta, info.n_ticks, info.view_width), (360, 36, 160));
    assert_eq!(first.seq, 1);
    assert_eq!(first.view.decode().unwrap().len(), 160 * 120 * 3);

    // A second client is turned away while the first is connected.
    let mut other = client.stream().await.unwrap();
    assert!(matches!(other.recv().await.unwrap(), Some(WireMessage::Error { .. })));

    let mut canvas = TileCanvas::default();
    canvas.apply(&first.tiles).unwrap();
    let mut seq = first.seq;
    // Facing the wall keeps the camera's own row inside the scanned extent.
    let mut last = s.control(Move::YawRight, Some(90.0)).await.unwrap();
    for i in 0..60 {
        let mv = if i % 2 == 0 { Move::Retract } else { Move::PitchUp };
        last = s.control(mv, Some(if i % 2 == 0 { 1.0 } else { 30.0 })).await.unwrap();
        assert!(last.seq > seq);
        seq = last.seq;
        canvas.apply(&last.tiles).unwrap();
    }
    assert_eq!((canvas.width as usize * canvas.height as usize * 3), canvas.rgb.len());
    // The newest millimetres lie past the last centerline refit: neutral compass.
    assert!(last.compass.camera_row.is_none() && last.compass.stale.is_some());

    let inside = s.control(Move::Advance, Some(15.0)).await.unwrap();
    let before = inside
        .compass
        .camera_row
        .unwrap_or_else(|| panic!("{:?} {:?}", inside.compass.stale, inside.stats));
    s.control(Move::Advance, Some(5.0)).await.unwrap();
    let back = s.control(Move::Retract, Some(5.0)).await.unwrap();
    let after = back.compass.camera_row.unwrap();
    assert!((after - before).abs() <= 1, "{before} -> {after}");
    assert_eq!(back.compass.ticks.len(), 36);

    // Leaving the tube is refused without ending the session.
    assert!(matches!(s.control(Move::Advance, Some(500.0)).await, Err(ClientError::Input(_))));
    let next = s.control(Move::YawRight, None).await.unwrap();
    assert!(next.seq > back.seq);
    s.close().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_spiral_matches_replay() {
    let cfg = stream_config();
    let client = start(cfg.clone()).await;
    let mut s = client.stream().await.unwrap();
    s.hello("spiral").await.unwrap();

    // Face the wall, then withdraw 1 mm and turn 30° per step.
    let mut script = vec![(Move::YawRight, 90.0)];
    for _ in 0..100 {
        script.push((Move::Retract, 1.0));
        script.push((Move::PitchUp, 30.0));
    }
    let mut last = None;
    for (mv, m) in &script {
        last = Some(s.control(*mv, Some(*m)).await.unwrap());
    }
    let served = last.unwrap().stats.coverage_pct;
    s.close().await.unwrap();

    let model = simulated_model(&cfg).unwrap();
    let mut pilot = Pilot::at(&model, cfg.pilot.start(model.length())).unwrap();
    let mut poses = vec![pilot.pose(&model)];
    for (mv, m) in &script {
        poses.push(pilot.apply(&model, pilot_move(*mv), *m).unwrap());
    }
    let run = tokio::task::spawn_blocking(move || {
        run_scan(&model, &cfg.camera.intrinsics().unwrap(), &poses, &cfg, &[]).unwrap()
    })
    .await
    .unwrap();
    let replayed = run.session.image().coverage().coverage_pct;
    assert!(replayed > 95.0, "{replayed}");
    assert!((served - replayed).abs() <= 0.5, "served {served} replayed {replayed}");
}
