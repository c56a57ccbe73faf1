use colnav_proto::{CompassJson, RgbImage, ServerFrame, Stats, TileCanvas, TileEncoder, WireMessage};
use proptest::prelude::*;

fn image(w: u32, h: u32, seed: u8) -> Vec<u8> {
    (0..3 * w * h).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect()
}

proptest! {
    /// A canvas fed every delta always equals the last encoded image, across
    /// edits and size changes.
    #[test]
    fn canvas_tracks_encoder(
        tile in 1u32..9,
        steps in prop::collection::vec((1u32..20, 1u32..20, prop::collection::vec((0usize..400, any::<u8>()), 0..12)), 1..8),
    ) {
        let mut enc = TileEncoder::new(tile);
        let mut canvas = TileCanvas::default();
        let mut img = Vec::new();
        let (mut w, mut h) = (0, 0);
        for (i, (nw, nh, edits)) in steps.into_iter().enumerate() {
            if i % 3 == 0 {
                w = nw;
                h = nh;
                img = image(w, h, i as u8);
            }
            for (at, v) in edits {
                let n = img.len();
                img[at % n] = v;
            }
            let delta = enc.encode(w, h, &img);
            let (gx, gy) = delta.grid();
            let listed: usize = delta.runs.iter().map(|r| (r.skip + r.count) as usize).sum();
            prop_assert!(listed <= gx * gy);
            canvas.apply(&delta).unwrap();
            prop_assert_eq!((canvas.width, canvas.height), (w, h));
            prop_assert_eq!(&canvas.rgb, &img);
        }
    }
}

#[test]
fn server_frame_survives_the_wire() {
    let mut enc = TileEncoder::new(16);
    let flat = image(40, 30, 1);
    let frame = ServerFrame {
        seq: 7,
        view: RgbImage::encode(4, 2, &image(4, 2, 9)),
        tiles: enc.encode(40, 30, &flat),
        compass: CompassJson {
            ticks: vec![false, true, false],
            camera_row: Some(12),
            band: Some(0),
            offset_rad: Some(0.25),
            stale: None,
        },
        marker: None,
        stats: Stats {
            coverage_pct: 51.5,
            scanned_length: 30.0,
            frames: 12,
            pending: 0,
            s_mm: 88.0,
            bands: vec![],
        },
    };
    let msg = WireMessage::ServerFrame(Box::new(frame.clone()));
    let text = msg.to_json();
    assert!(text.starts_with(r#"{"type":"server_frame","seq":7"#));
    let WireMessage::ServerFrame(back) = WireMessage::from_json(&text).unwrap() else {
        panic!("wrong variant");
    };
    assert_eq!(*back, frame);
    let mut canvas = TileCanvas::default();
    canvas.apply(&back.tiles).unwrap();
    assert_eq!(canvas.rgb, flat);
}
