use zoomseg_api::{EditCase, EditPoint, PointLabel, PointPrompt, PromptSetJson};
use zoomseg_client::Client;
use zoomseg_core::nifti::{decode_volume, encode_volume};
use zoomseg_core::phantom::{Ellipsoid, Phantom};
use zoomseg_core::pipeline::EngineConfig;
use zoomseg_service::{spawn_local, ServiceConfig};

fn config(max_sessions: usize) -> ServiceConfig {
    ServiceConfig {
        engine: EngineConfig {
            model_shape: [32, 32, 32],
            fallback_extent: [16, 16, 16],
            ..EngineConfig::default()
        },
        max_volumes: 4,
        max_sessions,
        ..ServiceConfig::default()
    }
}

async fn start(max_sessions: usize) -> Client {
    let (addr, _h) = spawn_local(config(max_sessions)).await.unwrap();
    Client::new(format!("http://{addr}"))
}

fn phantom() -> Phantom {
    Phantom::single(
        [64, 64, 64],
        Ellipsoid::new([30.0, 34.0, 32.0], [10.0, 8.0, 9.0]),
    )
}

fn point(p: [usize; 3]) -> PromptSetJson {
    PromptSetJson {
        points: vec![PointPrompt::positive(p)],
        bbox: None,
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_validates_and_never_dedups() {
    let c = start(4).await;
    let bytes = encode_volume(&phantom().volume, true);
    let a = c.upload_volume(bytes.clone()).await.unwrap();
    assert_eq!(a.shape, [64, 64, 64]);
    let b = c.upload_volume(bytes.clone()).await.unwrap();
    assert_ne!(a.volume_id, b.volume_id);

    let plain = encode_volume(&phantom().volume, false);
    let err = c
        .upload_volume(plain[..plain.len() / 2].to_vec())
        .await
        .unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(400));
    let err = c.upload_volume(b"not a volume".to_vec()).await.unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(400));
}

#[tokio::test(flavor = "multi_thread")]
async fn session_lifecycle() {
    let c = start(4).await;
    let ph = phantom();
    let vol = c
        .upload_volume(encode_volume(&ph.volume, true))
        .await
        .unwrap();

    let s = c
        .create_session(vol.volume_id, point([30, 34, 32]))
        .await
        .unwrap();
    assert_eq!((s.dice_counters.encode, s.dice_counters.decode), (2, 2));
    assert!((0..3).all(|a| s.roi.max[a] > s.roi.min[a]));
    assert!(s.mask_stats.voxels > 0);

    // inside the ROI, off the mask: positive, no encode
    let e = c
        .edit(
            s.session_id,
            EditPoint {
                xyz: [s.roi.min[0], s.roi.min[1], s.roi.min[2]],
                label: None,
            },
        )
        .await
        .unwrap();
    assert_eq!((e.encode_delta, e.case), (0, EditCase::CacheHit));
    assert_eq!(e.point.label, PointLabel::Positive);
    assert_eq!(e.prompt_count, 2);

    // on the mask: negative
    let e = c
        .edit(
            s.session_id,
            EditPoint {
                xyz: [30, 34, 32],
                label: None,
            },
        )
        .await
        .unwrap();
    assert_eq!(e.point.label, PointLabel::Negative);

    // outside the ROI: one encode, ROI grows to cover it
    let e = c
        .edit(
            s.session_id,
            EditPoint {
                xyz: [2, 2, 2],
                label: Some(PointLabel::Positive),
            },
        )
        .await
        .unwrap();
    assert_eq!((e.encode_delta, e.case), (1, EditCase::Expanded));
    assert_eq!(e.roi.min, [0, 0, 0]);

    let err = c
        .edit(
            s.session_id,
            EditPoint {
                xyz: [64, 0, 0],
                label: None,
            },
        )
        .await
        .unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(422));

    let sum = c.session(s.session_id).await.unwrap();
    assert_eq!(sum.edits.len(), 3);
    assert_eq!(sum.prompt_count, 4);
    assert_eq!(sum.dice_counters.encode, 3);
    assert_eq!(sum.dice_counters.decode, 5);
    assert_eq!(sum.roi, e.roi);

    // the NIfTI download agrees with the RLE slices
    let mask = decode_volume(&c.mask_nifti(s.session_id).await.unwrap()).unwrap();
    for z in [0, 20, 32, 63] {
        let rle = c.mask_slice(s.session_id, z).await.unwrap();
        assert_eq!(rle.shape, [64, 64]);
        let px = rle.decode().unwrap();
        let expected: Vec<u8> = mask
            .axial_slice(z)
            .iter()
            .map(|&v| (v != 0.0) as u8)
            .collect();
        assert_eq!(px, expected);
    }
    assert_eq!(
        mask.data().iter().filter(|&&v| v != 0.0).count(),
        sum.mask_stats.voxels
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn request_errors() {
    let c = start(4).await;
    let vol = c
        .upload_volume(encode_volume(&phantom().volume, true))
        .await
        .unwrap();

    let err = c
        .create_session(vol.volume_id + 100, point([1, 1, 1]))
        .await
        .unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(404));
    let err = c
        .create_session(vol.volume_id, PromptSetJson::default())
        .await
        .unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(422));
    let err = c
        .create_session(vol.volume_id, point([1, 1, 99]))
        .await
        .unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(422));

    let s = c
        .create_session(vol.volume_id, point([30, 34, 32]))
        .await
        .unwrap();
    let err = c.mask_slice(s.session_id, 64).await.unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(422));
    let err = c.session(999).await.unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(404));

    let http = reqwest_like_post(c.base_url(), "/sessions", "{not json").await;
    assert_eq!(http, 400);
    let http = reqwest_like_post(c.base_url(), "/sessions", r#"{"volume_id": "x"}"#).await;
    assert_eq!(http, 422);
}

/// Status code of a raw POST, bypassing the typed client.
async fn reqwest_like_post(base: &str, path: &str, body: &'static str) -> u16 {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let host = base.trim_start_matches("http://");
    let mut s = tokio::net::TcpStream::connect(host).await.unwrap();
    let req = format!(
        "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).await.unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).await.unwrap();
    out.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn evicted_session_is_conflict() {
    let c = start(2).await;
    let vol = c
        .upload_volume(encode_volume(&phantom().volume, true))
        .await
        .unwrap();
    let first = c
        .create_session(vol.volume_id, point([30, 34, 32]))
        .await
        .unwrap();
    for _ in 0..2 {
        c.create_session(vol.volume_id, point([30, 34, 32]))
            .await
            .unwrap();
    }
    let err = c.session(first.session_id).await.unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(409));
    let err = c
        .edit(
            first.session_id,
            EditPoint {
                xyz: [1, 1, 1],
                label: None,
            },
        )
        .await
        .unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(409));
}

#[tokio::test(flavor = "multi_thread")]
async fn image_slice_is_windowed_png() {
    let c = start(4).await;
    let ph = phantom();
    let vol = c
        .upload_volume(encode_volume(&ph.volume, true))
        .await
        .unwrap();
    let s = c
        .create_session(vol.volume_id, point([30, 34, 32]))
        .await
        .unwrap();
    for window in [None, Some((550.0, 100.0))] {
        let png = c.image_slice(s.session_id, 32, window).await.unwrap();
        let mut r = png::Decoder::new(std::io::Cursor::new(png))
            .read_info()
            .unwrap();
        let mut buf = vec![0; r.output_buffer_size().unwrap()];
        let info = r.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (64, 64));
        assert_eq!(info.color_type, png::ColorType::Grayscale);
        // background 0 HU and object 550 HU under each window
        let (bg, obj) = match window {
            None => (102, 255),
            Some(_) => (0, 128),
        };
        assert_eq!(buf[0], bg);
        assert_eq!(buf[30 + 64 * 34], obj);
    }
    let err = c
        .image_slice(s.session_id, 32, Some((40.0, 0.0)))
        .await
        .unwrap_err();
    assert_eq!(err.status().map(|s| s.as_u16()), Some(422));
}
