use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pppn_cli::server::{router, AppState, ClassInfo, HeatmapResponse, ImageInfo, PrototypeInfo};
use pppn_core::dataset::{load_head, DatasetManifest};
use pppn_core::metrics::{evaluate, MetricConfig};
use pppn_core::synthetic::{generate, SyntheticConfig};
use pppn_core::{decompose_head, write_archive, ArchiveInfo, DecomposeConfig, Explanation};
use serde_json::Value;
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    archive: std::path::PathBuf,
    app: Router,
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .flat_map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() {
                snapshot(&p)
            } else {
                vec![(p.display().to_string(), std::fs::read(&p).unwrap())]
            }
        })
        .collect();
    out.sort();
    out
}

fn fixture(with_report: bool) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate(&SyntheticConfig { classes: 3, images: 6, channels: 12, seed: 5, ..Default::default() })
        .write(&data)
        .unwrap();
    let manifest = DatasetManifest::load(data.join("manifest.json")).unwrap();
    let head = load_head(data.join("head.pptn"), Some(&manifest)).unwrap();
    let cfg = DecomposeConfig::default();
    let res = decompose_head(&manifest, &head, &cfg, true);
    let archive = dir.path().join("archive");
    let info = ArchiveInfo { clamp: true, config: cfg, ..Default::default() };
    write_archive(&archive, &info, &res.classes, &[], Some(&head)).unwrap();
    let report = dir.path().join("report.json");
    let r = evaluate(&manifest, &res.classes, &MetricConfig::default(), true);
    std::fs::write(&report, serde_json::to_vec(&r).unwrap()).unwrap();
    let state = AppState::load(&archive, &data.join("manifest.json"), with_report.then_some(report.as_path())).unwrap();
    Fixture { _dir: dir, archive, app: router(Arc::new(state), None) }
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

#[tokio::test]
async fn lists_classes_and_images() {
    let f = fixture(false);
    let (status, body) = get(&f.app, "/api/classes").await;
    assert_eq!(status, StatusCode::OK);
    let classes: Vec<ClassInfo> = serde_json::from_slice(&body).unwrap();
    assert_eq!(classes.len(), 3);
    assert_eq!(classes[1], ClassInfo { class_id: 1, label: "class_1".into(), k: 3 });

    let (status, body) = get(&f.app, "/api/images").await;
    assert_eq!(status, StatusCode::OK);
    let images: Vec<ImageInfo> = serde_json::from_slice(&body).unwrap();
    assert_eq!(images.len(), 18);
    assert_eq!(images[6].image_id, "c1_img000");
    assert_eq!(images[6].class_id, 1);
}

#[tokio::test]
async fn prototype_metadata_with_and_without_report() {
    let f = fixture(false);
    let (status, body) = get(&f.app, "/api/classes/2/prototypes").await;
    assert_eq!(status, StatusCode::OK);
    let protos: Vec<PrototypeInfo> = serde_json::from_slice(&body).unwrap();
    assert_eq!(protos.len(), 3);
    assert!(protos.iter().all(|p| p.norm > 0.0 && p.consistent.is_none()));

    let f = fixture(true);
    let (_, body) = get(&f.app, "/api/classes/2/prototypes").await;
    let protos: Vec<PrototypeInfo> = serde_json::from_slice(&body).unwrap();
    assert!(protos.iter().all(|p| p.consistent.is_some() && p.stable.is_some()));

    let (status, body) = get(&f.app, "/api/classes/9/prototypes").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let err: Value = serde_json::from_slice(&body).unwrap();
    assert!(err["error"].as_str().unwrap().contains("class 9"));
}

#[tokio::test]
async fn heatmaps_have_grid_shape() {
    let f = fixture(false);
    let (status, body) = get(&f.app, "/api/images/c0_img002/heatmaps?class=1").await;
    assert_eq!(status, StatusCode::OK);
    let h: HeatmapResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(h.class_id, 1);
    assert_eq!(h.heatmaps.len(), 3);
    for m in &h.heatmaps {
        assert_eq!(m.shape, [7, 7]);
        assert_eq!(m.values.len(), 49);
    }
    let (_, body) = get(&f.app, "/api/images/c0_img002/heatmaps").await;
    let own: HeatmapResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(own.class_id, 0);

    assert_eq!(get(&f.app, "/api/images/nope/heatmaps").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&f.app, "/api/images/c0_img002/heatmaps?class=7").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn predict_and_intervene() {
    let f = fixture(false);
    let before = snapshot(&f.archive);

    let (status, body) = post(&f.app, "/api/predict", serde_json::json!({ "image_id": "c2_img001" })).await;
    assert_eq!(status, StatusCode::OK);
    let base: Explanation = serde_json::from_slice(&body).unwrap();
    assert_eq!(base.class_ids, vec![0, 1, 2]);
    assert_eq!(base.predicted_class, 2);
    for (logit, c) in base.logits.iter().zip(&base.contributions) {
        assert!((logit - c.iter().sum::<f64>()).abs() <= 1e-12);
    }

    // Switching off every prototype of the winner hands the prediction to another class.
    let mut mask = vec![vec![true; 3]; 3];
    mask[2] = vec![false; 3];
    let (status, body) = post(&f.app, "/api/predict", serde_json::json!({ "image_id": "c2_img001", "mask": mask })).await;
    assert_eq!(status, StatusCode::OK);
    let flipped: Explanation = serde_json::from_slice(&body).unwrap();
    assert_ne!(flipped.predicted_class, 2);
    assert_eq!(flipped.logits[2], 0.0);
    assert_eq!(flipped.logits[..2], base.logits[..2]);

    // Turning them back on restores the original response.
    let all = vec![vec![true; 3]; 3];
    let (_, body) = post(&f.app, "/api/predict", serde_json::json!({ "image_id": "c2_img001", "mask": all })).await;
    let restored: Explanation = serde_json::from_slice(&body).unwrap();
    assert_eq!(restored, base);

    let bad = vec![vec![true; 2]; 3];
    let (status, _) = post(&f.app, "/api/predict", serde_json::json!({ "image_id": "c2_img001", "mask": bad })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&f.app, "/api/predict", serde_json::json!({ "image_id": "missing" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    assert_eq!(snapshot(&f.archive), before);
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let f = fixture(false);
    let mut tasks = Vec::new();
    for _ in 0..8 {
        let app = f.app.clone();
        tasks.push(tokio::spawn(async move {
            post(&app, "/api/predict", serde_json::json!({ "image_id": "c1_img004" })).await.1
        }));
    }
    let mut bodies = Vec::new();
    for t in tasks {
        bodies.push(t.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}
