use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use iconsim_core::data::{generate_synthetic_dataset, Dataset};
use iconsim_core::index::{build_index, Query};
use iconsim_core::nn::{ConvBlockConfig, Model, ModelConfig};
use iconsim_core::setopt::{d_set, optimize_exhaustive, pools_for_keywords, DEFAULT_EXHAUSTIVE_CAP};
use iconsim_service::{router, Hit, IconsPage, KernelResponse, ServiceState, SetEntry, PAGE_SIZE};
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

struct Fixture {
    dir: TempDir,
    state: Arc<ServiceState>,
    app: Router,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic_dataset(6, 10, 24, 3, dir.path().join("data")).unwrap();
    let dataset = Dataset::load(manifest.clone()).unwrap();
    let config = ModelConfig {
        input_size: 16,
        conv_blocks: vec![ConvBlockConfig::same3x3(4), ConvBlockConfig::same3x3(8)],
        fc_sizes: vec![16],
        embedding_dim: 8,
        ..ModelConfig::default()
    };
    let model = Model::build(config, 1).unwrap();
    let index = build_index(&model, &dataset).unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<!doctype html><title>icons</title>").unwrap();
    let state = Arc::new(ServiceState::new(model, index, manifest, dir.path().join("cache")).unwrap());
    let app = router(Arc::clone(&state), Some(ui));
    Fixture { dir, state, app }
}

async fn call(app: &Router, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Method::GET, uri, Vec::new()).await
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(Method::POST)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> T {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn icon_listing_pages_and_filters() {
    let f = fixture();
    let (status, body) = get(&f.app, "/api/icons").await;
    assert_eq!(status, StatusCode::OK);
    let page: IconsPage = json(&body);
    assert_eq!(page.total, 60);
    assert_eq!(page.icons.len(), PAGE_SIZE);
    let ids: Vec<&str> = page.icons.iter().map(|i| i.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);

    let (_, body) = get(&f.app, "/api/icons?keyword=star").await;
    let page: IconsPage = json(&body);
    assert!(page.total > 0);
    assert!(page.icons.iter().all(|i| i.keyword.as_deref() == Some("star")));

    let (status, body) = get(&f.app, "/api/icons?page=99").await;
    assert_eq!(status, StatusCode::OK);
    assert!(json::<IconsPage>(&body).icons.is_empty());
    let (status, body) = get(&f.app, "/api/icons?keyword=nothing").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json::<IconsPage>(&body).total, 0);
}

#[tokio::test]
async fn search_by_id_matches_index() {
    let f = fixture();
    let id = f.state.index.ids()[7].clone();
    let (status, body) = get(&f.app, &format!("/api/search?id={id}&k=1")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json::<Vec<Hit>>(&body).len(), 1);

    let (_, body) = get(&f.app, &format!("/api/search?id={id}&k=12")).await;
    let hits: Vec<Hit> = json(&body);
    let expected = f.state.index.knn(Query::Id(&id), 12).unwrap();
    assert_eq!(hits.len(), 12);
    for (h, n) in hits.iter().zip(&expected) {
        assert_eq!(h.id, n.id);
        assert_eq!(h.distance.to_bits(), n.distance.to_bits());
    }
    assert!(hits.windows(2).all(|w| w[0].distance <= w[1].distance));

    assert_eq!(get(&f.app, "/api/search?id=nope&k=3").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&f.app, &format!("/api/search?id={id}&k=0")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&f.app, &format!("/api/search?id={id}&k=101")).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn search_by_upload() {
    let f = fixture();
    let record = f.state.manifest.records[4].clone();
    let bytes = std::fs::read(f.state.manifest.resolve(&record)).unwrap();
    let (status, body) = call(&f.app, Method::POST, "/api/search?k=3", bytes.clone()).await;
    assert_eq!(status, StatusCode::OK);
    let hits: Vec<Hit> = json(&body);
    assert_eq!(hits[0].id, record.id);
    assert!(hits[0].distance < 1e-6);
    let (_, again) = call(&f.app, Method::POST, "/api/search?k=3", bytes).await;
    assert_eq!(body, again);

    let (status, _) = call(&f.app, Method::POST, "/api/search?k=3", b"not an image".to_vec()).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (status, _) = call(&f.app, Method::POST, "/api/search?k=3", vec![0u8; (1 << 20) + 1]).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn set_proposals() {
    let f = fixture();
    let keywords = ["dot", "ring", "plus"];
    let (status, body) = post_json(&f.app, "/api/sets", serde_json::json!({ "keywords": keywords, "top_n": 4 })).await;
    assert_eq!(status, StatusCode::OK);
    let sets: Vec<SetEntry> = json(&body);
    let pools = pools_for_keywords(&f.state.index, &keywords).unwrap();
    let expected = optimize_exhaustive(&pools, &f.state.index, 4, DEFAULT_EXHAUSTIVE_CAP).unwrap();
    assert_eq!(sets.len(), expected.len());
    for (s, e) in sets.iter().zip(&expected) {
        assert_eq!(s.ids, e.ids);
        assert_eq!(s.score.to_bits(), e.score.to_bits());
        assert_eq!(s.thumbnails.len(), 3);
    }

    let locked: serde_json::Map<String, Value> = keywords
        .iter()
        .zip(&pools)
        .map(|(k, p)| (k.to_string(), Value::from(p.ids.last().unwrap().clone())))
        .collect();
    let (status, body) = post_json(&f.app, "/api/sets", serde_json::json!({ "keywords": keywords, "locked": locked })).await;
    assert_eq!(status, StatusCode::OK);
    let sets: Vec<SetEntry> = json(&body);
    let ids: Vec<String> = pools.iter().map(|p| p.ids.last().unwrap().clone()).collect();
    assert_eq!(sets.len(), 1);
    assert_eq!(sets[0].ids, ids);
    assert_eq!(sets[0].score, d_set(&ids, &f.state.index).unwrap());

    let bad = [
        serde_json::json!({ "keywords": [] }),
        serde_json::json!({ "keywords": ["dot", "unheard-of"] }),
        serde_json::json!({ "keywords": ["dot", "ring"], "locked": { "dot": pools[1].ids[0] } }),
    ];
    for body in bad {
        let (status, _) = post_json(&f.app, "/api/sets", body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    let (status, body) = post_json(
        &f.app,
        "/api/sets",
        serde_json::json!({ "keywords": ["dot", "ring"], "mode": "beam", "beam_width": 1000, "top_n": 3 }),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let beam: Vec<SetEntry> = json(&body);
    let exact = optimize_exhaustive(&pools[..2], &f.state.index, 3, DEFAULT_EXHAUSTIVE_CAP).unwrap();
    assert_eq!(beam.iter().map(|s| &s.ids).collect::<Vec<_>>(), exact.iter().map(|s| &s.ids).collect::<Vec<_>>());
}

#[tokio::test]
async fn kernel_and_projection() {
    let f = fixture();
    let ids = &f.state.index.ids()[..2];
    let (status, body) = get(&f.app, &format!("/api/kernel?ids={},{}", ids[0], ids[1])).await;
    assert_eq!(status, StatusCode::OK);
    let k: KernelResponse = json(&body);
    assert_eq!(k.matrix, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);

    let five: Vec<String> = f.state.index.ids()[..5].to_vec();
    let (_, body) = get(&f.app, &format!("/api/kernel?ids={}", five.join(","))).await;
    assert_eq!(json::<KernelResponse>(&body).matrix, f.state.index.kernel_matrix(&five).unwrap());
    assert_eq!(get(&f.app, "/api/kernel?ids=a,b").await.0, StatusCode::BAD_REQUEST);

    let (status, body) = get(&f.app, "/api/projection").await;
    assert_eq!(status, StatusCode::OK);
    let p: Value = json(&body);
    assert_eq!(p["points"].as_array().unwrap().len(), f.state.index.len());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn thumbnails_render_once_under_load() {
    let f = fixture();
    let id = f.state.index.ids()[3].clone();
    let uri = iconsim_service::thumbnail_url(&id);
    let tasks: Vec<_> = (0..100)
        .map(|_| {
            let (app, uri) = (f.app.clone(), uri.clone());
            tokio::spawn(async move { get(&app, &uri).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for t in tasks {
        let (status, body) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(body);
    }
    assert!(bodies[0].starts_with(b"\x89PNG"));
    assert!(bodies.iter().all(|b| *b == bodies[0]));
    assert_eq!(f.state.thumbnails.generated(), 1);
    assert!(f.state.thumbnails.path_for(&id).exists());
    assert_eq!(get(&f.app, "/thumbnails/unknown.png").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn parallel_requests_match_serial() {
    let f = fixture();
    let ids = f.state.index.ids().to_vec();
    let uris: Vec<String> = (0..100)
        .map(|i| match i % 4 {
            0 => format!("/api/search?id={}&k=5", ids[i % ids.len()]),
            1 => format!("/api/kernel?ids={},{},{}", ids[i % 7], ids[i % 11 + 7], ids[i % 13 + 20]),
            2 => "/api/projection".to_owned(),
            _ => format!("/api/icons?page={}", i % 3),
        })
        .collect();
    let mut serial = Vec::new();
    for u in &uris {
        serial.push(get(&f.app, u).await);
    }
    let tasks: Vec<_> = uris
        .iter()
        .map(|u| {
            let (app, u) = (f.app.clone(), u.clone());
            tokio::spawn(async move { get(&app, &u).await })
        })
        .collect();
    for (t, s) in tasks.into_iter().zip(&serial) {
        assert_eq!(&t.await.unwrap(), s);
    }
}

#[tokio::test]
async fn serves_ui_at_root() {
    let f = fixture();
    let (status, body) = get(&f.app, "/").await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("<title>icons</title>"));
    assert!(f.dir.path().join("ui").exists());
}
