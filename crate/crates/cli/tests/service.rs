use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use futures_util::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use sss_core::dataset::LightStage;
use sss_core::fixtures;
use sss_core::service::{RenderRequest, Renderer};
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

fn renderer() -> Arc<Renderer> {
    Arc::new(Renderer::new(fixtures::random_model(11, 40), LightStage::standard(3.0).unwrap(), 96))
}

fn small_request() -> RenderRequest {
    RenderRequest {
        resolution: [48, 40],
        ..Default::default()
    }
}

async fn call(app: axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

fn post(uri: &str, body: Vec<u8>) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap()
}

#[tokio::test]
async fn meta_describes_the_service() {
    let (status, body) = call(sss_cli::router(renderer()), Request::get("/meta").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let meta: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(meta["max_resolution"], 96);
    assert_eq!(meta["lights"].as_array().unwrap().len(), 112);
    assert_eq!(meta["modes"].as_array().unwrap().len(), 8);
    let edit_names: Vec<&str> = meta["edit"].as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert!(edit_names.contains(&"subsurface_scale"));
    // The advertised default request is itself a valid request.
    let default = serde_json::to_vec(&meta["default_request"]).unwrap();
    assert!(RenderRequest::from_json(&default).is_ok());
}

#[tokio::test]
async fn identical_requests_give_identical_png() {
    let r = renderer();
    let body = serde_json::to_vec(&small_request()).unwrap();
    let (s1, a) = call(sss_cli::router(r.clone()), post("/render", body.clone())).await;
    let (s2, b) = call(sss_cli::router(r), post("/render", body)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(&a[..8], b"\x89PNG\r\n\x1a\n");
    assert_eq!(a, b);
}

#[tokio::test]
async fn jpeg_on_request() {
    let body = serde_json::to_vec(&small_request()).unwrap();
    let (status, bytes) = call(sss_cli::router(renderer()), post("/render?format=jpeg", body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&bytes[..2], &[0xFF, 0xD8]);
}

#[tokio::test]
async fn bad_requests_get_field_diagnostics() {
    let mut req = small_request();
    req.resolution = [97, 40];
    let (status, body) = call(sss_cli::router(renderer()), post("/render", serde_json::to_vec(&req).unwrap())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["errors"][0]["field"], "resolution[0]");

    let (status, body) = call(sss_cli::router(renderer()), post("/render", br#"{"camera": 3}"#.to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["errors"][0]["field"], "camera");
}

#[tokio::test]
async fn stream_delivers_the_latest_request() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let r = renderer();
    let app = sss_cli::router(r.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/stream")).await.unwrap();

    let mut last = small_request();
    for i in 1..=20u64 {
        let mut req = small_request();
        req.id = Some(i);
        req.light.azimuth = 10.0 * i as f64;
        last = req.clone();
        ws.send(Message::Text(serde_json::to_string(&req).unwrap().into())).await.unwrap();
    }
    let mut seen = Vec::new();
    let mut last_frame = None;
    while last_frame.is_none() {
        let header = match ws.next().await.unwrap().unwrap() {
            Message::Text(t) => serde_json::from_str::<serde_json::Value>(&t).unwrap(),
            other => panic!("expected a frame header, got {other:?}"),
        };
        let id = header["frame"].as_u64().unwrap();
        let png = match ws.next().await.unwrap().unwrap() {
            Message::Binary(b) => b.to_vec(),
            other => panic!("expected frame bytes, got {other:?}"),
        };
        seen.push(id);
        if id == 20 {
            last_frame = Some(png);
        }
    }
    assert!(seen.windows(2).all(|w| w[0] < w[1]), "frames out of order: {seen:?}");
    let direct = r.render_encoded(&last, sss_core::service::Encoding::Png).unwrap();
    assert_eq!(last_frame.unwrap(), direct);

    ws.send(Message::Text("{\"camera\": {}}".into())).await.unwrap();
    match ws.next().await.unwrap().unwrap() {
        Message::Text(t) => assert!(t.contains("errors")),
        other => panic!("expected an error message, got {other:?}"),
    }
}
