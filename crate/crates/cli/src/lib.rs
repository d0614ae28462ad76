//! HTTP front end of the render service.
//!
//! `GET /meta` describes limits, lights, modes and the edit schema;
//! `POST /render` turns one JSON request into an image; `GET /stream` is a
//! websocket on which the newest pending request always wins and stale ones are
//! dropped.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use sss_core::service::{Encoding, FieldError, RenderRequest, Renderer};
use tokio::sync::{mpsc, watch};

pub fn router(renderer: Arc<Renderer>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/render", post(render))
        .route("/stream", get(stream))
        .with_state(renderer)
}

pub async fn serve(renderer: Arc<Renderer>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(renderer)).await?;
    Ok(())
}

fn bad_request(errors: Vec<FieldError>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "errors": errors }))).into_response()
}

async fn meta(State(r): State<Arc<Renderer>>) -> Response {
    Json(r.meta()).into_response()
}

#[derive(Deserialize)]
struct RenderQuery {
    format: Option<Encoding>,
}

async fn render_blocking(
    r: Arc<Renderer>,
    req: RenderRequest,
    encoding: Encoding,
) -> Result<Vec<u8>, Vec<FieldError>> {
    tokio::task::spawn_blocking(move || r.render_encoded(&req, encoding))
        .await
        .unwrap_or_else(|e| {
            Err(vec![FieldError {
                field: "render".into(),
                message: e.to_string(),
            }])
        })
}

async fn render(State(r): State<Arc<Renderer>>, Query(q): Query<RenderQuery>, body: Bytes) -> Response {
    let req = match RenderRequest::from_json(&body) {
        Ok(req) => req,
        Err(e) => return bad_request(e),
    };
    let encoding = q.format.unwrap_or(Encoding::Png);
    match render_blocking(r, req, encoding).await {
        Ok(bytes) => {
            let mime = match encoding {
                Encoding::Png => "image/png",
                Encoding::Jpeg => "image/jpeg",
            };
            ([(header::CONTENT_TYPE, mime)], bytes).into_response()
        }
        Err(e) => bad_request(e),
    }
}

async fn stream(ws: WebSocketUpgrade, State(r): State<Arc<Renderer>>) -> Response {
    ws.on_upgrade(move |socket| stream_session(socket, r))
}

/// Each text message is a request. A frame is delivered as a text header
/// `{"frame": id}` followed by the PNG as a binary message; malformed requests
/// are answered with `{"errors": [...]}`.
async fn stream_session(socket: WebSocket, r: Arc<Renderer>) {
    let (mut tx, mut rx) = socket.split();
    let (latest_tx, mut latest_rx) = watch::channel::<Option<RenderRequest>>(None);
    let (err_tx, mut err_rx) = mpsc::unbounded_channel::<Vec<FieldError>>();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = rx.next().await {
            match msg {
                Message::Text(text) => match RenderRequest::from_json(text.as_bytes()) {
                    Ok(req) => {
                        latest_tx.send_replace(Some(req));
                    }
                    Err(e) => {
                        let _ = err_tx.send(e);
                    }
                },
                Message::Close(_) => break,
                _ => {}
            }
        }
    });
    loop {
        tokio::select! {
            changed = latest_rx.changed() => {
                if changed.is_err() {
                    break;
                }
                let Some(req) = latest_rx.borrow_and_update().clone() else { continue };
                let id = req.id;
                let sent = match render_blocking(r.clone(), req, Encoding::Png).await {
                    Ok(png) => {
                        let header = json!({ "frame": id }).to_string();
                        match tx.send(Message::Text(header.into())).await {
                            Ok(()) => tx.send(Message::Binary(png.into())).await,
                            Err(e) => Err(e),
                        }
                    }
                    Err(errors) => tx.send(Message::Text(json!({ "frame": id, "errors": errors }).to_string().into())).await,
                };
                if sent.is_err() {
                    break;
                }
            }
            Some(errors) = err_rx.recv() => {
                if tx.send(Message::Text(json!({ "errors": errors }).to_string().into())).await.is_err() {
                    break;
                }
            }
        }
    }
    reader.abort();
}
