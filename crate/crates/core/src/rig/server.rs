//! Loopback HTTP front end for a [`Rig`].

use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{Method as HttpMethod, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Map, Value};
use tokio::sync::oneshot;

use super::{CallError, FaultSpec, Rig, RigConfig, RigError};

type Shared = Arc<Rig>;

fn reply(r: Result<Value, CallError>) -> Response {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(CallError::Rejected { status, message }) => {
            let code = StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_REQUEST);
            (code, Json(json!({ "error": message }))).into_response()
        }
        Err(CallError::Unreachable(m)) => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "error": m }))).into_response(),
    }
}

fn bad(message: String) -> CallError {
    CallError::Rejected { status: 400, message }
}

async fn vv_get(State(rig): State<Shared>, Path(key): Path<String>) -> Response {
    reply(rig.vv_get(&key).map(Value::from).map_err(|e| CallError::Rejected { status: 404, message: e.to_string() }))
}

async fn vv_put(State(rig): State<Shared>, Path(key): Path<String>, body: Bytes) -> Response {
    let raw = serde_json::from_slice::<Value>(&body).ok().and_then(|v| v.as_f64());
    let Some(raw) = raw else {
        return reply(Err(bad("body must be a number".into())));
    };
    reply(rig.vv_set(&key, raw).map(|_| json!({"ok": true})).map_err(|e| CallError::Rejected { status: 404, message: e.to_string() }))
}

async fn fault(State(rig): State<Shared>, body: Bytes) -> Response {
    let f: FaultSpec = match serde_json::from_slice(&body) {
        Ok(f) => f,
        Err(e) => return reply(Err(bad(e.to_string()))),
    };
    reply(rig.inject_fault(f).map(|_| json!({"ok": true})).map_err(|e| CallError::Rejected { status: 404, message: e.to_string() }))
}

async fn trace(State(rig): State<Shared>) -> Response {
    Json(rig.can_trace()).into_response()
}

async fn gateway(State(rig): State<Shared>, method: HttpMethod, uri: Uri, body: Bytes) -> Response {
    let path = uri.path();
    let r = match method {
        HttpMethod::GET => rig.gateway_get(path).map(Value::Object),
        HttpMethod::PUT => match serde_json::from_slice::<Map<String, Value>>(&body) {
            Ok(obj) => rig.gateway_put(path, &obj).map(|_| json!({"ok": true})),
            Err(e) => Err(bad(format!("body must be an object: {e}"))),
        },
        _ => Err(CallError::Rejected { status: 405, message: format!("{method} not supported") }),
    };
    reply(r)
}

pub fn router(rig: Shared) -> Router {
    Router::new()
        .route("/_vv/{key}", get(vv_get).put(vv_put))
        .route("/_fault", post(fault))
        .route("/_trace", get(trace))
        .fallback(gateway)
        .with_state(rig)
}

/// A running rig; stops serving when dropped.
pub struct RigHandle {
    pub addr: SocketAddr,
    pub rig: Arc<Rig>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl RigHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for RigHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serve `config` on 127.0.0.1:`port` (0 picks a free port).
pub fn start_rig(config: RigConfig, port: u16) -> Result<RigHandle, RigError> {
    let rig = Arc::new(Rig::new(config)?);
    let listener = TcpListener::bind(("127.0.0.1", port)).map_err(|e| RigError::Bind(e.to_string()))?;
    listener.set_nonblocking(true).map_err(|e| RigError::Bind(e.to_string()))?;
    let addr = listener.local_addr().map_err(|e| RigError::Bind(e.to_string()))?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(rig.clone());
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(|e| RigError::Bind(e.to_string()))?;
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with the runtime");
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(RigHandle { addr, rig, stop: Some(tx), thread: Some(thread) })
}
