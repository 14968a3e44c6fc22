//! Local HTTP server speaking the default edit template, for tests.
//!
//! `POST` to any path except `/analyze` is an edit request: the input image
//! is echoed back as `{"data":[{"b64_json": ...}]}` (or as a `url` to
//! `/files/<n>`). `POST /analyze` returns the configured face document.
//! The server counts every edit request it receives.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use base64::Engine;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::http::parse_multipart;
use crate::vision::FacesDocument;

pub const REFUSAL_MARKER: &str = "content_policy_violation";

#[derive(Debug, Clone, Default)]
pub struct MockServerOptions {
    /// Answer this many edit requests with 503 first.
    pub fail_first: usize,
    /// Edit requests after this many are held open until [`MockServer::release`]
    /// and then dropped; requests arriving after the release are served.
    pub hang_after: Option<usize>,
    /// Prompts containing any of these words get a refusal.
    pub refusal_words: Vec<String>,
    /// Reply to `/analyze`; no faces when `None`.
    pub faces: Option<FacesDocument>,
    pub respond_with_url: bool,
    pub image_field: Option<String>,
    pub prompt_field: Option<String>,
}

#[derive(Default)]
struct State {
    opts: MockServerOptions,
    hits: AtomicUsize,
    served: AtomicUsize,
    analyze_hits: AtomicUsize,
    released: Mutex<bool>,
    release_cv: Condvar,
    files: Mutex<Vec<Vec<u8>>>,
    last_prompt: Mutex<Option<String>>,
}

pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    state: Arc<State>,
    accept: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(opts: MockServerOptions) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", opts)
    }

    pub fn bind(addr: &str, opts: MockServerOptions) -> std::io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(std::io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("mock server is not bound to an IP address"))?;
        let state = Arc::new(State { opts, ..Default::default() });
        let accept = {
            let (server, state) = (server.clone(), state.clone());
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    let state = state.clone();
                    std::thread::spawn(move || handle(&state, request));
                }
            })
        };
        Ok(Self { server, addr, state, accept: Some(accept) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Edit requests received, including failed and held ones.
    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }

    /// Edit requests answered with an image.
    pub fn served(&self) -> usize {
        self.state.served.load(Ordering::SeqCst)
    }

    pub fn analyze_hits(&self) -> usize {
        self.state.analyze_hits.load(Ordering::SeqCst)
    }

    pub fn last_prompt(&self) -> Option<String> {
        self.state.last_prompt.lock().expect("lock").clone()
    }

    /// Stops holding requests; held ones are dropped unanswered.
    pub fn release(&self) {
        *self.state.released.lock().expect("lock") = true;
        self.state.release_cv.notify_all();
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.release();
        self.server.unblock();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn json_response(status: u16, body: &serde_json::Value) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_data(serde_json::to_vec(body).expect("serializable"))
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn handle(state: &State, mut request: Request) {
    let mut body = Vec::new();
    if request.as_reader().read_to_end(&mut body).is_err() {
        return;
    }
    let url = request.url().to_string();
    let response = if url == "/analyze" {
        state.analyze_hits.fetch_add(1, Ordering::SeqCst);
        let doc = state.opts.faces.clone().unwrap_or_default();
        json_response(200, &serde_json::to_value(doc).expect("serializable"))
    } else if let (Method::Get, Some(n)) = (request.method(), url.strip_prefix("/files/")) {
        let files = state.files.lock().expect("lock");
        match n.parse::<usize>().ok().and_then(|i| files.get(i)) {
            Some(bytes) => Response::from_data(bytes.clone()),
            None => json_response(404, &serde_json::json!({"error": "not found"})),
        }
    } else {
        let n = state.hits.fetch_add(1, Ordering::SeqCst) + 1;
        if state.opts.hang_after.is_some_and(|h| n > h) {
            let mut released = state.released.lock().expect("lock");
            if !*released {
                while !*released {
                    released = state.release_cv.wait(released).expect("lock");
                }
                return;
            }
        }
        if n <= state.opts.fail_first {
            json_response(503, &serde_json::json!({"error": "temporarily unavailable"}))
        } else {
            edit_response(state, &request, &body)
        }
    };
    let _ = request.respond(response);
}

fn edit_response(state: &State, request: &Request, body: &[u8]) -> Response<std::io::Cursor<Vec<u8>>> {
    let image_field = state.opts.image_field.as_deref().unwrap_or("image");
    let prompt_field = state.opts.prompt_field.as_deref().unwrap_or("prompt");
    let content_type = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Content-Type"))
        .map(|h| h.value.as_str().to_string())
        .unwrap_or_default();

    let (image, prompt) = if content_type.starts_with("multipart/form-data") {
        let Some(parts) = parse_multipart(&content_type, body) else {
            return json_response(400, &serde_json::json!({"error": "bad multipart body"}));
        };
        let get = |name: &str| parts.iter().find(|(n, _)| n == name).map(|(_, v)| v.clone());
        (get(image_field), get(prompt_field).map(|p| String::from_utf8_lossy(&p).into_owned()))
    } else {
        let Ok(json) = serde_json::from_slice::<serde_json::Value>(body) else {
            return json_response(400, &serde_json::json!({"error": "bad json body"}));
        };
        let image = json
            .get(image_field)
            .and_then(|v| v.as_str())
            .and_then(|s| base64::engine::general_purpose::STANDARD.decode(s).ok());
        (image, json.get(prompt_field).and_then(|v| v.as_str()).map(str::to_string))
    };
    let (Some(image), Some(prompt)) = (image, prompt) else {
        return json_response(400, &serde_json::json!({"error": "missing image or prompt"}));
    };
    *state.last_prompt.lock().expect("lock") = Some(prompt.clone());
    if state.opts.refusal_words.iter().any(|w| prompt.contains(w.as_str())) {
        return json_response(400, &serde_json::json!({"error": {"code": REFUSAL_MARKER}}));
    }

    state.served.fetch_add(1, Ordering::SeqCst);
    if state.opts.respond_with_url {
        let mut files = state.files.lock().expect("lock");
        files.push(image);
        json_response(200, &serde_json::json!({"data": [{"url": format!("/files/{}", files.len() - 1)}]}))
    } else {
        let b64 = base64::engine::general_purpose::STANDARD.encode(&image);
        json_response(200, &serde_json::json!({"data": [{"b64_json": b64}]}))
    }
}
