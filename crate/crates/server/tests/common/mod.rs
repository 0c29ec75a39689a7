#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use aviscape_core::audio::synth::{synthesize_call, white_noise};
use aviscape_core::audio::wav::{self, SampleFormat};
use aviscape_core::audio::{Annotation, AudioClip};
use aviscape_core::geo::GeoPoint;
use aviscape_server::{AppState, Server, ServerConfig};

pub const TOKENS: [(&str, &str); 4] = [("tok-alice", "alice"), ("tok-bob", "bob"), ("tok-carol", "carol"), ("tok-dave", "dave")];

pub struct Running {
    pub base: String,
    pub state: Arc<AppState>,
    pub client: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl Running {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Graceful shutdown; waits for the final snapshot.
    pub async fn stop(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            task.await.unwrap();
        }
    }
}

pub fn config() -> ServerConfig {
    let mut c = ServerConfig { bind: "127.0.0.1:0".parse().unwrap(), ..ServerConfig::default() };
    c.bootstrap.clips_per_species = 3;
    for (t, u) in TOKENS {
        c.tokens.insert(t.into(), u.into());
    }
    c
}

pub async fn spawn(config: ServerConfig) -> Running {
    let server = Server::bind(config).await.unwrap();
    let base = format!("http://{}", server.local_addr().unwrap());
    let state = server.state();
    let (tx, rx) = oneshot::channel();
    let task = tokio::spawn(async move {
        server
            .run(async {
                let _ = rx.await;
            })
            .await
            .unwrap();
    });
    Running { base, state, client: reqwest::Client::new(), stop: Some(tx), task: Some(task) }
}

pub fn schema_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/api").join(format!("{name}.schema.json"))
}

pub fn assert_schema(name: &str, value: &Value) {
    let schema: Value = serde_json::from_slice(&std::fs::read(schema_path(name)).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name} schema violations: {errors:?}\n{value:#}");
}

pub fn call_wav(species: usize, seed: u64) -> Vec<u8> {
    wav::encode(&synthesize_call(species, 2.0, 22050, seed).unwrap(), SampleFormat::Pcm16).unwrap()
}

pub fn noise_wav(seed: u64) -> Vec<u8> {
    wav::encode(&white_noise(2.0, 22050, 0.2, seed).unwrap(), SampleFormat::Pcm16).unwrap()
}

pub fn decode(bytes: &[u8]) -> AudioClip {
    wav::decode(bytes).unwrap()
}

pub fn annotation() -> Annotation {
    Annotation::new(0.5, 1.5)
}

pub fn at(day: u32, hour: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 5, day, hour, 0, 0).unwrap()
}

pub fn meta(position: GeoPoint, timestamp: DateTime<Utc>) -> Value {
    json!({
        "annotation": annotation(),
        "position": position,
        "timestamp": timestamp,
        "mode": "service",
    })
}

pub async fn submit(r: &Running, token: &str, audio: Vec<u8>, meta: &Value) -> (u16, Value) {
    let form = reqwest::multipart::Form::new()
        .part("audio", reqwest::multipart::Part::bytes(audio).file_name("rec.wav").mime_str("audio/wav").unwrap())
        .part("meta", reqwest::multipart::Part::text(meta.to_string()).mime_str("application/json").unwrap());
    let resp = r.client.post(r.url("/v1/recordings")).bearer_auth(token).multipart(form).send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

pub async fn get(r: &Running, path: &str, token: Option<&str>) -> (u16, Value) {
    let mut req = r.client.get(r.url(path));
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

pub async fn post(r: &Running, path: &str, token: Option<&str>) -> (u16, Value) {
    let mut req = r.client.post(r.url(path));
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}
