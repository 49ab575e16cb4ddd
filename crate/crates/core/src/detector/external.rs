//! Client for detectors running as a child process.
//!
//! Wire protocol: newline-delimited UTF-8 JSON over the child's stdin/stdout,
//! one object per line.
//!
//! ```text
//! request:  {"id": string, "image": string, "tile": {"x": int, "y": int, "w": int, "h": int}}
//! response: {"id": string, "detections": [{"x": num, "y": num, "w": num, "h": num, "score": num}]}
//! ```
//!
//! Coordinates are tile-local pixels. The child answers every request exactly
//! once, in any order. Many requests may be in flight at once; a reader thread
//! routes each response to its waiting caller by id.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{DetectError, Error, Result};
use crate::geometry::{clip, BoundingBox, Detection, Frame};

use super::TileTask;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalSpec {
    /// Shell command line that starts the detector.
    pub command: String,
    pub timeout_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTile {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub image: String,
    pub tile: WireTile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: String,
    pub detections: Vec<WireDetection>,
}

impl WireRequest {
    pub fn for_task(task: &TileTask) -> Self {
        WireRequest {
            id: task.request_id.clone(),
            image: task.image_path.to_string_lossy().into_owned(),
            tile: WireTile { x: task.tile.x, y: task.tile.y, w: task.tile.w, h: task.tile.h },
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

type Reply = std::result::Result<Vec<WireDetection>, DetectError>;

#[derive(Default)]
struct State {
    pending: HashMap<String, SyncSender<Reply>>,
    exited: Option<String>,
}

pub struct ExternalDetector {
    spec: ExternalSpec,
    stdin: Mutex<Option<ChildStdin>>,
    child: Mutex<Child>,
    state: Arc<Mutex<State>>,
    reader: Option<JoinHandle<()>>,
}

impl ExternalDetector {
    pub fn spawn(spec: ExternalSpec) -> Result<Self> {
        if spec.timeout_ms == 0 {
            return Err(Error::Invalid("external detector timeout must be positive".into()));
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&spec.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let state = Arc::new(Mutex::new(State::default()));
        let reader_state = Arc::clone(&state);
        let reader = std::thread::Builder::new()
            .name("detector-reader".into())
            .spawn(move || read_responses(BufReader::new(stdout), &reader_state))?;
        Ok(Self {
            spec,
            stdin: Mutex::new(Some(stdin)),
            child: Mutex::new(child),
            state,
            reader: Some(reader),
        })
    }

    pub fn spec(&self) -> &ExternalSpec {
        &self.spec
    }

    /// Sends one request and blocks until its response, the timeout, or the
    /// child's exit. Safe to call from many threads at once.
    pub fn detect(&self, task: &TileTask) -> std::result::Result<Vec<Detection<f64>>, DetectError> {
        let id = task.request_id.clone();
        let (tx, rx) = mpsc::sync_channel(1);
        {
            let mut st = self.state.lock().expect("state lock");
            if let Some(why) = &st.exited {
                return Err(DetectError::ProcessExit { id, message: why.clone() });
            }
            if st.pending.insert(id.clone(), tx).is_some() {
                return Err(DetectError::Protocol { id, message: "duplicate request id".into() });
            }
        }

        let line = WireRequest::for_task(task).to_line();
        let written = {
            let mut guard = self.stdin.lock().expect("stdin lock");
            match guard.as_mut() {
                Some(w) => writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| e.to_string()),
                None => Err("stdin closed".to_string()),
            }
        };
        if let Err(message) = written {
            self.forget(&id);
            return Err(DetectError::ProcessExit { id, message });
        }

        let reply = match rx.recv_timeout(Duration::from_millis(self.spec.timeout_ms)) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => {
                self.forget(&id);
                return Err(DetectError::ExternalTimeout { id, timeout_ms: self.spec.timeout_ms });
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(DetectError::ProcessExit { id, message: "reader stopped".into() })
            }
        }?;
        to_detections(&id, task, reply)
    }

    fn forget(&self, id: &str) {
        self.state.lock().expect("state lock").pending.remove(id);
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        // closing stdin asks the child to finish
        self.stdin.lock().map(|mut s| s.take()).ok();
        if let Ok(mut child) = self.child.lock() {
            let deadline = std::time::Instant::now() + Duration::from_secs(2);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if std::time::Instant::now() < deadline => {
                        std::thread::sleep(Duration::from_millis(10))
                    }
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

fn read_responses(stdout: impl BufRead, state: &Mutex<State>) {
    for line in stdout.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                fail_all(state, |id| DetectError::Protocol { id, message: format!("unreadable output: {e}") });
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("detector emitted a malformed line: {e}");
                fail_all(state, |id| DetectError::Protocol { id, message: format!("malformed line: {e}") });
                continue;
            }
        };
        let Some(id) = value.get("id").and_then(|v| v.as_str()).map(str::to_owned) else {
            log::warn!("detector response without an id: {line}");
            fail_all(state, |id| DetectError::Protocol { id, message: "response without id".into() });
            continue;
        };
        let reply = if let Some(err) = value.get("error") {
            Err(DetectError::Protocol { id: id.clone(), message: format!("detector reported: {err}") })
        } else {
            serde_json::from_value::<WireResponse>(value)
                .map(|r| r.detections)
                .map_err(|e| DetectError::Protocol { id: id.clone(), message: e.to_string() })
        };
        let waiter = state.lock().expect("state lock").pending.remove(&id);
        match waiter {
            Some(tx) => {
                let _ = tx.send(reply);
            }
            None => log::warn!("response for unknown or already answered request {id}"),
        }
    }
    let mut st = state.lock().expect("state lock");
    st.exited = Some("detector closed its output".into());
    for (id, tx) in st.pending.drain() {
        let _ = tx.send(Err(DetectError::ProcessExit { id, message: "detector closed its output".into() }));
    }
}

fn fail_all(state: &Mutex<State>, err: impl Fn(String) -> DetectError) {
    let mut st = state.lock().expect("state lock");
    for (id, tx) in st.pending.drain() {
        let _ = tx.send(Err(err(id)));
    }
}

fn to_detections(
    id: &str,
    task: &TileTask,
    wire: Vec<WireDetection>,
) -> std::result::Result<Vec<Detection<f64>>, DetectError> {
    let protocol = |message: String| DetectError::Protocol { id: id.to_owned(), message };
    let region = task.tile.local_box::<f64>();
    let frame = Frame::TileLocal(task.tile.id);
    let mut out = Vec::with_capacity(wire.len());
    for d in wire {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(protocol(format!("score {} outside [0, 1]", d.score)));
        }
        let bbox = BoundingBox::new(d.x, d.y, d.w, d.h).map_err(|e| protocol(e.to_string()))?;
        match clip(&bbox, &region) {
            Some(c) => {
                if c != bbox {
                    log::info!("request {id}: clipped {bbox:?} to tile as {c:?}");
                }
                out.push(Detection::new(c, d.score, frame).expect("score checked"));
            }
            None => log::info!("request {id}: dropped {bbox:?} outside the tile"),
        }
    }
    Ok(out)
}
