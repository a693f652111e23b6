//! Newline-delimited JSON detector protocol over child-process stdio or TCP.
//!
//! ```text
//! → {"type":"hello","format_version":1}
//! ← {"type":"hello","format_version":1,"name":"..."}
//! → {"type":"detect","id":7,"width":W,"height":H,"image_png_b64":"..."}
//! ← {"type":"result","id":7,"lanes":[{"points":[[x,y],...],"score":0.9}],"raw":{...}}
//! ← {"type":"error","id":7,"message":"..."}
//! ```

use std::io::{BufRead, BufReader, Cursor, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use base64::Engine;
use image::RgbImage;
use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{excerpt, DetectedLane, DetectionContext, DetectionResult, Detector, DetectorError, LazyFrame, RawOutput};

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    Command(Vec<String>),
    Tcp(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct WireLane {
    points: Vec<[f64; 2]>,
    score: f64,
}

fn protocol(message: impl Into<String>, payload: &str) -> DetectorError {
    DetectorError::Protocol {
        message: message.into(),
        excerpt: excerpt(payload),
    }
}

enum Link {
    Child { child: Child, stdin: ChildStdin },
    Tcp(TcpStream),
}

/// Client side of one protocol connection.
pub struct ExternalDetector {
    name: String,
    link: Link,
    lines: Receiver<std::io::Result<String>>,
    next_id: i64,
    timeout: Duration,
}

fn spawn_reader<R: std::io::Read + Send + 'static>(r: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(r).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl ExternalDetector {
    /// Connects and performs the handshake.
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, DetectorError> {
        let unavailable = |e: std::io::Error| DetectorError::Unavailable(format!("{endpoint:?}: {e}"));
        let (link, lines) = match endpoint {
            Endpoint::Command(argv) => {
                let (prog, args) = argv
                    .split_first()
                    .ok_or_else(|| DetectorError::BadSpec("empty command".into()))?;
                let mut child = Command::new(prog)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(unavailable)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Link::Child { child, stdin }, spawn_reader(stdout))
            }
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(unavailable)?;
                stream.set_nodelay(true).ok();
                let reader = stream.try_clone().map_err(unavailable)?;
                (Link::Tcp(stream), spawn_reader(reader))
            }
        };
        let mut d = Self {
            name: String::new(),
            link,
            lines,
            next_id: 0,
            timeout,
        };
        d.send(&json!({"type": "hello", "format_version": PROTOCOL_VERSION}))?;
        let reply = d.recv()?;
        let v: Value = serde_json::from_str(&reply).map_err(|e| protocol(e.to_string(), &reply))?;
        if v["type"] != "hello" {
            return Err(protocol("expected hello reply", &reply));
        }
        if v["format_version"].as_u64() != Some(PROTOCOL_VERSION) {
            return Err(protocol("unsupported format_version", &reply));
        }
        d.name = v["name"].as_str().unwrap_or("external").to_string();
        Ok(d)
    }

    pub fn server_name(&self) -> &str {
        &self.name
    }

    fn send(&mut self, v: &Value) -> Result<(), DetectorError> {
        self.send_raw(&v.to_string())
    }

    /// Writes one line verbatim (used by the conformance check).
    pub fn send_raw(&mut self, line: &str) -> Result<(), DetectorError> {
        let w: &mut dyn Write = match &mut self.link {
            Link::Child { stdin, .. } => stdin,
            Link::Tcp(s) => s,
        };
        let r = w
            .write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush());
        r.map_err(|e| DetectorError::Unavailable(e.to_string()))
    }

    pub fn recv(&mut self) -> Result<String, DetectorError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(DetectorError::Unavailable(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(DetectorError::Unavailable(format!(
                "no reply within {:.1} s",
                self.timeout.as_secs_f64()
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(DetectorError::Unavailable("connection closed".into())),
        }
    }

    /// Sends one detect request and decodes the reply.
    pub fn request(&mut self, image: &RgbImage) -> Result<DetectionResult, DetectorError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut png = Vec::new();
        image
            .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| DetectorError::Frame(e.to_string()))?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(&png);
        let start = Instant::now();
        self.send(&json!({
            "type": "detect",
            "id": id,
            "width": image.width(),
            "height": image.height(),
            "image_png_b64": b64,
        }))?;
        let reply = self.recv()?;
        let mut det = decode_result(&reply, id)?;
        det.latency_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        det.validate(image.width(), image.height())?;
        Ok(det)
    }
}

fn decode_result(reply: &str, id: i64) -> Result<DetectionResult, DetectorError> {
    let v: Value = serde_json::from_str(reply).map_err(|e| protocol(e.to_string(), reply))?;
    match v["type"].as_str() {
        Some("result") => {}
        Some("error") => {
            return Err(DetectorError::Remote(v["message"].as_str().unwrap_or("").to_string()));
        }
        _ => return Err(protocol("unexpected message type", reply)),
    }
    if v["id"].as_i64() != Some(id) {
        return Err(protocol(format!("reply id does not match request id {id}"), reply));
    }
    let lanes: Vec<WireLane> =
        serde_json::from_value(v["lanes"].clone()).map_err(|e| protocol(format!("lanes: {e}"), reply))?;
    let raw = match v.get("raw") {
        None | Some(Value::Null) => None,
        Some(r) => Some(
            serde_json::from_value::<RawOutput>(r.clone()).map_err(|e| protocol(format!("raw: {e}"), reply))?,
        ),
    };
    Ok(DetectionResult {
        lanes: lanes
            .into_iter()
            .map(|l| DetectedLane {
                points: l.points.iter().map(|p| Point2::new(p[0], p[1])).collect(),
                score: l.score,
            })
            .collect(),
        raw,
        latency_ms: None,
    })
}

impl Detector for ExternalDetector {
    fn name(&self) -> String {
        format!("external:{}", self.name)
    }

    fn detect(&mut self, frame: &LazyFrame<'_>, _ctx: &DetectionContext<'_>) -> Result<DetectionResult, DetectorError> {
        let img = frame.image()?;
        self.request(img)
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        match &mut self.link {
            Link::Child { child, .. } => {
                // Closing stdin asks the server to exit; do not wait on it forever.
                let _ = child.kill();
                let _ = child.wait();
            }
            Link::Tcp(s) => {
                let _ = s.shutdown(std::net::Shutdown::Both);
            }
        }
    }
}

/// Server-side answer to one decoded frame.
pub type Responder = Box<dyn FnMut(i64, &RgbImage) -> Result<DetectionResult, String> + Send>;

/// Serves the protocol on a byte stream until end of input.
pub fn serve<R: BufRead, W: Write>(reader: R, mut writer: W, name: &str, mut respond: Responder) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle(&line, name, &mut respond);
        writeln!(writer, "{reply}")?;
        writer.flush()?;
    }
    Ok(())
}

fn handle(line: &str, name: &str, respond: &mut Responder) -> Value {
    let err = |id: i64, m: String| json!({"type": "error", "id": id, "message": m});
    let v: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return err(-1, format!("malformed request: {e}")),
    };
    let id = v["id"].as_i64().unwrap_or(-1);
    match v["type"].as_str() {
        Some("hello") => json!({"type": "hello", "format_version": PROTOCOL_VERSION, "name": name}),
        Some("detect") => {
            let Some(b64) = v["image_png_b64"].as_str() else {
                return err(id, "missing image_png_b64".into());
            };
            let img = base64::engine::general_purpose::STANDARD
                .decode(b64)
                .map_err(|e| e.to_string())
                .and_then(|bytes| image::load_from_memory(&bytes).map_err(|e| e.to_string()));
            let img = match img {
                Ok(i) => i.to_rgb8(),
                Err(e) => return err(id, format!("bad image: {e}")),
            };
            match respond(id, &img) {
                Ok(det) => {
                    let lanes: Vec<WireLane> = det
                        .lanes
                        .iter()
                        .map(|l| WireLane {
                            points: l.points.iter().map(|p| [p.x, p.y]).collect(),
                            score: l.score,
                        })
                        .collect();
                    let mut out = json!({"type": "result", "id": id, "lanes": lanes});
                    if let Some(raw) = &det.raw {
                        out["raw"] = serde_json::to_value(raw).expect("raw serializes");
                    }
                    out
                }
                Err(m) => err(id, m),
            }
        }
        _ => err(id, "unknown request type".into()),
    }
}

/// In-process TCP endpoint serving the protocol, one connection at a time.
pub struct MockServer {
    address: String,
    _handle: JoinHandle<()>,
}

impl MockServer {
    /// Starts a server whose responder is built per connection by `make`.
    pub fn start<F>(name: &str, make: F) -> std::io::Result<Self>
    where
        F: Fn() -> Responder + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let address = listener.local_addr()?.to_string();
        let name = name.to_string();
        let handle = thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let Ok(reader) = stream.try_clone() else { continue };
                let _ = serve(BufReader::new(reader), stream, &name, make());
            }
        });
        Ok(Self {
            address,
            _handle: handle,
        })
    }

    /// A server that answers every frame with no lanes.
    pub fn empty() -> std::io::Result<Self> {
        Self::start("mock", || Box::new(|_, _| Ok(DetectionResult::default())))
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::Tcp(self.address.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub server_name: String,
    pub handshake: bool,
    pub round_trips: usize,
    pub malformed_rejected: bool,
    pub alive_after_error: bool,
    pub failures: Vec<String>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Handshake, `round_trips` detect requests with ordered ids, then a
/// malformed line that must draw an error reply on a still-open connection.
pub fn protocol_check(endpoint: &Endpoint, round_trips: usize, timeout: Duration) -> ConformanceReport {
    let mut report = ConformanceReport {
        server_name: String::new(),
        handshake: false,
        round_trips: 0,
        malformed_rejected: false,
        alive_after_error: false,
        failures: Vec::new(),
    };
    let mut d = match ExternalDetector::connect(endpoint, timeout) {
        Ok(d) => d,
        Err(e) => {
            report.failures.push(format!("handshake: {e}"));
            return report;
        }
    };
    report.handshake = true;
    report.server_name = d.server_name().to_string();
    let img = RgbImage::from_fn(64, 36, |x, y| image::Rgb([(x * 4) as u8, (y * 7) as u8, 128]));
    for i in 0..round_trips {
        match d.request(&img) {
            Ok(_) => report.round_trips += 1,
            Err(e) => {
                report.failures.push(format!("request {i}: {e}"));
                return report;
            }
        }
    }
    if let Err(e) = d.send_raw("{\"type\":\"detect\",\"id\":") {
        report.failures.push(format!("malformed send: {e}"));
        return report;
    }
    match d.recv() {
        Ok(line) => {
            let v: Value = serde_json::from_str(&line).unwrap_or(Value::Null);
            report.malformed_rejected = v["type"] == "error";
            if !report.malformed_rejected {
                report.failures.push(format!("malformed request answered with {}", excerpt(&line)));
            }
        }
        Err(e) => report.failures.push(format!("malformed request: {e}")),
    }
    match d.request(&img) {
        Ok(_) => report.alive_after_error = true,
        Err(e) => report.failures.push(format!("after error reply: {e}")),
    }
    report
}
