//! Deterministic mock of the generation service.
//!
//! Four modes cover the gate's whole taxonomy:
//!
//! - `identity`: echoes the input (a failed edit — the NoAnomaly case);
//! - `local-edit`: smooth intensity bump inside a seeded ellipse (a usable
//!   Desired candidate);
//! - `scramble`: block-permuted image (structure destroyed — Irrelevant);
//! - `flaky`: fails the first `k` requests with 503, then acts as
//!   `local-edit`.
//!
//! Every response is a pure function of `(server seed, request_id)`, so
//! replaying a request id returns a byte-identical response.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::genclient::{GenError, GenerationRequest, GenerationResponse};
use crate::imgcore::{ImageBuffer, Rng};

/// Size of the blocks permuted by scramble mode.
pub const SCRAMBLE_BLOCK: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockMode {
    Identity,
    LocalEdit,
    Scramble,
    /// Coin-flips per request between local-edit and scramble; exercises the
    /// gate's ability to keep only the structure-preserving half.
    Mixed,
    Flaky { failures: u64 },
}

impl std::str::FromStr for MockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(MockMode::Identity),
            "local-edit" => Ok(MockMode::LocalEdit),
            "scramble" => Ok(MockMode::Scramble),
            "mixed" => Ok(MockMode::Mixed),
            other => {
                if let Some(k) = other.strip_prefix("flaky:") {
                    k.parse::<u64>()
                        .map(|failures| MockMode::Flaky { failures })
                        .map_err(|_| format!("bad flaky count in {other:?}"))
                } else {
                    Err(format!(
                        "unknown mock mode {other:?} \
                         (identity|local-edit|scramble|mixed|flaky:<k>)"
                    ))
                }
            }
        }
    }
}

/// An elliptical intensity defect; the mock's "defect" family. A smooth
/// `amplitude * (1 - r^2)` envelope carries a coherent ripple (a featureless
/// smooth bump would be invisible to brightness-shift-invariant
/// descriptors). The change is exactly zero outside the unit ellipse, so
/// edited candidates differ from their source only inside the recorded
/// region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseEdit {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub amplitude: f64,
    /// Fraction of the envelope carried by the ripple, in [0, 1].
    pub grain: f64,
    /// Ripple wavelength in pixels.
    pub wavelength: f64,
    /// Ripple direction in radians.
    pub angle: f64,
    /// Ripple phase offset in radians.
    pub phase: f64,
}

impl EllipseEdit {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        let nx = (x as f64 - self.cx) / self.rx;
        let ny = (y as f64 - self.cy) / self.ry;
        nx * nx + ny * ny < 1.0
    }

    /// Fraction of the image area covered by the ellipse.
    pub fn area_fraction(&self, width: u32, height: u32) -> f64 {
        std::f64::consts::PI * self.rx * self.ry / (width as f64 * height as f64)
    }
}

/// Sampling ranges for [`draw_local_edit_with`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EditDrawParams {
    pub area_frac: (f64, f64),
    pub amplitude: (f64, f64),
    pub grain: f64,
}

impl Default for EditDrawParams {
    fn default() -> Self {
        // The service's own band: decisive edits covering 12-20% of the
        // image, strong enough that the defect core saturates into hard
        // ripple stripes and reads as new structure.
        Self { area_frac: (0.12, 0.20), amplitude: (110.0, 180.0), grain: 0.7 }
    }
}

/// Draws the edit region and strength within the given bands, centered in the
/// middle half of the frame, amplitude sign random.
pub fn draw_local_edit_with(
    params: &EditDrawParams,
    width: u32,
    height: u32,
    rng: &mut Rng,
) -> EllipseEdit {
    let area_frac = rng.range_f64(params.area_frac.0, params.area_frac.1);
    let aspect = rng.range_f64(0.6, 1.6);
    let area = area_frac * width as f64 * height as f64;
    let rx = (area * aspect / std::f64::consts::PI).sqrt();
    let ry = rx / aspect;
    let cx = rng.range_f64(0.35 * width as f64, 0.65 * width as f64);
    let cy = rng.range_f64(0.35 * height as f64, 0.65 * height as f64);
    let amplitude = rng.range_f64(params.amplitude.0, params.amplitude.1)
        * if rng.next_u64() % 2 == 0 { 1.0 } else { -1.0 };
    let wavelength = rng.range_f64(5.0, 8.0);
    let angle = rng.range_f64(0.0, std::f64::consts::PI);
    let phase = rng.range_f64(0.0, std::f64::consts::TAU);
    EllipseEdit { cx, cy, rx, ry, amplitude, grain: params.grain, wavelength, angle, phase }
}

/// The service's default edit family.
pub fn draw_local_edit(width: u32, height: u32, rng: &mut Rng) -> EllipseEdit {
    draw_local_edit_with(&EditDrawParams::default(), width, height, rng)
}

/// Applies the defect to every channel, clamping once.
pub fn apply_local_edit(img: &ImageBuffer, edit: &EllipseEdit) -> ImageBuffer {
    let mut out = img.clone();
    let (ca, sa) = (edit.angle.cos(), edit.angle.sin());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let nx = (x as f64 - edit.cx) / edit.rx;
            let ny = (y as f64 - edit.cy) / edit.ry;
            let r2 = nx * nx + ny * ny;
            if r2 < 1.0 {
                let envelope = edit.amplitude * (1.0 - r2);
                let ripple = (std::f64::consts::TAU * (x as f64 * ca + y as f64 * sa)
                    / edit.wavelength
                    + edit.phase)
                    .sin();
                let delta = envelope * ((1.0 - edit.grain) + edit.grain * ripple);
                for c in 0..img.channels() {
                    let v = img.get(x, y, c) as f64 + delta;
                    out.set(x, y, c, v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    out
}

/// Structurally unrelated output: the image cut into `SCRAMBLE_BLOCK`
/// squares, block-permuted, each block also rotated by a random quarter turn
/// so no local signature survives intact. Trailing partial blocks stay in
/// place.
pub fn apply_scramble(img: &ImageBuffer, rng: &mut Rng) -> ImageBuffer {
    let bw = img.width() / SCRAMBLE_BLOCK;
    let bh = img.height() / SCRAMBLE_BLOCK;
    let mut order: Vec<u32> = (0..bw * bh).collect();
    rng.shuffle(&mut order);
    let rotations: Vec<u32> = (0..bw * bh).map(|_| rng.range_u32(0, 4)).collect();
    let mut out = img.clone();
    let last = SCRAMBLE_BLOCK - 1;
    for (dst, &src) in order.iter().enumerate() {
        let (dst_bx, dst_by) = (dst as u32 % bw, dst as u32 / bw);
        let (src_bx, src_by) = (src % bw, src / bw);
        let rotation = rotations[dst];
        for dy in 0..SCRAMBLE_BLOCK {
            for dx in 0..SCRAMBLE_BLOCK {
                let (sx, sy) = match rotation {
                    0 => (dx, dy),
                    1 => (dy, last - dx),
                    2 => (last - dx, last - dy),
                    _ => (last - dy, dx),
                };
                for c in 0..img.channels() {
                    out.set(
                        dst_bx * SCRAMBLE_BLOCK + dx,
                        dst_by * SCRAMBLE_BLOCK + dy,
                        c,
                        img.get(src_bx * SCRAMBLE_BLOCK + sx, src_by * SCRAMBLE_BLOCK + sy, c),
                    );
                }
            }
        }
    }
    out
}

/// The per-request random stream: a pure function of the server seed and the
/// request id. Tests recompute edit regions from it.
pub fn request_rng(seed: u64, request_id: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(request_id.as_bytes());
    let digest = hasher.finalize();
    Rng::new(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

/// In mixed mode, whether this request takes the local-edit branch. The
/// choice is the request stream's first draw, so callers can recompute which
/// branch any request id took.
pub fn mixed_takes_edit_branch(seed: u64, request_id: &str) -> bool {
    request_rng(seed, request_id).unit_f64() < 0.5
}

/// Computes the mock's candidate for a request. Exposed so in-process callers
/// (the toy benchmark's eval split) can reuse the exact mock edit family.
pub fn mock_candidate(mode: MockMode, seed: u64, request_id: &str, input: &ImageBuffer) -> ImageBuffer {
    let mut rng = request_rng(seed, request_id);
    match mode {
        MockMode::Identity => input.clone(),
        MockMode::LocalEdit | MockMode::Flaky { .. } => {
            let edit = draw_local_edit(input.width(), input.height(), &mut rng);
            apply_local_edit(input, &edit)
        }
        MockMode::Scramble => apply_scramble(input, &mut rng),
        MockMode::Mixed => {
            if rng.unit_f64() < 0.5 {
                let edit = draw_local_edit(input.width(), input.height(), &mut rng);
                apply_local_edit(input, &edit)
            } else {
                apply_scramble(input, &mut rng)
            }
        }
    }
}

/// A running mock service bound to a local port.
pub struct MockServer {
    server: Arc<tiny_http::Server>,
    port: u16,
    handle: Option<JoinHandle<()>>,
    requests_served: Arc<AtomicU64>,
}

impl MockServer {
    /// Binds and serves on `127.0.0.1:port`; port 0 picks a free one.
    pub fn start(mode: MockMode, seed: u64, port: u16) -> Result<Self, GenError> {
        let server = tiny_http::Server::http(("127.0.0.1", port))
            .map_err(|_| GenError::PortInUse(port))?;
        let server = Arc::new(server);
        let bound_port = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr.port(),
            _ => port,
        };
        let requests_served = Arc::new(AtomicU64::new(0));
        let handle = {
            let server = Arc::clone(&server);
            let counter = Arc::clone(&requests_served);
            std::thread::spawn(move || serve_loop(&server, mode, seed, &counter))
        };
        Ok(Self { server, port: bound_port, handle: Some(handle), requests_served })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub fn requests_served(&self) -> u64 {
        self.requests_served.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn serve_loop(
    server: &tiny_http::Server,
    mode: MockMode,
    seed: u64,
    counter: &AtomicU64,
) {
    // A single handler thread: per-connection state is trivially serialized.
    for mut request in server.incoming_requests() {
        let served_before = counter.fetch_add(1, Ordering::SeqCst);
        let response = handle_request(&mut request, mode, seed, served_before);
        let (status, body) = match response {
            Ok(body) => (200, body),
            Err((status, message)) => {
                (status, serde_json::json!({ "error": message }).to_string())
            }
        };
        let _ = request.respond(
            tiny_http::Response::from_string(body)
                .with_status_code(status)
                .with_header(
                    tiny_http::Header::from_bytes(
                        &b"Content-Type"[..],
                        &b"application/json"[..],
                    )
                    .unwrap(),
                ),
        );
    }
}

fn handle_request(
    request: &mut tiny_http::Request,
    mode: MockMode,
    seed: u64,
    served_before: u64,
) -> Result<String, (u16, String)> {
    if request.url() != "/generate" {
        return Err((404, format!("no such endpoint {}", request.url())));
    }
    if let MockMode::Flaky { failures } = mode {
        if served_before < failures {
            return Err((503, "simulated transient failure".to_string()));
        }
    }
    let mut body = String::new();
    request
        .as_reader()
        .read_to_string(&mut body)
        .map_err(|e| (400, format!("unreadable body: {e}")))?;
    let gen_request: GenerationRequest =
        serde_json::from_str(&body).map_err(|e| (400, format!("bad request json: {e}")))?;
    let input = crate::genclient::decode_png_base64(&gen_request.image_b64)
        .map_err(|e| (400, format!("bad input image: {e}")))?;

    let candidate = mock_candidate(mode, seed, &gen_request.request_id, &input);
    let image_b64 = crate::genclient::encode_png_base64(&candidate, usize::MAX)
        .map_err(|e| (500, format!("encode failure: {e}")))?;
    // Simulated latency: deterministic per request id.
    let latency_ms = 3 + request_rng(seed, &gen_request.request_id).next_u64() % 40;
    let response = GenerationResponse {
        request_id: gen_request.request_id,
        image_b64,
        latency_ms,
    };
    serde_json::to_string(&response).map_err(|e| (500, e.to_string()))
}
