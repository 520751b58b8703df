//! Wire schema for `/v1` and request decoding.
//!
//! Images travel as base64 PNG strings inside JSON. Regions (hole, avoid,
//! use) are either a base64 PNG where any nonzero channel marks the region,
//! or a list of polygons given as `[x, y]` vertex lists in pixel units.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use confill::pipeline::Mode;
use confill::upsample::Controls;
use confill::{image::decode_control_png, Image, Mask};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ITERATIONS: usize = 4;
pub const MAX_ITERATIONS: usize = 16;
/// Desk-scale limit on the frame area.
pub const MAX_PIXELS: usize = 2048 * 2048;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    ExtentMismatch(String),
    #[error("no model loaded")]
    NoModel,
    #[error("deadline of {0} ms exceeded")]
    Deadline(u64),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::BadRequest(_) => 400,
            ApiError::NotFound(_) => 404,
            ApiError::ExtentMismatch(_) => 422,
            ApiError::NoModel | ApiError::Deadline(_) => 503,
            ApiError::Internal(_) => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::BadRequest(_) => "bad_request",
            ApiError::ExtentMismatch(_) => "extent_mismatch",
            ApiError::NoModel => "model_not_loaded",
            ApiError::Deadline(_) => "deadline_exceeded",
            ApiError::NotFound(_) => "not_found",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl From<confill::Error> for ApiError {
    fn from(e: confill::Error) -> Self {
        match e {
            confill::Error::Extent(m) => ApiError::ExtentMismatch(m),
            confill::Error::Invalid(_) | confill::Error::PngDecode(_) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum Region {
    Png(String),
    Polygons(Vec<Vec<[f64; 2]>>),
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InpaintRequest {
    pub image: String,
    pub mask: Region,
    #[serde(default)]
    pub iterations: Option<usize>,
    /// `direct` or `upsampled`.
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub avoid: Option<Region>,
    #[serde(default, rename = "use")]
    pub use_region: Option<Region>,
    /// One PNG carrying both controls: red marks avoid, green marks use.
    #[serde(default)]
    pub controls: Option<String>,
    /// Tighter deadline than the server default; never looser.
    #[serde(default)]
    pub deadline_ms: Option<u64>,
    /// Must name the loaded checkpoint when given.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

/// A decoded, validated request.
#[derive(Debug, Clone)]
pub struct Job {
    pub image: Image,
    pub hole: Mask,
    pub iterations: usize,
    pub mode: Mode,
    pub controls: Controls,
    pub deadline_ms: Option<u64>,
    pub checkpoint: Option<String>,
}

/// One iteration of the trace: counts plus PNG frames of the prediction,
/// confidence and the hole the pass started from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepSummary {
    pub t: usize,
    pub accepted: usize,
    pub remaining: usize,
    pub y: String,
    pub c: String,
    pub m: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InpaintResponse {
    pub job: String,
    pub checkpoint: String,
    pub mode: String,
    pub image: String,
    pub trace: Vec<StepSummary>,
    pub residual: Option<String>,
    pub fallback: bool,
    /// Stage name to milliseconds. The only field that varies between
    /// identical requests.
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceFrame {
    pub job: String,
    pub t: usize,
    pub y: String,
    pub c: String,
    pub m: String,
    pub u: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

pub fn b64_encode(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

fn b64_decode(field: &str, s: &str) -> Result<Vec<u8>, ApiError> {
    STANDARD
        .decode(s.trim())
        .map_err(|e| ApiError::BadRequest(format!("{field}: base64: {e}")))
}

/// Read the PNG header and refuse frames over [`MAX_PIXELS`] before decoding.
fn check_png_area(field: &str, bytes: &[u8]) -> Result<(), ApiError> {
    const SIG: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    if bytes.len() < 24 || bytes[..8] != SIG || &bytes[12..16] != b"IHDR" {
        return Err(ApiError::BadRequest(format!("{field}: not a PNG")));
    }
    let w = u32::from_be_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let h = u32::from_be_bytes(bytes[20..24].try_into().unwrap()) as usize;
    if w.saturating_mul(h) > MAX_PIXELS {
        return Err(ApiError::BadRequest(format!("{field}: {w}x{h} exceeds {MAX_PIXELS} pixels")));
    }
    Ok(())
}

fn png_bytes(field: &str, s: &str) -> Result<Vec<u8>, ApiError> {
    let bytes = b64_decode(field, s)?;
    check_png_area(field, &bytes)?;
    Ok(bytes)
}

fn map_decode(field: &str, e: confill::Error) -> ApiError {
    ApiError::BadRequest(format!("{field}: {e}"))
}

fn region(field: &str, r: &Region, width: usize, height: usize) -> Result<Mask, ApiError> {
    match r {
        Region::Png(s) => {
            let m = Mask::decode_png(&png_bytes(field, s)?).map_err(|e| map_decode(field, e))?;
            if (m.width(), m.height()) != (width, height) {
                return Err(ApiError::ExtentMismatch(format!(
                    "{field} is {}x{}, image is {width}x{height}",
                    m.width(),
                    m.height()
                )));
            }
            Ok(m)
        }
        Region::Polygons(polys) => {
            if polys.iter().flatten().flatten().any(|v| !v.is_finite()) {
                return Err(ApiError::BadRequest(format!("{field}: non-finite vertex")));
            }
            let polys: Vec<Vec<(f64, f64)>> = polys.iter().map(|p| p.iter().map(|v| (v[0], v[1])).collect()).collect();
            Ok(Mask::from_polygons(width, height, &polys))
        }
    }
}

/// Decode a JSON request body into a [`Job`]. Never panics on any input.
pub fn parse_request(body: &[u8]) -> Result<Job, ApiError> {
    let req: InpaintRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("request: {e}")))?;
    decode_request(&req)
}

pub fn decode_request(req: &InpaintRequest) -> Result<Job, ApiError> {
    let image = Image::decode_png(&png_bytes("image", &req.image)?).map_err(|e| map_decode("image", e))?;
    let (w, h) = (image.width(), image.height());
    let hole = region("mask", &req.mask, w, h)?;
    let iterations = req.iterations.unwrap_or(DEFAULT_ITERATIONS);
    if !(1..=MAX_ITERATIONS).contains(&iterations) {
        return Err(ApiError::BadRequest(format!("iterations must be in 1..={MAX_ITERATIONS}")));
    }
    let mode: Mode = req
        .mode
        .as_deref()
        .unwrap_or("direct")
        .parse()
        .map_err(|e: confill::Error| ApiError::BadRequest(e.to_string()))?;
    if req.controls.is_some() && (req.avoid.is_some() || req.use_region.is_some()) {
        return Err(ApiError::BadRequest("give either controls or avoid/use, not both".into()));
    }
    let controls = match &req.controls {
        Some(s) => {
            let (avoid, usable) = decode_control_png(&png_bytes("controls", s)?).map_err(|e| map_decode("controls", e))?;
            if (avoid.width(), avoid.height()) != (w, h) {
                return Err(ApiError::ExtentMismatch(format!(
                    "controls is {}x{}, image is {w}x{h}",
                    avoid.width(),
                    avoid.height()
                )));
            }
            Controls {
                avoid: (!avoid.is_empty()).then_some(avoid),
                use_region: (!usable.is_empty()).then_some(usable),
            }
        }
        None => Controls {
            avoid: req.avoid.as_ref().map(|r| region("avoid", r, w, h)).transpose()?,
            use_region: req.use_region.as_ref().map(|r| region("use", r, w, h)).transpose()?,
        },
    };
    if mode == Mode::Direct && (controls.avoid.is_some() || controls.use_region.is_some()) {
        return Err(ApiError::BadRequest("avoid/use regions need mode upsampled".into()));
    }
    if req.deadline_ms == Some(0) {
        return Err(ApiError::BadRequest("deadline_ms must be positive".into()));
    }
    Ok(Job { image, hole, iterations, mode, controls, deadline_ms: req.deadline_ms, checkpoint: req.checkpoint.clone() })
}

/// FNV-1a over the checkpoint id and the request body. Identical requests
/// against the same model share a job id.
pub fn job_id(checkpoint: &str, body: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in checkpoint.as_bytes().iter().chain(&[0u8]).chain(body) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
