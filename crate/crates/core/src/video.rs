//! Grayscale frame containers, GOP layout and raw8 / YUV4MPEG2 file I/O.
//!
//! Only the luminance plane is ever read or written. Pixels are kept as
//! `f64` internally and converted to 8-bit only at file boundaries.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CvsError, Result};

/// One grayscale image, nominal range `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: DMatrix<f64>,
}

impl Frame {
    pub fn new(pixels: DMatrix<f64>) -> Result<Self> {
        if pixels.nrows() == 0 || pixels.ncols() == 0 {
            return Err(CvsError::Geometry(
                "frame must have at least one pixel".into(),
            ));
        }
        if let Some(pos) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(CvsError::NonFinite(format!(
                "frame pixel at linear index {pos}"
            )));
        }
        Ok(Self { pixels })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            pixels: DMatrix::zeros(rows, cols),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self {
            pixels: DMatrix::from_fn(rows, cols, f),
        }
    }

    /// Builds a frame from row-major 8-bit luma samples.
    pub fn from_luma_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != rows * cols {
            return Err(CvsError::Dimension(format!(
                "expected {} luma bytes, got {}",
                rows * cols,
                bytes.len()
            )));
        }
        Ok(Self::from_fn(rows, cols, |r, c| {
            f64::from(bytes[r * cols + c])
        }))
    }

    /// Row-major 8-bit luma samples; values are clamped to `[0, 255]` and
    /// rounded to the nearest integer.
    pub fn to_luma_bytes(&self) -> Vec<u8> {
        let (rows, cols) = self.pixels.shape();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push(quantize(self.pixels[(r, c)]));
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn cols(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pixels.shape()
    }

    pub fn pixels(&self) -> &DMatrix<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> DMatrix<f64> {
        self.pixels
    }
}

impl From<Frame> for DMatrix<f64> {
    fn from(frame: Frame) -> Self {
        frame.pixels
    }
}

fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.clamp(0.0, 255.0).round() as u8
    }
}

/// Ordered frames sharing one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    frames: Vec<Frame>,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| {
            CvsError::Geometry("video sequence must contain at least one frame".into())
        })?;
        let shape = first.shape();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape) {
            return Err(CvsError::Geometry(format!(
                "frame {i} is {}x{}, expected {}x{}",
                f.rows(),
                f.cols(),
                shape.0,
                shape.1
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn rows(&self) -> usize {
        self.frames[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.frames[0].cols()
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameRole {
    Key,
    NonKey,
}

impl FrameRole {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameRole::Key => "K",
            FrameRole::NonKey => "N",
        }
    }
}

/// Key / non-key assignment: frame `i` is a key frame iff `i % gop_size == 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GopStructure {
    gop_size: usize,
    roles: Vec<FrameRole>,
}

impl GopStructure {
    pub fn new(frame_count: usize, gop_size: usize) -> Result<Self> {
        if gop_size == 0 {
            return Err(CvsError::Config("gop_size must be at least 1".into()));
        }
        let roles = (0..frame_count)
            .map(|i| {
                if i % gop_size == 0 {
                    FrameRole::Key
                } else {
                    FrameRole::NonKey
                }
            })
            .collect();
        Ok(Self { gop_size, roles })
    }

    pub fn gop_size(&self) -> usize {
        self.gop_size
    }

    pub fn roles(&self) -> &[FrameRole] {
        &self.roles
    }

    pub fn role(&self, index: usize) -> FrameRole {
        self.roles[index]
    }

    pub fn key_indices(&self) -> Vec<usize> {
        self.indices_with(FrameRole::Key)
    }

    pub fn non_key_indices(&self) -> Vec<usize> {
        self.indices_with(FrameRole::NonKey)
    }

    fn indices_with(&self, role: FrameRole) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn split_gop(seq: &VideoSequence, gop_size: usize) -> Result<GopStructure> {
    GopStructure::new(seq.frame_count(), gop_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VideoFormat {
    /// Headerless planar 8-bit luma, frame-major.
    Raw8,
    /// YUV4MPEG2 stream; C420 variants and Cmono are accepted.
    Y4mLuma,
}

impl VideoFormat {
    /// Guesses the format from a file extension (`.y4m` or anything else).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("y4m") => VideoFormat::Y4mLuma,
            _ => VideoFormat::Raw8,
        }
    }
}

/// Metadata written next to raw8 outputs as `<file>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub rows: usize,
    pub cols: usize,
    pub fps: f64,
    pub frame_count: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".json");
    PathBuf::from(name)
}

pub fn read_sidecar(path: &Path) -> Result<RawSidecar> {
    let file = File::open(sidecar_path(path))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Reads a luma sequence.
///
/// For `Raw8`, `rows` and `cols` are required. For `Y4mLuma` they are
/// optional; when given they must agree with the stream header.
pub fn load_sequence(
    path: &Path,
    format: VideoFormat,
    rows: Option<usize>,
    cols: Option<usize>,
    max_frames: Option<usize>,
) -> Result<VideoSequence> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    match format {
        VideoFormat::Raw8 => {
            let (rows, cols) = match (rows, cols) {
                (Some(r), Some(c)) => (r, c),
                _ => {
                    let side = read_sidecar(path).map_err(|_| {
                        CvsError::Config("raw8 input needs rows/cols or a .json sidecar".into())
                    })?;
                    (side.rows, side.cols)
                }
            };
            parse_raw8(&bytes, rows, cols, max_frames)
        }
        VideoFormat::Y4mLuma => parse_y4m(&bytes, rows, cols, max_frames),
    }
}

pub fn parse_raw8(
    bytes: &[u8],
    rows: usize,
    cols: usize,
    max_frames: Option<usize>,
) -> Result<VideoSequence> {
    let frame_len = rows * cols;
    if frame_len == 0 {
        return Err(CvsError::Geometry("rows and cols must be positive".into()));
    }
    let available = bytes.len() / frame_len;
    let count = match max_frames {
        Some(n) => {
            if available < n {
                return Err(CvsError::format(
                    (available * frame_len) as u64,
                    format!("truncated payload: {n} frames requested, {available} complete frames present"),
                ));
            }
            n
        }
        None => {
            if !bytes.len().is_multiple_of(frame_len) {
                return Err(CvsError::format(
                    (available * frame_len) as u64,
                    format!(
                        "truncated payload: trailing {} bytes do not form a frame",
                        bytes.len() % frame_len
                    ),
                ));
            }
            available
        }
    };
    let frames = bytes
        .chunks_exact(frame_len)
        .take(count)
        .map(|chunk| Frame::from_luma_bytes(rows, cols, chunk))
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chroma {
    C420,
    Mono,
}

impl Chroma {
    fn plane_bytes(self, rows: usize, cols: usize) -> usize {
        match self {
            Chroma::Mono => 0,
            Chroma::C420 => 2 * rows.div_ceil(2) * cols.div_ceil(2),
        }
    }
}

fn parse_y4m(
    bytes: &[u8],
    rows: Option<usize>,
    cols: Option<usize>,
    max_frames: Option<usize>,
) -> Result<VideoSequence> {
    const MAGIC: &[u8] = b"YUV4MPEG2";
    if !bytes.starts_with(MAGIC) {
        return Err(CvsError::format(0, "missing YUV4MPEG2 signature"));
    }
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CvsError::format(bytes.len() as u64, "unterminated stream header"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| CvsError::format(0, "stream header is not ASCII"))?;

    let mut width = None;
    let mut height = None;
    let mut chroma = Chroma::C420;
    let mut offset = MAGIC.len();
    for token in header[MAGIC.len()..].split(' ') {
        let here = offset as u64;
        offset += token.len() + 1;
        if token.is_empty() {
            continue;
        }
        let (tag, value) = token.split_at(1);
        match tag {
            "W" => width = Some(parse_dim(value, here)?),
            "H" => height = Some(parse_dim(value, here)?),
            "C" => {
                chroma = if value.starts_with("420") {
                    Chroma::C420
                } else if value == "mono" {
                    Chroma::Mono
                } else {
                    return Err(CvsError::format(
                        here,
                        format!("unsupported chroma layout C{value}"),
                    ));
                }
            }
            _ => {}
        }
    }
    let width = width.ok_or_else(|| CvsError::format(0, "stream header lacks W"))?;
    let height = height.ok_or_else(|| CvsError::format(0, "stream header lacks H"))?;
    if rows.is_some_and(|r| r != height) || cols.is_some_and(|c| c != width) {
        return Err(CvsError::format(
            0,
            format!(
                "geometry mismatch: header is {height}x{width}, caller expects {}x{}",
                rows.unwrap_or(height),
                cols.unwrap_or(width)
            ),
        ));
    }

    let luma = width * height;
    let skip = chroma.plane_bytes(height, width);
    let mut pos = header_end + 1;
    let mut frames = Vec::new();
    while pos < bytes.len() && max_frames.is_none_or(|n| frames.len() < n) {
        if !bytes[pos..].starts_with(b"FRAME") {
            return Err(CvsError::format(pos as u64, "expected FRAME marker"));
        }
        let line_end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CvsError::format(pos as u64, "unterminated FRAME header"))?;
        pos += line_end + 1;
        if bytes.len() < pos + luma + skip {
            return Err(CvsError::format(
                pos as u64,
                format!(
                    "truncated frame payload: need {} bytes, have {}",
                    luma + skip,
                    bytes.len() - pos
                ),
            ));
        }
        frames.push(Frame::from_luma_bytes(
            height,
            width,
            &bytes[pos..pos + luma],
        )?);
        pos += luma + skip;
    }
    if let Some(n) = max_frames {
        if frames.len() < n {
            return Err(CvsError::format(
                pos as u64,
                format!(
                    "truncated stream: {n} frames requested, {} present",
                    frames.len()
                ),
            ));
        }
    }
    VideoSequence::new(frames)
}

fn parse_dim(value: &str, offset: u64) -> Result<usize> {
    match value.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(CvsError::format(
            offset,
            format!("invalid dimension {value:?}"),
        )),
    }
}

/// Writes a luma sequence. Raw8 output gets a JSON sidecar.
pub fn save_sequence(
    seq: &VideoSequence,
    path: &Path,
    format: VideoFormat,
    fps: f64,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        VideoFormat::Raw8 => {
            for frame in seq.frames() {
                out.write_all(&frame.to_luma_bytes())?;
            }
            out.flush()?;
            let side = RawSidecar {
                rows: seq.rows(),
                cols: seq.cols(),
                fps,
                frame_count: seq.frame_count(),
            };
            let json = serde_json::to_string_pretty(&side)?;
            std::fs::write(sidecar_path(path), json)?;
        }
        VideoFormat::Y4mLuma => {
            let (num, den) = fps_fraction(fps);
            writeln!(
                out,
                "YUV4MPEG2 W{} H{} F{num}:{den} Ip A1:1 Cmono",
                seq.cols(),
                seq.rows()
            )?;
            for frame in seq.frames() {
                out.write_all(b"FRAME\n")?;
                out.write_all(&frame.to_luma_bytes())?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn fps_fraction(fps: f64) -> (u64, u64) {
    if !(fps.is_finite() && fps > 0.0) {
        return (30, 1);
    }
    if fps.fract() == 0.0 {
        (fps as u64, 1)
    } else {
        ((fps * 1000.0).round() as u64, 1000)
    }
}
