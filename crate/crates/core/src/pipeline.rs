//! Sequence-level encode/decode, rate-distortion sweeps and the dictionary
//! method comparison, plus their CSV outputs.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{ContainerHeader, EncodedFrame, MeasurementSet, VECTORIZATION_COLUMN_MAJOR};
use crate::error::{CvsError, Result};
use crate::keyframe::{init_keyframe, recover_keyframe, KeyDecoder, KeyRecoveryConfig};
use crate::learn::DictMethod;
use crate::metrics::{format_psnr, psnr, ssim};
use crate::nonkey::{recover_nonkey_frame, NonKeyConfig, TemporalContext};
use crate::sensing::{measure_frame, SensingMatrix};
use crate::video::{split_gop, Frame, FrameRole, VideoSequence};

const KEY_SEED_TAG: u64 = 1;

/// Derives an independent 64-bit seed from a base seed and a stream tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodeParams {
    pub block_side: usize,
    pub mr_key: f64,
    pub mr_nonkey: f64,
    pub gop_size: usize,
    pub seed: u64,
    /// Standard deviation of additive measurement noise (0 = noiseless).
    pub noise_sigma: f64,
}

impl Default for EncodeParams {
    fn default() -> Self {
        Self {
            block_side: 32,
            mr_key: 0.5,
            mr_nonkey: 0.3,
            gop_size: 5,
            seed: 1,
            noise_sigma: 0.0,
        }
    }
}

impl EncodeParams {
    pub fn seed_key(&self) -> u64 {
        derive_seed(self.seed, KEY_SEED_TAG)
    }

    pub fn seed_nonkey(&self) -> u64 {
        derive_seed(self.seed, 2)
    }
}

/// Measures every frame with the sensing matrix of its role.
pub fn encode_sequence(seq: &VideoSequence, params: &EncodeParams) -> Result<MeasurementSet> {
    let gop = split_gop(seq, params.gop_size)?;
    let header = ContainerHeader {
        rows: seq.rows(),
        cols: seq.cols(),
        block_side: params.block_side,
        mr_key: params.mr_key,
        mr_nonkey: params.mr_nonkey,
        gop_size: params.gop_size,
        seed_key: params.seed_key(),
        seed_nonkey: params.seed_nonkey(),
        frame_count: seq.frame_count(),
        vectorization: VECTORIZATION_COLUMN_MAJOR,
    };
    header.grid()?;
    let phi_key = header.sensing_matrix(FrameRole::Key)?;
    let phi_nonkey = header.sensing_matrix(FrameRole::NonKey)?;
    let frames = seq
        .frames()
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let role = gop.role(i);
            let phi = match role {
                FrameRole::Key => &phi_key,
                FrameRole::NonKey => &phi_nonkey,
            };
            let blocks = measure_frame(
                frame,
                phi,
                params.noise_sigma,
                derive_seed(params.seed, 1000 + i as u64),
            )?;
            Ok(EncodedFrame { role, blocks })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementSet { header, frames })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    /// Key frames by the key decoder, non-key frames from temporal context.
    #[default]
    Full,
    /// Every frame is just the initial estimate of its own measurements.
    InitializerOnly,
    /// Every frame decoded independently by the key decoder.
    Intra,
}

impl std::str::FromStr for DecodeMode {
    type Err = CvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(DecodeMode::Full),
            "init" | "initializer" => Ok(DecodeMode::InitializerOnly),
            "intra" => Ok(DecodeMode::Intra),
            other => Err(CvsError::Config(format!("unknown decode mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DecodeParams {
    pub key: KeyRecoveryConfig,
    pub nonkey: NonKeyConfig,
    pub mode: DecodeMode,
}

impl DecodeParams {
    pub fn with_method(mut self, method: DictMethod) -> Self {
        self.key.learn.method = method;
        self.nonkey.learn.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.key.validate()?;
        self.nonkey.validate()?;
        if self.nonkey.learn.sparsity_cap >= self.key.patch_side * self.key.patch_side {
            return Err(CvsError::Config(
                "refinement sparsity cap must be below the patch length".into(),
            ));
        }
        Ok(())
    }
}

/// Short stable hash of any serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(&Sha256::digest(&json)[..8]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameReport {
    pub index: usize,
    pub role: FrameRole,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub outer_iters: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub sequence: VideoSequence,
    pub reports: Vec<FrameReport>,
    pub config_hash: String,
}

impl DecodeOutput {
    /// Mean PSNR and SSIM over the frames selected by `role` (all if `None`).
    pub fn mean_quality(&self, role: Option<FrameRole>) -> Option<(f64, f64)> {
        let picked: Vec<&FrameReport> = self
            .reports
            .iter()
            .filter(|r| role.is_none_or(|x| r.role == x))
            .collect();
        if picked.is_empty() {
            return None;
        }
        let n = picked.len() as f64;
        let p = picked.iter().map(|r| r.psnr).sum::<Option<f64>>()? / n;
        let s = picked.iter().map(|r| r.ssim).sum::<Option<f64>>()? / n;
        Some((p, s))
    }
}

struct Decoded {
    pixels: DMatrix<f64>,
    iterations: usize,
    wall_ms: f64,
}

fn decode_gop(
    set: &MeasurementSet,
    range: std::ops::Range<usize>,
    phis: &(SensingMatrix, SensingMatrix),
    params: &DecodeParams,
) -> Result<Vec<Decoded>> {
    let h = &set.header;
    let phi_for = |role: FrameRole| match role {
        FrameRole::Key => &phis.0,
        FrameRole::NonKey => &phis.1,
    };
    let layout = params.key.layout(h.rows, h.cols)?;
    let mut context: Option<TemporalContext> = None;
    let mut out = Vec::with_capacity(range.len());
    for i in range {
        let frame = &set.frames[i];
        let phi = phi_for(frame.role);
        let started = Instant::now();
        let (pixels, iterations) = match (params.mode, frame.role) {
            (DecodeMode::InitializerOnly, _) => (
                init_keyframe(&frame.blocks, phi, h.rows, h.cols, &params.key.init)?,
                0,
            ),
            (DecodeMode::Intra, _) | (DecodeMode::Full, FrameRole::Key) => {
                let rec = recover_keyframe(&frame.blocks, phi, h.rows, h.cols, &params.key, None)?;
                context = Some(TemporalContext {
                    prev_frame: rec.frame.clone(),
                    prev_codes: rec.codes,
                    dict: rec.dictionary,
                });
                (rec.frame, rec.iterations)
            }
            (DecodeMode::Full, FrameRole::NonKey) => {
                let ctx = context.as_ref().ok_or_else(|| {
                    CvsError::Config(format!("non-key frame {i} has no preceding key frame"))
                })?;
                let rec =
                    recover_nonkey_frame(&frame.blocks, phi, ctx, &layout, &params.nonkey, None)?;
                let frame_out = rec.frame.clone();
                context = Some(rec.context);
                (frame_out, rec.iterations)
            }
        };
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        debug!(
            "frame {i} ({}) decoded in {wall_ms:.1} ms, {iterations} outer iterations",
            frame.role.as_str()
        );
        out.push(Decoded {
            pixels: pixels.map(|x| x.clamp(0.0, 255.0)),
            iterations,
            wall_ms,
        });
    }
    Ok(out)
}

/// Decodes a container. GOPs are independent and decoded in parallel; frames
/// inside a GOP are sequential. With a reference, per-frame quality is
/// reported.
pub fn decode_measurements(
    set: &MeasurementSet,
    params: &DecodeParams,
    reference: Option<&VideoSequence>,
) -> Result<DecodeOutput> {
    params.validate()?;
    let h = &set.header;
    if set.frames.len() != h.frame_count {
        return Err(CvsError::Config(
            "container frame count disagrees with its header".into(),
        ));
    }
    if let Some(r) = reference {
        if (r.rows(), r.cols()) != (h.rows, h.cols) || r.frame_count() < h.frame_count {
            return Err(CvsError::Geometry(format!(
                "reference is {} frames of {}x{}, container holds {} frames of {}x{}",
                r.frame_count(),
                r.rows(),
                r.cols(),
                h.frame_count,
                h.rows,
                h.cols
            )));
        }
    }
    let phis = (
        h.sensing_matrix(FrameRole::Key)?,
        h.sensing_matrix(FrameRole::NonKey)?,
    );
    let gop = h.gop()?;
    let starts = gop.key_indices();
    let ranges: Vec<std::ops::Range<usize>> = starts
        .iter()
        .enumerate()
        .map(|(g, &s)| s..starts.get(g + 1).copied().unwrap_or(h.frame_count))
        .collect();
    let decoded: Vec<Vec<Decoded>> = ranges
        .par_iter()
        .map(|r| decode_gop(set, r.clone(), &phis, params))
        .collect::<Result<Vec<_>>>()?;

    let mut frames = Vec::with_capacity(h.frame_count);
    let mut reports = Vec::with_capacity(h.frame_count);
    for (i, d) in decoded.into_iter().flatten().enumerate() {
        let (p, s) = match reference {
            Some(r) => {
                let truth = r.frames()[i].pixels();
                (Some(psnr(truth, &d.pixels)?), Some(ssim(truth, &d.pixels)?))
            }
            None => (None, None),
        };
        reports.push(FrameReport {
            index: i,
            role: gop.role(i),
            psnr: p,
            ssim: s,
            outer_iters: d.iterations,
            wall_ms: d.wall_ms,
        });
        frames.push(Frame::new(d.pixels)?);
    }
    let config_hash = config_hash(&(
        h.rows,
        h.cols,
        h.block_side,
        h.mr_key,
        h.mr_nonkey,
        h.gop_size,
        h.seed_key,
        h.seed_nonkey,
        params,
    ))?;
    Ok(DecodeOutput {
        sequence: VideoSequence::new(frames)?,
        reports,
        config_hash,
    })
}

pub const DECODE_CSV_HEADER: &str = "frame,role,psnr,ssim,outer_iters,wall_ms,config_hash";

pub fn decode_csv(out: &DecodeOutput) -> String {
    let mut s = String::from(DECODE_CSV_HEADER);
    s.push('\n');
    for r in &out.reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3},{}",
            r.index,
            r.role.as_str(),
            r.psnr.map(format_psnr).unwrap_or_default(),
            r.ssim.map(|x| format!("{x:.6}")).unwrap_or_default(),
            r.outer_iters,
            r.wall_ms,
            out.config_hash
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// `MR_K = MR_NK`
    Equal,
    /// `MR_K` held fixed while `MR_NK` sweeps.
    FixedKey,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Equal => "equal",
            Scenario::FixedKey => "fixed-key",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = CvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(Scenario::Equal),
            "fixed-key" => Ok(Scenario::FixedKey),
            other => Err(CvsError::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub mr_list: Vec<f64>,
    pub scenarios: Vec<Scenario>,
    pub fixed_key_mr: f64,
    pub trials: usize,
    pub encode: EncodeParams,
    pub decode: DecodeParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            mr_list: vec![0.1, 0.3, 0.5],
            scenarios: vec![Scenario::Equal, Scenario::FixedKey],
            fixed_key_mr: 0.5,
            trials: 5,
            encode: EncodeParams::default(),
            decode: DecodeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub scenario: Scenario,
    pub mr_key: f64,
    pub mr_nonkey: f64,
    pub trials: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub key_psnr: f64,
    pub nonkey_psnr: Option<f64>,
    pub config_hash: String,
}

/// Rate-distortion sweep. Each trial re-draws the sensing matrices; PSNR and
/// SSIM are averaged over all frames of all trials.
pub fn run_bench(seq: &VideoSequence, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.trials == 0 || cfg.mr_list.is_empty() || cfg.scenarios.is_empty() {
        return Err(CvsError::Config(
            "bench needs trials, ratios and scenarios".into(),
        ));
    }
    let hash = config_hash(cfg)?;
    let mut cells = Vec::new();
    for &scenario in &cfg.scenarios {
        for &mr in &cfg.mr_list {
            let mr_key = match scenario {
                Scenario::Equal => mr,
                Scenario::FixedKey => cfg.fixed_key_mr,
            };
            cells.push((scenario, mr_key, mr));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let results: Vec<DecodeOutput> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let (_, mr_key, mr_nonkey) = cells[c];
            let enc = EncodeParams {
                mr_key,
                mr_nonkey,
                seed: derive_seed(cfg.encode.seed, 10_000 + t as u64),
                ..cfg.encode
            };
            let set = encode_sequence(seq, &enc)?;
            let out = decode_measurements(&set, &cfg.decode, Some(seq))?;
            info!("bench cell mr_k={mr_key} mr_nk={mr_nonkey} trial {t} done");
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(cells.len());
    for (c, &(scenario, mr_key, mr_nonkey)) in cells.iter().enumerate() {
        let outs = &results[c * cfg.trials..(c + 1) * cfg.trials];
        let mean = |role: Option<FrameRole>| -> Option<(f64, f64)> {
            let per: Vec<(f64, f64)> = outs.iter().filter_map(|o| o.mean_quality(role)).collect();
            if per.is_empty() {
                return None;
            }
            let n = per.len() as f64;
            Some((
                per.iter().map(|x| x.0).sum::<f64>() / n,
                per.iter().map(|x| x.1).sum::<f64>() / n,
            ))
        };
        let (p, s) =
            mean(None).ok_or_else(|| CvsError::Config("bench produced no frames".into()))?;
        rows.push(BenchRow {
            scenario,
            mr_key,
            mr_nonkey,
            trials: cfg.trials,
            psnr: p,
            ssim: s,
            key_psnr: mean(Some(FrameRole::Key)).map(|x| x.0).unwrap_or(f64::NAN),
            nonkey_psnr: mean(Some(FrameRole::NonKey)).map(|x| x.0),
            config_hash: hash.clone(),
        });
    }
    Ok(rows)
}

pub const BENCH_CSV_HEADER: &str =
    "scenario,mr_key,mr_nonkey,trials,psnr,ssim,key_psnr,nonkey_psnr,config_hash";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6},{},{},{}",
            r.scenario.name(),
            r.mr_key,
            r.mr_nonkey,
            r.trials,
            format_psnr(r.psnr),
            r.ssim,
            format_psnr(r.key_psnr),
            r.nonkey_psnr.map(format_psnr).unwrap_or_default(),
            r.config_hash
        );
    }
    s
}

/// A matplotlib script drawing PSNR-vs-MR and SSIM-vs-MR curves, one line per
/// scenario, from the bench CSV named `csv_name` (resolved next to the
/// script).
pub fn plot_script(csv_name: &str) -> String {
    format!(
        r#"#!/usr/bin/env python3
# Rate-distortion curves from a cvs bench run.
import csv
import os
import sys

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
path = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "{csv_name}")
rows = list(csv.DictReader(open(path)))

fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for scenario in sorted({{r["scenario"] for r in rows}}):
    sel = sorted((r for r in rows if r["scenario"] == scenario), key=lambda r: float(r["mr_nonkey"]))
    mr = [float(r["mr_nonkey"]) for r in sel]
    axes[0].plot(mr, [float(r["psnr"]) for r in sel], marker="o", label=scenario)
    axes[1].plot(mr, [float(r["ssim"]) for r in sel], marker="s", label=scenario)
axes[0].set_xlabel("measurement ratio (non-key)")
axes[0].set_ylabel("mean PSNR (dB)")
axes[1].set_xlabel("measurement ratio (non-key)")
axes[1].set_ylabel("mean SSIM")
for ax in axes:
    ax.grid(True, alpha=0.3)
    ax.legend()
fig.tight_layout()
out = os.path.splitext(path)[0] + ".png"
fig.savefig(out, dpi=150)
print("wrote", out)
"#
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictCompareRow {
    pub method: DictMethod,
    pub iteration: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean wall time of one dictionary update so far, in milliseconds.
    pub mean_update_ms: f64,
}

/// Recovers one key frame with each dictionary method, logging quality after
/// every outer iteration. The SSIM stop is disabled so all `iterations` run.
/// The frame is measured exactly as the encoder would measure a key frame
/// under `seed`.
pub fn dict_compare(
    frame: &Frame,
    mr_key: f64,
    block_side: usize,
    seed: u64,
    key: &KeyRecoveryConfig,
    iterations: usize,
    methods: &[DictMethod],
) -> Result<Vec<DictCompareRow>> {
    let phi = SensingMatrix::generate(derive_seed(seed, KEY_SEED_TAG), mr_key, block_side)?;
    let f = measure_frame(frame, &phi, 0.0, 0)?;
    let mut rows = Vec::new();
    for &method in methods {
        let mut cfg = *key;
        cfg.learn.method = method;
        cfg.max_iters = iterations;
        cfg.tol = f64::MIN_POSITIVE;
        let mut dec = KeyDecoder::new(&f, &phi, frame.rows(), frame.cols(), cfg)?;
        for _ in 0..iterations {
            dec.step()?;
            rows.push(DictCompareRow {
                method,
                iteration: dec.iteration(),
                psnr: psnr(frame.pixels(), dec.estimate())?,
                ssim: ssim(frame.pixels(), dec.estimate())?,
                mean_update_ms: dec.learn_stats().mean_update_secs() * 1e3,
            });
        }
    }
    Ok(rows)
}

pub const DICT_COMPARE_CSV_HEADER: &str = "method,iteration,psnr,ssim,mean_update_ms";

pub fn dict_compare_csv(rows: &[DictCompareRow]) -> String {
    let mut s = String::from(DICT_COMPARE_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.4}",
            r.method.name(),
            r.iteration,
            format_psnr(r.psnr),
            r.ssim,
            r.mean_update_ms
        );
    }
    s
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}
