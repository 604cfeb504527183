//! Key-frame recovery: split-Bregman iterations alternating a steepest-descent
//! pixel update, OMP coding over a relearned patch dictionary, and a Bregman
//! variable update. Stops on a small change of the SSIM between successive
//! iterates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::{DictInit, Dictionary, SparseCodeSet};
use crate::error::{CvsError, Result};
use crate::learn::{learn_dictionary, LearnConfig, LearnStats};
use crate::metrics::{psnr, ssim};
use crate::omp::{sparse_code_all, OmpParams};
use crate::patch::{extract_patches, synthesize_image, PatchLayout};
use crate::sensing::{
    apply_global_adjoint, apply_global_forward, check_measurements, BlockGrid, SensingMatrix,
};
use crate::solver::{steepest_descent, DescentReport};

/// Default `λ`: puts the per-patch OMP error budget near `2.55²·64`
/// (about 1% of the pixel range per pixel) for 8×8 patches at stride 4.
pub const DEFAULT_KEY_LAMBDA: f64 = 0.743;
pub const DEFAULT_MU: f64 = 2.5e-3;
pub const DEFAULT_OMEGA: f64 = 0.35;
pub const TRAINING_PATCHES_PER_ATOM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRecoveryConfig {
    /// Penalty weight of the split variable.
    pub mu: f64,
    /// Sparsity weight; sets `θ = λK/(μn)`.
    pub lambda: f64,
    /// OMP error budget factor, `δ = ω·θ`.
    pub omega: f64,
    /// Steepest-descent steps per outer iteration.
    pub inner_iters: usize,
    pub max_iters: usize,
    /// Stop once the SSIM between successive iterates changes by at most this.
    pub tol: f64,
    pub learn: LearnConfig,
    pub patch_side: usize,
    pub stride: usize,
    pub atom_count: usize,
    pub init: InitSchedule,
}

impl Default for KeyRecoveryConfig {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            lambda: DEFAULT_KEY_LAMBDA,
            omega: DEFAULT_OMEGA,
            inner_iters: 200,
            max_iters: 6,
            tol: 1e-4,
            learn: LearnConfig::default(),
            patch_side: 8,
            stride: 4,
            atom_count: 256,
            init: InitSchedule::default(),
        }
    }
}

impl KeyRecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CvsError::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("mu", self.mu)?;
        positive("lambda", self.lambda)?;
        positive("omega", self.omega)?;
        positive("tol", self.tol)?;
        if self.inner_iters == 0 || self.max_iters == 0 {
            return Err(CvsError::Config(
                "iteration counts must be at least 1".into(),
            ));
        }
        self.init.validate()?;
        self.learn.validate(self.patch_side * self.patch_side)
    }

    pub fn layout(&self, rows: usize, cols: usize) -> Result<PatchLayout> {
        PatchLayout::new(rows, cols, self.patch_side, self.stride)
    }

    /// Patch grid the dictionary is trained on: the coding grid, densified
    /// toward stride 1 until there are at least `TRAINING_PATCHES_PER_ATOM`
    /// patches per atom. Small frames would otherwise let the dictionary
    /// memorize every patch.
    pub fn training_layout(&self, rows: usize, cols: usize) -> Result<PatchLayout> {
        training_layout(&self.layout(rows, cols)?, self.atom_count)
    }

    /// `δ = ω·λK/(μn)` for a layout.
    pub fn coding_budget(&self, layout: &PatchLayout) -> f64 {
        coding_budget(self.omega, self.lambda, self.mu, layout)
    }

    pub fn initial_dictionary(&self) -> Result<Dictionary> {
        Dictionary::init(
            self.patch_side * self.patch_side,
            self.atom_count,
            DictInit::OvercompleteDct,
        )
    }
}

/// `layout` densified toward stride 1 until it holds at least
/// `TRAINING_PATCHES_PER_ATOM` patches per atom.
pub fn training_layout(layout: &PatchLayout, atom_count: usize) -> Result<PatchLayout> {
    let want = TRAINING_PATCHES_PER_ATOM * atom_count;
    let mut out = layout.clone();
    for stride in (1..layout.stride()).rev() {
        if out.patch_count() >= want {
            break;
        }
        out = PatchLayout::new(layout.rows(), layout.cols(), layout.patch_side(), stride)?;
    }
    Ok(out)
}

/// `ω·λK/(μn)` with `K = B_s·J` and `n` the pixel count.
pub fn coding_budget(omega: f64, lambda: f64, mu: f64, layout: &PatchLayout) -> f64 {
    let k = (layout.patch_len() * layout.patch_count()) as f64;
    let n = (layout.rows() * layout.cols()) as f64;
    omega * lambda * k / (mu * n)
}

/// Schedule of the initial estimate.
///
/// The first round is per-block `Φᵀf` followed by hard thresholding of the
/// 2-D DCT of 8×8 tiles at `threshold_frac` of each block's peak magnitude.
/// Every further round projects back onto the measurements and thresholds
/// again at `max(threshold_frac·peak, κ·σ̂)`, where `σ̂` is a median estimate
/// of the tile noise level and `κ` decays geometrically from `kappa_start`
/// to `kappa_end`; tile offsets alternate between rounds. With more than one
/// round the result ends with a final projection so it matches `f` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSchedule {
    pub threshold_frac: f64,
    pub rounds: usize,
    pub kappa_start: f64,
    pub kappa_end: f64,
}

impl Default for InitSchedule {
    fn default() -> Self {
        Self {
            threshold_frac: 0.02,
            rounds: 60,
            kappa_start: 6.0,
            kappa_end: 2.0,
        }
    }
}

impl InitSchedule {
    /// The single adjoint-and-threshold pass.
    pub fn single_pass(threshold_frac: f64) -> Self {
        Self {
            threshold_frac,
            rounds: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.threshold_frac) {
            return Err(CvsError::Config(format!(
                "init threshold {} outside [0, 1)",
                self.threshold_frac
            )));
        }
        if self.rounds == 0 {
            return Err(CvsError::Config(
                "initializer needs at least one round".into(),
            ));
        }
        if !(self.kappa_start >= 0.0
            && self.kappa_end >= 0.0
            && self.kappa_start.is_finite()
            && self.kappa_end.is_finite())
        {
            return Err(CvsError::Config(
                "initializer kappa must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn kappa(&self, round: usize) -> f64 {
        if round == 0 {
            return 0.0;
        }
        if self.rounds <= 2 || self.kappa_start == 0.0 {
            return self.kappa_start;
        }
        let t = (round - 1) as f64 / (self.rounds - 2) as f64;
        self.kappa_start * (self.kappa_end / self.kappa_start).powf(t)
    }
}

const INIT_TILE: usize = 8;

fn threshold_tiles(
    est: &mut DMatrix<f64>,
    grid: &BlockGrid,
    tile: usize,
    basis: &DMatrix<f64>,
    frac: f64,
    kappa: f64,
    shift: usize,
) {
    let (rows, cols) = est.shape();
    let b = grid.block_side;
    let n = tile * tile;
    for i in 0..grid.block_count() {
        let (r0, c0) = grid.origin(i);
        let peak = est.view((r0, c0), (b, b)).amax();
        let mut tiles = Vec::with_capacity((b / tile) * (b / tile));
        for tr in (0..b).step_by(tile) {
            for tc in (0..b).step_by(tile) {
                let r = (r0 + tr + shift).min(rows - tile);
                let c = (c0 + tc + shift).min(cols - tile);
                let x = DVector::from_iterator(n, est.view((r, c), (tile, tile)).iter().copied());
                tiles.push((r, c, basis.tr_mul(&x)));
            }
        }
        let mut thr = frac * peak;
        if kappa > 0.0 {
            let mut ac: Vec<f64> = tiles
                .iter()
                .flat_map(|(_, _, c)| c.iter().skip(1).map(|v| v.abs()))
                .collect();
            if !ac.is_empty() {
                let mid = ac.len() / 2;
                let (_, median, _) = ac.select_nth_unstable_by(mid, f64::total_cmp);
                thr = thr.max(kappa * *median / 0.6745);
            }
        }
        for (r, c, mut coef) in tiles {
            // the DC term is never thresholded once noise-adaptive rounds start
            let keep_dc = kappa > 0.0;
            for (k, v) in coef.iter_mut().enumerate() {
                if v.abs() < thr && !(keep_dc && k == 0) {
                    *v = 0.0;
                }
            }
            let y = basis * coef;
            for (dst, src) in est.view_mut((r, c), (tile, tile)).iter_mut().zip(y.iter()) {
                *dst = *src;
            }
        }
    }
}

fn project_onto_measurements(
    est: &mut DMatrix<f64>,
    f: &[DVector<f64>],
    phi: &SensingMatrix,
) -> Result<()> {
    let pred = apply_global_forward(est, phi)?;
    let residual: Vec<DVector<f64>> = f.iter().zip(&pred).map(|(a, p)| a - p).collect();
    *est += apply_global_adjoint(&residual, phi, est.nrows(), est.ncols())?;
    Ok(())
}

/// Initial key-frame estimate, see [`InitSchedule`].
pub fn init_keyframe(
    f: &[DVector<f64>],
    phi: &SensingMatrix,
    rows: usize,
    cols: usize,
    schedule: &InitSchedule,
) -> Result<DMatrix<f64>> {
    estimate_from(DMatrix::zeros(rows, cols), f, phi, schedule)
}

/// Runs the [`InitSchedule`] rounds from `start` instead of from zero; each
/// round opens with a projection onto the measurements (for a zero start the
/// first projection is exactly `Φᵀf`).
pub fn estimate_from(
    start: DMatrix<f64>,
    f: &[DVector<f64>],
    phi: &SensingMatrix,
    schedule: &InitSchedule,
) -> Result<DMatrix<f64>> {
    schedule.validate()?;
    let (rows, cols) = start.shape();
    let grid = BlockGrid::new(rows, cols, phi.block_side())?;
    check_measurements(f, grid.block_count(), phi.rows())?;
    let b = phi.block_side();
    let tile = (1..=INIT_TILE.min(b))
        .rev()
        .find(|t| b.is_multiple_of(*t))
        .unwrap_or(1);
    let basis = Dictionary::init(tile * tile, tile * tile, DictInit::OvercompleteDct)?;
    let mut est = start;
    for round in 0..schedule.rounds {
        project_onto_measurements(&mut est, f, phi)?;
        let shift = if round % 2 == 1 { tile / 2 } else { 0 };
        threshold_tiles(
            &mut est,
            &grid,
            tile,
            basis.atoms(),
            schedule.threshold_frac,
            schedule.kappa(round),
            shift,
        );
    }
    if schedule.rounds > 1 {
        project_onto_measurements(&mut est, f, phi)?;
    }
    Ok(est)
}

/// Relearns `dict` (warm start) on the patches of `r` taken on `training`,
/// then codes every patch of `layout` with OMP at error budget `budget`.
pub fn alpha_update(
    r: &DMatrix<f64>,
    dict: &Dictionary,
    learn: &LearnConfig,
    budget: f64,
    layout: &PatchLayout,
    training: &PatchLayout,
) -> Result<(SparseCodeSet, Dictionary, LearnStats)> {
    let patches = extract_patches(r, layout)?;
    let cfg = LearnConfig {
        error_threshold: budget,
        ..*learn
    };
    let outcome = if training == layout {
        learn_dictionary(&patches, &cfg, dict.clone())?
    } else {
        learn_dictionary(&extract_patches(r, training)?, &cfg, dict.clone())?
    };
    let codes = sparse_code_all(
        &patches,
        &outcome.dictionary,
        OmpParams::new(cfg.sparsity_cap, budget),
    )?;
    Ok((codes, outcome.dictionary, outcome.stats))
}

/// `b ← b + v − D∘α`
pub fn b_update(b: &mut DMatrix<f64>, v: &DMatrix<f64>, synthesized: &DMatrix<f64>) {
    *b += v;
    *b -= synthesized;
}

/// Per-iteration progress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyProgress {
    pub iteration: usize,
    /// Inner objective after the descent steps.
    pub objective: f64,
    /// PSNR of the current `D∘α` against the initial estimate.
    pub psnr_vs_init: f64,
    pub ssim: f64,
    pub ssim_change: f64,
}

/// One outer iteration's outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyStep {
    pub progress: KeyProgress,
    pub descent: DescentReport,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct KeyRecovery {
    /// `u* = D∘α*`
    pub frame: DMatrix<f64>,
    pub dictionary: Dictionary,
    pub codes: SparseCodeSet,
    pub iterations: usize,
    pub learn_stats: LearnStats,
    pub history: Vec<KeyProgress>,
}

/// State of one key-frame recovery session.
#[derive(Debug, Clone)]
pub struct KeyDecoder<'a> {
    f: &'a [DVector<f64>],
    phi: &'a SensingMatrix,
    config: KeyRecoveryConfig,
    layout: PatchLayout,
    training: PatchLayout,
    budget: f64,
    initial: DMatrix<f64>,
    v: DMatrix<f64>,
    b: DMatrix<f64>,
    codes: SparseCodeSet,
    dict: Dictionary,
    synthesized: DMatrix<f64>,
    iteration: usize,
    last_ssim: f64,
    stats: LearnStats,
    history: Vec<KeyProgress>,
}

impl<'a> KeyDecoder<'a> {
    /// Starts from the built-in initializer.
    pub fn new(
        f: &'a [DVector<f64>],
        phi: &'a SensingMatrix,
        rows: usize,
        cols: usize,
        config: KeyRecoveryConfig,
    ) -> Result<Self> {
        config.validate()?;
        let grid = BlockGrid::new(rows, cols, phi.block_side())?;
        check_measurements(f, grid.block_count(), phi.rows())?;
        if f.iter().any(|fi| fi.iter().any(|x| !x.is_finite())) {
            return Err(CvsError::NonFinite("key-frame measurements".into()));
        }
        let init = init_keyframe(f, phi, rows, cols, &config.init)?;
        Self::with_initial(f, phi, init, config)
    }

    /// Starts from a caller-supplied frame-shaped estimate.
    pub fn with_initial(
        f: &'a [DVector<f64>],
        phi: &'a SensingMatrix,
        initial: DMatrix<f64>,
        config: KeyRecoveryConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (rows, cols) = initial.shape();
        let grid = BlockGrid::new(rows, cols, phi.block_side())?;
        check_measurements(f, grid.block_count(), phi.rows())?;
        if initial.iter().any(|x| !x.is_finite()) {
            return Err(CvsError::NonFinite("initial estimate".into()));
        }
        let layout = config.layout(rows, cols)?;
        let training = config.training_layout(rows, cols)?;
        let dict = config.initial_dictionary()?;
        let codes = SparseCodeSet::zeros(dict.atom_count(), layout.patch_count());
        Ok(Self {
            f,
            phi,
            budget: config.coding_budget(&layout),
            config,
            v: initial.clone(),
            b: DMatrix::zeros(rows, cols),
            synthesized: DMatrix::zeros(rows, cols),
            initial,
            layout,
            training,
            codes,
            dict,
            iteration: 0,
            last_ssim: 0.0,
            stats: LearnStats::default(),
            history: Vec::new(),
        })
    }

    pub fn coding_budget(&self) -> f64 {
        self.budget
    }

    pub fn layout(&self) -> &PatchLayout {
        &self.layout
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn initial(&self) -> &DMatrix<f64> {
        &self.initial
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn codes(&self) -> &SparseCodeSet {
        &self.codes
    }

    /// Current `D∘α`.
    pub fn estimate(&self) -> &DMatrix<f64> {
        &self.synthesized
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn learn_stats(&self) -> &LearnStats {
        &self.stats
    }

    /// One outer iteration: α-update (with relearning), v-update, SSIM
    /// bookkeeping, b-update.
    pub fn step(&mut self) -> Result<KeyStep> {
        let previous = self.v.clone();
        let r = &self.v + &self.b;
        let (codes, dict, stats) = alpha_update(
            &r,
            &self.dict,
            &self.config.learn,
            self.budget,
            &self.layout,
            &self.training,
        )?;
        self.stats.absorb(&stats);
        self.codes = codes;
        self.dict = dict;
        self.synthesized = synthesize_image(&self.codes, &self.dict, &self.layout)?;

        let anchor = &self.synthesized - &self.b;
        let descent = steepest_descent(
            &mut self.v,
            self.f,
            self.phi,
            self.config.mu,
            &anchor,
            self.config.inner_iters,
            None,
        )?;
        let s = ssim(&self.v, &previous)?;
        let change = (s - self.last_ssim).abs();
        self.last_ssim = s;
        b_update(&mut self.b, &self.v, &self.synthesized);
        self.iteration += 1;

        let progress = KeyProgress {
            iteration: self.iteration,
            objective: descent.objective_exit,
            psnr_vs_init: psnr(&self.synthesized, &self.initial)?,
            ssim: s,
            ssim_change: change,
        };
        self.history.push(progress);
        Ok(KeyStep {
            progress,
            descent,
            converged: change <= self.config.tol,
        })
    }

    /// Iterates until `max_iters` or the SSIM change falls to `tol`.
    pub fn run(
        mut self,
        mut observer: Option<&mut dyn FnMut(&KeyProgress)>,
    ) -> Result<KeyRecovery> {
        while self.iteration < self.config.max_iters {
            let step = self.step()?;
            if let Some(cb) = observer.as_deref_mut() {
                cb(&step.progress);
            }
            if step.converged {
                break;
            }
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> KeyRecovery {
        KeyRecovery {
            frame: self.synthesized,
            dictionary: self.dict,
            codes: self.codes,
            iterations: self.iteration,
            learn_stats: self.stats,
            history: self.history,
        }
    }
}

/// Full key-frame recovery from the built-in initializer.
pub fn recover_keyframe(
    f: &[DVector<f64>],
    phi: &SensingMatrix,
    rows: usize,
    cols: usize,
    config: &KeyRecoveryConfig,
    observer: Option<&mut dyn FnMut(&KeyProgress)>,
) -> Result<KeyRecovery> {
    KeyDecoder::new(f, phi, rows, cols, *config)?.run(observer)
}
