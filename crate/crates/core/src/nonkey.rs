//! Non-key frame recovery from the previous reconstruction.
//!
//! A split-Bregman loop with residual feedback whose coding step solves, per
//! patch, `½‖Dα − r‖² + θ₁‖α‖₁ + θ₂‖α − ρ‖₁` (ρ: the co-located code of the
//! previous frame) by surrogate-function iterative shrinkage. The loop output
//! is refined by alternating OMP coding, a dictionary update and a
//! closed-form least-squares reconstruction solved with conjugate gradients.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, SparseCode, SparseCodeSet};
use crate::error::{CvsError, Result};
use crate::keyframe::{
    b_update, coding_budget, estimate_from, training_layout, InitSchedule, DEFAULT_MU,
};
use crate::learn::{update_dictionary, LearnConfig};
use crate::metrics::ssim;
use crate::omp::{sparse_code_all, OmpParams};
use crate::patch::{
    extract_patches, reconstruct_patches, scatter_add_patches, synthesize_image, PatchLayout,
};
use crate::sensing::{
    apply_global_adjoint, apply_global_forward, apply_normal, check_measurements, BlockGrid,
    SensingMatrix,
};
use crate::solver::{conjugate_gradient, steepest_descent, CgReport, DescentReport};

pub const DEFAULT_NONKEY_LAMBDA: f64 = 4e-3;
const POWER_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonKeyConfig {
    pub mu: f64,
    /// Spatial sparsity weight, `θ₁ = λK/(μn)`.
    pub lambda: f64,
    /// Temporal sparsity weight, `θ₂ = τK/(μn)`.
    pub tau: f64,
    pub shrink_iters: usize,
    /// `c = c_margin·λ_max(DᵀD)`.
    pub c_margin: f64,
    /// Weight of the patch prior in the refinement solve.
    pub refine_weight: f64,
    /// Per-patch OMP error budget during refinement.
    pub refine_budget: f64,
    pub refine_rounds: usize,
    /// Refinement rounds (from the first) that also update the dictionary.
    pub refine_dict_rounds: usize,
    pub inner_iters: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Dictionary update method, sparsity cap and MDU group for refinement.
    pub learn: LearnConfig,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// If set, the starting estimate is the previous frame carried through
    /// these projection-and-thresholding rounds against the current
    /// measurements; otherwise it is the previous frame itself.
    pub prediction: Option<InitSchedule>,
}

impl Default for NonKeyConfig {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            lambda: DEFAULT_NONKEY_LAMBDA,
            tau: DEFAULT_NONKEY_LAMBDA,
            shrink_iters: 25,
            c_margin: 1.05,
            refine_weight: 0.25,
            refine_budget: 2.55 * 2.55 * 64.0,
            refine_rounds: 3,
            refine_dict_rounds: 1,
            inner_iters: 200,
            max_iters: 6,
            tol: 1e-4,
            learn: LearnConfig::default(),
            cg_tol: 1e-8,
            cg_max_iters: 1000,
            prediction: Some(InitSchedule::default()),
        }
    }
}

impl NonKeyConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, ok: bool| {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(CvsError::Config(format!("{name} out of range: {v}")))
            }
        };
        check("mu", self.mu, self.mu > 0.0)?;
        check("lambda", self.lambda, self.lambda >= 0.0)?;
        check("tau", self.tau, self.tau >= 0.0)?;
        check("c_margin", self.c_margin, self.c_margin > 1.0)?;
        check(
            "refine_weight",
            self.refine_weight,
            self.refine_weight >= 0.0,
        )?;
        check(
            "refine_budget",
            self.refine_budget,
            self.refine_budget >= 0.0,
        )?;
        check("tol", self.tol, self.tol > 0.0)?;
        check("cg_tol", self.cg_tol, self.cg_tol > 0.0)?;
        if self.shrink_iters == 0
            || self.inner_iters == 0
            || self.max_iters == 0
            || self.cg_max_iters == 0
        {
            return Err(CvsError::Config(
                "non-key iteration counts must be at least 1".into(),
            ));
        }
        if self.learn.sparsity_cap == 0 {
            return Err(CvsError::Config(
                "refinement sparsity cap must be positive".into(),
            ));
        }
        if let Some(p) = &self.prediction {
            p.validate()?;
        }
        Ok(())
    }

    /// `(θ₁, θ₂)` for a layout.
    pub fn thresholds(&self, layout: &PatchLayout) -> (f64, f64) {
        (
            coding_budget(1.0, self.lambda, self.mu, layout),
            coding_budget(1.0, self.tau, self.mu, layout),
        )
    }
}

/// Scalar minimizer of `½(z − x)² + t1|z| + t2|z − ρ|` for `ρ ≥ 0`.
fn shrink_nonneg(x: f64, t1: f64, t2: f64, rho: f64) -> f64 {
    if x < -t1 - t2 {
        x + t1 + t2
    } else if x <= t1 - t2 {
        0.0
    } else if x < t1 - t2 + rho {
        x - t1 + t2
    } else if x <= t1 + t2 + rho {
        rho
    } else {
        x - t1 - t2
    }
}

/// `argmin_z ½(z − x)² + t1|z| + t2|z − ρ|` for any sign of `ρ`.
pub fn shrink_double_l1(x: f64, t1: f64, t2: f64, rho: f64) -> f64 {
    let s = if rho < 0.0 { -1.0 } else { 1.0 };
    s * shrink_nonneg(s * x, t1, t2, rho.abs())
}

/// Largest eigenvalue of `DᵀD` (equivalently of `DDᵀ`) by power iteration
/// from the normalized all-ones vector.
pub fn spectral_bound(dict: &Dictionary) -> f64 {
    let d = dict.atoms();
    let gram = d * d.transpose();
    let n = gram.nrows();
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..POWER_STEPS {
        let y = &gram * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = x.dot(&y);
        x = y / norm;
    }
    lambda.max((&gram * &x).dot(&x))
}

/// `½‖Dα − r‖² + θ₁‖α‖₁ + θ₂‖α − ρ‖₁`
pub fn double_l1_objective(
    r: &DVector<f64>,
    alpha: &DVector<f64>,
    prev: &DVector<f64>,
    dict: &Dictionary,
    theta1: f64,
    theta2: f64,
) -> f64 {
    0.5 * (dict.atoms() * alpha - r).norm_squared()
        + theta1 * alpha.lp_norm(1)
        + theta2 * (alpha - prev).lp_norm(1)
}

/// Surrogate-function shrinkage solver bound to one dictionary.
#[derive(Debug, Clone)]
pub struct ShrinkageSolver<'a> {
    dict: &'a Dictionary,
    c: f64,
}

impl<'a> ShrinkageSolver<'a> {
    /// Fails unless `c` exceeds the (power-iteration) spectral bound of `DᵀD`.
    pub fn new(dict: &'a Dictionary, c: f64) -> Result<Self> {
        let bound = spectral_bound(dict);
        if !(c > bound && c.is_finite()) {
            return Err(CvsError::Config(format!(
                "surrogate constant {c} does not exceed the spectral bound {bound}"
            )));
        }
        Ok(Self { dict, c })
    }

    pub fn with_margin(dict: &'a Dictionary, margin: f64) -> Result<Self> {
        Self::new(dict, margin * spectral_bound(dict))
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Iterates `α ← S(α + Dᵀ(r − Dα)/c)` entrywise with thresholds
    /// `θ₁/c`, `θ₂/c` and `ρ` from `prev`, starting at `α = prev`.
    pub fn solve_dense(
        &self,
        r: &DVector<f64>,
        prev: &DVector<f64>,
        theta1: f64,
        theta2: f64,
        iters: usize,
    ) -> DVector<f64> {
        self.solve_dense_from(r, prev.clone(), prev, theta1, theta2, iters)
    }

    /// As [`Self::solve_dense`] but starting from `start`.
    pub fn solve_dense_from(
        &self,
        r: &DVector<f64>,
        start: DVector<f64>,
        prev: &DVector<f64>,
        theta1: f64,
        theta2: f64,
        iters: usize,
    ) -> DVector<f64> {
        let d = self.dict.atoms();
        let t1 = theta1 / self.c;
        let t2 = theta2 / self.c;
        let mut alpha = start;
        for _ in 0..iters {
            let resid = r - d * &alpha;
            let mut v = d.tr_mul(&resid);
            v /= self.c;
            v += &alpha;
            for i in 0..alpha.len() {
                alpha[i] = shrink_double_l1(v[i], t1, t2, prev[i]);
            }
        }
        alpha
    }

    pub fn solve(
        &self,
        r: &DVector<f64>,
        prev: &SparseCode,
        theta1: f64,
        theta2: f64,
        iters: usize,
    ) -> Result<SparseCode> {
        self.solve_from(r, prev, prev, theta1, theta2, iters)
    }

    /// Sparse form of [`Self::solve_dense_from`].
    pub fn solve_from(
        &self,
        r: &DVector<f64>,
        start: &SparseCode,
        prev: &SparseCode,
        theta1: f64,
        theta2: f64,
        iters: usize,
    ) -> Result<SparseCode> {
        if r.len() != self.dict.atom_dim() {
            return Err(CvsError::Dimension(format!(
                "patch length {} vs atom dimension {}",
                r.len(),
                self.dict.atom_dim()
            )));
        }
        let t = self.dict.atom_count();
        if prev
            .indices()
            .iter()
            .chain(start.indices())
            .any(|&k| k >= t)
        {
            return Err(CvsError::Dimension(
                "code indexes past the dictionary".into(),
            ));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(CvsError::NonFinite("shrinkage input patch".into()));
        }
        let dense = self.solve_dense_from(
            r,
            start.to_dense(t),
            &prev.to_dense(t),
            theta1,
            theta2,
            iters,
        );
        Ok(SparseCode::from_dense(&dense))
    }
}

/// One-shot form of [`ShrinkageSolver::solve`].
pub fn solve_patch_double_l1(
    r: &DVector<f64>,
    prev: &SparseCode,
    dict: &Dictionary,
    theta1: f64,
    theta2: f64,
    c: f64,
    iters: usize,
) -> Result<SparseCode> {
    if iters == 0 {
        return Err(CvsError::Config(
            "shrinkage needs at least one iteration".into(),
        ));
    }
    ShrinkageSolver::new(dict, c)?.solve(r, prev, theta1, theta2, iters)
}

/// What the next frame inherits.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalContext {
    pub prev_frame: DMatrix<f64>,
    pub prev_codes: SparseCodeSet,
    pub dict: Dictionary,
}

impl TemporalContext {
    fn check(&self, layout: &PatchLayout) -> Result<()> {
        if self.prev_frame.shape() != (layout.rows(), layout.cols()) {
            return Err(CvsError::Geometry(
                "context frame does not match the measured geometry".into(),
            ));
        }
        if self.prev_codes.len() != layout.patch_count()
            || self.prev_codes.atom_count() != self.dict.atom_count()
        {
            return Err(CvsError::Dimension(
                "context codes do not match layout and dictionary".into(),
            ));
        }
        if self.dict.atom_dim() != layout.patch_len() {
            return Err(CvsError::Dimension(
                "context dictionary does not match the patch size".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonKeyProgress {
    pub iteration: usize,
    pub objective: f64,
    pub ssim: f64,
    pub ssim_change: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonKeyStep {
    pub progress: NonKeyProgress,
    pub descent: DescentReport,
    pub converged: bool,
}

/// State of the split-Bregman loop for one non-key frame.
#[derive(Debug, Clone)]
pub struct NonKeyDecoder<'a> {
    f_meas: &'a [DVector<f64>],
    phi: &'a SensingMatrix,
    ctx: &'a TemporalContext,
    config: NonKeyConfig,
    layout: PatchLayout,
    solver: ShrinkageSolver<'a>,
    theta: (f64, f64),
    v: DMatrix<f64>,
    b: DMatrix<f64>,
    codes: SparseCodeSet,
    synthesized: DMatrix<f64>,
    feedback: Vec<DVector<f64>>,
    iteration: usize,
    last_ssim: f64,
}

impl<'a> NonKeyDecoder<'a> {
    pub fn new(
        f_meas: &'a [DVector<f64>],
        phi: &'a SensingMatrix,
        ctx: &'a TemporalContext,
        layout: PatchLayout,
        config: NonKeyConfig,
    ) -> Result<Self> {
        config.validate()?;
        ctx.check(&layout)?;
        let grid = BlockGrid::new(layout.rows(), layout.cols(), phi.block_side())?;
        check_measurements(f_meas, grid.block_count(), phi.rows())?;
        if f_meas.iter().any(|fi| fi.iter().any(|x| !x.is_finite())) {
            return Err(CvsError::NonFinite("non-key measurements".into()));
        }
        let solver = ShrinkageSolver::with_margin(&ctx.dict, config.c_margin)?;
        let (v, synthesized) = match &config.prediction {
            Some(schedule) => {
                let predicted = estimate_from(ctx.prev_frame.clone(), f_meas, phi, schedule)?;
                (predicted.clone(), predicted)
            }
            None => (
                ctx.prev_frame.clone(),
                synthesize_image(&ctx.prev_codes, &ctx.dict, &layout)?,
            ),
        };
        Ok(Self {
            f_meas,
            phi,
            ctx,
            theta: config.thresholds(&layout),
            config,
            solver,
            v,
            b: DMatrix::zeros(layout.rows(), layout.cols()),
            codes: ctx.prev_codes.clone(),
            synthesized,
            feedback: f_meas.to_vec(),
            layout,
            iteration: 0,
            last_ssim: 0.0,
        })
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn codes(&self) -> &SparseCodeSet {
        &self.codes
    }

    /// Running measurement vector `f^k` of the residual feedback.
    pub fn feedback(&self) -> &[DVector<f64>] {
        &self.feedback
    }

    pub fn surrogate_constant(&self) -> f64 {
        self.solver.c()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// v-update on `f^k`, per-patch shrinkage, b-update, residual feedback.
    pub fn step(&mut self) -> Result<NonKeyStep> {
        let previous = self.v.clone();
        let anchor = &self.synthesized - &self.b;
        let descent = steepest_descent(
            &mut self.v,
            &self.feedback,
            self.phi,
            self.config.mu,
            &anchor,
            self.config.inner_iters,
            None,
        )?;

        let r = &self.v + &self.b;
        let patches = extract_patches(&r, &self.layout)?;
        let (t1, t2) = self.theta;
        let iters = self.config.shrink_iters;
        let solver = &self.solver;
        let prev = self.ctx.prev_codes.codes();
        let current = self.codes.codes();
        let codes = (0..patches.ncols())
            .into_par_iter()
            .map(|l| {
                solver.solve_from(
                    &patches.column(l).into_owned(),
                    &current[l],
                    &prev[l],
                    t1,
                    t2,
                    iters,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        self.codes = SparseCodeSet::new(self.ctx.dict.atom_count(), codes)?;
        self.synthesized = synthesize_image(&self.codes, &self.ctx.dict, &self.layout)?;
        b_update(&mut self.b, &self.v, &self.synthesized);

        let projected = apply_global_forward(&self.v, self.phi)?;
        for ((fk, f), p) in self.feedback.iter_mut().zip(self.f_meas).zip(&projected) {
            *fk += f;
            *fk -= p;
        }

        let s = ssim(&self.v, &previous)?;
        let change = (s - self.last_ssim).abs();
        self.last_ssim = s;
        self.iteration += 1;
        Ok(NonKeyStep {
            progress: NonKeyProgress {
                iteration: self.iteration,
                objective: descent.objective_exit,
                ssim: s,
                ssim_change: change,
            },
            descent,
            converged: change <= self.config.tol,
        })
    }

    /// Runs to `max_iters` or convergence and returns `v*`.
    pub fn run(
        mut self,
        mut observer: Option<&mut dyn FnMut(&NonKeyProgress)>,
    ) -> Result<(DMatrix<f64>, usize)> {
        while self.iteration < self.config.max_iters {
            let step = self.step()?;
            if let Some(cb) = observer.as_deref_mut() {
                cb(&step.progress);
            }
            if step.converged {
                break;
            }
        }
        Ok((self.v, self.iteration))
    }
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub frame: DMatrix<f64>,
    pub codes: SparseCodeSet,
    pub dictionary: Dictionary,
    pub cg: Vec<CgReport>,
}

/// Solves `(ΦᵀΦ + I + λ′·C)u = v* + Φᵀf + λ′·Σ R_lᵀ p_l` by CG, where `C` is
/// the per-pixel patch coverage and `p_l` the patch estimates.
#[allow(clippy::too_many_arguments)]
pub fn refinement_solve(
    v_star: &DMatrix<f64>,
    f_meas: &[DVector<f64>],
    phi: &SensingMatrix,
    patch_estimates: &DMatrix<f64>,
    layout: &PatchLayout,
    weight: f64,
    start: &DMatrix<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(DMatrix<f64>, CgReport)> {
    let (rows, cols) = v_star.shape();
    let diag = layout.coverage().map(|c| 1.0 + weight * c);
    let rhs = v_star
        + apply_global_adjoint(f_meas, phi, rows, cols)?
        + scatter_add_patches(patch_estimates, layout)? * weight;
    let mut u = start.clone();
    let report = conjugate_gradient(
        |x| Ok(apply_normal(x, phi)? + x.component_mul(&diag)),
        &rhs,
        &mut u,
        tol,
        max_iters,
    )?;
    Ok((u, report))
}

/// Refinement: `refine_rounds` rounds of OMP coding of the current estimate,
/// a dictionary update in the first `refine_dict_rounds` of them, and the CG
/// reconstruction. Dictionary updates train on the densified patch grid of
/// [`training_layout`].
pub fn refine_frame(
    v_star: &DMatrix<f64>,
    f_meas: &[DVector<f64>],
    phi: &SensingMatrix,
    dict: &Dictionary,
    layout: &PatchLayout,
    config: &NonKeyConfig,
) -> Result<Refinement> {
    let params = OmpParams::new(config.learn.sparsity_cap, config.refine_budget);
    let mut dictionary = dict.clone();
    let mut u = v_star.clone();
    let mut reports = Vec::with_capacity(config.refine_rounds);
    let training = training_layout(layout, dictionary.atom_count())?;
    for round in 0..config.refine_rounds {
        if round < config.refine_dict_rounds {
            let train = extract_patches(&u, &training)?;
            let mut train_codes = sparse_code_all(&train, &dictionary, params)?;
            update_dictionary(
                config.learn.method,
                &train,
                &mut dictionary,
                &mut train_codes,
                config.learn.mdu_group_size,
            )?;
        }
        let codes = sparse_code_all(&extract_patches(&u, layout)?, &dictionary, params)?;
        let estimates = reconstruct_patches(&codes, &dictionary, layout.patch_count())?;
        let (next, report) = refinement_solve(
            v_star,
            f_meas,
            phi,
            &estimates,
            layout,
            config.refine_weight,
            &u,
            config.cg_tol,
            config.cg_max_iters,
        )?;
        u = next;
        reports.push(report);
    }
    // codes handed to the next frame describe the final estimate
    let patches = extract_patches(&u, layout)?;
    let codes = sparse_code_all(&patches, &dictionary, params)?;
    Ok(Refinement {
        frame: u,
        codes,
        dictionary,
        cg: reports,
    })
}

#[derive(Debug, Clone)]
pub struct NonKeyRecovery {
    pub frame: DMatrix<f64>,
    /// Loop output before refinement.
    pub v_star: DMatrix<f64>,
    pub iterations: usize,
    pub context: TemporalContext,
}

/// Full non-key recovery: split-Bregman loop from the context, then
/// refinement. Returns the frame and the context for the next frame.
pub fn recover_nonkey_frame(
    f_meas: &[DVector<f64>],
    phi: &SensingMatrix,
    ctx: &TemporalContext,
    layout: &PatchLayout,
    config: &NonKeyConfig,
    observer: Option<&mut dyn FnMut(&NonKeyProgress)>,
) -> Result<NonKeyRecovery> {
    let decoder = NonKeyDecoder::new(f_meas, phi, ctx, layout.clone(), *config)?;
    let (v_star, iterations) = decoder.run(observer)?;
    let refined = refine_frame(&v_star, f_meas, phi, &ctx.dict, layout, config)?;
    Ok(NonKeyRecovery {
        frame: refined.frame.clone(),
        v_star,
        iterations,
        context: TemporalContext {
            prev_frame: refined.frame,
            prev_codes: refined.codes,
            dict: refined.dictionary,
        },
    })
}
