//! Quadratic solvers shared by both decoders.

use nalgebra::{DMatrix, DVector};

use crate::error::{CvsError, Result};
use crate::sensing::{
    apply_global_adjoint, apply_global_forward, apply_normal, measurement_norm_sq, SensingMatrix,
};

/// Normal-operator products drift from rounding; refresh every this many steps.
const REFRESH_EVERY: usize = 25;

/// Outcome of [`steepest_descent`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentReport {
    pub steps: usize,
    pub objective_entry: f64,
    pub objective_exit: f64,
}

/// `½‖f − Φv‖² + (μ/2)‖anchor − v‖²`.
pub fn penalized_objective(
    v: &DMatrix<f64>,
    f: &[DVector<f64>],
    phi: &SensingMatrix,
    mu: f64,
    anchor: &DMatrix<f64>,
) -> Result<f64> {
    let pred = apply_global_forward(v, phi)?;
    let mut data = 0.0;
    for (p, m) in pred.iter().zip(f) {
        data += (m - p).norm_squared();
    }
    Ok(0.5 * data + 0.5 * mu * (anchor - v).norm_squared())
}

/// Exact-line-search steepest descent on [`penalized_objective`].
///
/// The gradient is `ΦᵀΦv − Φᵀf − μ(anchor − v)` and the step
/// `|gᵀg / gᵀ(ΦᵀΦ + μI)g|`. `on_step` (if given) sees the objective after
/// every step. Stops early on a zero gradient.
pub fn steepest_descent(
    v: &mut DMatrix<f64>,
    f: &[DVector<f64>],
    phi: &SensingMatrix,
    mu: f64,
    anchor: &DMatrix<f64>,
    steps: usize,
    mut on_step: Option<&mut dyn FnMut(usize, f64)>,
) -> Result<DescentReport> {
    if anchor.shape() != v.shape() {
        return Err(CvsError::Geometry(
            "anchor and iterate differ in shape".into(),
        ));
    }
    let rows = v.nrows();
    let cols = v.ncols();
    let atf = apply_global_adjoint(f, phi, rows, cols)?;
    let f_sq = measurement_norm_sq(f);
    let rhs = &atf + anchor * mu;
    // ½‖f‖² − ⟨Φᵀf, v⟩ + ½⟨v, ΦᵀΦv⟩ + (μ/2)‖anchor − v‖²
    let objective = |v: &DMatrix<f64>, nv: &DMatrix<f64>| {
        0.5 * f_sq - atf.dot(v) + 0.5 * v.dot(nv) + 0.5 * mu * (anchor - v).norm_squared()
    };

    let mut nv = apply_normal(v, phi)?;
    let entry = objective(v, &nv);
    let mut taken = 0;
    for s in 0..steps {
        if s > 0 && s % REFRESH_EVERY == 0 {
            nv = apply_normal(v, phi)?;
        }
        let g = &nv + &*v * mu - &rhs;
        let gg = g.norm_squared();
        if !gg.is_finite() {
            return Err(CvsError::Divergence(format!(
                "non-finite gradient at descent step {s}"
            )));
        }
        if gg == 0.0 {
            break;
        }
        let ng = apply_normal(&g, phi)?;
        let curvature = g.dot(&ng) + mu * gg;
        if !(curvature > 0.0) {
            break;
        }
        let eta = (gg / curvature).abs();
        v.zip_apply(&g, |a, b| *a -= eta * b);
        nv.zip_apply(&ng, |a, b| *a -= eta * b);
        taken += 1;
        if let Some(cb) = on_step.as_deref_mut() {
            cb(s, objective(v, &nv));
        }
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CvsError::Divergence(
            "descent produced non-finite pixels".into(),
        ));
    }
    let exit = penalized_objective(v, f, phi, mu, anchor)?;
    Ok(DescentReport {
        steps: taken,
        objective_entry: entry,
        objective_exit: exit,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients for a symmetric positive definite operator, warm
/// started from `x`. Fails with `Divergence` if `rel_tol` is not reached in
/// `max_iter` iterations.
pub fn conjugate_gradient(
    apply: impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    rhs: &DMatrix<f64>,
    x: &mut DMatrix<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let b_norm = rhs.norm();
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = rhs - apply(x)?;
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for it in 0..=max_iter {
        let rel = rr.sqrt() / b_norm;
        if !rel.is_finite() {
            return Err(CvsError::Divergence(format!(
                "CG residual became non-finite at iteration {it}"
            )));
        }
        if rel <= rel_tol {
            return Ok(CgReport {
                iterations: it,
                relative_residual: rel,
            });
        }
        if it == max_iter {
            break;
        }
        let ap = apply(&p)?;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(CvsError::Divergence(
                "CG operator is not positive definite".into(),
            ));
        }
        let a = rr / pap;
        x.zip_apply(&p, |xi, pi| *xi += a * pi);
        r.zip_apply(&ap, |ri, api| *ri -= a * api);
        let rr_next = r.norm_squared();
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    Err(CvsError::Divergence(format!(
        "CG did not reach relative residual {rel_tol:e} in {max_iter} iterations (at {:e})",
        rr.sqrt() / b_norm
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::BlockGrid;
    use crate::video::Frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..255.0))
    }

    /// `(ΦᵀΦ + μI)⁻¹(Φᵀf + μ·anchor)` for a single block by dense LU.
    fn dense_minimizer(
        phi: &SensingMatrix,
        f: &DVector<f64>,
        mu: f64,
        anchor: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let m = phi.matrix();
        let n = m.ncols();
        let sys = m.tr_mul(m) + DMatrix::<f64>::identity(n, n) * mu;
        let grid = BlockGrid::new(anchor.nrows(), anchor.ncols(), phi.block_side()).unwrap();
        let rhs = m.tr_mul(f) + grid.extract(anchor, 0) * mu;
        let sol = sys.lu().solve(&rhs).unwrap();
        let mut out = DMatrix::zeros(anchor.nrows(), anchor.ncols());
        grid.insert(&mut out, 0, &sol);
        out
    }

    #[test]
    fn descent_reaches_dense_minimizer_monotonically() {
        let phi = SensingMatrix::generate(3, 0.5, 8).unwrap();
        let truth = Frame::new(random_image(8, 8, 1)).unwrap();
        let f = crate::sensing::measure_frame(&truth, &phi, 0.0, 0).unwrap();
        let anchor = random_image(8, 8, 2);
        let mu = 0.1;
        let expected = dense_minimizer(&phi, &f[0], mu, &anchor);
        let mut v = DMatrix::zeros(8, 8);
        let mut trace = Vec::new();
        let mut cb = |_: usize, q: f64| trace.push(q);
        let report = steepest_descent(&mut v, &f, &phi, mu, &anchor, 200, Some(&mut cb)).unwrap();
        assert!((&v - &expected).norm() <= 1e-6 * expected.norm());
        assert!(report.objective_exit <= report.objective_entry);
        let mut last = report.objective_entry;
        for q in trace {
            assert!(q <= last * (1.0 + 1e-12) + 1e-9);
            last = q;
        }
    }

    #[test]
    fn descent_is_stationary_at_minimizer() {
        let phi = SensingMatrix::generate(4, 0.25, 8).unwrap();
        let truth = Frame::new(random_image(8, 8, 5)).unwrap();
        let f = crate::sensing::measure_frame(&truth, &phi, 0.0, 0).unwrap();
        let anchor = random_image(8, 8, 6);
        let mut v = dense_minimizer(&phi, &f[0], 0.5, &anchor);
        let before = v.clone();
        steepest_descent(&mut v, &f, &phi, 0.5, &anchor, 10, None).unwrap();
        assert!((&v - &before).amax() < 1e-9);
    }

    #[test]
    fn descent_rejects_non_finite() {
        let phi = SensingMatrix::generate(4, 0.5, 8).unwrap();
        let mut f = vec![DVector::zeros(phi.rows())];
        f[0][0] = f64::NAN;
        let mut v = DMatrix::zeros(8, 8);
        let anchor = DMatrix::zeros(8, 8);
        assert!(matches!(
            steepest_descent(&mut v, &f, &phi, 0.1, &anchor, 5, None),
            Err(CvsError::Divergence(_))
        ));
    }

    #[test]
    fn cg_solves_spd_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(12, 12, |_, _| rng.random_range(-1.0..1.0));
        let spd = a.tr_mul(&a) + DMatrix::<f64>::identity(12, 12);
        let b = DMatrix::from_fn(12, 1, |i, _| i as f64 - 3.0);
        let mut x = DMatrix::zeros(12, 1);
        let rep = conjugate_gradient(|p| Ok(&spd * p), &b, &mut x, 1e-12, 100).unwrap();
        assert!(rep.relative_residual <= 1e-12);
        let exact = spd.clone().lu().solve(&b).unwrap();
        assert!((&x - &exact).norm() <= 1e-10 * exact.norm());
        let mut x = DMatrix::zeros(12, 1);
        assert!(conjugate_gradient(|p| Ok(&spd * p), &b, &mut x, 1e-30, 2).is_err());
        let mut z = DMatrix::from_element(3, 1, 1.0);
        conjugate_gradient(|p| Ok(p.clone()), &DMatrix::zeros(3, 1), &mut z, 1e-8, 5).unwrap();
        assert_eq!(z, DMatrix::zeros(3, 1));
    }
}
