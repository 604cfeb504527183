//! Orthogonal matching pursuit.
//!
//! Greedy selection by largest absolute correlation with the residual (ties
//! go to the lowest atom index). The active set is kept as an incrementally
//! updated QR factorization, so each refit is a back substitution.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dictionary::{Dictionary, SparseCode, SparseCodeSet};
use crate::error::{CvsError, Result};

/// Columns with `R_kk` below this (relative to the atom norm) are treated as
/// linearly dependent on the active set.
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmpParams {
    /// Maximum support size `L`; 0 means uncapped (limited by `atom_dim`).
    pub sparsity_cap: usize,
    /// Stop once `‖y − Dα‖² ≤ error_threshold`.
    pub error_threshold: f64,
}

impl OmpParams {
    pub fn new(sparsity_cap: usize, error_threshold: f64) -> Self {
        Self {
            sparsity_cap,
            error_threshold,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.error_threshold.is_finite() || self.error_threshold == f64::INFINITY)
            || self.error_threshold < 0.0
        {
            return Err(CvsError::Config(format!(
                "OMP error threshold {} must be non-negative",
                self.error_threshold
            )));
        }
        if self.sparsity_cap == 0 && self.error_threshold == 0.0 {
            return Err(CvsError::Config(
                "OMP needs a sparsity cap or a positive error threshold".into(),
            ));
        }
        Ok(())
    }
}

/// Result of coding one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    pub code: SparseCode,
    pub residual_norm_sq: f64,
    /// Squared residual after each selection; entry 0 is `‖y‖²`.
    pub residual_history: Vec<f64>,
}

pub fn omp(y: &DVector<f64>, dict: &Dictionary, params: OmpParams) -> Result<SparseCode> {
    Ok(omp_detailed(y, dict, params)?.code)
}

pub fn omp_detailed(y: &DVector<f64>, dict: &Dictionary, params: OmpParams) -> Result<OmpResult> {
    params.validate()?;
    check_signal(y, dict)?;
    Ok(pursue(y, dict, dict.atoms().tr_mul(y), None, params))
}

fn check_signal(y: &DVector<f64>, dict: &Dictionary) -> Result<()> {
    if y.len() != dict.atom_dim() {
        return Err(CvsError::Dimension(format!(
            "signal length {} does not match atom dimension {}",
            y.len(),
            dict.atom_dim()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CvsError::NonFinite("OMP input signal".into()));
    }
    Ok(())
}

/// Greedy loop. `corr` starts as `Dᵀy` and is kept equal to `Dᵀ·residual`
/// by rank-one updates; with a Gram matrix `DᵀD` those updates cost
/// `O(t·s)` instead of `O(t·n)`.
fn pursue(
    y: &DVector<f64>,
    dict: &Dictionary,
    mut corr: DVector<f64>,
    gram: Option<&DMatrix<f64>>,
    params: OmpParams,
) -> OmpResult {
    let d = dict.atoms();
    let cap = match params.sparsity_cap {
        0 => dict.atom_dim(),
        l => l.min(dict.atom_dim()),
    }
    .min(dict.atom_count());

    let mut residual = y.clone();
    let mut res_sq = residual.norm_squared();
    let mut history = vec![res_sq];
    let mut support: Vec<usize> = Vec::with_capacity(cap);
    let mut q_cols: Vec<DVector<f64>> = Vec::with_capacity(cap);
    // Dᵀq_i for each orthonormal direction
    let mut dq_cols: Vec<DVector<f64>> = Vec::with_capacity(cap);
    let mut r = DMatrix::<f64>::zeros(cap, cap);
    let mut z: Vec<f64> = Vec::with_capacity(cap);
    let mut selected = vec![false; dict.atom_count()];
    let mut rejected = vec![false; dict.atom_count()];

    while res_sq > params.error_threshold && support.len() < cap {
        let mut best: Option<(usize, f64)> = None;
        for (k, &c) in corr.iter().enumerate() {
            if selected[k] || rejected[k] {
                continue;
            }
            if best.is_none_or(|(_, b)| c.abs() > b) {
                best = Some((k, c.abs()));
            }
        }
        let Some((k, mag)) = best else { break };
        if mag <= f64::EPSILON * res_sq.sqrt() {
            break;
        }

        // orthogonalize the new atom against the active set (two passes of
        // classical Gram-Schmidt)
        let atom = d.column(k).into_owned();
        let mut q = atom.clone();
        let s = support.len();
        let mut coeffs = vec![0.0; s];
        for _ in 0..2 {
            for (i, qi) in q_cols.iter().enumerate() {
                let p = qi.dot(&q);
                coeffs[i] += p;
                q.axpy(-p, qi, 1.0);
            }
        }
        let rkk = q.norm();
        if rkk <= DEPENDENCE_TOL * atom.norm() {
            rejected[k] = true;
            continue;
        }
        q /= rkk;
        for (i, c) in coeffs.iter().enumerate() {
            r[(i, s)] = *c;
        }
        r[(s, s)] = rkk;

        let dq = match gram {
            Some(g) => {
                let mut v = g.column(k).into_owned();
                for (c, dqi) in coeffs.iter().zip(&dq_cols) {
                    v.axpy(-c, dqi, 1.0);
                }
                v / rkk
            }
            None => d.tr_mul(&q),
        };
        let proj = q.dot(&residual);
        residual.axpy(-proj, &q, 1.0);
        corr.axpy(-proj, &dq, 1.0);
        z.push(q.dot(y));
        q_cols.push(q);
        dq_cols.push(dq);
        support.push(k);
        selected[k] = true;
        res_sq = residual.norm_squared();
        history.push(res_sq);
    }

    // back substitution R c = z
    let s = support.len();
    let mut coef = vec![0.0; s];
    for i in (0..s).rev() {
        let mut acc = z[i];
        for j in i + 1..s {
            acc -= r[(i, j)] * coef[j];
        }
        coef[i] = acc / r[(i, i)];
    }
    let code = SparseCode::from_pairs(support.into_iter().zip(coef).collect());
    OmpResult {
        code,
        residual_norm_sq: res_sq,
        residual_history: history,
    }
}

/// Codes every column of `patches` (`B_s x J`), preserving order. Shares one
/// Gram matrix and one `DᵀP` product across all columns.
pub fn sparse_code_all(
    patches: &DMatrix<f64>,
    dict: &Dictionary,
    params: OmpParams,
) -> Result<SparseCodeSet> {
    params.validate()?;
    if patches.ncols() == 0 {
        return SparseCodeSet::new(dict.atom_count(), Vec::new());
    }
    if patches.nrows() != dict.atom_dim() {
        return Err(CvsError::Dimension(format!(
            "patch length {} does not match atom dimension {}",
            patches.nrows(),
            dict.atom_dim()
        )));
    }
    if patches.iter().any(|v| !v.is_finite()) {
        return Err(CvsError::NonFinite("OMP input signal".into()));
    }
    let d = dict.atoms();
    // explicit transpose so both products go through the blocked GEMM kernel
    let dt = d.transpose();
    let gram = &dt * d;
    let corr = &dt * patches;
    let codes = (0..patches.ncols())
        .into_par_iter()
        .map(|l| {
            pursue(
                &patches.column(l).into_owned(),
                dict,
                corr.column(l).into_owned(),
                Some(&gram),
                params,
            )
            .code
        })
        .collect();
    SparseCodeSet::new(dict.atom_count(), codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::DictInit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn atom_is_coded_by_itself() {
        let dict = Dictionary::init(16, 40, DictInit::SeededRandom(1)).unwrap();
        let y = dict.atoms().column(3).into_owned();
        for delta in [0.0, 1e-6] {
            let res = omp_detailed(&y, &dict, OmpParams::new(4, delta)).unwrap();
            assert_eq!(res.code.indices(), &[3]);
            assert!((res.code.values()[0] - 1.0).abs() < 1e-12);
            assert!(res.residual_norm_sq < 1e-24);
        }
    }

    #[test]
    fn orthonormal_two_atom_signal() {
        let dict = Dictionary::init(64, 64, DictInit::OvercompleteDct).unwrap();
        let y = dict.atoms().column(1) * 2.0 + dict.atoms().column(5) * 3.0;
        let code = omp(&y, &dict, OmpParams::new(2, 0.0)).unwrap();
        assert_eq!(code.indices(), &[1, 5]);
        assert!((code.values()[0] - 2.0).abs() < 1e-12);
        assert!((code.values()[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stopping_rules() {
        let dict = Dictionary::init(16, 32, DictInit::SeededRandom(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DVector::from_fn(16, |_, _| rng.random_range(-1.0..1.0));
        let capped = omp_detailed(&y, &dict, OmpParams::new(3, 0.0)).unwrap();
        assert_eq!(capped.code.support_size(), 3);
        let loose = omp_detailed(&y, &dict, OmpParams::new(10, 0.5 * y.norm_squared())).unwrap();
        assert!(loose.residual_norm_sq <= 0.5 * y.norm_squared());
        assert!(loose.code.support_size() < 10);
        let none = omp(&y, &dict, OmpParams::new(5, f64::INFINITY)).unwrap();
        assert!(none.is_empty());
        // history is non-increasing
        let full = omp_detailed(&y, &dict, OmpParams::new(15, 0.0)).unwrap();
        assert!(full
            .residual_history
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn errors() {
        let dict = Dictionary::init(16, 32, DictInit::SeededRandom(2)).unwrap();
        assert!(omp(&DVector::zeros(15), &dict, OmpParams::new(2, 0.0)).is_err());
        assert!(omp(&DVector::zeros(16), &dict, OmpParams::new(0, 0.0)).is_err());
        let mut y = DVector::zeros(16);
        y[2] = f64::NAN;
        assert!(matches!(
            omp(&y, &dict, OmpParams::new(2, 0.0)),
            Err(CvsError::NonFinite(_))
        ));
    }

    #[test]
    fn batch_matches_single_calls() {
        let dict = Dictionary::init(16, 32, DictInit::SeededRandom(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let patches = DMatrix::from_fn(16, 40, |_, _| rng.random_range(-1.0..1.0));
        let params = OmpParams::new(4, 1e-3);
        let set = sparse_code_all(&patches, &dict, params).unwrap();
        for l in 0..40 {
            let single = omp(&patches.column(l).into_owned(), &dict, params).unwrap();
            let batch = &set.codes()[l];
            assert_eq!(batch.indices(), single.indices());
            for (a, b) in batch.values().iter().zip(single.values()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
        let empty = sparse_code_all(&DMatrix::zeros(16, 0), &dict, params).unwrap();
        assert!(empty.is_empty());
        let same = DMatrix::from_fn(16, 5, |i, _| i as f64);
        let set = sparse_code_all(&same, &dict, params).unwrap();
        assert!(set.codes().windows(2).all(|w| w[0] == w[1]));
    }
}
