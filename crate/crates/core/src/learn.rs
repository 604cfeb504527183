//! Dictionary learning: MOD, K-SVD and a grouped multiple-atom update (MDU).
//!
//! Every update takes the current dictionary and codes, never increases the
//! fit objective `Σ‖p_l − Dα_l‖²` (K-SVD and MDU also rewrite the nonzero
//! coefficients, keeping each code's support), and leaves all atoms with unit
//! norm. Atoms nobody uses are replaced by the worst-approximated training
//! patch, normalized.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, SparseCodeSet};
use crate::error::{CvsError, Result};
use crate::linalg::{leading_left_singular_vectors, leading_singular, least_squares, solve_psd};
use crate::omp::{sparse_code_all, OmpParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DictMethod {
    Mod,
    #[default]
    Ksvd,
    Mdu,
}

impl DictMethod {
    pub fn name(self) -> &'static str {
        match self {
            DictMethod::Mod => "mod",
            DictMethod::Ksvd => "ksvd",
            DictMethod::Mdu => "mdu",
        }
    }
}

impl std::str::FromStr for DictMethod {
    type Err = CvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mod" => Ok(DictMethod::Mod),
            "ksvd" | "k-svd" => Ok(DictMethod::Ksvd),
            "mdu" => Ok(DictMethod::Mdu),
            other => Err(CvsError::Config(format!(
                "unknown dictionary method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub method: DictMethod,
    pub iterations: usize,
    /// `L`: at most this many atoms per training code.
    pub sparsity_cap: usize,
    /// `δ`: per-patch squared error at which coding stops early.
    pub error_threshold: f64,
    pub mdu_group_size: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            method: DictMethod::Ksvd,
            iterations: 20,
            sparsity_cap: 8,
            error_threshold: 1e-6,
            mdu_group_size: 4,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self, atom_dim: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(CvsError::Config(
                "dictionary learning needs at least one iteration".into(),
            ));
        }
        if self.sparsity_cap == 0 || self.sparsity_cap >= atom_dim {
            return Err(CvsError::Config(format!(
                "sparsity cap {} must be in [1, {atom_dim})",
                self.sparsity_cap
            )));
        }
        if self.mdu_group_size == 0 {
            return Err(CvsError::Config("MDU group size must be positive".into()));
        }
        if !(self.error_threshold >= 0.0) {
            return Err(CvsError::Config(
                "error threshold must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn omp_params(&self) -> OmpParams {
        OmpParams::new(self.sparsity_cap, self.error_threshold)
    }
}

/// `P − [Dα_l]` for a `B_s x J` patch matrix.
pub fn residual_matrix(
    patches: &DMatrix<f64>,
    dict: &Dictionary,
    codes: &SparseCodeSet,
) -> Result<DMatrix<f64>> {
    check_shapes(patches, dict, codes)?;
    let mut e = patches.clone();
    for (l, code) in codes.codes().iter().enumerate() {
        let mut col = e.column_mut(l);
        for (&k, &v) in code.indices().iter().zip(code.values()) {
            col.axpy(-v, &dict.atoms().column(k), 1.0);
        }
    }
    Ok(e)
}

/// `Σ‖p_l − Dα_l‖²`
pub fn fit_objective(
    patches: &DMatrix<f64>,
    dict: &Dictionary,
    codes: &SparseCodeSet,
) -> Result<f64> {
    Ok(residual_matrix(patches, dict, codes)?.norm_squared())
}

fn check_shapes(patches: &DMatrix<f64>, dict: &Dictionary, codes: &SparseCodeSet) -> Result<()> {
    if patches.nrows() != dict.atom_dim() {
        return Err(CvsError::Dimension(format!(
            "patch length {} vs atom dimension {}",
            patches.nrows(),
            dict.atom_dim()
        )));
    }
    if patches.ncols() != codes.len() {
        return Err(CvsError::Dimension(format!(
            "{} patches vs {} codes",
            patches.ncols(),
            codes.len()
        )));
    }
    if codes.atom_count() != dict.atom_count() {
        return Err(CvsError::Dimension(format!(
            "codes index {} atoms, dictionary has {}",
            codes.atom_count(),
            dict.atom_count()
        )));
    }
    Ok(())
}

/// For every atom, the `(patch, position-in-code)` pairs that use it.
fn atom_users(codes: &SparseCodeSet) -> Vec<Vec<(usize, usize)>> {
    let mut users = vec![Vec::new(); codes.atom_count()];
    for (l, code) in codes.codes().iter().enumerate() {
        for (pos, &k) in code.indices().iter().enumerate() {
            users[k].push((l, pos));
        }
    }
    users
}

/// Picks replacement patches for unused atoms: largest residual first,
/// lowest patch index on ties, each patch used at most once per call.
struct Replacer {
    taken: Vec<bool>,
}

impl Replacer {
    fn new(patch_count: usize) -> Self {
        Self {
            taken: vec![false; patch_count],
        }
    }

    fn next(&mut self, patches: &DMatrix<f64>, residual: &DMatrix<f64>) -> Option<DVector<f64>> {
        let mut best: Option<(usize, f64)> = None;
        for l in 0..patches.ncols() {
            if self.taken[l] {
                continue;
            }
            let r = residual.column(l).norm_squared();
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((l, r));
            }
        }
        let (l, _) = best?;
        self.taken[l] = true;
        let p = patches.column(l);
        let n = p.norm();
        (n > 0.0 && n.is_finite()).then(|| p / n)
    }
}

/// Method of optimal directions: `D ← P Xᵀ (X Xᵀ + εI)⁻¹` with
/// `ε = 1e-8·trace(X Xᵀ)/t`, then column renormalization with the inverse
/// scaling applied to the codes.
pub fn update_mod(
    patches: &DMatrix<f64>,
    dict: &mut Dictionary,
    codes: &mut SparseCodeSet,
) -> Result<()> {
    check_shapes(patches, dict, codes)?;
    let t = dict.atom_count();
    let bs = dict.atom_dim();
    let mut pxt = DMatrix::<f64>::zeros(bs, t);
    let mut xxt = DMatrix::<f64>::zeros(t, t);
    for (l, code) in codes.codes().iter().enumerate() {
        let p = patches.column(l);
        for (&i, &vi) in code.indices().iter().zip(code.values()) {
            pxt.column_mut(i).axpy(vi, &p, 1.0);
            for (&j, &vj) in code.indices().iter().zip(code.values()) {
                xxt[(i, j)] += vi * vj;
            }
        }
    }
    let trace = xxt.trace();
    let users = atom_users(codes);
    let old = dict.atoms().clone();
    let mut atoms = old.clone();
    if trace > 0.0 {
        let ridge = 1e-8 * trace / t as f64;
        for k in 0..t {
            xxt[(k, k)] += ridge;
        }
        let chol = xxt.cholesky().ok_or_else(|| {
            CvsError::Divergence("MOD normal matrix is not positive definite".into())
        })?;
        atoms = chol.solve(&pxt.transpose()).transpose();
    }

    let mut unused = Vec::new();
    for (k, used) in users.iter().enumerate() {
        let n = atoms.column(k).norm();
        if used.is_empty() || !(n > f64::MIN_POSITIVE && n.is_finite()) {
            // zero atom contributes nothing; dropping its coefficients keeps the fit
            for &(l, pos) in used {
                codes.codes_mut()[l].values_mut()[pos] = 0.0;
            }
            atoms.set_column(k, &old.column(k));
            unused.push(k);
            continue;
        }
        atoms.column_mut(k).unscale_mut(n);
        for &(l, pos) in used {
            codes.codes_mut()[l].values_mut()[pos] *= n;
        }
    }
    let mut next = Dictionary::normalized(atoms)?;
    if !unused.is_empty() {
        let residual = residual_matrix(patches, &next, codes)?;
        let mut replacer = Replacer::new(patches.ncols());
        let mut atoms = next.into_atoms();
        for k in unused {
            if let Some(p) = replacer.next(patches, &residual) {
                atoms.set_column(k, &p);
            }
        }
        next = Dictionary::normalized(atoms)?;
    }
    *dict = next;
    Ok(())
}

/// One K-SVD sweep over the atoms in index order.
pub fn update_ksvd(
    patches: &DMatrix<f64>,
    dict: &mut Dictionary,
    codes: &mut SparseCodeSet,
) -> Result<()> {
    let mut residual = residual_matrix(patches, dict, codes)?;
    let users = atom_users(codes);
    let mut atoms = dict.atoms().clone();
    let mut replacer = Replacer::new(patches.ncols());

    for (k, used) in users.iter().enumerate() {
        if used.is_empty() {
            if let Some(p) = replacer.next(patches, &residual) {
                atoms.set_column(k, &p);
            }
            continue;
        }
        let old_atom = atoms.column(k).into_owned();
        let coeffs: Vec<f64> = used
            .iter()
            .map(|&(l, pos)| codes.codes()[l].values()[pos])
            .collect();
        let mut ek = DMatrix::zeros(atoms.nrows(), used.len());
        for (j, &(l, _)) in used.iter().enumerate() {
            let mut col = ek.column_mut(j);
            col.copy_from(&residual.column(l));
            col.axpy(coeffs[j], &old_atom, 1.0);
        }
        let (atom, new_coeffs) = match leading_singular(&ek) {
            Some((sigma, mut u, mut v)) => {
                if u.dot(&old_atom) < 0.0 {
                    u.neg_mut();
                    v.neg_mut();
                }
                (u, v * sigma)
            }
            None => (old_atom, DVector::zeros(used.len())),
        };
        for (j, &(l, pos)) in used.iter().enumerate() {
            let mut col = residual.column_mut(l);
            col.copy_from(&ek.column(j));
            col.axpy(-new_coeffs[j], &atom, 1.0);
            codes.codes_mut()[l].values_mut()[pos] = new_coeffs[j];
        }
        atoms.set_column(k, &atom);
    }
    *dict = Dictionary::normalized(atoms)?;
    Ok(())
}

/// Grouped multiple-atom update.
///
/// Atoms are split into contiguous groups of `group_size`. For each group
/// the atoms and their nonzero coefficients are refit jointly against the
/// residual that excludes the group, by alternating least squares (two
/// alternations of coefficient step then atom step, followed by a final
/// coefficient step). The alternation is started from the truncated SVD of
/// the group residual and, separately, from the current atoms; the better
/// result is kept, and the group is left untouched if neither improves it.
/// With `group_size = 1` the SVD start is already the exact rank-one
/// solution, so the update coincides with K-SVD.
pub fn update_mdu(
    patches: &DMatrix<f64>,
    dict: &mut Dictionary,
    codes: &mut SparseCodeSet,
    group_size: usize,
) -> Result<()> {
    let t = dict.atom_count();
    if group_size == 0 || group_size > t {
        return Err(CvsError::Config(format!(
            "MDU group size {group_size} outside [1, {t}]"
        )));
    }
    let mut residual = residual_matrix(patches, dict, codes)?;
    let users = atom_users(codes);
    let mut atoms = dict.atoms().clone();
    let mut replacer = Replacer::new(patches.ncols());

    for start in (0..t).step_by(group_size) {
        let group: Vec<usize> = (start..(start + group_size).min(t)).collect();
        let active: Vec<usize> = group
            .iter()
            .copied()
            .filter(|&k| !users[k].is_empty())
            .collect();

        if !active.is_empty() {
            refit_group(
                patches.nrows(),
                &active,
                &users,
                &mut atoms,
                &mut residual,
                codes,
            );
        }
        for &k in group.iter().filter(|&&k| users[k].is_empty()) {
            if let Some(p) = replacer.next(patches, &residual) {
                atoms.set_column(k, &p);
            }
        }
    }
    *dict = Dictionary::normalized(atoms)?;
    Ok(())
}

/// Coefficients of the active atoms for the patches touching the group.
struct GroupFit {
    atoms: DMatrix<f64>,
    /// `a x |Ω|`, zero outside each patch's support.
    coeffs: DMatrix<f64>,
}

fn refit_group(
    dim: usize,
    active: &[usize],
    users: &[Vec<(usize, usize)>],
    atoms: &mut DMatrix<f64>,
    residual: &mut DMatrix<f64>,
    codes: &mut SparseCodeSet,
) {
    let mut omega: Vec<usize> = active
        .iter()
        .flat_map(|&k| users[k].iter().map(|u| u.0))
        .collect();
    omega.sort_unstable();
    omega.dedup();
    let a = active.len();
    // mask[i][j]: patch omega[j] uses active atom i
    let mut mask = vec![vec![false; omega.len()]; a];
    let mut current = GroupFit {
        atoms: DMatrix::zeros(dim, a),
        coeffs: DMatrix::zeros(a, omega.len()),
    };
    for (i, &k) in active.iter().enumerate() {
        current.atoms.set_column(i, &atoms.column(k));
        for &(l, pos) in &users[k] {
            let j = omega.binary_search(&l).expect("user patch is in omega");
            mask[i][j] = true;
            current.coeffs[(i, j)] = codes.codes()[l].values()[pos];
        }
    }
    // residual excluding the group
    let mut eg = DMatrix::zeros(dim, omega.len());
    for (j, &l) in omega.iter().enumerate() {
        eg.set_column(j, &residual.column(l));
    }
    eg += &current.atoms * &current.coeffs;

    let objective = |fit: &GroupFit| (&eg - &fit.atoms * &fit.coeffs).norm_squared();
    let base = objective(&current);

    let mut best: Option<(f64, GroupFit)> = None;
    if eg.ncols() >= a {
        let u = leading_left_singular_vectors(&eg, a);
        if u.ncols() == a {
            let mut init = u;
            for i in 0..a {
                if init.column(i).dot(&current.atoms.column(i)) < 0.0 {
                    init.column_mut(i).neg_mut();
                }
            }
            let fit = alternate(&eg, init, &mask, &current.atoms);
            best = Some((objective(&fit), fit));
        }
    }
    let warm = alternate(&eg, current.atoms.clone(), &mask, &current.atoms);
    let warm_obj = objective(&warm);
    let take_warm = match &best {
        Some((obj, _)) => warm_obj < obj * (1.0 - 1e-12),
        None => true,
    };
    if take_warm {
        best = Some((warm_obj, warm));
    }
    let Some((obj, mut fit)) = best else { return };
    if !(obj <= base) {
        return;
    }

    for i in 0..a {
        let n = fit.atoms.column(i).norm();
        if n > f64::MIN_POSITIVE && n.is_finite() {
            fit.atoms.column_mut(i).unscale_mut(n);
            fit.coeffs.row_mut(i).scale_mut(n);
        } else {
            fit.atoms.set_column(i, &current.atoms.column(i));
            fit.coeffs.row_mut(i).fill(0.0);
        }
    }
    let recon = &fit.atoms * &fit.coeffs;
    for (j, &l) in omega.iter().enumerate() {
        residual.set_column(l, &(eg.column(j) - recon.column(j)));
    }
    for (i, &k) in active.iter().enumerate() {
        atoms.set_column(k, &fit.atoms.column(i));
        for &(l, pos) in &users[k] {
            let j = omega.binary_search(&l).expect("user patch is in omega");
            codes.codes_mut()[l].values_mut()[pos] = fit.coeffs[(i, j)];
        }
    }
}

fn alternate(
    eg: &DMatrix<f64>,
    init: DMatrix<f64>,
    mask: &[Vec<bool>],
    fallback: &DMatrix<f64>,
) -> GroupFit {
    let mut atoms = init;
    let mut coeffs = coefficient_step(eg, &atoms, mask);
    for _ in 0..2 {
        atoms = atom_step(eg, &coeffs, &atoms, fallback);
        coeffs = coefficient_step(eg, &atoms, mask);
    }
    GroupFit { atoms, coeffs }
}

/// Per-patch least squares over that patch's active atoms.
fn coefficient_step(eg: &DMatrix<f64>, atoms: &DMatrix<f64>, mask: &[Vec<bool>]) -> DMatrix<f64> {
    let a = atoms.ncols();
    let mut coeffs = DMatrix::zeros(a, eg.ncols());
    for j in 0..eg.ncols() {
        let support: Vec<usize> = (0..a).filter(|&i| mask[i][j]).collect();
        if support.is_empty() {
            continue;
        }
        let sub =
            DMatrix::from_columns(&support.iter().map(|&i| atoms.column(i)).collect::<Vec<_>>());
        let rhs = eg.column(j).into_owned();
        let x = least_squares(&sub, &rhs);
        for (s, &i) in support.iter().enumerate() {
            coeffs[(i, j)] = x[s];
        }
    }
    coeffs
}

/// `D_G = E Xᵀ (X Xᵀ)⁻¹`; atoms whose coefficient row vanished keep their
/// previous value.
fn atom_step(
    eg: &DMatrix<f64>,
    coeffs: &DMatrix<f64>,
    prev: &DMatrix<f64>,
    fallback: &DMatrix<f64>,
) -> DMatrix<f64> {
    let a = coeffs.nrows();
    let gram = coeffs * coeffs.transpose();
    let rhs = coeffs * eg.transpose();
    let live: Vec<usize> = (0..a).filter(|&i| gram[(i, i)] > 0.0).collect();
    let mut out = prev.clone();
    if live.is_empty() {
        return out;
    }
    let sub_gram = DMatrix::from_fn(live.len(), live.len(), |x, y| gram[(live[x], live[y])]);
    let sub_rhs = DMatrix::from_fn(live.len(), eg.nrows(), |x, y| rhs[(live[x], y)]);
    let solved = solve_psd(&sub_gram, &sub_rhs);
    for (x, &i) in live.iter().enumerate() {
        let col = solved.row(x).transpose();
        if col.iter().all(|v| v.is_finite()) && col.norm() > 0.0 {
            out.set_column(i, &col);
        } else {
            out.set_column(i, &fallback.column(i));
        }
    }
    out
}

/// Applies the configured update rule once.
pub fn update_dictionary(
    method: DictMethod,
    patches: &DMatrix<f64>,
    dict: &mut Dictionary,
    codes: &mut SparseCodeSet,
    mdu_group_size: usize,
) -> Result<()> {
    match method {
        DictMethod::Mod => update_mod(patches, dict, codes),
        DictMethod::Ksvd => update_ksvd(patches, dict, codes),
        DictMethod::Mdu => update_mdu(patches, dict, codes, mdu_group_size.min(dict.atom_count())),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnStats {
    pub rounds: usize,
    /// Wall time spent in the dictionary update step only (coding excluded).
    pub update_time: Duration,
}

impl LearnStats {
    pub fn mean_update_secs(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.update_time.as_secs_f64() / self.rounds as f64
        }
    }

    pub fn absorb(&mut self, other: &LearnStats) {
        self.rounds += other.rounds;
        self.update_time += other.update_time;
    }
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub dictionary: Dictionary,
    /// Codes as left by the final update (consistent with `dictionary`).
    pub codes: SparseCodeSet,
    pub stats: LearnStats,
}

/// Alternates sparse coding and the configured dictionary update.
pub fn learn_dictionary(
    training: &DMatrix<f64>,
    config: &LearnConfig,
    init: Dictionary,
) -> Result<LearnOutcome> {
    config.validate(init.atom_dim())?;
    if training.ncols() == 0 {
        return Err(CvsError::Config("training set is empty".into()));
    }
    let mut dict = init;
    let mut stats = LearnStats::default();
    let mut codes = SparseCodeSet::zeros(dict.atom_count(), 0);
    for _ in 0..config.iterations {
        codes = sparse_code_all(training, &dict, config.omp_params())?;
        let started = Instant::now();
        update_dictionary(
            config.method,
            training,
            &mut dict,
            &mut codes,
            config.mdu_group_size,
        )?;
        stats.update_time += started.elapsed();
        stats.rounds += 1;
    }
    Ok(LearnOutcome {
        dictionary: dict,
        codes,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{DictInit, SparseCode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(
        dim: usize,
        t: usize,
        j: usize,
        sparsity: usize,
        seed: u64,
    ) -> (DMatrix<f64>, Dictionary, SparseCodeSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patches = DMatrix::from_fn(dim, j, |_, _| rng.random_range(-1.0..1.0));
        let dict = Dictionary::init(dim, t, DictInit::SeededRandom(seed + 1)).unwrap();
        let codes = sparse_code_all(&patches, &dict, OmpParams::new(sparsity, 0.0)).unwrap();
        (patches, dict, codes)
    }

    #[test]
    fn mod_rank_one_fit() {
        let p = DVector::from_vec(vec![3.0, 4.0, 0.0]);
        let patches = DMatrix::from_columns(&[p.clone(), p.clone(), p.clone()]);
        let mut dict =
            Dictionary::normalized(DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0])).unwrap();
        let mut codes =
            SparseCodeSet::new(1, vec![SparseCode::new(vec![0], vec![1.0]).unwrap(); 3]).unwrap();
        update_mod(&patches, &mut dict, &mut codes).unwrap();
        let expected = p / 5.0;
        assert!((dict.atoms().column(0) - expected).amax() < 1e-12);
    }

    #[test]
    fn mod_identity_pairing_gives_normalized_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let patches = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-2.0..2.0));
        let mut dict = Dictionary::init(6, 4, DictInit::SeededRandom(9)).unwrap();
        let codes = (0..4)
            .map(|l| SparseCode::new(vec![l], vec![1.0]).unwrap())
            .collect();
        let mut codes = SparseCodeSet::new(4, codes).unwrap();
        update_mod(&patches, &mut dict, &mut codes).unwrap();
        for l in 0..4 {
            let p = patches.column(l);
            assert!((dict.atoms().column(l) - p / p.norm()).amax() < 1e-10);
        }
    }

    #[test]
    fn updates_do_not_increase_objective() {
        for seed in 0..5 {
            let (patches, dict, codes) = random_problem(12, 20, 60, 3, seed);
            let before = fit_objective(&patches, &dict, &codes).unwrap();
            for method in [DictMethod::Mod, DictMethod::Ksvd, DictMethod::Mdu] {
                for group in [1, 3, 20] {
                    let (mut d, mut c) = (dict.clone(), codes.clone());
                    update_dictionary(method, &patches, &mut d, &mut c, group).unwrap();
                    let after = fit_objective(&patches, &d, &c).unwrap();
                    assert!(
                        after <= before * (1.0 + 1e-9),
                        "{method:?} g={group}: {before} -> {after}"
                    );
                    assert!(d.max_norm_deviation() <= 1e-10);
                    for (a, b) in c.codes().iter().zip(codes.codes()) {
                        assert_eq!(a.indices(), b.indices());
                    }
                }
            }
        }
    }

    #[test]
    fn ksvd_single_atom_is_leading_singular_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let patches = DMatrix::from_fn(5, 9, |_, _| rng.random_range(-1.0..1.0));
        let mut dict = Dictionary::init(5, 1, DictInit::SeededRandom(2)).unwrap();
        let mut codes =
            SparseCodeSet::new(1, vec![SparseCode::new(vec![0], vec![1.0]).unwrap(); 9]).unwrap();
        update_ksvd(&patches, &mut dict, &mut codes).unwrap();
        // power iteration on P Pᵀ
        let pp = &patches * patches.transpose();
        let mut u = DVector::from_element(5, 1.0);
        for _ in 0..2000 {
            u = &pp * &u;
            u /= u.norm();
        }
        let got = dict.atoms().column(0);
        assert!((got.dot(&u).abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mdu_group_one_matches_ksvd() {
        for seed in 0..3 {
            let (patches, dict, codes) = random_problem(10, 16, 40, 3, seed + 20);
            let (mut dk, mut ck) = (dict.clone(), codes.clone());
            update_ksvd(&patches, &mut dk, &mut ck).unwrap();
            let (mut dm, mut cm) = (dict.clone(), codes.clone());
            update_mdu(&patches, &mut dm, &mut cm, 1).unwrap();
            assert!((dk.atoms() - dm.atoms()).amax() < 1e-8);
            for (a, b) in ck.codes().iter().zip(cm.codes()) {
                for (x, y) in a.values().iter().zip(b.values()) {
                    assert!((x - y).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn mdu_whole_dictionary_group_with_dense_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let patches = DMatrix::from_fn(8, 30, |_, _| rng.random_range(-1.0..1.0));
        let mut dict = Dictionary::init(8, 4, DictInit::SeededRandom(5)).unwrap();
        let codes = (0..30)
            .map(|_| {
                SparseCode::new(
                    vec![0, 1, 2, 3],
                    (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let mut codes = SparseCodeSet::new(4, codes).unwrap();
        let before = fit_objective(&patches, &dict, &codes).unwrap();
        update_mdu(&patches, &mut dict, &mut codes, 4).unwrap();
        let after = fit_objective(&patches, &dict, &codes).unwrap();
        assert!(after <= before);
        // dense rank-4 refit reaches the truncated-SVD optimum
        let mut ev: Vec<f64> = (&patches * patches.transpose())
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let optimum: f64 = ev[4..].iter().sum();
        assert!(
            after <= optimum * (1.0 + 1e-6) + 1e-9,
            "{after} vs {optimum}"
        );
    }

    #[test]
    fn mdu_rejects_bad_group_size() {
        let (patches, mut dict, mut codes) = random_problem(6, 8, 10, 2, 1);
        assert!(update_mdu(&patches, &mut dict, &mut codes, 0).is_err());
        assert!(update_mdu(&patches, &mut dict, &mut codes, 9).is_err());
    }

    #[test]
    fn unused_atoms_are_replaced_by_worst_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let patches = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let dict = Dictionary::init(4, 3, DictInit::SeededRandom(1)).unwrap();
        // only atom 0 is used, by patch 0
        let codes = vec![
            SparseCode::new(vec![0], vec![0.5]).unwrap(),
            SparseCode::empty(),
            SparseCode::empty(),
        ];
        let codes = SparseCodeSet::new(3, codes).unwrap();
        let norms: Vec<f64> = (1..3).map(|l| patches.column(l).norm()).collect();
        let (first, second) = if norms[0] >= norms[1] { (1, 2) } else { (2, 1) };
        for method in [DictMethod::Mod, DictMethod::Ksvd, DictMethod::Mdu] {
            let (mut d, mut c) = (dict.clone(), codes.clone());
            update_dictionary(method, &patches, &mut d, &mut c, 1).unwrap();
            let pf = patches.column(first) / patches.column(first).norm();
            let ps = patches.column(second) / patches.column(second).norm();
            assert!((d.atoms().column(1) - pf).amax() < 1e-12, "{method:?}");
            assert!((d.atoms().column(2) - ps).amax() < 1e-12, "{method:?}");
        }
    }

    #[test]
    fn fixed_point_when_patches_are_exactly_sparse() {
        let init = Dictionary::init(16, 16, DictInit::OvercompleteDct).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cols: Vec<DVector<f64>> = (0..40)
            .map(|l| {
                let a = l % 16;
                let b = (l * 7 + 3) % 16;
                init.atoms().column(a) * rng.random_range(1.0..2.0)
                    + init.atoms().column(b) * rng.random_range(1.0..2.0)
            })
            .collect();
        let patches = DMatrix::from_columns(&cols);
        let cfg = LearnConfig {
            iterations: 1,
            sparsity_cap: 2,
            error_threshold: 1e-9,
            ..LearnConfig::default()
        };
        let out = learn_dictionary(&patches, &cfg, init.clone()).unwrap();
        assert!(fit_objective(&patches, &out.dictionary, &out.codes).unwrap() < 1e-18);
        assert!((out.dictionary.atoms() - init.atoms()).amax() < 1e-10);
    }

    #[test]
    fn learning_is_deterministic_and_validated() {
        let (patches, dict, _) = random_problem(16, 24, 50, 2, 3);
        let cfg = LearnConfig {
            iterations: 3,
            sparsity_cap: 3,
            ..LearnConfig::default()
        };
        let a = learn_dictionary(&patches, &cfg, dict.clone()).unwrap();
        let b = learn_dictionary(&patches, &cfg, dict.clone()).unwrap();
        assert_eq!(a.dictionary, b.dictionary);
        assert_eq!(a.stats.rounds, 3);
        let bad = LearnConfig {
            sparsity_cap: 16,
            ..cfg
        };
        assert!(learn_dictionary(&patches, &bad, dict.clone()).is_err());
        assert!(learn_dictionary(&DMatrix::zeros(16, 0), &cfg, dict).is_err());
    }
}
