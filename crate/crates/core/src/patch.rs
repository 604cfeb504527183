//! Overlapping square patches: extraction (`R_l u`), least-squares
//! aggregation `(Σ R_lᵀR_l)⁻¹ Σ R_lᵀ p_l`, and dictionary synthesis `D∘α`.
//!
//! Patches are vectorized column-major. Anchors along each axis are
//! `0, s, 2s, …` followed by `dim − p`, so the last patch abuts the edge.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dictionary::{Dictionary, SparseCodeSet};
use crate::error::{CvsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayout {
    rows: usize,
    cols: usize,
    patch_side: usize,
    stride: usize,
    anchors: Vec<(usize, usize)>,
    inv_coverage: DMatrix<f64>,
}

fn axis_anchors(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = dim - patch;
    let mut out: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|&a| a < last)
        .collect();
    out.push(last);
    out
}

impl PatchLayout {
    pub fn new(rows: usize, cols: usize, patch_side: usize, stride: usize) -> Result<Self> {
        if patch_side == 0 || stride == 0 {
            return Err(CvsError::Config(
                "patch side and stride must be positive".into(),
            ));
        }
        if stride > patch_side {
            return Err(CvsError::Config(format!(
                "stride {stride} exceeds patch side {patch_side}; patches would not cover the frame"
            )));
        }
        if rows < patch_side || cols < patch_side {
            return Err(CvsError::Geometry(format!(
                "{rows}x{cols} frame is smaller than a {patch_side}x{patch_side} patch"
            )));
        }
        let row_anchors = axis_anchors(rows, patch_side, stride);
        let col_anchors = axis_anchors(cols, patch_side, stride);
        let anchors: Vec<(usize, usize)> = row_anchors
            .iter()
            .flat_map(|&r| col_anchors.iter().map(move |&c| (r, c)))
            .collect();

        let mut coverage = DMatrix::<f64>::zeros(rows, cols);
        for &(r, c) in &anchors {
            coverage
                .view_mut((r, c), (patch_side, patch_side))
                .add_scalar_mut(1.0);
        }
        debug_assert!(coverage.iter().all(|&n| n >= 1.0));
        let inv_coverage = coverage.map(|n| 1.0 / n);
        Ok(Self {
            rows,
            cols,
            patch_side,
            stride,
            anchors,
            inv_coverage,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn patch_side(&self) -> usize {
        self.patch_side
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// `B_s`
    pub fn patch_len(&self) -> usize {
        self.patch_side * self.patch_side
    }

    /// `J`
    pub fn patch_count(&self) -> usize {
        self.anchors.len()
    }

    pub fn anchors(&self) -> &[(usize, usize)] {
        &self.anchors
    }

    /// Diagonal of `Σ R_lᵀR_l` as an image of per-pixel coverage counts.
    pub fn coverage(&self) -> DMatrix<f64> {
        self.inv_coverage.map(|w| 1.0 / w)
    }

    pub(crate) fn check_image(&self, image: &DMatrix<f64>) -> Result<()> {
        if image.shape() != (self.rows, self.cols) {
            return Err(CvsError::Geometry(format!(
                "image is {}x{}, layout expects {}x{}",
                image.nrows(),
                image.ncols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }

    /// Patch `l` as a column-major vector.
    pub fn patch(&self, image: &DMatrix<f64>, l: usize) -> DVector<f64> {
        let (r, c) = self.anchors[l];
        let p = self.patch_side;
        DVector::from_iterator(p * p, image.view((r, c), (p, p)).iter().copied())
    }
}

/// All patches as the columns of a `B_s x J` matrix.
pub fn extract_patches(image: &DMatrix<f64>, layout: &PatchLayout) -> Result<DMatrix<f64>> {
    layout.check_image(image)?;
    let bs = layout.patch_len();
    let mut out = DMatrix::zeros(bs, layout.patch_count());
    for l in 0..layout.patch_count() {
        let (r, c) = layout.anchors[l];
        let window = image.view((r, c), (layout.patch_side, layout.patch_side));
        for (dst, src) in out.column_mut(l).iter_mut().zip(window.iter()) {
            *dst = *src;
        }
    }
    Ok(out)
}

/// Unnormalized accumulation `Σ R_lᵀ p_l`.
pub fn scatter_add_patches(patches: &DMatrix<f64>, layout: &PatchLayout) -> Result<DMatrix<f64>> {
    check_patch_matrix(patches, layout)?;
    let p = layout.patch_side;
    let mut acc = DMatrix::zeros(layout.rows, layout.cols);
    // fixed accumulation order keeps the result bitwise reproducible
    for (l, &(r, c)) in layout.anchors.iter().enumerate() {
        let mut window = acc.view_mut((r, c), (p, p));
        for (dst, src) in window.iter_mut().zip(patches.column(l).iter()) {
            *dst += *src;
        }
    }
    Ok(acc)
}

/// Per-pixel average of all covering patches.
///
/// Computed as `ref + (Σ (p_l − ref)) / count` where `ref` is the value of
/// the last covering patch, so identical copies average back bit-exactly.
pub fn aggregate_patches(patches: &DMatrix<f64>, layout: &PatchLayout) -> Result<DMatrix<f64>> {
    check_patch_matrix(patches, layout)?;
    let p = layout.patch_side;
    let mut reference = DMatrix::zeros(layout.rows, layout.cols);
    for (l, &(r, c)) in layout.anchors.iter().enumerate() {
        let mut window = reference.view_mut((r, c), (p, p));
        for (dst, src) in window.iter_mut().zip(patches.column(l).iter()) {
            *dst = *src;
        }
    }
    let mut dev = DMatrix::<f64>::zeros(layout.rows, layout.cols);
    for (l, &(r, c)) in layout.anchors.iter().enumerate() {
        let base = reference.view((r, c), (p, p));
        let mut window = dev.view_mut((r, c), (p, p));
        for ((dst, src), b) in window
            .iter_mut()
            .zip(patches.column(l).iter())
            .zip(base.iter())
        {
            *dst += *src - *b;
        }
    }
    Ok(reference + dev.component_mul(&layout.inv_coverage))
}

fn check_patch_matrix(patches: &DMatrix<f64>, layout: &PatchLayout) -> Result<()> {
    if patches.nrows() != layout.patch_len() || patches.ncols() != layout.patch_count() {
        return Err(CvsError::Dimension(format!(
            "patch matrix is {}x{}, layout expects {}x{}",
            patches.nrows(),
            patches.ncols(),
            layout.patch_len(),
            layout.patch_count()
        )));
    }
    Ok(())
}

/// `D∘α`: aggregate of the per-patch reconstructions `Dα_l`.
pub fn synthesize_image(
    codes: &SparseCodeSet,
    dict: &Dictionary,
    layout: &PatchLayout,
) -> Result<DMatrix<f64>> {
    aggregate_patches(
        &reconstruct_patches(codes, dict, layout.patch_count())?,
        layout,
    )
}

/// Columns `Dα_l`.
pub fn reconstruct_patches(
    codes: &SparseCodeSet,
    dict: &Dictionary,
    expected: usize,
) -> Result<DMatrix<f64>> {
    if codes.len() != expected {
        return Err(CvsError::Dimension(format!(
            "{} codes supplied for {expected} patches",
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
    let cols: Vec<DVector<f64>> = codes
        .codes()
        .par_iter()
        .map(|code| dict.synthesize(code))
        .collect();
    if cols.is_empty() {
        return Ok(DMatrix::zeros(dict.atom_dim(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{DictInit, SparseCode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-50.0..250.0))
    }

    #[test]
    fn anchors_clamp_to_edge() {
        assert_eq!(axis_anchors(16, 8, 4), vec![0, 4, 8]);
        assert_eq!(axis_anchors(18, 8, 4), vec![0, 4, 8, 10]);
        assert_eq!(axis_anchors(8, 8, 3), vec![0]);
        let layout = PatchLayout::new(64, 64, 8, 4).unwrap();
        assert_eq!(layout.patch_count(), 15 * 15);
    }

    #[test]
    fn rejects_gapped_layouts() {
        assert!(PatchLayout::new(16, 16, 4, 5).is_err());
        assert!(PatchLayout::new(4, 16, 8, 4).is_err());
    }

    #[test]
    fn constant_frame_gives_constant_patches() {
        let layout = PatchLayout::new(16, 16, 4, 2).unwrap();
        let p = extract_patches(&DMatrix::from_element(16, 16, 3.5), &layout).unwrap();
        assert!(p.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn tiling_partitions_pixels() {
        let layout = PatchLayout::new(8, 12, 4, 4).unwrap();
        assert!(layout.coverage().iter().all(|&c| c == 1.0));
        let img = random_image(8, 12, 2);
        let p = extract_patches(&img, &layout).unwrap();
        let mut all: Vec<f64> = p.iter().copied().collect();
        let mut src: Vec<f64> = img.iter().copied().collect();
        all.sort_by(f64::total_cmp);
        src.sort_by(f64::total_cmp);
        assert_eq!(all, src);
    }

    #[test]
    fn extraction_matches_window_copy() {
        let layout = PatchLayout::new(20, 14, 6, 3).unwrap();
        let img = random_image(20, 14, 5);
        let p = extract_patches(&img, &layout).unwrap();
        for (l, &(r, c)) in layout.anchors().iter().enumerate() {
            let mut k = 0;
            for dc in 0..6 {
                for dr in 0..6 {
                    assert_eq!(p[(k, l)], img[(r + dr, c + dc)]);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn disagreeing_overlap_averages() {
        // two 2x2 patches on a 2x3 image share column 1
        let layout = PatchLayout::new(2, 3, 2, 1).unwrap();
        assert_eq!(layout.anchors(), &[(0, 0), (0, 1)]);
        let mut patches = DMatrix::zeros(4, 2);
        patches.column_mut(0).fill(10.0);
        patches.column_mut(1).fill(20.0);
        let img = aggregate_patches(&patches, &layout).unwrap();
        assert_eq!(img[(0, 0)], 10.0);
        assert_eq!(img[(0, 1)], 15.0);
        assert_eq!(img[(1, 2)], 20.0);
    }

    #[test]
    fn aggregation_matches_explicit_operator() {
        let layout = PatchLayout::new(10, 9, 4, 3).unwrap();
        let n = 90;
        let j = layout.patch_count();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let patches = DMatrix::from_fn(16, j, |_, _| rng.random_range(-1.0..1.0));
        // dense R_l operators on the column-major pixel vector
        let mut normal = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (l, &(r, c)) in layout.anchors().iter().enumerate() {
            let mut rl = DMatrix::<f64>::zeros(16, n);
            let mut k = 0;
            for dc in 0..4 {
                for dr in 0..4 {
                    rl[(k, (c + dc) * 10 + r + dr)] = 1.0;
                    k += 1;
                }
            }
            normal += rl.transpose() * &rl;
            rhs += rl.transpose() * patches.column(l);
        }
        for i in 0..n {
            for k in 0..n {
                if i != k {
                    assert_eq!(normal[(i, k)], 0.0);
                }
            }
            assert!(normal[(i, i)] >= 1.0);
        }
        let expected = normal.lu().solve(&rhs).unwrap();
        let got = aggregate_patches(&patches, &layout).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn synthesis_zero_codes_and_single_atom_tiling() {
        let layout = PatchLayout::new(16, 16, 8, 8).unwrap();
        let dict = Dictionary::init(64, 256, DictInit::OvercompleteDct).unwrap();
        let zero = SparseCodeSet::new(256, vec![SparseCode::empty(); 4]).unwrap();
        assert!(synthesize_image(&zero, &dict, &layout)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let k = 37;
        let unit = SparseCode::new(vec![k], vec![1.0]).unwrap();
        let codes = SparseCodeSet::new(256, vec![unit; 4]).unwrap();
        let img = synthesize_image(&codes, &dict, &layout).unwrap();
        let atom = dict.atoms().column(k);
        for &(r, c) in layout.anchors() {
            let window: Vec<f64> = img.view((r, c), (8, 8)).iter().copied().collect();
            for (a, b) in window.iter().zip(atom.iter()) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn synthesis_matches_dense_composition() {
        let layout = PatchLayout::new(16, 16, 8, 4).unwrap();
        let dict = Dictionary::init(64, 100, DictInit::SeededRandom(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let codes: Vec<SparseCode> = (0..layout.patch_count())
            .map(|_| {
                let mut idx: Vec<usize> = (0..3).map(|_| rng.random_range(0..100)).collect();
                idx.sort();
                idx.dedup();
                let vals = idx.iter().map(|_| rng.random_range(-5.0..5.0)).collect();
                SparseCode::new(idx, vals).unwrap()
            })
            .collect();
        let set = SparseCodeSet::new(100, codes.clone()).unwrap();
        let got = synthesize_image(&set, &dict, &layout).unwrap();
        let mut dense_cols = Vec::new();
        for code in &codes {
            let mut alpha = DVector::zeros(100);
            for (&i, &v) in code.indices().iter().zip(code.values()) {
                alpha[i] = v;
            }
            dense_cols.push(dict.atoms() * alpha);
        }
        let expected = aggregate_patches(&DMatrix::from_columns(&dense_cols), &layout).unwrap();
        assert!((got - expected).amax() <= 1e-12);
    }

    #[test]
    fn synthesis_is_linear() {
        let layout = PatchLayout::new(16, 16, 8, 4).unwrap();
        let dict = Dictionary::init(64, 64, DictInit::OvercompleteDct).unwrap();
        let mk = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let codes = (0..layout.patch_count())
                .map(|_| {
                    SparseCode::new(
                        vec![0, 5, 9],
                        (0..3).map(|_| rng.random_range(-3.0..3.0)).collect(),
                    )
                    .unwrap()
                })
                .collect();
            SparseCodeSet::new(64, codes).unwrap()
        };
        let (a, b) = (mk(1), mk(2));
        let comb = SparseCodeSet::new(
            64,
            a.codes()
                .iter()
                .zip(b.codes())
                .map(|(x, y)| {
                    SparseCode::new(
                        x.indices().to_vec(),
                        x.values()
                            .iter()
                            .zip(y.values())
                            .map(|(p, q)| 2.0 * p - 0.5 * q)
                            .collect(),
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let lhs = synthesize_image(&comb, &dict, &layout).unwrap();
        let rhs = synthesize_image(&a, &dict, &layout).unwrap() * 2.0
            - synthesize_image(&b, &dict, &layout).unwrap() * 0.5;
        assert!((lhs - rhs).amax() <= 1e-10);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let layout = PatchLayout::new(16, 16, 8, 4).unwrap();
        assert!(extract_patches(&DMatrix::zeros(16, 8), &layout).is_err());
        assert!(aggregate_patches(&DMatrix::zeros(64, 3), &layout).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn aggregate_inverts_extract(rows in 8usize..24, cols in 8usize..24, stride in 1usize..=8, seed in any::<u64>()) {
            let layout = PatchLayout::new(rows, cols, 8, stride).unwrap();
            let img = random_image(rows, cols, seed);
            let back = aggregate_patches(&extract_patches(&img, &layout).unwrap(), &layout).unwrap();
            let cov = layout.coverage();
            prop_assert!(cov.iter().all(|&c| c >= 1.0));
            prop_assert_eq!(back, img);
        }
    }
}
