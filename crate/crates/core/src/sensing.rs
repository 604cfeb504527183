//! Block random projection.
//!
//! Each frame is cut into `B x B` blocks enumerated in raster order (row-major
//! over the block grid). Every block is vectorized column-major and projected
//! by the same row-orthonormal Gaussian matrix `Φ_B`, so the frame-level
//! operator is block diagonal.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{CvsError, Result};
use crate::video::Frame;

/// Measurements of one frame: one vector per block, raster order.
pub type BlockMeasurements = Vec<DVector<f64>>;

/// Number of measurements taken per block: `⌊mr·B²⌋`.
pub fn measurements_per_block(mr: f64, block_side: usize) -> usize {
    let n = (block_side * block_side) as f64;
    // guards 0.7*100 = 69.999... style rounding
    (mr * n + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    block_side: usize,
    seed: u64,
    mr: f64,
    entries: DMatrix<f64>,
}

impl SensingMatrix {
    /// Draws an i.i.d. standard Gaussian `m_b x B²` matrix from a seeded
    /// ChaCha8 stream (row-major draw order) and orthonormalizes its rows by
    /// QR with positive `R` diagonal.
    pub fn generate(seed: u64, mr: f64, block_side: usize) -> Result<Self> {
        if !(mr.is_finite() && mr > 0.0 && mr <= 1.0) {
            return Err(CvsError::Config(format!(
                "measurement ratio {mr} outside (0, 1]"
            )));
        }
        if block_side == 0 {
            return Err(CvsError::Config("block side must be positive".into()));
        }
        let n = block_side * block_side;
        let m = measurements_per_block(mr, block_side);
        if m == 0 {
            return Err(CvsError::Config(format!(
                "measurement ratio {mr} yields zero measurements for {block_side}x{block_side} blocks"
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss_t = DMatrix::<f64>::zeros(n, m);
        for i in 0..m {
            for j in 0..n {
                gauss_t[(j, i)] = StandardNormal.sample(&mut rng);
            }
        }
        let qr = gauss_t.qr();
        let r = qr.r();
        let mut q = qr.q();
        for j in 0..m {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Ok(Self {
            block_side,
            seed,
            mr,
            entries: q.transpose(),
        })
    }

    pub fn block_side(&self) -> usize {
        self.block_side
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn measurement_ratio(&self) -> f64 {
        self.mr
    }

    /// `m_b`
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    /// `n_b = B²`
    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `max |Φ_B Φ_Bᵀ − I|`
    pub fn orthonormality_error(&self) -> f64 {
        let g = &self.entries * self.entries.transpose();
        let m = g.nrows();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    fn check_frame(&self, rows: usize, cols: usize) -> Result<BlockGrid> {
        BlockGrid::new(rows, cols, self.block_side)
    }
}

/// Block tiling of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGrid {
    pub rows: usize,
    pub cols: usize,
    pub block_side: usize,
}

impl BlockGrid {
    pub fn new(rows: usize, cols: usize, block_side: usize) -> Result<Self> {
        if block_side == 0
            || rows == 0
            || cols == 0
            || !rows.is_multiple_of(block_side)
            || !cols.is_multiple_of(block_side)
        {
            return Err(CvsError::Geometry(format!(
                "{rows}x{cols} frame is not divisible into {block_side}x{block_side} blocks"
            )));
        }
        Ok(Self {
            rows,
            cols,
            block_side,
        })
    }

    pub fn blocks_down(&self) -> usize {
        self.rows / self.block_side
    }

    pub fn blocks_across(&self) -> usize {
        self.cols / self.block_side
    }

    pub fn block_count(&self) -> usize {
        self.blocks_down() * self.blocks_across()
    }

    /// Top-left pixel of block `index` (raster order).
    pub fn origin(&self, index: usize) -> (usize, usize) {
        let across = self.blocks_across();
        (
            (index / across) * self.block_side,
            (index % across) * self.block_side,
        )
    }

    /// Column-major vectorization of one block.
    pub fn extract(&self, image: &DMatrix<f64>, index: usize) -> DVector<f64> {
        let (r0, c0) = self.origin(index);
        let b = self.block_side;
        DVector::from_iterator(b * b, image.view((r0, c0), (b, b)).iter().copied())
    }

    /// Writes a column-major block vector back into its slot.
    pub fn insert(&self, image: &mut DMatrix<f64>, index: usize, block: &DVector<f64>) {
        let (r0, c0) = self.origin(index);
        let b = self.block_side;
        let mut view = image.view_mut((r0, c0), (b, b));
        for (dst, src) in view.iter_mut().zip(block.iter()) {
            *dst = *src;
        }
    }
}

/// Measures one frame: `f_i = Φ_B u_i + e_i`, `e_i ~ N(0, σ²)` i.i.d.
/// (`noise_sigma = 0` gives the exact projection).
pub fn measure_frame(
    frame: &Frame,
    phi: &SensingMatrix,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<BlockMeasurements> {
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(CvsError::Config(format!(
            "noise sigma {noise_sigma} must be finite and non-negative"
        )));
    }
    let mut meas = apply_global_forward(frame.pixels(), phi)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        for block in meas.iter_mut() {
            for v in block.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += noise_sigma * e;
            }
        }
    }
    Ok(meas)
}

/// Block-diagonal forward operator `Φ v`.
pub fn apply_global_forward(v: &DMatrix<f64>, phi: &SensingMatrix) -> Result<BlockMeasurements> {
    let grid = phi.check_frame(v.nrows(), v.ncols())?;
    Ok((0..grid.block_count())
        .into_par_iter()
        .map(|i| phi.matrix() * grid.extract(v, i))
        .collect())
}

/// Block-diagonal adjoint `Φᵀ f`, scattered back to pixel positions.
pub fn apply_global_adjoint(
    f: &[DVector<f64>],
    phi: &SensingMatrix,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    let grid = phi.check_frame(rows, cols)?;
    check_measurements(f, grid.block_count(), phi.rows())?;
    let blocks: Vec<DVector<f64>> = f.par_iter().map(|fi| phi.matrix().tr_mul(fi)).collect();
    let mut out = DMatrix::zeros(rows, cols);
    for (i, block) in blocks.iter().enumerate() {
        grid.insert(&mut out, i, block);
    }
    Ok(out)
}

/// `ΦᵀΦ v` without materializing the normal matrix.
pub fn apply_normal(v: &DMatrix<f64>, phi: &SensingMatrix) -> Result<DMatrix<f64>> {
    let fwd = apply_global_forward(v, phi)?;
    apply_global_adjoint(&fwd, phi, v.nrows(), v.ncols())
}

pub(crate) fn check_measurements(
    f: &[DVector<f64>],
    blocks: usize,
    per_block: usize,
) -> Result<()> {
    if f.len() != blocks {
        return Err(CvsError::Dimension(format!(
            "expected {blocks} block measurement vectors, got {}",
            f.len()
        )));
    }
    if let Some((i, fi)) = f.iter().enumerate().find(|(_, fi)| fi.len() != per_block) {
        return Err(CvsError::Dimension(format!(
            "block {i} has {} measurements, expected {per_block}",
            fi.len()
        )));
    }
    Ok(())
}

/// Inner product of two stacked measurement sets.
pub fn measurement_dot(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

pub fn measurement_norm_sq(a: &[DVector<f64>]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..255.0))
    }

    #[test]
    fn measurement_count_follows_floor_rule() {
        let phi = SensingMatrix::generate(42, 0.1, 32).unwrap();
        assert_eq!((phi.rows(), phi.cols()), (102, 1024));
        assert_eq!(measurements_per_block(0.5, 32), 512);
        assert_eq!(measurements_per_block(0.7, 10), 70);
    }

    #[test]
    fn rows_are_orthonormal() {
        for (seed, mr) in [(1, 0.1), (2, 0.3), (3, 0.77), (4, 1.0)] {
            let phi = SensingMatrix::generate(seed, mr, 16).unwrap();
            assert!(phi.orthonormality_error() <= 1e-10);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = SensingMatrix::generate(9, 0.3, 8).unwrap();
        let b = SensingMatrix::generate(9, 0.3, 8).unwrap();
        let c = SensingMatrix::generate(10, 0.3, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn rejects_bad_ratios() {
        assert!(SensingMatrix::generate(0, 0.0, 8).is_err());
        assert!(SensingMatrix::generate(0, 1.5, 8).is_err());
        assert!(SensingMatrix::generate(0, f64::NAN, 8).is_err());
        assert!(SensingMatrix::generate(0, 0.01, 8).is_err());
    }

    #[test]
    fn full_rate_is_isometry() {
        let phi = SensingMatrix::generate(5, 1.0, 32).unwrap();
        let u = random_image(32, 32, 1);
        let frame = Frame::new(u.clone()).unwrap();
        let f = measure_frame(&frame, &phi, 0.0, 0).unwrap();
        assert!((f[0].norm() - u.norm()).abs() <= 1e-9 * u.norm());
        let back = apply_global_adjoint(&f, &phi, 32, 32).unwrap();
        assert!((back - u).amax() <= 1e-9);
    }

    #[test]
    fn zero_frame_gives_zero_measurements() {
        let phi = SensingMatrix::generate(5, 0.3, 8).unwrap();
        let f = measure_frame(&Frame::zeros(16, 24), &phi, 0.0, 0).unwrap();
        assert_eq!(f.len(), 6);
        assert!(f.iter().all(|fi| fi.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn matches_naive_product() {
        let phi = SensingMatrix::generate(11, 0.25, 32).unwrap();
        let u = random_image(64, 64, 3);
        let f = apply_global_forward(&u, &phi).unwrap();
        for (bi, (br, bc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let mut vecd = Vec::new();
            for c in 0..32 {
                for r in 0..32 {
                    vecd.push(u[(br * 32 + r, bc * 32 + c)]);
                }
            }
            for (i, got) in f[bi].iter().enumerate() {
                let mut acc = 0.0;
                for (j, x) in vecd.iter().enumerate() {
                    acc += phi.matrix()[(i, j)] * x;
                }
                assert!((acc - got).abs() <= 1e-12 * (1.0 + acc.abs()));
            }
        }
    }

    #[test]
    fn impulse_picks_a_column() {
        let phi = SensingMatrix::generate(2, 0.5, 4).unwrap();
        let mut v = DMatrix::zeros(8, 8);
        // block 3 (bottom-right), in-block (row 1, col 2) -> column index 2*4 + 1
        v[(5, 6)] = 1.0;
        let f = apply_global_forward(&v, &phi).unwrap();
        for (i, fi) in f.iter().enumerate() {
            if i == 3 {
                assert_eq!(fi, &phi.matrix().column(9).into_owned());
            } else {
                assert!(fi.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn perturbing_one_block_changes_only_its_measurement() {
        let phi = SensingMatrix::generate(2, 0.3, 8).unwrap();
        let u = random_image(16, 16, 4);
        let mut w = u.clone();
        w[(3, 12)] += 7.0;
        let a = apply_global_forward(&u, &phi).unwrap();
        let b = apply_global_forward(&w, &phi).unwrap();
        assert_eq!(a[0], b[0]);
        assert_ne!(a[1], b[1]);
        assert_eq!(a[2], b[2]);
        assert_eq!(a[3], b[3]);
    }

    #[test]
    fn noise_injection_is_seeded() {
        let phi = SensingMatrix::generate(2, 0.3, 8).unwrap();
        let frame = Frame::new(random_image(8, 8, 1)).unwrap();
        let a = measure_frame(&frame, &phi, 2.0, 7).unwrap();
        let b = measure_frame(&frame, &phi, 2.0, 7).unwrap();
        let clean = measure_frame(&frame, &phi, 0.0, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, clean);
        assert!(measure_frame(&frame, &phi, -1.0, 7).is_err());
    }

    #[test]
    fn geometry_is_checked() {
        let phi = SensingMatrix::generate(2, 0.3, 8).unwrap();
        assert!(matches!(
            apply_global_forward(&DMatrix::zeros(12, 16), &phi),
            Err(CvsError::Geometry(_))
        ));
        let f = vec![DVector::zeros(phi.rows()); 3];
        assert!(apply_global_adjoint(&f, &phi, 16, 16).is_err());
    }
}
