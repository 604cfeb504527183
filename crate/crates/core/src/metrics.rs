//! PSNR and global single-window SSIM.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CvsError, Result};

/// Dynamic range of 8-bit pixels.
pub const PIXEL_RANGE: f64 = 255.0;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CvsError::Geometry(format!(
            "cannot compare {}x{} with {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok(())
}

/// `20·log10(√(rows·cols)·255 / ‖u − ũ‖)`; `+∞` for identical images.
pub fn psnr(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    check(u, v)?;
    let err = (u - v).norm();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    let n = (u.nrows() * u.ncols()) as f64;
    Ok(20.0 * (n.sqrt() * PIXEL_RANGE / err).log10())
}

/// Global SSIM with population moments over the whole image and
/// `c1 = (0.01·255)²`, `c2 = (0.03·255)²`.
pub fn ssim(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    check(u, v)?;
    let n = (u.nrows() * u.ncols()) as f64;
    let mu_u = u.sum() / n;
    let mu_v = v.sum() / n;
    let mut var_u = 0.0;
    let mut var_v = 0.0;
    let mut cov = 0.0;
    for (a, b) in u.iter().zip(v.iter()) {
        let du = a - mu_u;
        let dv = b - mu_v;
        var_u += du * du;
        var_v += dv * dv;
        cov += du * dv;
    }
    var_u /= n;
    var_v /= n;
    cov /= n;
    let c1 = (SSIM_K1 * PIXEL_RANGE).powi(2);
    let c2 = (SSIM_K2 * PIXEL_RANGE).powi(2);
    Ok(((2.0 * mu_u * mu_v + c1) * (2.0 * cov + c2))
        / ((mu_u * mu_u + mu_v * mu_v + c1) * (var_u + var_v + c2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub frame_index: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl QualityReport {
    pub fn measure(
        frame_index: usize,
        original: &DMatrix<f64>,
        recovered: &DMatrix<f64>,
    ) -> Result<Self> {
        Ok(Self {
            frame_index,
            psnr_db: psnr(original, recovered)?,
            ssim: ssim(original, recovered)?,
        })
    }
}

/// CSV rendering of a PSNR value; infinity is written as `inf`.
pub fn format_psnr(db: f64) -> String {
    if db == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{db:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..255.0))
    }

    #[test]
    fn psnr_special_cases() {
        let a = random(8, 8, 1);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let zero = DMatrix::zeros(8, 8);
        let full = DMatrix::from_element(8, 8, 255.0);
        assert_eq!(psnr(&zero, &full).unwrap(), 0.0);
        assert_eq!(format_psnr(f64::INFINITY), "inf");
    }

    #[test]
    fn psnr_matches_mse_form() {
        let a = random(12, 9, 2);
        let b = random(12, 9, 3);
        let mut mse = 0.0;
        for i in 0..12 {
            for j in 0..9 {
                mse += (a[(i, j)] - b[(i, j)]).powi(2);
            }
        }
        mse /= 108.0;
        let expected = 10.0 * (255.0f64 * 255.0 / mse).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() <= 1e-10);
    }

    #[test]
    fn ssim_special_cases() {
        let a = random(8, 8, 4);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let c = DMatrix::from_element(5, 5, 77.0);
        assert_eq!(ssim(&c, &c).unwrap(), 1.0);
    }

    #[test]
    fn ssim_matches_two_pass_oracle() {
        let a = random(10, 11, 5);
        let b = random(10, 11, 6);
        let xs: Vec<f64> = a.iter().copied().collect();
        let ys: Vec<f64> = b.iter().copied().collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
        let cxy = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / n;
        let c1 = 6.5025;
        let c2 = 58.5225;
        let expected =
            (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        assert!((ssim(&a, &b).unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn symmetric_and_permutation_invariant() {
        let a = random(6, 6, 7);
        let b = random(6, 6, 8);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        let perm = |m: &DMatrix<f64>| DMatrix::from_fn(6, 6, |i, j| m[((i + 2) % 6, (5 - j))]);
        assert!((ssim(&a, &b).unwrap() - ssim(&perm(&a), &perm(&b)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_error() {
        let a = random(6, 6, 9);
        let mut last = f64::INFINITY;
        for k in 1..6 {
            let b = a.map(|x| x + k as f64);
            let p = psnr(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn geometry_mismatch() {
        assert!(psnr(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 3)).is_err());
        assert!(ssim(&DMatrix::zeros(2, 2), &DMatrix::zeros(3, 2)).is_err());
    }
}
