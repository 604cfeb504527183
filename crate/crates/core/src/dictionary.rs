//! Dictionaries with unit-norm atoms, sparse codes, and the `.cvsd` file
//! format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CvsError, Result};

pub const CVSD_MAGIC: &[u8; 5] = b"CVSD1";

/// Tolerance on `|‖d_k‖ − 1|`.
pub const ATOM_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictInit {
    /// Separable 2-D DCT-II atoms sampled on a `√t x √t` frequency grid.
    OvercompleteDct,
    /// Gaussian columns from a seeded ChaCha8 stream.
    SeededRandom(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Wraps an atom matrix, requiring unit-norm finite columns.
    pub fn from_atoms(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(CvsError::Dimension(
                "dictionary must have at least one atom".into(),
            ));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(CvsError::NonFinite("dictionary atom entries".into()));
        }
        for (k, col) in atoms.column_iter().enumerate() {
            if (col.norm() - 1.0).abs() > ATOM_NORM_TOL {
                return Err(CvsError::Config(format!(
                    "atom {k} has norm {}, expected 1",
                    col.norm()
                )));
            }
        }
        Ok(Self { atoms })
    }

    /// Normalizes every column; fails on a zero column.
    pub fn normalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        for (k, mut col) in atoms.column_iter_mut().enumerate() {
            let n = col.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(CvsError::Config(format!(
                    "atom {k} has zero or non-finite norm"
                )));
            }
            col /= n;
        }
        Self::from_atoms(atoms)
    }

    pub fn init(atom_dim: usize, atom_count: usize, kind: DictInit) -> Result<Self> {
        if atom_dim == 0 || atom_count == 0 {
            return Err(CvsError::Config(
                "dictionary dimensions must be positive".into(),
            ));
        }
        match kind {
            DictInit::OvercompleteDct => {
                let p = exact_sqrt(atom_dim).ok_or_else(|| {
                    CvsError::Config(format!("atom_dim {atom_dim} is not a perfect square"))
                })?;
                let q = exact_sqrt(atom_count).ok_or_else(|| {
                    CvsError::Config(format!("atom_count {atom_count} is not a perfect square"))
                })?;
                if q < p {
                    return Err(CvsError::Config(format!(
                        "overcomplete DCT needs atom_count >= atom_dim ({atom_count} < {atom_dim})"
                    )));
                }
                let pi = std::f64::consts::PI;
                let one_d = DMatrix::from_fn(p, q, |i, k| {
                    (pi * (2 * i + 1) as f64 * k as f64 / (2 * q) as f64).cos()
                });
                // column-major patch index r + c*p; atom (k1, k2) at k1 + k2*q
                let atoms = DMatrix::from_fn(atom_dim, atom_count, |idx, k| {
                    let (r, c) = (idx % p, idx / p);
                    let (k1, k2) = (k % q, k / q);
                    one_d[(r, k1)] * one_d[(c, k2)]
                });
                Self::normalized(atoms)
            }
            DictInit::SeededRandom(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut atoms = DMatrix::zeros(atom_dim, atom_count);
                for k in 0..atom_count {
                    for i in 0..atom_dim {
                        atoms[(i, k)] = StandardNormal.sample(&mut rng);
                    }
                }
                Self::normalized(atoms)
            }
        }
    }

    /// `B_s`
    pub fn atom_dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// `t`
    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_atoms(self) -> DMatrix<f64> {
        self.atoms
    }

    /// `D α` for a sparse code.
    pub fn synthesize(&self, code: &SparseCode) -> DVector<f64> {
        let mut out = DVector::zeros(self.atom_dim());
        for (&k, &v) in code.indices.iter().zip(&code.values) {
            out.axpy(v, &self.atoms.column(k), 1.0);
        }
        out
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.atoms
            .column_iter()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CVSD_MAGIC)?;
        w.write_all(&(self.atom_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.atom_count() as u32).to_le_bytes())?;
        for i in 0..self.atom_dim() {
            for k in 0..self.atom_count() {
                w.write_all(&self.atoms[(i, k)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        read_exact_at(&mut r, &mut magic, 0)?;
        if &magic != CVSD_MAGIC {
            return Err(CvsError::format(0, "missing CVSD1 signature"));
        }
        let mut word = [0u8; 4];
        read_exact_at(&mut r, &mut word, 5)?;
        let dim = u32::from_le_bytes(word) as usize;
        read_exact_at(&mut r, &mut word, 9)?;
        let count = u32::from_le_bytes(word) as usize;
        if dim == 0 || count == 0 {
            return Err(CvsError::format(
                5,
                "dictionary header has a zero dimension",
            ));
        }
        let mut atoms = DMatrix::zeros(dim, count);
        let mut buf = [0u8; 8];
        let mut offset = 13u64;
        for i in 0..dim {
            for k in 0..count {
                read_exact_at(&mut r, &mut buf, offset)?;
                atoms[(i, k)] = f64::from_le_bytes(buf);
                offset += 8;
            }
        }
        Self::from_atoms(atoms).map_err(|e| CvsError::format(13, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

pub(crate) fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CvsError::format(offset, "unexpected end of file"),
        _ => CvsError::Io(e),
    })
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// One sparse coefficient vector, stored as strictly increasing indices
/// with their values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseCode {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCode {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(CvsError::Dimension(
                "sparse code index/value length mismatch".into(),
            ));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CvsError::Config(
                "sparse code indices must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CvsError::NonFinite("sparse code value".into()));
        }
        Ok(Self { indices, values })
    }

    /// Builds a code from unsorted `(index, value)` pairs with distinct indices.
    pub(crate) fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let (indices, values) = pairs.into_iter().unzip();
        Self { indices, values }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn support_size(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Coefficient for atom `k` (zero when not in the support).
    pub fn get(&self, k: usize) -> f64 {
        self.indices
            .binary_search(&k)
            .map(|i| self.values[i])
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self, len: usize) -> DVector<f64> {
        let mut out = DVector::zeros(len);
        for (&k, &v) in self.indices.iter().zip(&self.values) {
            out[k] = v;
        }
        out
    }

    /// Keeps the nonzero entries of a dense vector.
    pub fn from_dense(dense: &DVector<f64>) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        Self { indices, values }
    }
}

/// Codes for every patch of a layout, in patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodeSet {
    atom_count: usize,
    codes: Vec<SparseCode>,
}

impl SparseCodeSet {
    pub fn new(atom_count: usize, codes: Vec<SparseCode>) -> Result<Self> {
        if let Some(bad) = codes
            .iter()
            .flat_map(|c| c.indices.iter())
            .find(|&&k| k >= atom_count)
        {
            return Err(CvsError::Dimension(format!(
                "atom index {bad} out of range for {atom_count} atoms"
            )));
        }
        Ok(Self { atom_count, codes })
    }

    pub fn zeros(atom_count: usize, len: usize) -> Self {
        Self {
            atom_count,
            codes: vec![SparseCode::empty(); len],
        }
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    pub fn codes(&self) -> &[SparseCode] {
        &self.codes
    }

    pub(crate) fn codes_mut(&mut self) -> &mut [SparseCode] {
        &mut self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn total_support(&self) -> usize {
        self.codes.iter().map(SparseCode::support_size).sum()
    }

    pub fn into_codes(self) -> Vec<SparseCode> {
        self.codes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_dct_is_orthonormal() {
        let d = Dictionary::init(64, 64, DictInit::OvercompleteDct).unwrap();
        let g = d.atoms().transpose() * d.atoms();
        assert!((g - DMatrix::<f64>::identity(64, 64)).amax() <= 1e-10);
    }

    #[test]
    fn init_normalizes_and_is_deterministic() {
        let a = Dictionary::init(64, 256, DictInit::OvercompleteDct).unwrap();
        let b = Dictionary::init(64, 256, DictInit::OvercompleteDct).unwrap();
        assert_eq!(a, b);
        assert!(a.max_norm_deviation() <= 1e-10);
        let r = Dictionary::init(16, 40, DictInit::SeededRandom(4)).unwrap();
        assert!(r.max_norm_deviation() <= 1e-10);
        assert_eq!(
            r,
            Dictionary::init(16, 40, DictInit::SeededRandom(4)).unwrap()
        );
    }

    #[test]
    fn dct_first_atom_is_flat() {
        let d = Dictionary::init(64, 256, DictInit::OvercompleteDct).unwrap();
        assert!(d
            .atoms()
            .column(0)
            .iter()
            .all(|&v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn init_rejects_invalid_shapes() {
        assert!(Dictionary::init(60, 256, DictInit::OvercompleteDct).is_err());
        assert!(Dictionary::init(64, 200, DictInit::OvercompleteDct).is_err());
        assert!(Dictionary::init(64, 36, DictInit::OvercompleteDct).is_err());
        assert!(Dictionary::init(0, 4, DictInit::SeededRandom(1)).is_err());
    }

    #[test]
    fn cvsd_round_trip_and_errors() {
        let d = Dictionary::init(16, 25, DictInit::SeededRandom(2)).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"CVSD1");
        assert_eq!(buf.len(), 13 + 16 * 25 * 8);
        // row-major: second stored value is atom 1, row 0
        assert_eq!(
            f64::from_le_bytes(buf[21..29].try_into().unwrap()),
            d.atoms()[(0, 1)]
        );
        assert_eq!(Dictionary::read_from(&buf[..]).unwrap(), d);
        assert!(matches!(
            Dictionary::read_from(&buf[..100]),
            Err(CvsError::Format { offset: 93, .. })
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Dictionary::read_from(&bad[..]).is_err());
    }

    #[test]
    fn sparse_code_validation() {
        assert!(SparseCode::new(vec![3, 1], vec![1.0, 2.0]).is_err());
        assert!(SparseCode::new(vec![1, 1], vec![1.0, 2.0]).is_err());
        assert!(SparseCode::new(vec![1], vec![f64::NAN]).is_err());
        let c = SparseCode::new(vec![1, 4], vec![2.0, -1.0]).unwrap();
        assert_eq!(c.get(4), -1.0);
        assert_eq!(c.get(2), 0.0);
        assert!(SparseCodeSet::new(4, vec![c.clone()]).is_err());
        assert!(SparseCodeSet::new(5, vec![c]).is_ok());
    }
}
