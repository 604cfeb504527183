//! `.cvsm` measurement container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "CVSM1"
//! u32 rows, u32 cols, u32 block_side
//! f64 mr_key, f64 mr_nonkey
//! u32 gop_size
//! u64 seed_key, u64 seed_nonkey
//! u32 frame_count
//! u8  vectorization tag (0 = column-major blocks, raster block order)
//! per frame: u8 role (0 key, 1 non-key), then blocks·m_b f64 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::dictionary::read_exact_at;
use crate::error::{CvsError, Result};
use crate::sensing::{measurements_per_block, BlockGrid, BlockMeasurements, SensingMatrix};
use crate::video::{FrameRole, GopStructure};

pub const CVSM_MAGIC: &[u8; 5] = b"CVSM1";
pub const VECTORIZATION_COLUMN_MAJOR: u8 = 0;
const HEADER_LEN: u64 = 5 + 4 * 3 + 8 * 2 + 4 + 8 * 2 + 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainerHeader {
    pub rows: usize,
    pub cols: usize,
    pub block_side: usize,
    pub mr_key: f64,
    pub mr_nonkey: f64,
    pub gop_size: usize,
    pub seed_key: u64,
    pub seed_nonkey: u64,
    pub frame_count: usize,
    pub vectorization: u8,
}

impl ContainerHeader {
    pub fn grid(&self) -> Result<BlockGrid> {
        BlockGrid::new(self.rows, self.cols, self.block_side)
    }

    pub fn gop(&self) -> Result<GopStructure> {
        GopStructure::new(self.frame_count, self.gop_size)
    }

    pub fn measurement_ratio(&self, role: FrameRole) -> f64 {
        match role {
            FrameRole::Key => self.mr_key,
            FrameRole::NonKey => self.mr_nonkey,
        }
    }

    pub fn measurements_per_block(&self, role: FrameRole) -> usize {
        measurements_per_block(self.measurement_ratio(role), self.block_side)
    }

    /// Regenerates the sensing matrix shared by all frames of `role`.
    pub fn sensing_matrix(&self, role: FrameRole) -> Result<SensingMatrix> {
        let seed = match role {
            FrameRole::Key => self.seed_key,
            FrameRole::NonKey => self.seed_nonkey,
        };
        SensingMatrix::generate(seed, self.measurement_ratio(role), self.block_side)
    }

    fn validate(&self) -> Result<()> {
        self.grid()?;
        self.gop()?;
        for role in [FrameRole::Key, FrameRole::NonKey] {
            let mr = self.measurement_ratio(role);
            if !(mr > 0.0 && mr <= 1.0) || self.measurements_per_block(role) == 0 {
                return Err(CvsError::Config(format!("invalid measurement ratio {mr}")));
            }
        }
        if self.vectorization != VECTORIZATION_COLUMN_MAJOR {
            return Err(CvsError::Config(format!(
                "unknown vectorization tag {}",
                self.vectorization
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    pub role: FrameRole,
    pub blocks: BlockMeasurements,
}

/// Header plus per-frame block measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub header: ContainerHeader,
    pub frames: Vec<EncodedFrame>,
}

impl MeasurementSet {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let h = &self.header;
        w.write_all(CVSM_MAGIC)?;
        for v in [h.rows, h.cols, h.block_side] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&h.mr_key.to_le_bytes())?;
        w.write_all(&h.mr_nonkey.to_le_bytes())?;
        w.write_all(&(h.gop_size as u32).to_le_bytes())?;
        w.write_all(&h.seed_key.to_le_bytes())?;
        w.write_all(&h.seed_nonkey.to_le_bytes())?;
        w.write_all(&(h.frame_count as u32).to_le_bytes())?;
        w.write_all(&[h.vectorization])?;
        for frame in &self.frames {
            w.write_all(&[role_byte(frame.role)])?;
            for block in &frame.blocks {
                for v in block.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        read_exact_at(&mut r, &mut magic, 0)?;
        if &magic != CVSM_MAGIC {
            return Err(CvsError::format(0, "missing CVSM1 signature"));
        }
        let mut cursor = Cursor {
            r: &mut r,
            offset: 5,
        };
        let rows = cursor.u32()? as usize;
        let cols = cursor.u32()? as usize;
        let block_side = cursor.u32()? as usize;
        let mr_key = cursor.f64()?;
        let mr_nonkey = cursor.f64()?;
        let gop_size = cursor.u32()? as usize;
        let seed_key = cursor.u64()?;
        let seed_nonkey = cursor.u64()?;
        let frame_count = cursor.u32()? as usize;
        let vectorization = cursor.u8()?;
        let header = ContainerHeader {
            rows,
            cols,
            block_side,
            mr_key,
            mr_nonkey,
            gop_size,
            seed_key,
            seed_nonkey,
            frame_count,
            vectorization,
        };
        header
            .validate()
            .map_err(|e| CvsError::format(5, e.to_string()))?;
        debug_assert_eq!(cursor.offset, HEADER_LEN);

        let gop = header.gop()?;
        let blocks = header.grid()?.block_count();
        let mut frames = Vec::with_capacity(frame_count);
        for i in 0..frame_count {
            let at = cursor.offset;
            let role = match cursor.u8()? {
                0 => FrameRole::Key,
                1 => FrameRole::NonKey,
                other => return Err(CvsError::format(at, format!("invalid role byte {other}"))),
            };
            if role != gop.role(i) {
                return Err(CvsError::format(
                    at,
                    format!(
                        "frame {i} tagged {:?} but GOP {} implies {:?}",
                        role,
                        gop_size,
                        gop.role(i)
                    ),
                ));
            }
            let m = header.measurements_per_block(role);
            let mut frame_blocks = Vec::with_capacity(blocks);
            for _ in 0..blocks {
                let mut v = DVector::zeros(m);
                for x in v.iter_mut() {
                    *x = cursor.f64()?;
                }
                frame_blocks.push(v);
            }
            frames.push(EncodedFrame {
                role,
                blocks: frame_blocks,
            });
        }
        let mut probe = [0u8; 1];
        if cursor.r.read(&mut probe)? != 0 {
            return Err(CvsError::format(
                cursor.offset,
                "trailing bytes after last frame",
            ));
        }
        Ok(Self { header, frames })
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

    pub fn roles(&self) -> Vec<FrameRole> {
        self.frames.iter().map(|f| f.role).collect()
    }
}

fn role_byte(role: FrameRole) -> u8 {
    match role {
        FrameRole::Key => 0,
        FrameRole::NonKey => 1,
    }
}

struct Cursor<'a, R: Read> {
    r: &'a mut R,
    offset: u64,
}

impl<R: Read> Cursor<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        read_exact_at(self.r, &mut buf, self.offset)?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MeasurementSet {
        let header = ContainerHeader {
            rows: 16,
            cols: 8,
            block_side: 8,
            mr_key: 0.5,
            mr_nonkey: 0.25,
            gop_size: 2,
            seed_key: 1,
            seed_nonkey: 2,
            frame_count: 3,
            vectorization: 0,
        };
        let frames = (0..3)
            .map(|i| {
                let role = if i % 2 == 0 {
                    FrameRole::Key
                } else {
                    FrameRole::NonKey
                };
                let m = header.measurements_per_block(role);
                EncodedFrame {
                    role,
                    blocks: (0..2)
                        .map(|b| DVector::from_fn(m, |j, _| (i * 100 + b * 10 + j) as f64 * 0.5))
                        .collect(),
                }
            })
            .collect();
        MeasurementSet { header, frames }
    }

    #[test]
    fn round_trip_layout() {
        let set = sample();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"CVSM1");
        let payload = 3 + 2 * (32 + 16 + 32) * 8;
        assert_eq!(buf.len() as u64, HEADER_LEN + payload as u64);
        assert_eq!(buf[HEADER_LEN as usize], 0);
        assert_eq!(MeasurementSet::read_from(&buf[..]).unwrap(), set);
    }

    #[test]
    fn corrupt_inputs_report_offsets() {
        let set = sample();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let err = MeasurementSet::read_from(&buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, CvsError::Format { .. }));
        let mut bad_role = buf.clone();
        bad_role[HEADER_LEN as usize] = 1;
        assert!(matches!(
            MeasurementSet::read_from(&bad_role[..]),
            Err(CvsError::Format { offset, .. }) if offset == HEADER_LEN
        ));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(MeasurementSet::read_from(&extra[..]).is_err());
        assert!(MeasurementSet::read_from(&b"CVSM0"[..]).is_err());
    }
}
