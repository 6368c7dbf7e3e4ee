//! Patch descriptors from images, and the `CSGD` vector file format.
//!
//! `CSGD` layout (little-endian): magic, u32 version = 1, u32 dim, u64 count,
//! then `count` records of `u16` id length, UTF-8 id bytes and `dim` f32
//! values. The same format carries descriptors and embeddings.

use std::io::{Read, Write};

use thiserror::Error;

use crate::binio::{checked_len, DecodeError, LeReader, LeWriter};
use crate::embedder::PatchDescriptor;
use crate::geometry::BoundingBox;
use crate::pnm::RgbImage;

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"CSGD";
pub const DESCRIPTOR_VERSION: u32 = 1;
pub const DEFAULT_PATCH_SIZE: u32 = 32;

const MAX_DIM: u64 = 1 << 24;
const MAX_COUNT: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("record `{id}` has {got} values, file dimension is {dim}")]
    Dimension { id: String, dim: usize, got: usize },
    #[error("item id `{0}...` longer than 65535 bytes")]
    IdTooLong(String),
    #[error("bad descriptor file: {0}")]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub id: String,
    pub values: Vec<f32>,
}

impl DescriptorRecord {
    pub fn from_f64(id: impl Into<String>, values: &[f64]) -> Self {
        Self {
            id: id.into(),
            values: values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Crops `bbox` out of `img`, resamples it to `size x size` with
/// nearest-neighbour (pixel-centre) sampling, and flattens the luma scaled to
/// [0, 1]. `None` when the box misses the image.
pub fn patch_descriptor(img: &RgbImage, bbox: &BoundingBox, size: u32) -> Option<PatchDescriptor> {
    let c = bbox.clip_to(img.width(), img.height())?;
    let (w, h) = (c.width() as u64, c.height() as u64);
    let size64 = size as u64;
    let mut values = Vec::with_capacity((size * size) as usize);
    for dy in 0..size64 {
        let sy = c.y() as u64 + ((2 * dy + 1) * h) / (2 * size64);
        for dx in 0..size64 {
            let sx = c.x() as u64 + ((2 * dx + 1) * w) / (2 * size64);
            values.push(img.luma(sx as u32, sy as u32) as f64 / 255.0);
        }
    }
    Some(PatchDescriptor::new(values).expect("luma values are finite"))
}

pub fn write_descriptors<W: Write>(
    writer: W,
    dim: usize,
    records: &[DescriptorRecord],
) -> Result<(), DescriptorError> {
    for r in records {
        if r.values.len() != dim {
            return Err(DescriptorError::Dimension {
                id: r.id.clone(),
                dim,
                got: r.values.len(),
            });
        }
        if r.id.len() > u16::MAX as usize {
            return Err(DescriptorError::IdTooLong(r.id.chars().take(16).collect()));
        }
    }
    let mut w = LeWriter::new(writer);
    w.bytes(DESCRIPTOR_MAGIC)?;
    w.u32(DESCRIPTOR_VERSION)?;
    w.u32(dim as u32)?;
    w.u64(records.len() as u64)?;
    for r in records {
        w.u16(r.id.len() as u16)?;
        w.bytes(r.id.as_bytes())?;
        for &v in &r.values {
            w.f32(v)?;
        }
    }
    w.finish()?;
    Ok(())
}

/// Returns the file dimension and its records.
pub fn read_descriptors<R: Read>(
    reader: R,
) -> Result<(usize, Vec<DescriptorRecord>), DescriptorError> {
    let mut r = LeReader::new(reader);
    r.magic(DESCRIPTOR_MAGIC)?;
    r.version(DESCRIPTOR_VERSION)?;
    let dim = checked_len(r.u32("dim")? as u64, MAX_DIM, "dim")?;
    let count = checked_len(r.u64("count")?, MAX_COUNT, "count")?;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16("id length")? as usize;
        let mut id = vec![0u8; len];
        r.bytes(&mut id, "id")?;
        let id = String::from_utf8(id)
            .map_err(|_| DecodeError::Invalid("item id is not UTF-8".into()))?;
        let values = (0..dim)
            .map(|_| r.f32("values"))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(DescriptorRecord { id, values });
    }
    r.finish()?;
    Ok((dim, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let recs = vec![
            DescriptorRecord {
                id: "img1__p0".into(),
                values: vec![0.5, -1.0, 3.25],
            },
            DescriptorRecord {
                id: "ünïcode".into(),
                values: vec![0.0, 1.0, 2.0],
            },
        ];
        let mut buf = Vec::new();
        write_descriptors(&mut buf, 3, &recs).unwrap();
        assert_eq!(&buf[..4], b"CSGD");
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 2);
        let (dim, back) = read_descriptors(buf.as_slice()).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(back, recs);
    }

    #[test]
    fn empty_file() {
        let mut buf = Vec::new();
        write_descriptors(&mut buf, 1024, &[]).unwrap();
        let (dim, back) = read_descriptors(buf.as_slice()).unwrap();
        assert_eq!((dim, back.len()), (1024, 0));
    }

    #[test]
    fn rejects_bad_input() {
        let rec = DescriptorRecord {
            id: "x".into(),
            values: vec![1.0],
        };
        assert!(matches!(
            write_descriptors(Vec::new(), 2, &[rec.clone()]),
            Err(DescriptorError::Dimension { .. })
        ));
        let mut buf = Vec::new();
        write_descriptors(&mut buf, 1, &[rec]).unwrap();
        assert!(matches!(
            read_descriptors(&buf[..buf.len() - 1]),
            Err(DescriptorError::Decode(DecodeError::Truncated(_)))
        ));
        buf[3] = b'X';
        assert!(matches!(
            read_descriptors(buf.as_slice()),
            Err(DescriptorError::Decode(DecodeError::BadMagic { .. }))
        ));
    }

    #[test]
    fn patch_sampling() {
        // left half black, right half white
        let mut img = RgbImage::new(8, 4, [0, 0, 0]);
        for y in 0..4 {
            for x in 4..8 {
                img.put(x, y, [255, 255, 255]);
            }
        }
        let d = patch_descriptor(&img, &BoundingBox::new(0, 0, 8, 4).unwrap(), 4).unwrap();
        assert_eq!(d.len(), 16);
        assert_eq!(&d.as_slice()[..4], &[0.0, 0.0, 1.0, 1.0]);

        // upsampling a single white pixel fills the patch
        let one = patch_descriptor(&img, &BoundingBox::new(7, 0, 1, 1).unwrap(), 3).unwrap();
        assert!(one.as_slice().iter().all(|&v| v == 1.0));

        assert!(patch_descriptor(&img, &BoundingBox::new(50, 0, 2, 2).unwrap(), 4).is_none());
        let clipped = patch_descriptor(&img, &BoundingBox::new(6, -2, 10, 10).unwrap(), 2).unwrap();
        assert!(clipped.as_slice().iter().all(|&v| v == 1.0));
    }
}
