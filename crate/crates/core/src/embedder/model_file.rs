//! `CSGM` model files: magic, u32 version, u32 layer count, then per layer
//! u32 rows, u32 cols, row-major f64 weights and f64 bias. Little-endian.

use std::io::{Read, Write};

use crate::binio::{checked_len, DecodeError, LeReader, LeWriter};

use super::network::{EncoderParams, Layer};
use super::EmbedError;

pub const MODEL_MAGIC: &[u8; 4] = b"CSGM";
pub const MODEL_VERSION: u32 = 1;

const MAX_LAYERS: u64 = 1 << 10;
const MAX_WIDTH: u64 = 1 << 20;

pub fn write_model<W: Write>(writer: W, params: &EncoderParams) -> Result<(), EmbedError> {
    let mut w = LeWriter::new(writer);
    w.bytes(MODEL_MAGIC)?;
    w.u32(MODEL_VERSION)?;
    w.u32(params.layers().len() as u32)?;
    for layer in params.layers() {
        w.u32(layer.rows() as u32)?;
        w.u32(layer.cols() as u32)?;
        for &v in layer.weights() {
            w.f64(v)?;
        }
        for &v in layer.bias() {
            w.f64(v)?;
        }
    }
    w.finish()?;
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<EncoderParams, EmbedError> {
    let mut r = LeReader::new(reader);
    r.magic(MODEL_MAGIC).map_err(EmbedError::from)?;
    r.version(MODEL_VERSION)?;
    let count = checked_len(r.u32("layer count")? as u64, MAX_LAYERS, "layer count")?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = checked_len(r.u32("rows")? as u64, MAX_WIDTH, "rows")?;
        let cols = checked_len(r.u32("cols")? as u64, MAX_WIDTH, "cols")?;
        let weights = (0..rows * cols)
            .map(|_| r.f64("weights"))
            .collect::<Result<Vec<_>, _>>()?;
        let bias = (0..rows)
            .map(|_| r.f64("bias"))
            .collect::<Result<Vec<_>, _>>()?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(DecodeError::Invalid("non-finite parameter".into()).into());
        }
        layers.push(Layer::new(rows, cols, weights, bias)?);
    }
    r.finish()?;
    EncoderParams::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = EncoderParams::init(&[7, 5, 3], 21).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &p).unwrap();
        assert_eq!(&buf[..4], b"CSGM");
        assert_eq!(buf.len(), 12 + 8 + (35 + 5) * 8 + 8 + (15 + 3) * 8);
        assert_eq!(read_model(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn decode_errors() {
        let p = EncoderParams::init(&[3, 2], 1).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &p).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_model(bad.as_slice()),
            Err(EmbedError::Decode(DecodeError::BadMagic { .. }))
        ));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(
            read_model(bad.as_slice()),
            Err(EmbedError::Decode(DecodeError::Version { found: 9, .. }))
        ));
        assert!(matches!(
            read_model(&buf[..buf.len() - 3]),
            Err(EmbedError::Decode(DecodeError::Truncated(_)))
        ));
    }
}
