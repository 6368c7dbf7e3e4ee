//! Binary Netpbm images: PBM (P4) masks, PGM (P5) and PPM (P6) pictures.
//! <https://netpbm.sourceforge.net/doc/>

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::metrics::Mask;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("unsupported netpbm magic {0:?}")]
    Magic(String),
    #[error("bad header: {0}")]
    Header(String),
    #[error("pixel data truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&fill);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Copy of the region under `bbox`, clipped to the image.
    pub fn crop(&self, bbox: &BoundingBox) -> Option<RgbImage> {
        let c = bbox.clip_to(self.width, self.height)?;
        let (x0, y0) = (c.x() as usize, c.y() as usize);
        let mut data = Vec::with_capacity(c.area() as usize * 3);
        for y in y0..y0 + c.height() as usize {
            let start = (y * self.width as usize + x0) * 3;
            data.extend_from_slice(&self.data[start..start + c.width() as usize * 3]);
        }
        Some(RgbImage {
            width: c.width(),
            height: c.height(),
            data,
        })
    }

    /// Integer Rec. 601 luma, rounded.
    pub fn luma(&self, x: u32, y: u32) -> u8 {
        let [r, g, b] = self.get(x, y);
        ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
    }
}

struct Header<'a> {
    magic: [u8; 2],
    width: u32,
    height: u32,
    maxval: u32,
    body: &'a [u8],
}

fn parse_header(bytes: &[u8]) -> Result<Header<'_>, PnmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(PnmError::Magic(
            String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        ));
    }
    let magic = [bytes[0], bytes[1]];
    let fields = if magic[1] == b'4' { 2 } else { 3 };
    let mut pos = 2;
    let mut values = Vec::with_capacity(3);
    while values.len() < fields {
        // whitespace and comments between tokens
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(PnmError::Header("expected a decimal number".into()));
        }
        let v: u32 = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|e| PnmError::Header(format!("{e}")))?;
        values.push(v);
    }
    // exactly one whitespace byte separates header and raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PnmError::Header("missing whitespace before raster".into()));
    }
    pos += 1;
    let (width, height) = (values[0], values[1]);
    if width == 0 || height == 0 {
        return Err(PnmError::Header(format!("empty image {width}x{height}")));
    }
    let maxval = if fields == 3 { values[2] } else { 1 };
    if maxval == 0 || maxval > 255 {
        return Err(PnmError::Header(format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        body: &bytes[pos..],
    })
}

fn take(body: &[u8], need: usize) -> Result<&[u8], PnmError> {
    if body.len() < need {
        return Err(PnmError::Truncated {
            need,
            have: body.len(),
        });
    }
    Ok(&body[..need])
}

fn rescale(v: u8, maxval: u32) -> u8 {
    if maxval == 255 {
        v
    } else {
        ((v.min(maxval as u8) as u32 * 255 + maxval / 2) / maxval) as u8
    }
}

/// Decodes a P5 or P6 image; grey levels are replicated into RGB.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage, PnmError> {
    let h = parse_header(bytes)?;
    let n = h.width as usize * h.height as usize;
    let data = match &h.magic {
        b"P6" => take(h.body, n * 3)?
            .iter()
            .map(|&v| rescale(v, h.maxval))
            .collect(),
        b"P5" => take(h.body, n)?
            .iter()
            .flat_map(|&v| {
                let g = rescale(v, h.maxval);
                [g, g, g]
            })
            .collect(),
        other => return Err(PnmError::Magic(String::from_utf8_lossy(other).into_owned())),
    };
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        data,
    })
}

/// Decodes a P4 bitmap. Set bits (black in netpbm terms) are foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask, PnmError> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P4" {
        return Err(PnmError::Magic(
            String::from_utf8_lossy(&h.magic).into_owned(),
        ));
    }
    let stride = (h.width as usize).div_ceil(8);
    let raster = take(h.body, stride * h.height as usize)?;
    let mut bits = Vec::with_capacity(h.width as usize * h.height as usize);
    for row in raster.chunks_exact(stride) {
        for x in 0..h.width as usize {
            bits.push(row[x / 8] & (0x80 >> (x % 8)) != 0);
        }
    }
    Ok(Mask::new(h.width, h.height, bits).expect("sizes checked above"))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Writes the luma of `img` as an 8-bit P5 file.
pub fn encode_pgm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    for y in 0..img.height {
        for x in 0..img.width {
            out.push(img.luma(x, y));
        }
    }
    out
}

pub fn encode_pbm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P4\n{} {}\n", mask.width(), mask.height()).into_bytes();
    let stride = (mask.width() as usize).div_ceil(8);
    for row in mask.bits().chunks_exact(mask.width() as usize) {
        let mut packed = vec![0u8; stride];
        for (x, &b) in row.iter().enumerate() {
            if b {
                packed[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>, PnmError> {
    fs::read(path).map_err(|source| PnmError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_image(path: &Path) -> Result<RgbImage, PnmError> {
    decode_image(&read_file(path)?)
}

pub fn read_mask(path: &Path) -> Result<Mask, PnmError> {
    decode_mask(&read_file(path)?)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<(), PnmError> {
    Ok(fs::write(path, encode_ppm(img))?)
}

pub fn write_pbm(path: &Path, mask: &Mask) -> Result<(), PnmError> {
    Ok(fs::write(path, encode_pbm(mask))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = RgbImage::new(3, 2, [1, 2, 3]);
        img.put(2, 1, [200, 100, 50]);
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(decode_image(&bytes).unwrap(), img);
    }

    #[test]
    fn header_comments_and_small_maxval() {
        let mut bytes = b"P5 # grey\n# another\n2 1\n15\n".to_vec();
        bytes.extend_from_slice(&[15, 0]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.get(0, 0), [255, 255, 255]);
        assert_eq!(img.get(1, 0), [0, 0, 0]);
    }

    #[test]
    fn pgm_round_trip_of_grey() {
        let mut img = RgbImage::new(2, 2, [7, 7, 7]);
        img.put(1, 1, [90, 90, 90]);
        assert_eq!(decode_image(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn pbm_bit_layout() {
        // 10 pixels wide -> 2 bytes per row, MSB first
        let mut m = Mask::filled(10, 1, false).unwrap();
        m.set(0, 0, true);
        m.set(9, 0, true);
        let bytes = encode_pbm(&m);
        assert_eq!(&bytes[bytes.len() - 2..], &[0x80, 0x40]);
        assert_eq!(decode_mask(&bytes).unwrap(), m);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            decode_image(b"P3\n1 1\n255\n0 0 0"),
            Err(PnmError::Magic(_))
        ));
        assert!(matches!(
            decode_image(b"P6\n2 2\n255\n\0\0"),
            Err(PnmError::Truncated { need: 12, have: 2 })
        ));
        assert!(matches!(
            decode_image(b"P6\nx 2\n255\n"),
            Err(PnmError::Header(_))
        ));
        assert!(matches!(
            decode_mask(b"P6\n1 1\n255\n\0\0\0"),
            Err(PnmError::Magic(_))
        ));
        assert!(matches!(decode_image(b""), Err(PnmError::Magic(_))));
        assert!(read_image(Path::new("/definitely/not/here.ppm")).is_err());
    }

    #[test]
    fn crop_clips() {
        let mut img = RgbImage::new(4, 4, [0, 0, 0]);
        img.put(3, 3, [9, 9, 9]);
        let c = img.crop(&BoundingBox::new(2, 2, 5, 5).unwrap()).unwrap();
        assert_eq!((c.width(), c.height()), (2, 2));
        assert_eq!(c.get(1, 1), [9, 9, 9]);
    }

    proptest! {
        #[test]
        fn pbm_round_trip(w in 1u32..20, h in 1u32..6, seed in any::<u64>()) {
            let bits = (0..w * h).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let m = Mask::new(w, h, bits).unwrap();
            prop_assert_eq!(decode_mask(&encode_pbm(&m)).unwrap(), m);
        }
    }
}
