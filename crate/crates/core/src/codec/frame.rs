use std::io::Read;
use std::path::Path;

use super::CodecError;
use crate::io_util::write_atomic;

/// An 8-bit luma plane.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame {
    pub const BIT_DEPTH: u32 = 8;

    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, CodecError> {
        if data.len() != width * height {
            return Err(CodecError::Dimensions(format!(
                "{} samples for a {width}x{height} frame",
                data.len()
            )));
        }
        Ok(Frame { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Frame {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Frame { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Copy of the `w x h` window at `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Frame {
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        Frame::from_fn(w, h, |cx, cy| self.get(x + cx, y + cy))
    }

    /// Extends right and bottom edges by replication to `w x h`.
    pub fn pad_replicate(&self, w: usize, h: usize) -> Frame {
        assert!(w >= self.width && h >= self.height);
        Frame::from_fn(w, h, |x, y| self.get(x.min(self.width - 1), y.min(self.height - 1)))
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Parses a binary (P5) PGM with maxval 255.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut pos = 0;
        let mut token = || -> Result<String, CodecError> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(CodecError::Format("truncated PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P5" {
            return Err(CodecError::Format("not a binary PGM (P5)".into()));
        }
        let num = |s: String| s.parse::<usize>().map_err(|_| CodecError::Format(format!("bad PGM field {s:?}")));
        let width = num(token()?)?;
        let height = num(token()?)?;
        let maxval = num(token()?)?;
        if maxval != 255 {
            return Err(CodecError::Format(format!("unsupported PGM maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let need = width * height;
        if bytes.len() < pos + need {
            return Err(CodecError::Format(format!(
                "PGM raster truncated: need {need} bytes, have {}",
                bytes.len().saturating_sub(pos)
            )));
        }
        Frame::new(width, height, bytes[pos..pos + need].to_vec())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        let mut buf = Vec::new();
        std::fs::File::open(path.as_ref())?.read_to_end(&mut buf)?;
        Frame::from_pgm(&buf)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        write_atomic(path.as_ref(), &self.to_pgm())?;
        Ok(())
    }
}

/// Signed residual plane, samples in `[-255, 255]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualPlane {
    width: usize,
    height: usize,
    data: Vec<i16>,
}

const RESI_MAGIC: &[u8; 4] = b"RESI";
const RESI_HEADER: usize = 16;

impl ResidualPlane {
    pub fn new(width: usize, height: usize, data: Vec<i16>) -> Result<Self, CodecError> {
        if data.len() != width * height {
            return Err(CodecError::Dimensions(format!(
                "{} samples for a {width}x{height} residual",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(-255..=255).contains(*v)) {
            return Err(CodecError::Format(format!("residual sample {v} outside [-255, 255]")));
        }
        Ok(ResidualPlane { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ResidualPlane {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> i16 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub(crate) fn set(&mut self, x: usize, y: usize, v: i16) {
        self.data[y * self.width + x] = v;
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> ResidualPlane {
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h);
        for cy in 0..h {
            let row = (y + cy) * self.width + x;
            data.extend_from_slice(&self.data[row..row + w]);
        }
        ResidualPlane { width: w, height: h, data }
    }

    /// 16-byte header (`"RESI"`, u32 width, u32 height, 4 reserved zero
    /// bytes) followed by row-major little-endian i16 samples.
    pub fn to_resi(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RESI_HEADER + 2 * self.data.len());
        out.extend_from_slice(RESI_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&[0; 4]);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_resi(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < RESI_HEADER {
            return Err(CodecError::Format("RESI header truncated".into()));
        }
        if &bytes[..4] != RESI_MAGIC {
            return Err(CodecError::Format("bad RESI magic".into()));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[RESI_HEADER..];
        if body.len() != 2 * width * height {
            return Err(CodecError::Format(format!(
                "RESI body has {} bytes, expected {}",
                body.len(),
                2 * width * height
            )));
        }
        let data = body.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
        ResidualPlane::new(width, height, data)
    }

    pub fn read_resi(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        let mut buf = Vec::new();
        std::fs::File::open(path.as_ref())?.read_to_end(&mut buf)?;
        ResidualPlane::from_resi(&buf)
    }

    pub fn write_resi(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        write_atomic(path.as_ref(), &self.to_resi())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_with_comment() {
        let f = Frame::from_fn(5, 3, |x, y| (x * 40 + y) as u8);
        assert_eq!(Frame::from_pgm(&f.to_pgm()).unwrap(), f);
        let mut with_comment = b"P5\n# made by hand\n5 3\n255\n".to_vec();
        with_comment.extend_from_slice(f.data());
        assert_eq!(Frame::from_pgm(&with_comment).unwrap(), f);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(Frame::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(Frame::from_pgm(b"P5\n4 4\n255\n\x00\x01").is_err());
        assert!(Frame::from_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn resi_layout_is_bit_exact() {
        let r = ResidualPlane::new(2, 1, vec![-1, 255]).unwrap();
        let bytes = r.to_resi();
        assert_eq!(
            bytes,
            vec![b'R', b'E', b'S', b'I', 2, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff, 0xff, 0x00]
        );
        assert_eq!(ResidualPlane::from_resi(&bytes).unwrap(), r);
    }

    #[test]
    fn resi_rejects_corruption() {
        let mut bytes = ResidualPlane::zeros(3, 3).to_resi();
        assert!(ResidualPlane::from_resi(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(ResidualPlane::from_resi(&bytes).is_err());
        assert!(ResidualPlane::new(1, 1, vec![300]).is_err());
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let f = Frame::from_fn(7, 5, |x, y| (x * 13 + y * 7) as u8);
        let p = f.pad_replicate(32, 32);
        assert_eq!(p.get(31, 31), f.get(6, 4));
        assert_eq!(p.crop(0, 0, 7, 5), f);
    }
}
