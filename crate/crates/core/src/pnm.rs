//! Netpbm I/O: PGM (P2 / P5, maxval 255) and PBM (P1 / P4).
//!
//! PBM polarity follows the printing convention: bit 1 is an ink dot, which is
//! halftone value 0; bit 0 is paper (255). P4 rows are padded to whole bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, PnmError, Result};
use crate::image::{BinaryImage, GrayImage};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<u32, PnmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PnmError::MalformedHeader(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PnmError::MalformedHeader(format!("{what} out of range")))
    }

    /// Consumes the single whitespace byte that separates header and raster.
    fn raster_separator(&mut self) -> std::result::Result<(), PnmError> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => Err(PnmError::MalformedHeader(
                "missing whitespace before raster".into(),
            )),
            None => Err(PnmError::TruncatedPayload {
                expected: 1,
                found: 0,
            }),
        }
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos.min(self.bytes.len())..]
    }
}

fn magic(bytes: &[u8]) -> std::result::Result<[u8; 2], PnmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(PnmError::MalformedHeader("missing P magic".into()));
    }
    Ok([bytes[0], bytes[1]])
}

fn dimensions(cur: &mut Cursor<'_>) -> std::result::Result<(usize, usize), PnmError> {
    let w = cur.number("width")? as usize;
    let h = cur.number("height")? as usize;
    if w == 0 || h == 0 {
        return Err(PnmError::MalformedHeader(format!("zero dimension {w}x{h}")));
    }
    Ok((w, h))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let m = magic(bytes)?;
    let ascii = match &m {
        b"P2" => true,
        b"P5" => false,
        _ => {
            return Err(PnmError::MalformedHeader(format!(
                "not a PGM file (magic {:?})",
                String::from_utf8_lossy(&m)
            ))
            .into())
        }
    };
    let mut cur = Cursor::new(bytes);
    cur.pos = 2;
    let (w, h) = dimensions(&mut cur)?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval).into());
    }
    let n = w * h;
    let data = if ascii {
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            cur.skip_space_and_comments();
            if cur.rest().is_empty() {
                return Err(PnmError::TruncatedPayload {
                    expected: n,
                    found: i,
                }
                .into());
            }
            let v = cur.number("sample")?;
            if v > 255 {
                return Err(PnmError::SampleOutOfRange(v).into());
            }
            data.push(v as u8);
        }
        data
    } else {
        cur.raster_separator()?;
        let raster = cur.rest();
        if raster.len() < n {
            return Err(PnmError::TruncatedPayload {
                expected: n,
                found: raster.len(),
            }
            .into());
        }
        raster[..n].to_vec()
    };
    GrayImage::new(w, h, data)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn decode_pbm(bytes: &[u8]) -> Result<BinaryImage> {
    let m = magic(bytes)?;
    let ascii = match &m {
        b"P1" => true,
        b"P4" => false,
        _ => {
            return Err(PnmError::MalformedHeader(format!(
                "not a PBM file (magic {:?})",
                String::from_utf8_lossy(&m)
            ))
            .into())
        }
    };
    let mut cur = Cursor::new(bytes);
    cur.pos = 2;
    let (w, h) = dimensions(&mut cur)?;
    let n = w * h;
    let mut ink = Vec::with_capacity(n);
    if ascii {
        for i in 0..n {
            cur.skip_space_and_comments();
            match cur.rest().first() {
                Some(b'0') => ink.push(false),
                Some(b'1') => ink.push(true),
                Some(_) => {
                    return Err(PnmError::MalformedHeader("P1 samples must be 0 or 1".into()).into())
                }
                None => {
                    return Err(PnmError::TruncatedPayload {
                        expected: n,
                        found: i,
                    }
                    .into())
                }
            }
            cur.pos += 1;
        }
    } else {
        cur.raster_separator()?;
        let raster = cur.rest();
        let stride = w.div_ceil(8);
        if raster.len() < stride * h {
            return Err(PnmError::TruncatedPayload {
                expected: stride * h,
                found: raster.len(),
            }
            .into());
        }
        for r in 0..h {
            let row = &raster[r * stride..(r + 1) * stride];
            for c in 0..w {
                ink.push(row[c / 8] & (0x80 >> (c % 8)) != 0);
            }
        }
    }
    Ok(BinaryImage::from_ink(w, h, ink))
}

pub fn encode_pbm(img: &BinaryImage) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let stride = w.div_ceil(8);
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    let header = out.len();
    out.resize(header + stride * h, 0);
    for r in 0..h {
        for c in 0..w {
            if img.is_ink(r, c) {
                out[header + r * stride + c / 8] |= 0x80 >> (c % 8);
            }
        }
    }
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pgm(&read(path.as_ref())?)
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_pgm(img))
}

pub fn load_pbm(path: impl AsRef<Path>) -> Result<BinaryImage> {
    decode_pbm(&read(path.as_ref())?)
}

pub fn save_pbm(img: &BinaryImage, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_pbm(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ascii_pgm() {
        let img = decode_pgm(b"P2 2 2 255 0 64 128 255").unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.data(), &[0, 64, 128, 255]);
    }

    #[test]
    fn comments_are_skipped() {
        let img = decode_pgm(b"P2\n# made by hand\n2 1\n# max\n255\n7 9\n").unwrap();
        assert_eq!(img.data(), &[7, 9]);
    }

    #[test]
    fn error_kinds_are_distinct() {
        let e = decode_pgm(b"P5 2 2 65535\n\0\0\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(e, Error::Pnm(PnmError::UnsupportedMaxval(65535))));
        assert!(e.to_string().contains("unsupported maxval"));

        let e = decode_pgm(b"P5 2 2 255\n\x01\x02").unwrap_err();
        assert!(matches!(
            e,
            Error::Pnm(PnmError::TruncatedPayload {
                expected: 4,
                found: 2
            })
        ));

        let e = decode_pgm(b"P5 two 2 255\n").unwrap_err();
        assert!(matches!(e, Error::Pnm(PnmError::MalformedHeader(_))));

        let e = decode_pgm(b"P6 2 2 255\n").unwrap_err();
        assert!(matches!(e, Error::Pnm(PnmError::MalformedHeader(_))));

        let e = decode_pgm(b"P2 2 1 255 3").unwrap_err();
        assert!(matches!(e, Error::Pnm(PnmError::TruncatedPayload { .. })));
    }

    #[test]
    fn pbm_polarity() {
        let white = BinaryImage::white(10, 3);
        let bytes = encode_pbm(&white);
        assert!(bytes.starts_with(b"P4\n10 3\n"));
        let payload = &bytes[8..];
        assert_eq!(payload.len(), 2 * 3);
        assert!(payload.iter().all(|&b| b == 0));

        let black = BinaryImage::from_ink(10, 3, std::iter::repeat(true).take(30));
        let bytes = encode_pbm(&black);
        let payload = &bytes[8..];
        // 10 columns: one full byte, then two used bits and six zero pad bits.
        for row in payload.chunks(2) {
            assert_eq!(row, &[0xFF, 0xC0]);
        }
    }

    #[test]
    fn ascii_pbm() {
        let img = decode_pbm(b"P1\n3 1\n1 0 1\n").unwrap();
        assert_eq!(img.data(), &[0, 255, 0]);
    }

    #[test]
    fn pgm_round_trip_many_seeds() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<u8> = (0..256).map(|_| rng.gen()).collect();
            let img = GrayImage::new(16, 16, data).unwrap();
            let back = decode_pgm(&encode_pgm(&img)).unwrap();
            assert_eq!(back.data(), img.data());
        }
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GrayImage::from_fn(5, 3, |r, c| (r * 40 + c) as u8);
        let p = dir.path().join("g.pgm");
        save_pgm(&g, &p).unwrap();
        assert_eq!(load_pgm(&p).unwrap(), g);

        let b = BinaryImage::from_ink(13, 2, (0..26).map(|i| i % 3 == 0));
        let p = dir.path().join("b.pbm");
        save_pbm(&b, &p).unwrap();
        assert_eq!(load_pbm(&p).unwrap(), b);

        assert!(matches!(
            load_pgm(dir.path().join("missing.pgm")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn pbm_round_trip(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = BinaryImage::from_ink(w, h, (0..w * h).map(|_| rng.gen_bool(0.5)));
            prop_assert_eq!(decode_pbm(&encode_pbm(&img)).unwrap(), img);
        }
    }
}
