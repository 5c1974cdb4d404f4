//! 8-bit RGB image planes with binary PPM/PGM I/O.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePlane {
    pub height: usize,
    pub width: usize,
    samples: Vec<u8>,
}

impl ImagePlane {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, samples: Vec<u8>) -> Result<Self> {
        if samples.len() != height * width * Self::CHANNELS {
            return Err(Error::Length {
                expected: height * width * Self::CHANNELS,
                actual: samples.len(),
            });
        }
        Ok(Self {
            height,
            width,
            samples,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            samples: vec![value; height * width * Self::CHANNELS],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Self {
        let mut samples = Vec::with_capacity(height * width * Self::CHANNELS);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..Self::CHANNELS {
                    samples.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            samples,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> u8 {
        self.samples[(row * self.width + col) * Self::CHANNELS + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: u8) {
        self.samples[(row * self.width + col) * Self::CHANNELS + ch] = v;
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    /// Number of source samples `H * W * 3`.
    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Extends to `(height, width)` by replicating the last row and column.
    pub fn pad_edge(&self, height: usize, width: usize) -> Result<Self> {
        if height < self.height || width < self.width || self.height == 0 || self.width == 0 {
            return Err(Error::Dimension(format!(
                "cannot pad {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, |r, c, ch| {
            self.get(r.min(self.height - 1), c.min(self.width - 1), ch)
        }))
    }

    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(Error::Dimension(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, |r, c, ch| self.get(r, c, ch)))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_pnm(BufReader::new(file))
    }

    /// Reads binary PPM (P6) or PGM (P5); gray input is replicated to RGB.
    pub fn read_pnm(mut reader: impl BufRead) -> Result<Self> {
        let magic = read_token(&mut reader)?;
        let channels = match magic.as_str() {
            "P6" => 3,
            "P5" => 1,
            other => return Err(Error::Format(format!("unsupported magic {other:?}"))),
        };
        let width = parse_usize(&read_token(&mut reader)?)?;
        let height = parse_usize(&read_token(&mut reader)?)?;
        let maxval = parse_usize(&read_token(&mut reader)?)?;
        if maxval != 255 {
            return Err(Error::Format(format!(
                "only maxval 255 is supported, got {maxval}"
            )));
        }
        let mut raw = vec![0u8; width * height * channels];
        reader
            .read_exact(&mut raw)
            .map_err(|_| Error::Format("truncated pixel data".into()))?;
        let samples = if channels == 3 {
            raw
        } else {
            raw.iter().flat_map(|&v| [v, v, v]).collect()
        };
        Self::new(height, width, samples)
    }

    pub fn write_ppm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.samples)?;
        Ok(())
    }

    /// Writes a PGM; only valid when all three channels are equal.
    pub fn write_pgm(&self, mut w: impl Write) -> Result<()> {
        if self
            .samples
            .chunks_exact(3)
            .any(|p| p[0] != p[1] || p[1] != p[2])
        {
            return Err(Error::Format("image is not gray; write PPM instead".into()));
        }
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let gray: Vec<u8> = self.samples.chunks_exact(3).map(|p| p[0]).collect();
        w.write_all(&gray)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ppm(&mut file)?;
        file.flush()?;
        Ok(())
    }
}

fn parse_usize(token: &str) -> Result<usize> {
    token
        .parse()
        .map_err(|_| Error::Format(format!("bad header field {token:?}")))
}

/// Reads one whitespace-delimited header token, skipping `#` comments. Consumes
/// exactly one trailing whitespace byte.
fn read_token(reader: &mut impl BufRead) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            return Err(Error::Format("unexpected end of header".into()));
        }
        let b = byte[0];
        if b == b'#' && token.is_empty() {
            let mut line = Vec::new();
            reader.read_until(b'\n', &mut line)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            return Ok(token);
        }
        token.push(b as char);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let img = ImagePlane::from_fn(5, 7, |r, c, ch| (r * 31 + c * 7 + ch * 50) as u8);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        let back = ImagePlane::read_pnm(&buf[..]).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_reads_as_gray_rgb() {
        let img = ImagePlane::from_fn(3, 4, |r, c, _| (r * 4 + c) as u8);
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5"));
        assert_eq!(ImagePlane::read_pnm(&buf[..]).unwrap(), img);
        let color = ImagePlane::from_fn(2, 2, |_, _, ch| ch as u8);
        assert!(color.write_pgm(Vec::new()).is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut data = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        data.extend_from_slice(&[1, 2, 3]);
        let img = ImagePlane::read_pnm(&data[..]).unwrap();
        assert_eq!(img.samples(), &[1, 2, 3]);
    }

    #[test]
    fn truncated_pixels_rejected() {
        let data = b"P6\n2 2\n255\n\x01\x02".to_vec();
        assert!(ImagePlane::read_pnm(&data[..]).is_err());
    }

    #[test]
    fn pad_replicates_edges_and_crop_inverts() {
        let img = ImagePlane::from_fn(2, 3, |r, c, ch| (10 * r + c + 100 * ch) as u8);
        let padded = img.pad_edge(4, 5).unwrap();
        assert_eq!(padded.get(3, 4, 0), img.get(1, 2, 0));
        assert_eq!(padded.get(0, 4, 2), img.get(0, 2, 2));
        assert_eq!(padded.crop(2, 3).unwrap(), img);
        assert!(img.pad_edge(1, 3).is_err());
    }
}
