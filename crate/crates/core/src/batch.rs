//! Minibatch container and the `NNAS` binary batch file.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                |
//! |--------|------|----------------------|
//! | 0      | 4    | magic `b"NNAS"`      |
//! | 4      | 2    | version (u16, = 1)   |
//! | 6      | 4    | samples S (u32)      |
//! | 10     | 4    | channels (u32)       |
//! | 14     | 4    | height (u32)         |
//! | 18     | 4    | width (u32)          |
//! | 22     | 4·S·C·H·W | f32 payload, sample-major, each sample C×H×W |

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::InputShape;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"NNAS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 22;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Sample-major, each sample stored channel × row × column.
    pub data: Vec<f32>,
}

impl Batch {
    pub fn new(samples: usize, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if samples < 2 {
            return Err(Error::TooFewSamples(samples));
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::BadBatchShape(format!("{channels}x{height}x{width}")));
        }
        let expected = samples * channels * height * width;
        if data.len() != expected {
            return Err(Error::BadBatchShape(format!(
                "data holds {} values, shape needs {expected}",
                data.len()
            )));
        }
        Ok(Self {
            samples,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Network input shape; samples must be square.
    pub fn input_shape(&self) -> Result<InputShape> {
        if self.height != self.width {
            return Err(Error::BadBatchShape(format!(
                "samples must be square, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(InputShape {
            channels: self.channels,
            spatial: self.height,
        })
    }

    /// New batch with samples reordered as `order[k]` → position `k`.
    pub fn permuted(&self, order: &[usize]) -> Batch {
        let data = order.iter().flat_map(|&i| self.sample(i).iter().copied()).collect();
        Batch {
            samples: order.len(),
            data,
            ..*self
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for dim in [self.samples, self.channels, self.height, self.width] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(Error::BadMagic {
                    found: bytes[..4].try_into().unwrap(),
                });
            }
            return Err(Error::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let (samples, channels, height, width) = (dim(6), dim(10), dim(14), dim(18));
        if samples < 2 {
            return Err(Error::TooFewSamples(samples));
        }
        let expected = samples
            .checked_mul(channels)
            .and_then(|n| n.checked_mul(height))
            .and_then(|n| n.checked_mul(width))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::BadBatchShape("header dimensions overflow".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::TrailingBytes(payload.len() - expected));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Batch::new(samples, channels, height, width, data)
    }
}

pub fn load_batch(path: impl AsRef<Path>) -> Result<Batch> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading batch {}", path.display()), e))?;
    Batch::from_bytes(&bytes)
}

pub fn save_batch(batch: &Batch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, batch.to_bytes()).map_err(|e| Error::io(format!("writing batch {}", path.display()), e))
}

/// Deterministic uniform `[0, 1)` samples; the stand-in for real image minibatches.
pub fn gen_synthetic_batch(samples: usize, channels: usize, height: usize, width: usize, seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..samples * channels * height * width)
        .map(|_| rng.gen::<f32>())
        .collect();
    Batch::new(samples, channels, height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_size_and_range() {
        let b = gen_synthetic_batch(16, 3, 32, 32, 7).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(bytes.len() - HEADER_LEN, 196_608);
        assert!(b.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(b, gen_synthetic_batch(16, 3, 32, 32, 7).unwrap());
        assert_ne!(b, gen_synthetic_batch(16, 3, 32, 32, 8).unwrap());
    }

    #[test]
    fn header_layout() {
        let b = gen_synthetic_batch(2, 1, 8, 8, 0).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..4], b"NNAS");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[18..22], &[8, 0, 0, 0]);
        assert_eq!(&bytes[22..26], &b.data[0].to_le_bytes());
    }

    #[test]
    fn round_trip_bitwise() {
        let mut b = gen_synthetic_batch(3, 2, 8, 8, 1).unwrap();
        b.data[5] = -0.0;
        b.data[6] = f32::MIN_POSITIVE / 2.0;
        let back = Batch::from_bytes(&b.to_bytes()).unwrap();
        let bits = |x: &Batch| x.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&b));
    }

    #[test]
    fn rejects_bad_files() {
        let b = gen_synthetic_batch(8, 3, 8, 8, 2).unwrap();
        let mut bytes = b.to_bytes();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(Batch::from_bytes(&bad).unwrap_err().to_string().contains("bad magic"));

        let short = &bytes[..bytes.len() - 3 * 8 * 8 * 4];
        assert!(Batch::from_bytes(short)
            .unwrap_err()
            .to_string()
            .contains("truncated payload"));

        bytes.push(0);
        assert!(matches!(Batch::from_bytes(&bytes), Err(Error::TrailingBytes(1))));

        let mut one = gen_synthetic_batch(2, 1, 8, 8, 0).unwrap().to_bytes();
        one[6] = 1;
        assert!(matches!(Batch::from_bytes(&one), Err(Error::TooFewSamples(1))));

        let mut ver = gen_synthetic_batch(2, 1, 8, 8, 0).unwrap().to_bytes();
        ver[4] = 2;
        assert!(matches!(Batch::from_bytes(&ver), Err(Error::UnsupportedVersion(2))));
    }
}
