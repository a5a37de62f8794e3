//! `TDFX` feature dump format.
//!
//! Layout (little-endian):
//!
//! | offset | size | field            |
//! |--------|------|------------------|
//! | 0      | 4    | magic `TDFX`     |
//! | 4      | 2    | version (1)      |
//! | 6      | 2    | n_channels (16)  |
//! | 8      | 2    | stage            |
//! | 10     | 4    | frame_shift_us   |
//! | 14     | ...  | frames           |
//!
//! RAW/LOG frames are `u16` per channel, NORM frames `i16` (Q6.8), and
//! RAW_TDC debug dumps `u32` per channel. Frame count is implied by the
//! payload length.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::N_CHANNELS;

pub const MAGIC: &[u8; 4] = b"TDFX";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Raw,
    Log,
    Norm,
    RawTdc,
}

impl Stage {
    fn code(self) -> u16 {
        match self {
            Stage::Raw => 0,
            Stage::Log => 1,
            Stage::Norm => 2,
            Stage::RawTdc => 3,
        }
    }

    fn from_code(c: u16) -> Result<Self> {
        Ok(match c {
            0 => Stage::Raw,
            1 => Stage::Log,
            2 => Stage::Norm,
            3 => Stage::RawTdc,
            other => return Err(Error::format(format!("unknown stage code {other}"))),
        })
    }

    fn value_bytes(self) -> usize {
        match self {
            Stage::RawTdc => 4,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "RAW",
            Stage::Log => "LOG",
            Stage::Norm => "NORM",
            Stage::RawTdc => "RAW_TDC",
        }
    }
}

/// In-memory feature dump; values are widened to `i64` regardless of stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureFile {
    pub stage: Stage,
    pub frame_shift_us: u32,
    pub frames: Vec<[i64; N_CHANNELS]>,
}

impl FeatureFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let vb = self.stage.value_bytes();
        let mut out = Vec::with_capacity(HEADER_LEN + self.frames.len() * N_CHANNELS * vb);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(N_CHANNELS as u16).to_le_bytes());
        out.extend_from_slice(&self.stage.code().to_le_bytes());
        out.extend_from_slice(&self.frame_shift_us.to_le_bytes());
        for frame in &self.frames {
            for &v in frame {
                match self.stage {
                    Stage::Raw | Stage::Log => {
                        let v = u16::try_from(v)
                            .map_err(|_| Error::contract(format!("{v} does not fit a {} value", self.stage.name())))?;
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                    Stage::Norm => {
                        let v = i16::try_from(v)
                            .map_err(|_| Error::contract(format!("{v} does not fit a NORM value")))?;
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                    Stage::RawTdc => {
                        let v = u32::try_from(v)
                            .map_err(|_| Error::contract(format!("{v} does not fit a RAW_TDC value")))?;
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format("feature file shorter than its header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format("bad feature-file magic"));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::format(format!("unsupported feature-file version {version}")));
        }
        let n_ch = u16_at(6) as usize;
        if n_ch != N_CHANNELS {
            return Err(Error::format(format!("expected {N_CHANNELS} channels, header says {n_ch}")));
        }
        let stage = Stage::from_code(u16_at(8))?;
        let frame_shift_us = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes"));
        let payload = &bytes[HEADER_LEN..];
        let frame_bytes = N_CHANNELS * stage.value_bytes();
        if payload.len() % frame_bytes != 0 {
            return Err(Error::format("feature payload is not a whole number of frames"));
        }
        let frames = payload
            .chunks_exact(frame_bytes)
            .map(|chunk| {
                let mut f = [0i64; N_CHANNELS];
                for (ch, v) in f.iter_mut().enumerate() {
                    *v = match stage {
                        Stage::Raw | Stage::Log => u16::from_le_bytes([chunk[2 * ch], chunk[2 * ch + 1]]) as i64,
                        Stage::Norm => i16::from_le_bytes([chunk[2 * ch], chunk[2 * ch + 1]]) as i64,
                        Stage::RawTdc => {
                            u32::from_le_bytes(chunk[4 * ch..4 * ch + 4].try_into().expect("4 bytes")) as i64
                        }
                    };
                }
                f
            })
            .collect();
        Ok(FeatureFile {
            stage,
            frame_shift_us,
            frames,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
