//! `.mimg` image store.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MIMG"  u8 version=1  u32 record_count
//! record: u16 id_len, id (UTF-8), u16 width, u16 height, u8 channels,
//!         width*height*channels f32 pixels, row-major, channel-last
//! ```

use std::path::Path;

use crate::codec::{self, Reader};
use crate::error::{Error, Result};

use super::{RgbTensor, SquareImage};

const MAGIC: &[u8; 4] = b"MIMG";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub width: u16,
    pub height: u16,
    pub channels: u8,
    pub data: Vec<f32>,
}

impl ImageRecord {
    pub fn from_square(id: impl Into<String>, img: &SquareImage) -> Result<Self> {
        let side = dim16(img.side)?;
        Ok(ImageRecord {
            id: id.into(),
            width: side,
            height: side,
            channels: 1,
            data: img.pixels.clone(),
        })
    }

    pub fn from_rgb(id: impl Into<String>, img: &RgbTensor) -> Result<Self> {
        let side = dim16(img.side)?;
        Ok(ImageRecord {
            id: id.into(),
            width: side,
            height: side,
            channels: 3,
            data: img.data.clone(),
        })
    }

    /// First channel as a square grayscale image.
    pub fn to_square(&self) -> Result<SquareImage> {
        if self.width != self.height {
            return Err(Error::ShapeMismatch(format!(
                "record {} is {}x{}, not square",
                self.id, self.height, self.width
            )));
        }
        let pixels = self
            .data
            .iter()
            .step_by(self.channels as usize)
            .copied()
            .collect();
        SquareImage::new(self.width as usize, pixels)
    }

    fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize
    }
}

fn dim16(side: usize) -> Result<u16> {
    side.try_into()
        .map_err(|_| Error::InvalidArgument(format!("image side {side} exceeds u16")))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageStore {
    pub records: Vec<ImageRecord>,
}

impl ImageStore {
    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn index(&self) -> std::collections::HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        let count: u32 = self
            .records
            .len()
            .try_into()
            .map_err(|_| Error::InvalidArgument("too many records".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for r in &self.records {
            if r.data.len() != r.pixel_count() {
                return Err(Error::ShapeMismatch(format!(
                    "record {} declares {} pixels but holds {}",
                    r.id,
                    r.pixel_count(),
                    r.data.len()
                )));
            }
            codec::put_short_str(&mut out, &r.id)?;
            out.extend_from_slice(&r.width.to_le_bytes());
            out.extend_from_slice(&r.height.to_le_bytes());
            out.push(r.channels);
            codec::put_f32s(&mut out, &r.data);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        rd.magic(MAGIC)?;
        let at = rd.offset();
        let version = rd.u8()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                version,
                offset: at,
            });
        }
        let count = rd.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let id = rd.short_str()?;
            let width = rd.u16()?;
            let height = rd.u16()?;
            let at = rd.offset();
            let channels = rd.u8()?;
            if channels == 0 {
                return Err(Error::Malformed {
                    offset: at,
                    message: "zero channels".into(),
                });
            }
            let n = width as usize * height as usize * channels as usize;
            let data = rd.f32_vec(n)?;
            records.push(ImageRecord {
                id,
                width,
                height,
                channels,
                data,
            });
        }
        if rd.remaining() != 0 {
            return Err(Error::Malformed {
                offset: rd.offset(),
                message: format!("{} trailing bytes after last record", rd.remaining()),
            });
        }
        Ok(ImageStore { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        codec::write_file(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&codec::read_file(path)?)
    }
}
