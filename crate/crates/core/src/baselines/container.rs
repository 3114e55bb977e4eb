//! `.mmod` model container.
//!
//! ```text
//! "MMOD"  u8 version=1  u8 kind
//! u32 header_len, header_len bytes of UTF-8 JSON
//! u32 blob_count
//! blob: u64 value_count, value_count f64 (little-endian)
//! ```
//!
//! The JSON header carries hyperparameters and shapes; the blobs carry the
//! learned parameters bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{self, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MMOD";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn,
    Gnb,
    Lda,
    Softmax,
    LinearSvm,
    Mlp,
    SmallCnn,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 7] = [
        ClassifierKind::Knn,
        ClassifierKind::Gnb,
        ClassifierKind::Lda,
        ClassifierKind::Softmax,
        ClassifierKind::LinearSvm,
        ClassifierKind::Mlp,
        ClassifierKind::SmallCnn,
    ];

    pub fn tag(self) -> u8 {
        match self {
            ClassifierKind::Knn => 1,
            ClassifierKind::Gnb => 2,
            ClassifierKind::Lda => 3,
            ClassifierKind::Softmax => 4,
            ClassifierKind::LinearSvm => 5,
            ClassifierKind::Mlp => 6,
            ClassifierKind::SmallCnn => 7,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "knn",
            ClassifierKind::Gnb => "gnb",
            ClassifierKind::Lda => "lda",
            ClassifierKind::Softmax => "softmax",
            ClassifierKind::LinearSvm => "linear_svm",
            ClassifierKind::Mlp => "mlp",
            ClassifierKind::SmallCnn => "smallcnn",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = if s == "svm" { "linear_svm" } else { s };
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind {s:?}")))
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ClassifierKind,
    pub header: serde_json::Value,
    pub blobs: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.kind.tag());
        let header = serde_json::to_vec(&self.header)?;
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for b in &self.blobs {
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            codec::put_f64s(&mut out, b);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        rd.magic(MAGIC)?;
        let at = rd.offset();
        let version = rd.u8()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion { version, offset: at });
        }
        let at = rd.offset();
        let tag = rd.u8()?;
        let kind = ClassifierKind::from_tag(tag).ok_or_else(|| Error::Malformed {
            offset: at,
            message: format!("unknown model kind tag {tag}"),
        })?;
        let len = rd.u32()? as usize;
        let at = rd.offset();
        let header = serde_json::from_slice(rd.take(len)?).map_err(|e| Error::Malformed {
            offset: at,
            message: format!("bad JSON header: {e}"),
        })?;
        let count = rd.u32()? as usize;
        let mut blobs = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let at = rd.offset();
            let n = usize::try_from(rd.u64()?).map_err(|_| Error::Malformed {
                offset: at,
                message: "blob length overflows".into(),
            })?;
            blobs.push(rd.f64_vec(n)?);
        }
        if rd.remaining() != 0 {
            return Err(Error::Malformed {
                offset: rd.offset(),
                message: format!("{} trailing bytes", rd.remaining()),
            });
        }
        Ok(ModelFile { kind, header, blobs })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        codec::write_file(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&codec::read_file(path)?)
    }
}

/// Parameter (de)serialization for one learner.
pub trait Persist: Sized {
    const KIND: ClassifierKind;
    fn header(&self) -> serde_json::Value;
    fn blobs(&self) -> Vec<Vec<f64>>;
    fn restore(header: &serde_json::Value, blobs: &[Vec<f64>]) -> Result<Self>;

    fn to_file(&self) -> ModelFile {
        ModelFile {
            kind: Self::KIND,
            header: self.header(),
            blobs: self.blobs(),
        }
    }

    fn from_file(file: &ModelFile) -> Result<Self> {
        if file.kind != Self::KIND {
            return Err(Error::InvalidArgument(format!(
                "expected a {} model, found {}",
                Self::KIND,
                file.kind
            )));
        }
        Self::restore(&file.header, &file.blobs)
    }
}

pub(crate) fn header_field<T: serde::de::DeserializeOwned>(h: &serde_json::Value, key: &str) -> Result<T> {
    let v = h
        .get(key)
        .ok_or_else(|| Error::InvalidArgument(format!("model header lacks `{key}`")))?;
    Ok(serde_json::from_value(v.clone())?)
}

pub(crate) fn expect_blobs(blobs: &[Vec<f64>], lens: &[usize]) -> Result<()> {
    if blobs.len() != lens.len() || blobs.iter().zip(lens).any(|(b, &l)| b.len() != l) {
        return Err(Error::DimMismatch(format!(
            "expected blob lengths {lens:?}, found {:?}",
            blobs.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    Ok(())
}
