use serde::{Deserialize, Serialize};

use crate::binfmt::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::vgg::SourceKind;

const MAGIC: &[u8; 4] = b"CDFV";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Bow,
    Hlac,
}

impl FeatureKind {
    fn code(self) -> u8 {
        match self {
            FeatureKind::Bow => 0,
            FeatureKind::Hlac => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(FeatureKind::Bow),
            1 => Ok(FeatureKind::Hlac),
            other => Err(Error::format(format!("unknown feature kind code {other}"))),
        }
    }
}

/// Final per-image descriptor handed to the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub kind: FeatureKind,
    pub source: SourceKind,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// CDFV cache record. The source kind is not stored; the cache key carries it.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(MAGIC);
        w.u8(self.kind.code());
        w.len_u32(self.values.len())?;
        w.f32s(&self.values);
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8], source: SourceKind) -> Result<Self> {
        let mut r = ByteReader::with_crc("feature vector", bytes, MAGIC)?;
        let kind = FeatureKind::from_code(r.u8()?)?;
        let dim = r.u32()? as usize;
        let values = r.f32s(dim)?;
        r.finish()?;
        Ok(Self { values, kind, source })
    }
}
