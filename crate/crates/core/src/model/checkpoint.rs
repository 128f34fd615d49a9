//! Binary checkpoint: `"RICP"`, u32 version, u32 header length, a JSON
//! header, then one block per parameter (`u32 rows, u32 cols`, row-major
//! f64 values). Everything little-endian.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderState, FusionKind};
use super::TrainConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RICP";
pub const CHECKPOINT_VERSION: u32 = 1;

const BLOCKS: [&str; 6] = ["w_visual", "b_visual", "w_text", "b_text", "w_fusion", "b_fusion"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub image_dim: usize,
    pub text_dim: usize,
    pub embed_dim: usize,
    pub temperature: f64,
    pub fusion: FusionKind,
    pub seed: u64,
    pub config: TrainConfig,
    pub blocks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub state: EncoderState,
}

impl Checkpoint {
    pub fn new(state: EncoderState, config: &TrainConfig) -> Self {
        let header = CheckpointHeader {
            image_dim: state.image_dim(),
            text_dim: state.text_dim(),
            embed_dim: state.embed_dim(),
            temperature: state.temperature,
            fusion: state.fusion,
            seed: config.seed,
            config: config.clone(),
            blocks: BLOCKS.iter().map(|s| s.to_string()).collect(),
        };
        Checkpoint { header, state }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let s = &self.state;
        let as_row = |b: &Array1<f64>| b.clone().insert_axis(ndarray::Axis(0));
        for block in [
            s.w_visual.clone(),
            as_row(&s.b_visual),
            s.w_text.clone(),
            as_row(&s.b_text),
            s.w_fusion.clone(),
            as_row(&s.b_fusion),
        ] {
            out.extend_from_slice(&(block.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(block.ncols() as u32).to_le_bytes());
            for v in block.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let len = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(len)?)?;
        let (di, dt, d) = (header.image_dim, header.text_dim, header.embed_dim);
        let w_visual = r.block(di, d)?;
        let b_visual = r.block(1, d)?.row(0).to_owned();
        let w_text = r.block(dt, d)?;
        let b_text = r.block(1, d)?.row(0).to_owned();
        let w_fusion = r.block(header.fusion.input_width(d), d)?;
        let b_fusion = r.block(1, d)?.row(0).to_owned();
        if r.pos != bytes.len() {
            return Err(Error::DimMismatch(format!(
                "{} trailing bytes after parameter blocks",
                bytes.len() - r.pos
            )));
        }
        let state = EncoderState {
            w_visual,
            b_visual,
            w_text,
            b_text,
            w_fusion,
            b_fusion,
            temperature: header.temperature,
            fusion: header.fusion,
        };
        Ok(Checkpoint { header, state })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated(format!(
                "checkpoint needs {end} bytes, has {}",
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn block(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let (r, c) = (self.u32()? as usize, self.u32()? as usize);
        if (r, c) != (rows, cols) {
            return Err(Error::DimMismatch(format!(
                "parameter block is {r}x{c}, header implies {rows}x{cols}"
            )));
        }
        let raw = self.take(8 * r * c)?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Array2::from_shape_vec((r, c), values).expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = TrainConfig::default();
        let state = EncoderState::init(6, 5, 4, 0.07, FusionKind::Interaction, 9).unwrap();
        let ck = Checkpoint::new(state, &cfg);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_truncation_and_magic() {
        let cfg = TrainConfig::default();
        let state = EncoderState::init(2, 2, 2, 0.07, FusionKind::Concat, 1).unwrap();
        let bytes = Checkpoint::new(state, &cfg).to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic(_))));
    }
}
