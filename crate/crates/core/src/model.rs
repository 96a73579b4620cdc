//! Denoiser plus item table, and their on-disk checkpoint format.
//!
//! A checkpoint directory holds `model.json` (architecture) and `model.bin`
//! (named little-endian `f64` tensors, the item table last).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dcdt::{DcdtConfig, DcdtParams};
use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::itemspace::ItemEmbeddingTable;

const MAGIC: &[u8; 4] = b"DCCK";
const TABLE_NAME: &str = "item_embedding";

#[derive(Clone, Debug, PartialEq)]
pub struct DcrecModel {
    pub net: DcdtParams,
    pub table: ItemEmbeddingTable,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: DcdtConfig,
    num_items: usize,
}

impl DcrecModel {
    /// Draws the item table first, then the denoiser, from one generator.
    pub fn new(config: DcdtConfig, num_items: usize, rng: &mut impl Rng) -> Result<Self> {
        if num_items == 0 {
            return Err(Error::Empty("item vocabulary"));
        }
        let table = ItemEmbeddingTable::new(num_items, config.dim, rng);
        let net = DcdtParams::new(config, rng)?;
        Ok(Self { net, table })
    }

    pub fn config(&self) -> &DcdtConfig {
        self.net.config()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let header = Header { config: self.config().clone(), num_items: self.table.num_items() };
        std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&header)?)?;
        let mut w = BufWriter::new(File::create(dir.join("model.bin"))?);
        w.write_all(MAGIC)?;
        let tensors = self.net.names().iter().zip(self.net.tensors());
        let all: Vec<(&str, &Tensor)> =
            tensors.map(|(n, t)| (n.as_str(), t)).chain([(TABLE_NAME, self.table.weights())]).collect();
        w.write_u32::<LittleEndian>(all.len() as u32)?;
        for (name, t) in all {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(t.nrows() as u32)?;
            w.write_u32::<LittleEndian>(t.ncols() as u32)?;
            for &x in t.iter() {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: Header = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        let mut r = BufReader::new(File::open(dir.join("model.bin"))?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidCheckpoint("bad magic in model.bin".into()));
        }
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::InvalidCheckpoint(e.to_string()))?;
            let rows = r.read_u32::<LittleEndian>()? as usize;
            let cols = r.read_u32::<LittleEndian>()? as usize;
            let mut data = vec![0.0; rows * cols];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            let t = Tensor::from_shape_vec((rows, cols), data).expect("length matches shape");
            named.push((name, t));
        }
        let (name, weights) = named.pop().ok_or_else(|| Error::InvalidCheckpoint("no tensors".into()))?;
        if name != TABLE_NAME || weights.dim() != (header.num_items + 1, header.config.dim) {
            return Err(Error::InvalidCheckpoint(format!(
                "item table missing or misshapen ({name}, {:?})",
                weights.dim()
            )));
        }
        let table = ItemEmbeddingTable::from_weights(weights)?;
        let net = DcdtParams::from_named(header.config, named)?;
        Ok(Self { net, table })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let cfg = DcdtConfig { blocks: 1, dim: 6, seq_len: 4, ..Default::default() };
        let m = DcrecModel::new(cfg, 9, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        assert_eq!(DcrecModel::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DcdtConfig { blocks: 1, dim: 6, seq_len: 4, ..Default::default() };
        DcrecModel::new(cfg, 9, &mut ChaCha8Rng::seed_from_u64(5)).unwrap().save(dir.path()).unwrap();
        std::fs::write(dir.path().join("model.bin"), b"nope").unwrap();
        assert!(DcrecModel::load(dir.path()).is_err());
    }
}
