//! Block-keyed checkpoint container.
//!
//! ```text
//! magic "SCSICKPT", version u32
//! header: u32 length + JSON {"hyperparams", "stages"}
//! n_blocks u32
//! per block:  u16 name length + name, u8 frozen, u32 n_tensors
//! per tensor: u16 name length + name, u8 dtype (1 = f64), u8 ndim,
//!             ndim x u64 dims, values little-endian
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BlockName, ParamStore};
use crate::nn::{Hyperparams, Params};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SCSICKPT";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

struct BlockRecord {
    frozen: bool,
    tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyperparams: Hyperparams,
    stages: BTreeSet<u8>,
}

struct CheckpointFile {
    hp: Hyperparams,
    stages: BTreeSet<u8>,
    blocks: BTreeMap<BlockName, BlockRecord>,
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Format(format!("name too long: {s}")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let header = Header { hyperparams: store.hp.clone(), stages: store.completed_stages().clone() };
    let hp = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(&(hp.len() as u32).to_le_bytes())?;
    w.write_all(&hp)?;
    w.write_all(&(store.blocks().len() as u32).to_le_bytes())?;
    for (name, block) in store.blocks() {
        write_str(&mut w, &name.to_string())?;
        w.write_all(&[store.is_frozen(name) as u8])?;
        let tensors = block.tensors();
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (tname, data, shape) in tensors {
            write_str(&mut w, &tname)?;
            w.write_all(&[DTYPE_F64, shape.len() as u8])?;
            for d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }

    fn vec(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.inner.read_exact(&mut b).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.vec(n)?).map_err(|_| Error::Format("non-UTF-8 name".into()))
    }
}

fn read_file(path: &Path) -> Result<CheckpointFile> {
    let mut r = Reader { inner: BufReader::new(File::open(path)?) };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hp_len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(&r.vec(hp_len)?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    header.hyperparams.validate().map_err(|e| Error::Format(e.to_string()))?;
    let n_blocks = r.u32()?;
    let mut blocks = BTreeMap::new();
    for _ in 0..n_blocks {
        let name: BlockName = r.string()?.parse()?;
        let frozen = r.u8()? != 0;
        let n_tensors = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let tname = r.string()?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F64 {
                return Err(Error::Format(format!("{name}/{tname}: unsupported dtype {dtype}")));
            }
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.vec(len * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(TensorRecord { name: tname, shape, data });
        }
        blocks.insert(name, BlockRecord { frozen, tensors });
    }
    if r.inner.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(CheckpointFile { hp: header.hyperparams, stages: header.stages, blocks })
}

fn copy_block(store: &mut ParamStore, name: &BlockName, rec: &BlockRecord) -> Result<()> {
    let block = store.block_mut(name).ok_or_else(|| Error::NoBranch(name.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = block.tensors().into_iter().map(|(n, _, s)| (n, s)).collect();
    if expected.len() != rec.tensors.len() {
        return Err(Error::Shape(format!(
            "{name}: checkpoint has {} tensors, model expects {}",
            rec.tensors.len(),
            expected.len()
        )));
    }
    for ((ename, eshape), t) in expected.iter().zip(&rec.tensors) {
        if *ename != t.name || *eshape != t.shape {
            return Err(Error::Shape(format!(
                "{name}: checkpoint tensor {} {:?} does not match {} {:?}",
                t.name, t.shape, ename, eshape
            )));
        }
    }
    for (dst, t) in block.tensors_mut().into_iter().zip(&rec.tensors) {
        dst.copy_from_slice(&t.data);
    }
    Ok(())
}

/// Loads a full model. Every block required by the stored hyperparameters
/// must be present.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let file = read_file(path.as_ref())?;
    let mut store = ParamStore::zeros(file.hp.clone())?;
    let required = ParamStore::block_names(&file.hp);
    let missing: Vec<String> = required
        .iter()
        .filter(|n| !file.blocks.contains_key(n))
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingBlocks(missing));
    }
    if let Some(extra) = file.blocks.keys().find(|n| !required.contains(n)) {
        return Err(Error::Format(format!("unexpected block {extra} in checkpoint")));
    }
    let mut frozen = BTreeSet::new();
    for (name, rec) in &file.blocks {
        copy_block(&mut store, name, rec)?;
        if rec.frozen {
            frozen.insert(*name);
        }
    }
    store.set_frozen(frozen)?;
    for s in file.stages {
        store.mark_stage(s);
    }
    Ok(store)
}

/// Restores only `names` from the checkpoint into `store`; every other block
/// and the frozen set are left untouched.
pub fn partial_load(store: &mut ParamStore, path: impl AsRef<Path>, names: &[BlockName]) -> Result<()> {
    let file = read_file(path.as_ref())?;
    let missing: Vec<String> = names
        .iter()
        .filter(|n| !file.blocks.contains_key(n))
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingBlocks(missing));
    }
    for name in names {
        if store.block(name).is_none() {
            return Err(Error::NoBranch(format!("{name} is not part of this model")));
        }
    }
    for name in names {
        copy_block(store, name, &file.blocks[name])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp() -> Hyperparams {
        Hyperparams {
            n_head: 2,
            n_sb: 4,
            n_ri: 2,
            n_emb: 8,
            t_en: 1,
            t_de: 2,
            ffn_width: 16,
            payloads: vec![20, 40],
            antennas: vec![16, 32],
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut store = ParamStore::new(hp(), 4).unwrap();
        store.freeze([BlockName::En, BlockName::Ds(20)]).unwrap();
        store.mark_stage(1);
        save_checkpoint(&store, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, store);
    }

    #[test]
    fn partial_load_touches_only_named_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let source = ParamStore::new(hp(), 1).unwrap();
        save_checkpoint(&source, &path).unwrap();
        let mut target = ParamStore::new(hp(), 2).unwrap();
        let ds_before = target.block(&BlockName::Ds(40)).cloned();
        partial_load(&mut target, &path, &[BlockName::En, BlockName::De]).unwrap();
        assert_eq!(target.block(&BlockName::En), source.block(&BlockName::En));
        assert_eq!(target.block(&BlockName::De), source.block(&BlockName::De));
        assert_eq!(target.block(&BlockName::Ds(40)).cloned(), ds_before);
        assert_ne!(target.block(&BlockName::Ds(40)), source.block(&BlockName::Ds(40)));
    }

    #[test]
    fn missing_block_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        // Written by a model without the 40-bit branch...
        let small = ParamStore::new(Hyperparams { payloads: vec![20], ..hp() }, 1).unwrap();
        save_checkpoint(&small, &path).unwrap();
        // ...cannot fill a model that needs DS-40.
        let mut target = ParamStore::new(hp(), 2).unwrap();
        match partial_load(&mut target, &path, &[BlockName::Ds(40)]) {
            Err(Error::MissingBlocks(m)) => assert_eq!(m, vec!["DS-40".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        // Patch the header so the file claims both payloads.
        let mut bytes = std::fs::read(&path).unwrap();
        let needle = b"\"payloads\":[20]";
        let pos = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let patched = b"\"payloads\":[40]";
        bytes[pos..pos + needle.len()].copy_from_slice(patched);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::MissingBlocks(_))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let other = ParamStore::new(Hyperparams { n_emb: 16, ffn_width: 32, ..hp() }, 1).unwrap();
        save_checkpoint(&other, &path).unwrap();
        let mut target = ParamStore::new(hp(), 2).unwrap();
        assert!(matches!(partial_load(&mut target, &path, &[BlockName::Lpt(16)]), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_corrupt_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ParamStore::new(hp(), 1).unwrap(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
        std::fs::write(&path, b"NOTACKPT").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
