//! APFW: named-tensor checkpoints with a trainable flag per tensor.
//!
//! ```text
//! magic "APFW" | version u32 | count u64
//! count x { name_len u32 | name utf-8 | dtype u8 | rank u8 | dims u64 x rank | trainable u8 | offset u64 }
//! zero padding to 8 | tensor payloads (little-endian, each 8-byte aligned, zero padded)
//! ```
//! Offsets are absolute. Writing is deterministic: the same tensors in the same
//! order always produce the same bytes.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use apf_core::autodiff::{ParamStore, Tensor};

pub const MAGIC: [u8; 4] = *b"APFW";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
const ALIGN: u64 = 8;
const MAX_NAME: u32 = 4096;
/// Smallest possible directory entry: empty name, rank 0.
const MIN_ENTRY: u64 = 4 + 1 + 1 + 1 + 8;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("tensor {name}: unknown dtype tag {tag}")]
    UnknownDtype { name: String, tag: u8 },
    #[error("duplicate tensor name {0}")]
    DuplicateName(String),
    #[error("tensor {0} overlaps the directory or a previous tensor")]
    Overlap(String),
    #[error("tensor {0} offset is not 8-byte aligned")]
    Misaligned(String),
    #[error("tensor {name}: payload needs {needed} bytes, file ends at {file_len}")]
    SizeMismatch { name: String, needed: u64, file_len: u64 },
    #[error("truncated checkpoint directory")]
    Truncated,
    #[error("invalid tensor name: {0}")]
    InvalidName(String),
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<f32>,
}

/// Directory record without its payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirEntry {
    pub name: String,
    pub dtype: u8,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub offset: u64,
}

impl DirEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn pad_to(n: u64) -> u64 {
    n.div_ceil(ALIGN) * ALIGN
}

fn entry_len(name: &str, rank: usize) -> u64 {
    4 + name.len() as u64 + 1 + 1 + 8 * rank as u64 + 1 + 8
}

pub fn store_entries(store: &ParamStore<f32>) -> Vec<CheckpointEntry> {
    store
        .iter()
        .map(|(_, name, t)| CheckpointEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            trainable: t.requires_grad(),
            data: t.data().to_vec(),
        })
        .collect()
}

pub fn entries_to_store(entries: Vec<CheckpointEntry>) -> Result<ParamStore<f32>, CheckpointError> {
    let mut store = ParamStore::new();
    for e in entries {
        let t = Tensor::new(e.shape, e.data, e.trainable).map_err(|err| CheckpointError::InvalidEntry(format!("{}: {err}", e.name)))?;
        store.insert(&e.name, t).map_err(|_| CheckpointError::DuplicateName(e.name.clone()))?;
    }
    Ok(store)
}

pub fn encode_checkpoint(entries: &[CheckpointEntry]) -> Result<Vec<u8>, CheckpointError> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.name.as_str()) {
            return Err(CheckpointError::DuplicateName(e.name.clone()));
        }
        if e.name.is_empty() || e.name.len() > MAX_NAME as usize {
            return Err(CheckpointError::InvalidName(e.name.clone()));
        }
        if e.shape.is_empty() || e.shape.len() > u8::MAX as usize || e.shape.iter().product::<usize>() != e.data.len() {
            return Err(CheckpointError::InvalidEntry(format!("{}: shape {:?} for {} values", e.name, e.shape, e.data.len())));
        }
    }
    let dir_len: u64 = 16 + entries.iter().map(|e| entry_len(&e.name, e.shape.len())).sum::<u64>();
    let mut offsets = Vec::with_capacity(entries.len());
    let mut cursor = pad_to(dir_len);
    for e in entries {
        offsets.push(cursor);
        cursor = pad_to(cursor + 4 * e.data.len() as u64);
    }
    let mut out = Vec::with_capacity(cursor as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (e, &off) in entries.iter().zip(&offsets) {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(DTYPE_F32);
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(e.trainable as u8);
        out.extend_from_slice(&off.to_le_bytes());
    }
    for (e, &off) in entries.iter().zip(&offsets) {
        out.resize(off as usize, 0);
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.resize(cursor as usize, 0);
    Ok(out)
}

fn take<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Truncated,
        _ => CheckpointError::Io(e),
    })
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8, CheckpointError> {
    let mut b = [0u8; 1];
    take(r, &mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    take(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    take(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Parses and validates the directory of a `file_len`-byte checkpoint; `r` is
/// left positioned at the end of the directory.
pub fn read_directory<R: Read>(r: &mut R, file_len: u64) -> Result<(Vec<DirEntry>, u64), CheckpointError> {
    let mut magic = [0u8; 4];
    take(r, &mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = read_u64(r)?;
    if count > file_len.saturating_sub(16) / MIN_ENTRY {
        return Err(CheckpointError::Truncated);
    }
    let mut entries = Vec::with_capacity(count as usize);
    let mut names = HashSet::new();
    let mut pos = 16u64;
    for _ in 0..count {
        let name_len = read_u32(r)?;
        if name_len == 0 || name_len > MAX_NAME {
            return Err(CheckpointError::InvalidName(format!("length {name_len}")));
        }
        let mut raw = vec![0u8; name_len as usize];
        take(r, &mut raw)?;
        let name = String::from_utf8(raw).map_err(|_| CheckpointError::InvalidName("not utf-8".into()))?;
        let dtype = read_u8(r)?;
        if dtype != DTYPE_F32 {
            return Err(CheckpointError::UnknownDtype { name, tag: dtype });
        }
        let rank = read_u8(r)? as usize;
        if rank == 0 {
            return Err(CheckpointError::InvalidEntry(format!("{name}: rank 0")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = read_u64(r)?;
            shape.push(usize::try_from(d).map_err(|_| CheckpointError::InvalidEntry(format!("{name}: dimension {d}")))?);
        }
        let trainable = match read_u8(r)? {
            0 => false,
            1 => true,
            f => return Err(CheckpointError::InvalidEntry(format!("{name}: trainable flag {f}"))),
        };
        let offset = read_u64(r)?;
        pos += entry_len(&name, rank);
        if !names.insert(name.clone()) {
            return Err(CheckpointError::DuplicateName(name));
        }
        entries.push(DirEntry { name, dtype, shape, trainable, offset });
    }
    // payload extents: aligned, inside the file, after the directory and strictly increasing
    let mut end = pos;
    for e in &entries {
        if e.offset % ALIGN != 0 {
            return Err(CheckpointError::Misaligned(e.name.clone()));
        }
        if e.offset < end {
            return Err(CheckpointError::Overlap(e.name.clone()));
        }
        let bytes = e.shape.iter().try_fold(4u64, |acc, &d| acc.checked_mul(d as u64));
        let needed = bytes.and_then(|b| b.checked_add(e.offset));
        match needed {
            Some(n) if n <= file_len => end = n,
            _ => return Err(CheckpointError::SizeMismatch { name: e.name.clone(), needed: needed.unwrap_or(u64::MAX), file_len }),
        }
    }
    Ok((entries, pos))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    let mut cursor = bytes;
    let (dir, _) = read_directory(&mut cursor, bytes.len() as u64)?;
    Ok(dir
        .into_iter()
        .map(|e| {
            let start = e.offset as usize;
            let data = bytes[start..start + 4 * e.numel()].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            CheckpointEntry { name: e.name, shape: e.shape, trainable: e.trainable, data }
        })
        .collect())
}

pub fn write_checkpoint(entries: &[CheckpointEntry], path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode_checkpoint(entries)?;
    File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Reads only the directory, validating extents against the file length.
pub fn read_checkpoint_directory(path: &Path) -> Result<Vec<DirEntry>, CheckpointError> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    Ok(read_directory(&mut BufReader::new(file), len)?.0)
}

pub fn save_store(store: &ParamStore<f32>, path: &Path) -> Result<(), CheckpointError> {
    write_checkpoint(&store_entries(store), path)
}

pub fn load_store(path: &Path) -> Result<ParamStore<f32>, CheckpointError> {
    entries_to_store(read_checkpoint(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries() -> Vec<CheckpointEntry> {
        vec![
            CheckpointEntry { name: "a.weight".into(), shape: vec![2, 3], trainable: false, data: vec![1.0, -2.0, 3.5, 0.0, -0.0, f32::MAX] },
            CheckpointEntry { name: "b".into(), shape: vec![1], trainable: true, data: vec![0.25] },
        ]
    }

    #[test]
    fn round_trip_and_alignment() {
        let bytes = encode_checkpoint(&entries()).unwrap();
        assert_eq!(bytes.len() % 8, 0);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.trainable, b.trainable);
            assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        let mut cursor = &bytes[..];
        let (dir, _) = read_directory(&mut cursor, bytes.len() as u64).unwrap();
        assert!(dir.iter().all(|e| e.offset % 8 == 0));
    }

    #[test]
    fn encode_rejects_duplicates() {
        let mut e = entries();
        e[1].name = "a.weight".into();
        assert!(matches!(encode_checkpoint(&e), Err(CheckpointError::DuplicateName(_))));
    }

    /// Byte position of the `i`-th entry's dtype tag and offset field.
    fn fields(bytes: &[u8], i: usize) -> (usize, usize) {
        let mut pos = 16;
        for j in 0.. {
            let name_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            let dtype = pos + 4 + name_len;
            let rank = bytes[dtype + 1] as usize;
            let offset = dtype + 2 + 8 * rank + 1;
            if j == i {
                return (dtype, offset);
            }
            pos = offset + 8;
        }
        unreachable!()
    }

    #[test]
    fn corruption_yields_distinct_errors() {
        let bytes = encode_checkpoint(&entries()).unwrap();
        let (dtype1, off1) = fields(&bytes, 1);
        let (_, off0) = fields(&bytes, 0);

        let mut b = bytes.clone();
        let src = b[off0..off0 + 8].to_vec();
        b[off1..off1 + 8].copy_from_slice(&src);
        assert!(matches!(decode_checkpoint(&b), Err(CheckpointError::Overlap(_))));

        let mut b = bytes.clone();
        b[dtype1] = 7;
        assert!(matches!(decode_checkpoint(&b), Err(CheckpointError::UnknownDtype { tag: 7, .. })));

        let b = &bytes[..bytes.len() - 8];
        assert!(matches!(decode_checkpoint(b), Err(CheckpointError::SizeMismatch { .. })));

        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(decode_checkpoint(&b), Err(CheckpointError::BadMagic)));

        let mut b = bytes.clone();
        b[4] = 9;
        assert!(matches!(decode_checkpoint(&b), Err(CheckpointError::UnsupportedVersion(9))));

        let mut b = bytes.clone();
        let name_at = 16 + 4;
        b[name_at] = 0xff;
        assert!(matches!(decode_checkpoint(&b), Err(CheckpointError::InvalidName(_))));

        assert!(matches!(decode_checkpoint(&bytes[..20]), Err(CheckpointError::Truncated)));
    }

    #[test]
    fn duplicate_names_on_read() {
        let mut e = entries();
        e[1].name = "a.weighx".into();
        let mut bytes = encode_checkpoint(&e).unwrap();
        let pos = bytes.windows(8).position(|w| w == b"a.weighx").unwrap();
        bytes[pos + 7] = b't';
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::DuplicateName(_))));
    }
}
