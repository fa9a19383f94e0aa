//! APFP: a little-endian point container.
//!
//! ```text
//! magic "APFP" | version u32 | N u64 | C u32 | label_count u64
//! N x (3 + C) f32 | label_count x u32
//! ```
//! `label_count` is 0 (unlabeled), 1 (one class label) or N (per-point labels).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use apf_core::geometry::PointCloud;

pub const MAGIC: [u8; 4] = *b"APFP";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 28;

#[derive(Debug, thiserror::Error)]
pub enum PointBinaryError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a point file (bad magic)")]
    BadMagic,
    #[error("unsupported point file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated point file: header implies {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("point file has {0} trailing bytes")]
    TrailingBytes(u64),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
}

/// A cloud with its optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRecord {
    pub cloud: PointCloud,
    pub labels: Vec<u32>,
}

pub fn encode_point_binary(cloud: &PointCloud, labels: &[u32]) -> Result<Vec<u8>, PointBinaryError> {
    let n = cloud.len();
    if n == 0 {
        return Err(PointBinaryError::InvalidData("a point file needs at least one point".into()));
    }
    if !(labels.is_empty() || labels.len() == 1 || labels.len() == n) {
        return Err(PointBinaryError::InvalidData(format!("{} labels for {n} points", labels.len())));
    }
    if cloud.features().iter().any(|v| !v.is_finite()) {
        return Err(PointBinaryError::InvalidData("non-finite feature value".into()));
    }
    let c = cloud.feature_width();
    let mut out = Vec::with_capacity(HEADER_LEN as usize + n * (3 + c) * 4 + labels.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for i in 0..n {
        for v in cloud.points()[i].iter().chain(cloud.feature(i)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

struct Header {
    n: u64,
    c: u32,
    label_count: u64,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PointBinaryError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(PointBinaryError::BadMagic);
    }
    if bytes.len() < HEADER_LEN as usize {
        return Err(PointBinaryError::Truncated { expected: HEADER_LEN, actual: bytes.len() as u64 });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(PointBinaryError::UnsupportedVersion(version));
    }
    let h = Header { n: u64_at(8), c: u32_at(16), label_count: u64_at(20) };
    if h.n == 0 {
        return Err(PointBinaryError::InvalidHeader("zero points".into()));
    }
    if !(h.label_count <= 1 || h.label_count == h.n) {
        return Err(PointBinaryError::InvalidHeader(format!("label count {} for {} points", h.label_count, h.n)));
    }
    Ok(h)
}

/// Total file length implied by a header, or `None` on overflow.
fn expected_len(h: &Header) -> Option<u64> {
    let per_point = (3 + h.c as u64).checked_mul(4)?;
    h.n.checked_mul(per_point)?.checked_add(h.label_count.checked_mul(4)?)?.checked_add(HEADER_LEN)
}

fn check_len(h: &Header, actual: u64) -> Result<(), PointBinaryError> {
    let expected = expected_len(h).ok_or_else(|| PointBinaryError::InvalidHeader("sizes overflow".into()))?;
    if actual < expected {
        return Err(PointBinaryError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(PointBinaryError::TrailingBytes(actual - expected));
    }
    Ok(())
}

pub fn decode_point_binary(bytes: &[u8]) -> Result<PointRecord, PointBinaryError> {
    let h = parse_header(bytes)?;
    check_len(&h, bytes.len() as u64)?;
    let (n, c) = (h.n as usize, h.c as usize);
    let mut floats = bytes[HEADER_LEN as usize..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    let mut points = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * c);
    for _ in 0..n {
        points.push([floats.next().unwrap(), floats.next().unwrap(), floats.next().unwrap()]);
        features.extend(floats.by_ref().take(c));
    }
    let label_start = HEADER_LEN as usize + n * (3 + c) * 4;
    let labels = bytes[label_start..].chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
    let cloud = PointCloud::with_features(points, c, features).map_err(|e| PointBinaryError::InvalidData(e.to_string()))?;
    if cloud.features().iter().any(|v| !v.is_finite()) {
        return Err(PointBinaryError::InvalidData("non-finite feature value".into()));
    }
    Ok(PointRecord { cloud, labels })
}

pub fn write_point_binary(cloud: &PointCloud, labels: &[u32], path: &Path) -> Result<(), PointBinaryError> {
    let bytes = encode_point_binary(cloud, labels)?;
    File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Reads the header first and checks its arithmetic against the file length
/// before reading (and allocating for) the payload.
pub fn read_point_binary(path: &Path) -> Result<PointRecord, PointBinaryError> {
    let mut file = File::open(path)?;
    let actual = file.metadata()?.len();
    let mut head = vec![0u8; HEADER_LEN.min(actual) as usize];
    file.read_exact(&mut head)?;
    let h = parse_header(&head)?;
    check_len(&h, actual)?;
    let mut bytes = head;
    bytes.reserve_exact((actual - HEADER_LEN) as usize);
    file.read_to_end(&mut bytes)?;
    decode_point_binary(&bytes)
}
