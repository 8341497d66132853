//! Binary embedding container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "DVSE"          4 bytes
//! version u16             1 for text/audio/image, 2 for fused vectors
//! modality u8             0 text, 1 audio, 2 image, 3 fused (version 2 only)
//! dim     u32             >= 1
//! count   u64
//! count x { id_len u16, id (UTF-8, id_len bytes), dim x f32 }
//! ```
//!
//! The file must end exactly after the last record.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{EmbeddingSet, Modality, SetError};

pub const MAGIC: [u8; 4] = *b"DVSE";
pub const FORMAT_VERSION_STANDARD: u16 = 1;
pub const FORMAT_VERSION_FUSED: u16 = 2;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:02x?}, expected \"DVSE\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("modality byte {modality} is not valid for format version {version}")]
    InvalidModality { version: u16, modality: u8 },
    #[error("file holds {found} vectors, expected {expected}")]
    UnexpectedModality { expected: Modality, found: Modality },
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("record {index}: id is not valid UTF-8")]
    InvalidId { index: u64 },
    #[error(transparent)]
    Set(#[from] SetError),
}

fn version_for(modality: Modality) -> u16 {
    match modality {
        Modality::Fused => FORMAT_VERSION_FUSED,
        _ => FORMAT_VERSION_STANDARD,
    }
}

/// Serialize a set to its byte representation.
pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let record_len: usize = set.ids().map(|id| 2 + id.len() + 4 * set.dim()).sum();
    let mut buf = Vec::with_capacity(HEADER_LEN + record_len);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&version_for(set.modality()).to_le_bytes());
    buf.push(set.modality() as u8);
    buf.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for (id, v) in set.iter() {
        // EmbeddingSet guarantees ids fit in u16.
        buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for x in v {
            buf.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }
    buf
}

/// Write atomically (temp file + rename). Returns the number of bytes written.
pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<u64, FormatError> {
    let io_err = |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    };
    let bytes = encode_embeddings(set);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(&bytes).map_err(io_err)?;
    tmp.flush().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(bytes.len() as u64)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet, FormatError> {
    let bytes = fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_embeddings(&bytes)
}

/// Like [`read_embeddings`], but the header must declare `expected`.
///
/// The modality byte of a version-1 file has no redundancy: turning 0 into 1
/// yields another well-formed file. Readers that know what they expect
/// should use this function so such a corruption is still caught.
pub fn read_embeddings_as(path: &Path, expected: Modality) -> Result<EmbeddingSet, FormatError> {
    let bytes = fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_embeddings_as(&bytes, expected)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                FormatError::Truncated(format!(
                    "need {n} bytes for {what} at offset {}, {} available",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet, FormatError> {
    decode(bytes, None)
}

pub fn decode_embeddings_as(bytes: &[u8], expected: Modality) -> Result<EmbeddingSet, FormatError> {
    decode(bytes, Some(expected))
}

fn decode(bytes: &[u8], expected: Option<Modality>) -> Result<EmbeddingSet, FormatError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let header = cur.take(HEADER_LEN, "header")?;
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION_STANDARD && version != FORMAT_VERSION_FUSED {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let modality_byte = header[6];
    let modality = Modality::from_byte(modality_byte)
        .filter(|m| version_for(*m) == version)
        .ok_or(FormatError::InvalidModality {
            version,
            modality: modality_byte,
        })?;
    if let Some(expected) = expected.filter(|e| *e != modality) {
        return Err(FormatError::UnexpectedModality {
            expected,
            found: modality,
        });
    }
    let dim = u32::from_le_bytes(header[7..11].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(FormatError::ZeroDim);
    }
    let count = u64::from_le_bytes(header[11..19].try_into().unwrap());

    // Every record takes at least 2 + 4*dim bytes; reject impossible counts
    // before allocating anything.
    let min_record = 2u64 + 4 * dim as u64;
    if count
        .checked_mul(min_record)
        .is_none_or(|need| need > cur.remaining() as u64)
    {
        return Err(FormatError::Truncated(format!(
            "header declares {count} records of dim {dim}, only {} bytes follow",
            cur.remaining()
        )));
    }

    let mut set = EmbeddingSet::new(modality, dim)?;
    for index in 0..count {
        let id_len = u16::from_le_bytes(cur.take(2, "id length")?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| FormatError::InvalidId { index })?;
        let raw = cur.take(4 * dim, "vector")?;
        let vector = raw
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        set.push(id, vector)?;
    }
    if cur.remaining() != 0 {
        return Err(FormatError::TrailingBytes(cur.remaining()));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_record_size() {
        let set = EmbeddingSet::from_records(Modality::Text, 2, [("a", vec![1.0, 0.0])]).unwrap();
        let bytes = encode_embeddings(&set);
        assert_eq!(HEADER_LEN, 19);
        assert_eq!(bytes.len(), 30);
        assert_eq!(&bytes[..4], b"DVSE");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 0);
        assert_eq!(&bytes[7..11], &[2, 0, 0, 0]);
        assert_eq!(&bytes[11..19], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[19..22], &[1, 0, b'a']);
        assert_eq!(&bytes[22..26], &1.0f32.to_le_bytes());
    }

    #[test]
    fn empty_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.emb");
        let set = EmbeddingSet::new(Modality::Image, 5).unwrap();
        assert_eq!(write_embeddings(&set, &path).unwrap(), HEADER_LEN as u64);
        assert_eq!(read_embeddings(&path).unwrap(), set);
    }

    #[test]
    fn fused_uses_version_two() {
        let set = EmbeddingSet::from_records(Modality::Fused, 1, [("c", vec![0.5])]).unwrap();
        let bytes = encode_embeddings(&set);
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 2);
        assert_eq!(bytes[6], 3);
        assert_eq!(decode_embeddings(&bytes).unwrap(), set);
    }

    #[test]
    fn corrupt_inputs() {
        let set = EmbeddingSet::from_records(
            Modality::Audio,
            3,
            (0..5).map(|i| (format!("clip{i}"), vec![i as f32; 3])),
        )
        .unwrap();
        let good = encode_embeddings(&set);

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_embeddings(&bad), Err(FormatError::BadMagic(_))));

        // Declared count 5, only 4 records present.
        let record = 2 + 5 + 12;
        let short = &good[..good.len() - record];
        assert!(matches!(decode_embeddings(short), Err(FormatError::Truncated(_))));

        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(decode_embeddings(&extra), Err(FormatError::TrailingBytes(1))));

        assert!(matches!(decode_embeddings(&good[..10]), Err(FormatError::Truncated(_))));

        let mut fused_v1 = good.clone();
        fused_v1[6] = 3;
        assert!(matches!(
            decode_embeddings(&fused_v1),
            Err(FormatError::InvalidModality { version: 1, modality: 3 })
        ));

        let mut huge = good.clone();
        huge[11..19].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_embeddings(&huge), Err(FormatError::Truncated(_))));
    }

    #[test]
    fn duplicate_ids_in_file_are_rejected() {
        let set = EmbeddingSet::from_records(Modality::Text, 1, [("a", vec![1.0]), ("b", vec![2.0])])
            .unwrap();
        let mut bytes = encode_embeddings(&set);
        // Rename record "b" to "a".
        let pos = HEADER_LEN + 2 + 1 + 4 + 2;
        bytes[pos] = b'a';
        assert!(matches!(
            decode_embeddings(&bytes),
            Err(FormatError::Set(SetError::DuplicateId(_)))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_preserves_bits(
            bits in proptest::collection::vec(proptest::collection::vec(any::<u32>(), 4), 0..20)
        ) {
            let records: Vec<(String, Vec<f32>)> = bits
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let v = b.iter().map(|&x| {
                        let f = f32::from_bits(x);
                        if f.is_nan() { 0.0 } else { f }
                    });
                    (format!("r{i}"), v.collect())
                })
                .collect();
            let set = EmbeddingSet::from_records(Modality::Audio, 4, records.clone()).unwrap();
            let back = decode_embeddings(&encode_embeddings(&set)).unwrap();
            for ((id, v), (bid, bv)) in records.iter().zip(back.iter()) {
                prop_assert_eq!(id.as_str(), bid);
                let a: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
                let b: Vec<u32> = bv.iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn every_header_byte_corruption() {
        for modality in [Modality::Text, Modality::Audio, Modality::Image, Modality::Fused] {
            let set = EmbeddingSet::from_records(
                modality,
                3,
                [("a", vec![1.0, 2.0, 3.0]), ("bb", vec![-1.0, 0.5, 1e-40])],
            )
            .unwrap();
            let bytes = encode_embeddings(&set);
            for pos in 0..HEADER_LEN {
                for value in 0..=255u8 {
                    if value == bytes[pos] {
                        continue;
                    }
                    let mut bad = bytes.clone();
                    bad[pos] = value;
                    assert!(decode_embeddings_as(&bad, modality).is_err(), "{modality} byte {pos} = {value}");
                    // Only another version-1 modality slips past the untyped reader.
                    let alias = pos == 6 && modality != Modality::Fused && value <= 2;
                    assert_eq!(decode_embeddings(&bad).is_ok(), alias, "{modality} byte {pos} = {value}");
                }
            }
        }
    }
}
