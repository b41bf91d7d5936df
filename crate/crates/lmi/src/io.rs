//! fvecs / ivecs file formats.
//!
//! Both formats are a sequence of records `[d: i32 LE][d x 4-byte LE
//! payload]` — f32 payloads for fvecs, i32 for ivecs — and every record in a
//! file must share the same d. Readers report malformed input with the byte
//! offset of the offending record; writers produce byte-exact round trips.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::{Dataset, Vector};
use crate::{Error, Result};

fn parse_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Parse { offset, msg: msg.into() }
}

/// Reads one record's payload of `count` little-endian u32 words.
fn read_words(r: &mut impl Read, count: usize, record_start: u64) -> Result<Vec<[u8; 4]>> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf)
        .map_err(|_| parse_err(record_start, format!("truncated record (expected {count} values)")))?;
    Ok(buf.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
}

/// Shared record loop. Calls `emit(record_index, words)` per record.
fn read_vecs_file(
    path: &Path,
    mut emit: impl FnMut(usize, Vec<[u8; 4]>),
) -> Result<Option<usize>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut offset: u64 = 0;
    let mut dim: Option<usize> = None;
    let mut index = 0usize;
    loop {
        let mut head = [0u8; 4];
        match r.read_exact(&mut head) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let d = i32::from_le_bytes(head);
        if d <= 0 {
            return Err(parse_err(offset, format!("nonpositive dimension {d}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expect) if expect != d => {
                return Err(parse_err(
                    offset,
                    format!("inconsistent dimension {d} (file started with {expect})"),
                ));
            }
            _ => {}
        }
        let words = read_words(&mut r, d, offset)?;
        emit(index, words);
        index += 1;
        offset += 4 + 4 * d as u64;
    }
    Ok(dim)
}

/// Reads an fvecs file into a dataset; ids are assigned sequentially from 0.
/// An empty file yields an empty dataset with dimension left undefined (0).
pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut vectors = Vec::new();
    let dim = read_vecs_file(path.as_ref(), |i, words| {
        let comps: Vec<f32> = words.into_iter().map(f32::from_le_bytes).collect();
        vectors.push(Vector::new(i as u64, comps));
    })?;
    Ok(Dataset { dimension: dim.unwrap_or(0), metric: Default::default(), vectors })
}

/// Writes a dataset as fvecs, in vector order. Ids are positional and are
/// not stored by the format.
pub fn write_fvecs(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for v in &dataset.vectors {
        w.write_all(&(v.components.len() as i32).to_le_bytes())?;
        for c in &v.components {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an ivecs file (e.g. ground-truth neighbor ids) as one row per
/// record.
pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    let mut rows = Vec::new();
    read_vecs_file(path.as_ref(), |_, words| {
        rows.push(words.into_iter().map(i32::from_le_bytes).collect());
    })?;
    Ok(rows)
}

/// Writes i32 rows as ivecs. All rows must have equal, nonzero length.
pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    if let Some(first) = rows.first() {
        if first.is_empty() {
            return Err(Error::InvalidArgument("ivecs rows must be nonempty".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
            return Err(Error::InvalidArgument(format!(
                "ivecs rows must share one length ({} vs {})",
                bad.len(),
                first.len()
            )));
        }
    }
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for row in rows {
        w.write_all(&(row.len() as i32).to_le_bytes())?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    /// Oracle bytes for a single record [1.0, 2.0], assembled by hand.
    const ONE_RECORD: [u8; 12] = [
        0x02, 0x00, 0x00, 0x00, // d = 2
        0x00, 0x00, 0x80, 0x3f, // 1.0f32
        0x00, 0x00, 0x00, 0x40, // 2.0f32
    ];

    #[test]
    fn reads_hand_assembled_record() {
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), ONE_RECORD).unwrap();
        let d = read_fvecs(tmp.path()).unwrap();
        assert_eq!(d.dimension, 2);
        assert_eq!(d.vectors, vec![Vector::new(0, vec![1.0, 2.0])]);
    }

    #[test]
    fn empty_file_is_empty_dataset_with_undefined_dimension() {
        let tmp = tempfile::NamedTempFile::new().unwrap();
        let d = read_fvecs(tmp.path()).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.dimension, 0);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut d = Dataset::new(24);
        for id in 0..100 {
            let comps: Vec<f32> = (0..24).map(|_| rng.gen_range(-1e6f32..1e6)).collect();
            d.push(Vector::new(id, comps)).unwrap();
        }
        let a = tempfile::NamedTempFile::new().unwrap();
        write_fvecs(a.path(), &d).unwrap();
        let read_back = read_fvecs(a.path()).unwrap();
        assert_eq!(read_back.vectors, d.vectors);
        let b = tempfile::NamedTempFile::new().unwrap();
        write_fvecs(b.path(), &read_back).unwrap();
        assert_eq!(std::fs::read(a.path()).unwrap(), std::fs::read(b.path()).unwrap());
    }

    #[test]
    fn truncated_record_names_offset() {
        // Second record claims d=2 but carries one value.
        let mut bytes = ONE_RECORD.to_vec();
        bytes.extend_from_slice(&2i32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), &bytes).unwrap();
        match read_fvecs(tmp.path()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn nonpositive_dimension_names_offset() {
        let mut bytes = ONE_RECORD.to_vec();
        bytes.extend_from_slice(&(-3i32).to_le_bytes());
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), &bytes).unwrap();
        match read_fvecs(tmp.path()) {
            Err(Error::Parse { offset, msg }) => {
                assert_eq!(offset, 12);
                assert!(msg.contains("-3"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_dimension_names_offset() {
        let mut bytes = ONE_RECORD.to_vec();
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), &bytes).unwrap();
        match read_fvecs(tmp.path()) {
            Err(Error::Parse { offset, msg }) => {
                assert_eq!(offset, 12);
                assert!(msg.contains("inconsistent"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ivecs_round_trip() {
        let rows = vec![vec![5, -1, 7], vec![0, 2, 3]];
        let tmp = tempfile::NamedTempFile::new().unwrap();
        write_ivecs(tmp.path(), &rows).unwrap();
        assert_eq!(read_ivecs(tmp.path()).unwrap(), rows);
    }

    #[test]
    fn ivecs_rejects_ragged_rows() {
        let tmp = tempfile::NamedTempFile::new().unwrap();
        assert!(write_ivecs(tmp.path(), &[vec![1], vec![1, 2]]).is_err());
    }
}
