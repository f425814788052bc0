//! Flat tensor archive: named 2-D f32 tensors in one binary file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"FLT1"
//! u32    entry count
//! entry* u16 name_len, name utf8 bytes, u32 rows, u32 cols
//! data   rows*cols f32 values per entry, row-major, in entry order
//! ```
//!
//! Reads are all-or-nothing: a truncated or malformed file yields an error
//! and no partial content.

use crate::error::{Error, Result};
use ndarray::Array2;
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"FLT1";

pub fn write_archive(path: &Path, entries: &[(String, Array2<f32>)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, arr) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Archive(format!("tensor name too long: {name}")));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(arr.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(arr.ncols() as u32).to_le_bytes());
    }
    for (_, arr) in entries {
        for v in arr.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<Vec<(String, Array2<f32>)>> {
    let buf = fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > buf.len() {
            return Err(Error::Archive(format!(
                "{}: truncated at byte {} (need {} more)",
                path.display(),
                pos,
                n
            )));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    let magic = take(&mut pos, 4)?;
    if magic != MAGIC {
        return Err(Error::Archive(format!(
            "{}: bad magic {:?} (version mismatch?)",
            path.display(),
            magic
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;

    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|e| Error::Archive(format!("invalid tensor name: {e}")))?;
        let rows = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        headers.push((name, rows, cols));
    }

    let mut entries = Vec::with_capacity(count);
    for (name, rows, cols) in headers {
        let n = rows * cols;
        let raw = take(&mut pos, n * 4)?;
        let mut data = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Archive(format!("bad shape for {name}: {e}")))?;
        entries.push((name, arr));
    }
    if pos != buf.len() {
        return Err(Error::Archive(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            buf.len() - pos
        )));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn roundtrip_is_bit_identical() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("t.bin");
        let entries = vec![
            (
                "w".to_string(),
                Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f32 * 0.1 - 0.25),
            ),
            ("b".to_string(), Array2::from_elem((1, 2), f32::MIN_POSITIVE)),
        ];
        write_archive(&path, &entries).unwrap();
        let back = read_archive(&path).unwrap();
        assert_eq!(back.len(), 2);
        for ((n0, a0), (n1, a1)) in entries.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(a0.dim(), a1.dim());
            for (x, y) in a0.iter().zip(a1.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_archive_errors() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("t.bin");
        let entries = vec![("w".to_string(), Array2::from_elem((4, 4), 1.0f32))];
        write_archive(&path, &entries).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 5]).unwrap();
        assert!(read_archive(&path).is_err());
    }

    #[test]
    fn bad_magic_errors() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("t.bin");
        fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(read_archive(&path).is_err());
    }
}
