//! Precomputed token vectors in the `AMEB` little-endian binary layout:
//! magic, `u32` version, `u32` width, `u32` document count, then per
//! document a `u32`-prefixed UTF-8 id, `u32` token count and
//! `tokens × width` `f32` values, row-major.

use std::io::{Read, Write};
use std::path::Path;

use argmine_core::encoder::EmbeddingTable;
use argmine_core::Tensor;

use crate::binio::{read_f32s, read_string, read_u32, write_f32s, write_string, write_u32};
use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"AMEB";
const VERSION: u32 = 1;

pub fn write_embeddings(mut w: impl Write, table: &EmbeddingTable<f32>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u32(&mut w, table.dim() as u32)?;
    write_u32(&mut w, table.len() as u32)?;
    for (id, matrix) in table.iter() {
        write_string(&mut w, id)?;
        write_u32(&mut w, matrix.rows() as u32)?;
        write_f32s(&mut w, matrix.data())?;
    }
    Ok(())
}

pub fn read_embeddings(mut r: impl Read) -> std::io::Result<EmbeddingTable<f32>> {
    let invalid = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not an embedding file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(invalid(format!("unsupported embedding file version {version}")));
    }
    let dim = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)?;
    let mut table = EmbeddingTable::new(dim);
    for _ in 0..count {
        let id = read_string(&mut r)?;
        let rows = read_u32(&mut r)? as usize;
        let data = read_f32s(&mut r, rows * dim)?;
        let matrix = Tensor::new(rows, dim, data).map_err(|e| invalid(e.to_string()))?;
        table.insert(id, matrix).map_err(|e| invalid(e.to_string()))?;
    }
    Ok(table)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable<f32>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingPath(path.to_path_buf()),
        _ => CliError::io(path, e),
    })?;
    read_embeddings(std::io::BufReader::new(file)).map_err(|e| CliError::io(path, e))
}

pub fn save_embeddings(path: &Path, table: &EmbeddingTable<f32>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_embeddings(&mut w, table)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut table = EmbeddingTable::new(3);
        table
            .insert("a".into(), Tensor::from_fn(2, 3, |r, c| (r * 3 + c) as f32 * 0.5))
            .unwrap();
        table
            .insert("β".into(), Tensor::from_fn(1, 3, |_, c| -(c as f32)))
            .unwrap();
        let mut bytes = Vec::new();
        write_embeddings(&mut bytes, &table).unwrap();
        assert_eq!(&bytes[..4], b"AMEB");
        assert_eq!(bytes[8..12], 3u32.to_le_bytes());
        let back = read_embeddings(&bytes[..]).unwrap();
        assert_eq!(back.get("a"), table.get("a"));
        assert_eq!(back.get("β"), table.get("β"));
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        let mut table = EmbeddingTable::new(2);
        table.insert("a".into(), Tensor::zeros(2, 2)).unwrap();
        let mut bytes = Vec::new();
        write_embeddings(&mut bytes, &table).unwrap();
        assert!(read_embeddings(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(read_embeddings(&bytes[..]).is_err());
    }
}
