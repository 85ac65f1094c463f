//! Binary embedding matrix files.
//!
//! Layout: 8-byte magic `CARPEMB1`, u32 LE row count, u32 LE column count,
//! row-major f32 LE payload, then a JSON metadata footer occupying the rest
//! of the file. Embeddings are stored in 32-bit floats (they are the bulk
//! of any run) while all in-memory math stays 64-bit.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"CARPEMB1";

/// Footer metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct EmbeddingMeta {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ids: Vec<String>,
    pub dtype: String,
    pub producer: String,
}

impl EmbeddingMeta {
    pub fn new(producer: &str) -> Self {
        EmbeddingMeta {
            ids: Vec::new(),
            dtype: "f32".to_string(),
            producer: producer.to_string(),
        }
    }
}

/// Writes `matrix` (converted to f32) with its metadata footer.
pub fn write_embedding(path: &Path, matrix: &Matrix, meta: &EmbeddingMeta) -> Result<()> {
    let rows = u32::try_from(matrix.rows()).map_err(|_| Error::InvalidArgument {
        context: "write_embedding",
        message: "row count exceeds u32".to_string(),
    })?;
    let cols = u32::try_from(matrix.cols()).map_err(|_| Error::InvalidArgument {
        context: "write_embedding",
        message: "column count exceeds u32".to_string(),
    })?;
    let mut buf = Vec::with_capacity(16 + matrix.data().len() * 4);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for &v in matrix.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf.extend_from_slice(&serde_json::to_vec(meta)?);
    std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads an embedding file back into a 64-bit matrix plus its metadata.
/// Truncated payloads are rejected with a size diagnostic.
pub fn read_embedding(path: &Path) -> Result<(Matrix, EmbeddingMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let display = path.display().to_string();
    if bytes.len() < 16 {
        return Err(Error::format(
            &display,
            format!("file too short for header: {} bytes, need at least 16", bytes.len()),
        ));
    }
    if &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::format(
            &display,
            format!("bad magic {:?}, expected {:?}", &bytes[..8], EMBEDDING_MAGIC),
        ));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload_len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(&display, "dimension overflow"))?;
    let end = 16 + payload_len;
    if bytes.len() < end {
        return Err(Error::format(
            &display,
            format!(
                "truncated payload: declared {rows}×{cols} needs {payload_len} bytes, only {} present",
                bytes.len().saturating_sub(16)
            ),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in bytes[16..end].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    let meta: EmbeddingMeta = serde_json::from_slice(&bytes[end..])
        .map_err(|e| Error::format(&display, format!("bad metadata footer: {e}")))?;
    let matrix = Matrix::from_vec(rows, cols, data)
        .map_err(|e| Error::format(&display, format!("payload invalid: {e}")))?;
    Ok((matrix, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.carpemb");
        let mut rng = Rng::from_seed(1);
        // Values passed through f32 once so the f64 matrix is exactly
        // representable and the round trip can be byte-compared.
        let data: Vec<f64> = rng.normal_vec(12, 1.0).iter().map(|v| *v as f32 as f64).collect();
        let m = Matrix::from_vec(3, 4, data).unwrap();
        let mut meta = EmbeddingMeta::new("test");
        meta.ids = vec!["a".into(), "b".into(), "c".into()];

        write_embedding(&path, &m, &meta).unwrap();
        let (m2, meta2) = read_embedding(&path).unwrap();
        assert_eq!(m, m2);
        assert_eq!(meta, meta2);

        let path2 = dir.path().join("m2.carpemb");
        write_embedding(&path2, &m2, &meta2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected_with_size_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.carpemb");
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_embedding(&path, &m, &EmbeddingMeta::new("test")).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..20]).unwrap();
        let err = read_embedding(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(err.to_string().contains("16"), "{err}");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        std::fs::write(&path, b"NOTCARP!aaaaaaaaaaaaaaaa").unwrap();
        let err = read_embedding(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }
}
