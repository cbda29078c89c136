//! Versioned binary checkpoints for the bi-encoder.
//!
//! Layout (all integers little-endian):
//!   magic "VRCG" | version u32 | d u32 | vocab_len u32 |
//!   vocab entries (text_len u32, UTF-8 bytes, index u32) * vocab_len |
//!   row-major f64 matrix, (vocab_len + 1) * d entries (OOV row last)
//!
//! Round-trips are bit-exact; any structural mismatch, truncation, or
//! trailing garbage is `CorruptCheckpoint`.

use std::io::Read;
use std::path::Path;

use super::BiEncoderModel;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VRCG";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &BiEncoderModel, path: impl AsRef<Path>) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.vocab().len() as u32).to_le_bytes());
    for (idx, token) in model.vocab().iter().enumerate() {
        out.extend_from_slice(&(token.len() as u32).to_le_bytes());
        out.extend_from_slice(token.as_bytes());
        out.extend_from_slice(&(idx as u32).to_le_bytes());
    }
    for value in model.matrix() {
        out.extend_from_slice(&value.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BiEncoderModel> {
    let data = std::fs::File::open(path.as_ref())?;
    let mut reader = std::io::BufReader::new(data);

    let mut magic = [0u8; 4];
    read_exact(&mut reader, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic bytes".to_string()));
    }
    let version = read_u32(&mut reader)?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let d = read_u32(&mut reader)? as usize;
    if d == 0 {
        return Err(Error::CorruptCheckpoint("zero dimension".to_string()));
    }
    let vocab_len = read_u32(&mut reader)? as usize;
    let mut vocab = vec![String::new(); vocab_len];
    let mut filled = vec![false; vocab_len];
    for _ in 0..vocab_len {
        let text_len = read_u32(&mut reader)? as usize;
        let mut bytes = vec![0u8; text_len];
        read_exact(&mut reader, &mut bytes)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::CorruptCheckpoint("vocab entry not UTF-8".to_string()))?;
        let index = read_u32(&mut reader)? as usize;
        if index >= vocab_len || filled[index] {
            return Err(Error::CorruptCheckpoint(format!("bad vocab index {index}")));
        }
        vocab[index] = text;
        filled[index] = true;
    }
    let rows = vocab_len + 1;
    let mut matrix = Vec::with_capacity(rows * d);
    let mut buf = [0u8; 8];
    for _ in 0..rows * d {
        read_exact(&mut reader, &mut buf)?;
        matrix.push(f64::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    match reader.read(&mut trailing)? {
        0 => {}
        _ => {
            return Err(Error::CorruptCheckpoint(
                "trailing bytes after matrix".to_string(),
            ))
        }
    }
    BiEncoderModel::from_parts(vocab, matrix, d)
}

fn read_exact(reader: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CorruptCheckpoint("truncated file".to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(reader: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(reader, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CodeSnippet, Corpus};
    use crate::retriever::retrieve;

    fn sample_model(seed: u64) -> BiEncoderModel {
        BiEncoderModel::new(
            ["alpha", "beta", "gamma"].into_iter().map(String::from),
            12,
            seed,
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vrcg");
        let model = sample_model(99);
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vrcg");
        save_checkpoint(&sample_model(1), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vrcg");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn wrong_version_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vrcg");
        save_checkpoint(&sample_model(1), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn reloaded_model_reproduces_rankings() {
        let snippets: Vec<CodeSnippet> = (0..6)
            .map(|i| {
                CodeSnippet::new(
                    format!("s{i}"),
                    &format!("alpha{} = beta{}", i, i),
                    false,
                    None,
                )
                .unwrap()
            })
            .collect();
        let vocab: Vec<String> = snippets
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.text.clone()))
            .collect();
        let kb = Corpus::new("kb", snippets).unwrap();
        let model = BiEncoderModel::new(vocab, 8, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vrcg");
        save_checkpoint(&model, &path).unwrap();
        let reloaded = load_checkpoint(&path).unwrap();
        let a = retrieve(&model, &kb, "alpha2 beta3", 6).unwrap();
        let b = retrieve(&reloaded, &kb, "alpha2 beta3", 6).unwrap();
        assert_eq!(a, b);
    }
}
