//! Versioned binary container shared by checkpoints and datasets.
//!
//! Layout (little endian):
//! `magic[4] | version u32 | header_len u64 | header JSON | header crc32 u32 |
//!  n_blocks u32 | { len u64 | len × f64 | crc32 u32 }*`

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"HZRO";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: not a container file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: checksum mismatch in {section}")]
    Corrupt { path: String, section: String },
    #[error("{path}: truncated file")]
    Truncated { path: String },
    #[error("{path}: bad header: {detail}")]
    Header { path: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ContainerError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::UnexpectedEof {
            ContainerError::Truncated {
                path: path.display().to_string(),
            }
        } else {
            ContainerError::Io {
                path: path.display().to_string(),
                source,
            }
        }
    }
}

/// Write `header` and `blocks` atomically (temp file + rename).
pub fn write<H: Serialize>(
    path: &Path,
    header: &H,
    blocks: &[&[f64]],
) -> Result<(), ContainerError> {
    let header_bytes = serde_json::to_vec(header).map_err(|e| ContainerError::Header {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(&tmp));
        put(&MAGIC)?;
        put(&VERSION.to_le_bytes())?;
        put(&(header_bytes.len() as u64).to_le_bytes())?;
        put(&header_bytes)?;
        put(&crc32fast::hash(&header_bytes).to_le_bytes())?;
        put(&(blocks.len() as u32).to_le_bytes())?;
        for block in blocks {
            let bytes: Vec<u8> = block.iter().flat_map(|v| v.to_le_bytes()).collect();
            put(&(block.len() as u64).to_le_bytes())?;
            put(&bytes)?;
            put(&crc32fast::hash(&bytes).to_le_bytes())?;
        }
        w.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32, ContainerError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err(path))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64, ContainerError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err(path))?;
    Ok(u64::from_le_bytes(b))
}

fn read_prefix<H: DeserializeOwned>(r: &mut impl Read, path: &Path) -> Result<H, ContainerError> {
    let p = || path.display().to_string();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if magic != MAGIC {
        return Err(ContainerError::BadMagic { path: p() });
    }
    let version = read_u32(r, path)?;
    if version != VERSION {
        return Err(ContainerError::Version {
            path: p(),
            found: version,
            expected: VERSION,
        });
    }
    let len = read_u64(r, path)?;
    if len > (1 << 32) {
        return Err(ContainerError::Corrupt {
            path: p(),
            section: "header length".into(),
        });
    }
    let mut bytes = vec![0u8; len as usize];
    r.read_exact(&mut bytes).map_err(io_err(path))?;
    if read_u32(r, path)? != crc32fast::hash(&bytes) {
        return Err(ContainerError::Corrupt {
            path: p(),
            section: "header".into(),
        });
    }
    serde_json::from_slice(&bytes).map_err(|e| ContainerError::Header {
        path: p(),
        detail: e.to_string(),
    })
}

/// Read only the JSON header.
pub fn read_header<H: DeserializeOwned>(path: &Path) -> Result<H, ContainerError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    read_prefix(&mut r, path)
}

/// Read the header and every data block, verifying all checksums.
pub fn read<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<Vec<f64>>), ContainerError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let header = read_prefix(&mut r, path)?;
    let n = read_u32(&mut r, path)?;
    let mut blocks = Vec::with_capacity(n as usize);
    for i in 0..n {
        let len = read_u64(&mut r, path)?;
        let file_len = fs::metadata(path).map_err(io_err(path))?.len();
        if len.saturating_mul(8) > file_len {
            return Err(ContainerError::Corrupt {
                path: path.display().to_string(),
                section: format!("block {i} length"),
            });
        }
        let mut bytes = vec![0u8; len as usize * 8];
        r.read_exact(&mut bytes).map_err(io_err(path))?;
        if read_u32(&mut r, path)? != crc32fast::hash(&bytes) {
            return Err(ContainerError::Corrupt {
                path: path.display().to_string(),
                section: format!("block {i}"),
            });
        }
        blocks.push(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        );
    }
    Ok((header, blocks))
}
