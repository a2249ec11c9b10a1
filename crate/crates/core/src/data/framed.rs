//! One-line JSON header followed by raw little-endian `f64` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAX_HEADER: usize = 16 << 20;

pub(crate) fn write_framed(path: &Path, header: &impl Serialize, payload: &[f64]) -> Result<()> {
    let json = serde_json::to_string(header).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(json.as_bytes()).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    for v in payload {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads the header line only, leaving the reader at the payload start.
fn read_header<R: BufRead>(path: &Path, r: &mut R) -> Result<Vec<u8>> {
    let mut line = Vec::new();
    r.by_ref()
        .take(MAX_HEADER as u64)
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "missing or oversized header line".into(),
        });
    }
    line.pop();
    Ok(line)
}

pub(crate) fn peek_header<H: DeserializeOwned>(path: &Path) -> Result<H> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let line = read_header(path, &mut r)?;
    parse_header(path, &line)
}

fn parse_header<H: DeserializeOwned>(path: &Path, line: &[u8]) -> Result<H> {
    serde_json::from_slice(line).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: format!("header: {e}"),
    })
}

/// Parses the header, lets `expected_len` compute the payload length from it,
/// and reads exactly that many values.
pub(crate) fn read_framed<H: DeserializeOwned>(
    path: &Path,
    expected_len: impl FnOnce(&H) -> Result<usize>,
) -> Result<(H, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let line = read_header(path, &mut r)?;
    let header: H = parse_header(path, &line)?;
    let n = expected_len(&header)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != n * 8 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("payload has {} bytes, header implies {}", bytes.len(), n * 8),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, values))
}
