//! Artifact writers: binary field dumps, CSV tables and the checksum manifest.
//!
//! Binary layout (little endian): the six bytes `FBMHD1`, a `u32` axis count
//! `k`, `k` `u32` extents, `k` `f64` spacings, then the row-major `f64`
//! payload.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 6] = b"FBMHD1";

pub fn header_len(axes: usize) -> usize {
    MAGIC.len() + 4 + 12 * axes
}

pub fn encode_field(dims: &[usize], spacings: &[f64], data: &[f64]) -> Vec<u8> {
    assert_eq!(dims.len(), spacings.len());
    assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut out = Vec::with_capacity(header_len(dims.len()) + 8 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for h in spacings {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_field`]: `(dims, spacings, data)`.
pub fn decode_field(bytes: &[u8]) -> io::Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("missing FBMHD1 magic"));
    }
    let k = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() < header_len(k) {
        return Err(bad("truncated header"));
    }
    let mut pos = 10;
    let mut dims = Vec::with_capacity(k);
    for _ in 0..k {
        dims.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
        pos += 4;
    }
    let mut spacings = Vec::with_capacity(k);
    for _ in 0..k {
        spacings.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
        pos += 8;
    }
    let n: usize = dims.iter().product();
    if bytes.len() != pos + 8 * n {
        return Err(bad("payload size does not match the extents"));
    }
    let data = bytes[pos..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((dims, spacings, data))
}

/// Scientific form with 17 significant digits, so every value round-trips.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}

/// CSV text with a header row and full-precision floats.
pub fn csv_table(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|x| fmt_f64(*x)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Collects the files of one run and writes them under `dir`.
pub struct ArtifactWriter {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ArtifactWriter {
    pub fn new(dir: impl AsRef<Path>) -> io::Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(ArtifactWriter { dir: dir.as_ref().to_path_buf(), entries: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(&path)?;
        f.write_all(bytes)?;
        self.entries.push(ManifestEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex(&Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self) -> io::Result<Vec<ManifestEntry>> {
        let text = serde_json::to_string_pretty(&self.entries).map_err(io::Error::other)?;
        fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(self.entries)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
