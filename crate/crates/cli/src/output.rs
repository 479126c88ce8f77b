//! CSV and binary writers. Every file starts with a header holding the
//! resolved configuration and seed.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::error::CliError;

pub const BINARY_MAGIC: &[u8; 8] = b"SPDEFLD1";

/// `# `-prefixed provenance lines: command, seed, extra fields, then the
/// configuration.
pub fn header(command: &str, config: &Config, seed: u64, extra: &[(&str, String)]) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "# command = {command}");
    let _ = writeln!(h, "# seed = {seed}");
    for (k, v) in extra {
        let _ = writeln!(h, "# {k} = {v}");
    }
    for line in config.to_toml().lines() {
        let _ = writeln!(h, "# {line}");
    }
    h
}

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Header, a column line, then one line per row.
    pub fn write_csv(&self, name: &str, header: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let mut text = String::with_capacity(header.len() + rows.len() * 32);
        text.push_str(header);
        text.push_str(&columns.join(","));
        text.push('\n');
        for r in rows {
            text.push_str(&r.join(","));
            text.push('\n');
        }
        self.write_text(name, &text)
    }

    /// Magic, header length (u64 LE), header, value count (u64 LE), f64 LE values.
    pub fn write_binary(&self, name: &str, header: &str, values: &[f64]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let res = (|| {
            w.write_all(BINARY_MAGIC)?;
            w.write_all(&(header.len() as u64).to_le_bytes())?;
            w.write_all(header.as_bytes())?;
            w.write_all(&(values.len() as u64).to_le_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        })();
        res.map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// Inverse of [`OutputDir::write_binary`].
pub fn read_binary(path: &Path) -> Result<(String, Vec<f64>), CliError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    let bad = |msg: &str| CliError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string()));
    if bytes.len() < 16 || &bytes[..8] != BINARY_MAGIC {
        return Err(bad("not a field dump"));
    }
    let u64_at = |o: usize| -> Option<u64> { bytes.get(o..o + 8).map(|b| u64::from_le_bytes(b.try_into().unwrap())) };
    let hlen = u64_at(8).ok_or_else(|| bad("truncated"))? as usize;
    let header = bytes
        .get(16..16 + hlen)
        .and_then(|b| String::from_utf8(b.to_vec()).ok())
        .ok_or_else(|| bad("bad header"))?;
    let n = u64_at(16 + hlen).ok_or_else(|| bad("truncated"))? as usize;
    let start = 24 + hlen;
    let body = bytes.get(start..start + 8 * n).ok_or_else(|| bad("truncated values"))?;
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

/// Shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path()).unwrap();
        let vals = vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300];
        let p = out.write_binary("f.bin", "# hi\n", &vals).unwrap();
        let (h, v) = read_binary(&p).unwrap();
        assert_eq!(h, "# hi\n");
        assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), vals.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn float_format_roundtrips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 12345.678] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
