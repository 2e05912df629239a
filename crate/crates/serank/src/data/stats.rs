//! Per-channel normalization statistics, persisted as a small TSV so that
//! inference reuses training normalization bit-exactly.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Format: one `index<TAB>mean<TAB>std` line per channel. The default float
/// formatting is shortest-roundtrip, so values reload exactly.
pub fn save_stats(stats: &ChannelStats, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for (i, (m, s)) in stats.mean.iter().zip(&stats.std).enumerate() {
        writeln!(w, "{i}\t{m}\t{s}")?;
    }
    Ok(())
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<ChannelStats> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let parse = |tok: Option<&str>| -> Result<f64> {
            tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: "bad stats line".into(),
            })
        };
        let idx = parse(parts.next())? as usize;
        if idx != mean.len() {
            return Err(Error::Schema(format!(
                "stats channels out of order at line {}",
                lineno + 1
            )));
        }
        mean.push(parse(parts.next())?);
        std.push(parse(parts.next())?);
    }
    Ok(ChannelStats { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_roundtrip_bit_exact() {
        let stats = ChannelStats {
            mean: vec![0.1 + 0.2, -3.25e-17, 1.0 / 3.0],
            std: vec![1.0, 0.0, 2.0_f64.sqrt()],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.tsv");
        save_stats(&stats, &path).unwrap();
        let loaded = load_stats(&path).unwrap();
        for (a, b) in stats.mean.iter().zip(&loaded.mean) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in stats.std.iter().zip(&loaded.std) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
