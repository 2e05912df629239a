//! LETOR text format: one document per line,
//! `<label> qid:<qid> 1:<v1> 2:<v2> ... [# comment]`.

use super::{Dataset, QueryGroup};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn parse_letor(path: impl AsRef<Path>, feature_count: usize) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    parse_letor_reader(BufReader::new(file), feature_count)
}

pub fn parse_letor_reader(reader: impl Read, feature_count: usize) -> Result<Dataset> {
    let reader = BufReader::new(reader);
    let mut groups: Vec<QueryGroup> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue; // blank or comment-only line
        };
        let label: u32 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad relevance label {label_tok:?}"),
        })?;
        let qid_tok = tokens.next().ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "missing qid field".into(),
        })?;
        let qid = qid_tok.strip_prefix("qid:").ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("expected qid:<id>, found {qid_tok:?}"),
        })?;
        if qid.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: "empty qid".into(),
            });
        }

        // missing feature indices default to 0
        let mut features = vec![0.0; feature_count];
        for tok in tokens {
            let (idx, value) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected <index>:<value>, found {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature index {idx:?}"),
            })?;
            if idx == 0 || idx > feature_count {
                return Err(Error::Schema(format!(
                    "feature index {idx} out of range 1..={feature_count} at line {lineno}"
                )));
            }
            let value: f64 = value.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature value {value:?}"),
            })?;
            features[idx - 1] = value;
        }

        let gi = *index.entry(qid.to_string()).or_insert_with(|| {
            groups.push(QueryGroup {
                qid: qid.to_string(),
                features: Vec::new(),
                labels: Vec::new(),
            });
            groups.len() - 1
        });
        groups[gi].features.push(features);
        groups[gi].labels.push(label);
    }

    Ok(Dataset::new(groups, feature_count))
}

/// Write a dataset back out in LETOR form. All feature indices are emitted
/// explicitly; float formatting round-trips f64 exactly, so
/// parse(serialize(ds)) reproduces the groups bit for bit.
pub fn serialize_letor(ds: &Dataset, mut writer: impl Write) -> Result<()> {
    for group in &ds.groups {
        for (row, label) in group.features.iter().zip(&group.labels) {
            write!(writer, "{} qid:{}", label, group.qid)?;
            for (j, v) in row.iter().enumerate() {
                write!(writer, " {}:{}", j + 1, v)?;
            }
            writeln!(writer)?;
        }
    }
    Ok(())
}

pub fn write_letor(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    serialize_letor(ds, BufWriter::new(file))
}
