//! JSONL dataset files and their `meta.json` sidecar.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqcore::{Cell, HybridSequence, Role, TokenId, TokenSequence};

/// One dataset record.
#[derive(Debug, Clone, PartialEq)]
pub enum Example {
    Tokens(TokenSequence),
    Hybrid { seq: HybridSequence, w: Option<Vec<f64>> },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Record {
    Tokens {
        tokens: Vec<TokenId>,
        prompt_len: usize,
    },
    Hybrid {
        cells: Vec<Cell>,
        roles: Vec<Role>,
        d: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w: Option<Vec<f64>>,
    },
}

impl From<&Example> for Record {
    fn from(e: &Example) -> Self {
        match e {
            Example::Tokens(s) => Record::Tokens { tokens: s.tokens.clone(), prompt_len: s.prompt_len },
            Example::Hybrid { seq, w } => {
                Record::Hybrid { cells: seq.cells.clone(), roles: seq.roles.clone(), d: seq.d, w: w.clone() }
            }
        }
    }
}

impl TryFrom<Record> for Example {
    type Error = Error;

    fn try_from(r: Record) -> Result<Self> {
        Ok(match r {
            Record::Tokens { tokens, prompt_len } => Example::Tokens(TokenSequence::new(tokens, prompt_len)?),
            Record::Hybrid { cells, roles, d, w } => {
                let seq = HybridSequence { cells, roles, d };
                seq.validate()?;
                Example::Hybrid { seq, w }
            }
        })
    }
}

/// Writes to a temporary sibling, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let mut buf = Vec::new();
    for e in examples {
        serde_json::to_writer(&mut buf, &Record::from(e))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(Example::try_from(rec)?);
    }
    Ok(out)
}

/// Provenance of a generated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub task: String,
    pub seed: u64,
    /// The flat config the data was generated from.
    pub config: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
}

pub fn write_meta(dir: &Path, meta: &Meta) -> Result<()> {
    write_atomic(&dir.join("meta.json"), &serde_json::to_vec_pretty(meta)?)
}

pub fn read_meta(dir: &Path) -> Result<Meta> {
    Ok(serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_shapes() {
        let t = Example::Tokens(TokenSequence::new(vec![1, 2, 3], 1).unwrap());
        assert_eq!(serde_json::to_string(&Record::from(&t)).unwrap(), r#"{"tokens":[1,2,3],"prompt_len":1}"#);
        let seq = HybridSequence::from_pairs(&[(vec![0.5], 0.25)], &[(vec![1.0], 0.5)]).unwrap();
        let h = Example::Hybrid { seq, w: None };
        let json = serde_json::to_string(&Record::from(&h)).unwrap();
        assert!(json.starts_with(r#"{"cells":[[0.5],0.25,[1.0],0.5],"roles":["context_x""#), "{json}");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_jsonl(&p, &[t.clone(), h.clone()]).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), vec![t, h]);
    }

    #[test]
    fn malformed_lines_report_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "{\"tokens\":[1],\"prompt_len\":0}\n{\"nope\":1}\n").unwrap();
        let err = read_jsonl(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
