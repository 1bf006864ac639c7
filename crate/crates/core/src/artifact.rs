//! Manifest headers on persisted artifacts.
//!
//! Line-oriented JSON files start with `{"manifest":"<hash>"}`; CSV, TSV
//! and text files start with `# manifest <hash>`. Readers check the hash
//! before handing out the remaining lines.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeaderStyle {
    Json,
    Comment,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonHeader {
    manifest: String,
}

impl HeaderStyle {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => HeaderStyle::Json,
            _ => HeaderStyle::Comment,
        }
    }
}

pub fn write_header<W: Write>(mut w: W, style: HeaderStyle, hash: &str) -> Result<()> {
    match style {
        HeaderStyle::Json => {
            serde_json::to_writer(
                &mut w,
                &JsonHeader {
                    manifest: hash.to_string(),
                },
            )?;
            w.write_all(b"\n")?;
        }
        HeaderStyle::Comment => writeln!(w, "# manifest {hash}")?,
    }
    Ok(())
}

/// Hash carried by a header line, if the line is one.
pub fn parse_header(line: &str, style: HeaderStyle) -> Option<String> {
    match style {
        HeaderStyle::Json => serde_json::from_str::<JsonHeader>(line).ok().map(|h| h.manifest),
        HeaderStyle::Comment => line.strip_prefix("# manifest ").map(|h| h.trim().to_string()),
    }
}

/// Writes `body` to `path` behind a manifest header.
pub fn write_artifact<F>(path: &Path, hash: &str, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let mut w = std::io::BufWriter::new(File::create(path)?);
    write_header(&mut w, HeaderStyle::for_path(path), hash)?;
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Opens `path`, checks its manifest header against `expected` and returns
/// a reader positioned after the header.
pub fn open_artifact(path: &Path, expected: &str) -> Result<BufReader<File>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut first = String::new();
    r.read_line(&mut first)?;
    let found = parse_header(first.trim_end(), HeaderStyle::for_path(path)).unwrap_or_else(|| "<none>".into());
    if found != expected {
        return Err(Error::ManifestMismatch {
            path: path.display().to_string(),
            found,
            expected: expected.to_string(),
        });
    }
    Ok(r)
}
