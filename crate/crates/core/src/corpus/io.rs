use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::CorpusError;

/// One JSON document per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: impl IntoIterator<Item = T>) -> Result<(), CorpusError> {
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| CorpusError::Json { line: 0, source: e })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines are skipped; errors report 1-based line numbers.
pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(r: R) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Json { line: i + 1, source: e })?);
    }
    Ok(out)
}
