//! Tab-separated funnel files.
//!
//! Header: `ts`, `y1..yT`, then one column per feature field. An empty cell
//! is a missing token. Ground-truth sidecars carry `p1..pT` per row.

use std::io::{BufRead, Write};

use super::RawRow;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub field_names: Vec<String>,
    pub tasks: usize,
    pub rows: Vec<RawRow>,
}

fn ingest(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Ingest(format!("line {line}: {msg}"))
}

/// Parses the header, returning `(tasks, field names)`.
pub fn parse_header(header: &str) -> Result<(usize, Vec<String>)> {
    let cols: Vec<&str> = header.trim_end_matches(['\r', '\n']).split('\t').collect();
    if cols.first() != Some(&"ts") {
        return Err(ingest(1, "first column must be `ts`"));
    }
    let mut tasks = 0;
    while cols.get(1 + tasks) == Some(&format!("y{}", tasks + 1).as_str()) {
        tasks += 1;
    }
    if tasks == 0 {
        return Err(ingest(1, "expected label columns y1..yT after `ts`"));
    }
    let fields: Vec<String> = cols[1 + tasks..].iter().map(|s| s.to_string()).collect();
    if fields.is_empty() {
        return Err(ingest(1, "no feature columns"));
    }
    if let Some(bad) = fields.iter().find(|f| f.is_empty()) {
        return Err(ingest(1, format!("empty feature column name {bad:?}")));
    }
    Ok((tasks, fields))
}

pub fn read_table<R: BufRead>(reader: R) -> Result<Table> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::Ingest("empty file".into()))??;
    let (tasks, field_names) = parse_header(&header)?;
    let width = 1 + tasks + field_names.len();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = i + 2;
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != width {
            return Err(ingest(lineno, format!("{} columns, header has {width}", cells.len())));
        }
        let ts = cells[0]
            .parse::<i64>()
            .map_err(|_| ingest(lineno, format!("bad timestamp {:?}", cells[0])))?;
        let labels = cells[1..=tasks]
            .iter()
            .map(|c| match *c {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(ingest(lineno, format!("label {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        let row = RawRow {
            ts,
            features: cells[1 + tasks..].iter().map(|s| s.to_string()).collect(),
            labels,
        };
        row.validate(rows.len()).map_err(|e| ingest(lineno, e))?;
        rows.push(row);
    }
    Ok(Table {
        field_names,
        tasks,
        rows,
    })
}

pub fn read_table_file(path: &std::path::Path) -> Result<Table> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Ingest(format!("cannot open {}: {e}", path.display())))?;
    read_table(std::io::BufReader::new(f))
        .map_err(|e| match e {
            Error::Ingest(m) => Error::Ingest(format!("{}: {m}", path.display())),
            other => other,
        })
}

pub fn write_table<W: Write>(mut w: W, field_names: &[String], rows: &[RawRow]) -> Result<()> {
    let tasks = rows.first().map_or(0, |r| r.labels.len());
    let mut header = vec!["ts".to_string()];
    header.extend((1..=tasks).map(|t| format!("y{t}")));
    header.extend(field_names.iter().cloned());
    writeln!(w, "{}", header.join("\t"))?;
    for r in rows {
        let mut cells = vec![r.ts.to_string()];
        cells.extend(r.labels.iter().map(u8::to_string));
        cells.extend(r.features.iter().cloned());
        writeln!(w, "{}", cells.join("\t"))?;
    }
    Ok(())
}

/// Writes per-row probabilities under `p1..pT` (or a custom prefix).
pub fn write_matrix<W: Write>(mut w: W, prefix: &str, rows: &[Vec<f64>]) -> Result<()> {
    let cols = rows.first().map_or(0, Vec::len);
    let header: Vec<String> = (1..=cols).map(|t| format!("{prefix}{t}")).collect();
    writeln!(w, "{}", header.join("\t"))?;
    for r in rows {
        let cells: Vec<String> = r.iter().map(f64::to_string).collect();
        writeln!(w, "{}", cells.join("\t"))?;
    }
    Ok(())
}
