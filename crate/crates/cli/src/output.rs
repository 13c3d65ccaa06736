//! JSON-lines and CSV sinks. Object keys are sorted and floats use the
//! shortest round-trip form, so identical runs produce identical bytes.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// Rows of one command in both output shapes.
#[derive(Debug, Default)]
pub struct Table {
    pub records: Vec<Value>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn with_header<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), ..Self::default() }
    }

    /// Adds `schema_version` and stores the record.
    pub fn push_record(&mut self, mut record: Value) {
        if let Value::Object(map) = &mut record {
            map.insert("schema_version".into(), SCHEMA_VERSION.into());
        }
        self.records.push(record);
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_json(out: &mut dyn Write, table: &Table) -> io::Result<()> {
    for record in &table.records {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_csv(out: &mut dyn Write, table: &Table) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()
}

/// Shortest round-trip form, switching to exponent notation for very small
/// or large magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn json_lines_are_sorted_and_versioned() {
        let mut t = Table::default();
        t.push_record(json!({"k": 3, "dim": 2, "sums": {"x": 0.5, "1": 2.0}}));
        let mut buf = Vec::new();
        write_json(&mut buf, &t).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"dim\":2,\"k\":3,\"schema_version\":1,\"sums\":{\"1\":2.0,\"x\":0.5}}\n"
        );
    }

    #[test]
    fn csv_quotes_when_needed() {
        let mut t = Table::with_header(["a", "b"]);
        t.push_row(vec!["1,2".into(), num(0.1)]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &t).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n\"1,2\",0.1\n");
        assert_eq!(num(4.3e-17), "4.3e-17");
    }
}
