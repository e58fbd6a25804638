//! CSV tables: header row, LF line endings, reals with 9 significant digits.

use std::io::Write;

/// Formats a real with 9 significant digits.
pub fn real(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.8e}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// One row under construction: parallel column names and cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row {
    pub names: Vec<String>,
    pub cells: Vec<String>,
}

impl Row {
    pub fn new() -> Self {
        Row::default()
    }

    pub fn real(&mut self, name: impl Into<String>, v: f64) -> &mut Self {
        self.names.push(name.into());
        self.cells.push(real(v));
        self
    }

    pub fn text(&mut self, name: impl Into<String>, v: impl ToString) -> &mut Self {
        self.names.push(name.into());
        self.cells.push(v.to_string());
        self
    }

    /// `name_1 .. name_n`.
    pub fn reals(&mut self, name: &str, vs: &[f64]) -> &mut Self {
        for (i, &v) in vs.iter().enumerate() {
            self.real(format!("{name}_{}", i + 1), v);
        }
        self
    }

    pub fn extend(&mut self, other: Row) -> &mut Self {
        self.names.extend(other.names);
        self.cells.extend(other.cells);
        self
    }
}

impl Table {
    /// A table whose header is taken from the first row. Later rows must
    /// have the same columns.
    pub fn from_rows(rows: Vec<Row>) -> Self {
        let header = rows.first().map(|r| r.names.clone()).unwrap_or_default();
        debug_assert!(rows.iter().all(|r| r.names == header));
        Table {
            header,
            rows: rows.into_iter().map(|r| r.cells).collect(),
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_string_lossy(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}
