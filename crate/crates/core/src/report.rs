//! Tabular output shared by every exporter: CSV with a header row, or a JSON
//! array of row objects.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T], format: Format) -> Result<(), ExportError> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, rows)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn write_rows_to_path<T: Serialize>(path: &Path, rows: &[T], format: Format) -> Result<(), ExportError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_rows(f, rows, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        name: &'static str,
        value: f64,
    }

    #[test]
    fn csv_and_json_layouts() {
        let rows = [
            Row { name: "a", value: 0.5 },
            Row {
                name: "b",
                value: -1e-12,
            },
        ];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows, Format::Csv).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "name,value\na,0.5\nb,-1e-12\n");
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows, Format::Json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v[1]["name"], "b");
    }
}
