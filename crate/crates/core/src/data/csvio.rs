use std::path::Path;

use super::{Dataset, Schema};
use crate::error::{Error, Result};

/// Reads a headed, comma-separated UTF-8 file. Every schema column and the
/// label must appear in the header (in any order); other columns are ignored.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: format!("{} is empty", path.display()),
        });
    }
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column '{name}'"),
        })
    };
    let positions = schema
        .columns
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let label_pos = find(&schema.label)?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(csv_error)?;
        let cell = |pos: usize| {
            record.get(pos).ok_or_else(|| Error::Parse {
                line,
                message: "row is shorter than the header".into(),
            })
        };
        let mut row = Vec::with_capacity(positions.len());
        for (spec, &pos) in schema.columns.iter().zip(&positions) {
            row.push(spec.parse(cell(pos)?).map_err(|message| Error::Parse { line, message })?);
        }
        let raw = cell(label_pos)?;
        let y = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
            line,
            message: format!("label '{raw}' is not a finite number"),
        })?;
        rows.push(row);
        labels.push(y);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: format!("{} has no data rows", path.display()),
        });
    }
    Dataset::new(schema.clone(), rows, labels)
}

/// Writes the dataset with schema columns first and the label last. Numbers
/// use the shortest representation that parses back to the same `f64`.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let header: Vec<&str> = data
        .schema
        .columns
        .iter()
        .map(|c| c.name.as_str())
        .chain(std::iter::once(data.schema.label.as_str()))
        .collect();
    w.write_record(&header).map_err(csv_error)?;
    for (row, y) in data.rows.iter().zip(&data.labels) {
        let rec: Vec<String> = row
            .iter()
            .zip(&data.schema.columns)
            .map(|(v, c)| c.format(*v))
            .chain(std::iter::once(format!("{y}")))
            .collect();
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}
