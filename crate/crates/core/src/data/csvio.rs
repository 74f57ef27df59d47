use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{ensure, Error, Result};

const LABEL_COLUMN: &str = "label";

/// Sidecar describing a generated or exported CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesMetadata {
    pub dt: f64,
    pub names: Vec<String>,
    pub units: Vec<String>,
    #[serde(default)]
    pub generator: serde_json::Value,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Parse {
            row,
            column: String::new(),
            message: format!("ragged row: {len} fields, expected {expected_len}"),
        },
        other => Error::Parse {
            row,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

/// Reads the named numeric columns (all non-label columns when `columns` is
/// empty) plus an optional integer `label` column.
pub fn load_csv(path: &Path, columns: &[String], dt: f64) -> Result<TimeSeries> {
    ensure!(
        dt > 0.0 && dt.is_finite(),
        "dt must be positive, got {}",
        dt
    );
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let wanted: Vec<String> = if columns.is_empty() {
        headers
            .iter()
            .filter(|h| *h != LABEL_COLUMN)
            .map(String::from)
            .collect()
    } else {
        columns.to_vec()
    };
    ensure!(!wanted.is_empty(), "no data columns in {}", path.display());
    let idx = wanted
        .iter()
        .map(|name| {
            find(name).ok_or_else(|| {
                Error::Schema(format!("column '{name}' not found in {}", path.display()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let label_idx = find(LABEL_COLUMN);

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        // Row numbers are 1-based and count the header.
        let row = r + 2;
        for (&i, name) in idx.iter().zip(&wanted) {
            let cell = &record[i];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("'{cell}' is not a number"),
            })?;
            values.push(v);
        }
        labels.push(match label_idx {
            None => false,
            Some(i) => match &record[i] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        row,
                        column: LABEL_COLUMN.into(),
                        message: format!("label must be 0 or 1, got '{other}'"),
                    })
                }
            },
        });
    }
    let units = vec![String::new(); wanted.len()];
    TimeSeries::new(wanted, units, dt, values, labels)
}

/// Writes all channels plus a `label` column.
pub fn write_csv(series: &TimeSeries, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = series.names.clone();
    header.push(LABEL_COLUMN.into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let c = series.channels();
    for (row, &label) in series.values.chunks_exact(c).zip(&series.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(if label { "1" } else { "0" }.into());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `<csv>.meta.json` next to `csv`.
pub fn write_metadata(csv: &Path, meta: &SeriesMetadata) -> Result<PathBuf> {
    let path = sidecar_path(csv);
    let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads the sidecar of `csv`.
pub fn read_metadata(csv: &Path) -> Result<SeriesMetadata> {
    let path = sidecar_path(csv);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, text: &str) -> PathBuf {
        let p = dir.path().join("d.csv");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn well_formed_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a,b,label\n1,2,0\n3,4.5,1\n-1,1e3,0\n");
        let s = load_csv(&p, &[], 0.5).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.values, vec![1.0, 2.0, 3.0, 4.5, -1.0, 1000.0]);
        assert_eq!(s.labels, vec![false, true, false]);
        let only_b = load_csv(&p, &["b".into()], 0.5).unwrap();
        assert_eq!(only_b.values, vec![2.0, 4.5, 1000.0]);
    }

    #[test]
    fn schema_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a,b\n1,2\n");
        let err = load_csv(&p, &["a".into(), "c".into()], 1.0).unwrap_err();
        assert!(
            matches!(&err, Error::Schema(m) if m.contains("'c'")),
            "{err}"
        );

        let p = write(&dir, "a,b\n1,2\n3,x\n");
        match load_csv(&p, &[], 1.0).unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column.as_str()), (3, "b")),
            e => panic!("{e}"),
        }

        let p = write(&dir, "a,b\n1,2\n3\n");
        assert!(matches!(load_csv(&p, &[], 1.0), Err(Error::Parse { .. })));

        let missing = dir.path().join("nope.csv");
        assert_eq!(load_csv(&missing, &[], 1.0).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f64> = (0..40)
            .map(|i| (i as f64 * 0.123).exp() / 7.0 - 3.0)
            .collect();
        let labels = (0..20).map(|i| i % 3 == 0).collect();
        let s = TimeSeries::new(
            vec!["x".into(), "y".into()],
            vec!["m".into(), "s".into()],
            0.01,
            values,
            labels,
        )
        .unwrap();
        let p = dir.path().join("rt.csv");
        write_csv(&s, &p).unwrap();
        let back = load_csv(&p, &[], 0.01).unwrap();
        assert_eq!(back.labels, s.labels);
        for (a, b) in back.values.iter().zip(&s.values) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let meta = SeriesMetadata {
            dt: 0.01,
            names: s.names.clone(),
            units: s.units.clone(),
            generator: serde_json::json!({"kind": "test"}),
            seed: Some(4),
        };
        write_metadata(&p, &meta).unwrap();
        assert_eq!(read_metadata(&p).unwrap(), meta);
    }
}
