//! CSV and JSON formats.
//!
//! * Series CSV: header row, first column time, one column per channel.
//! * Feature CSV: the same layout over query times, with
//!   `channel.parameter` headers, plus a JSON diagnostics sidecar.
//! * Corpus CSV (long format): `item,label,time,<channels…>`, rows of one
//!   item contiguous and in time order.
//!
//! Numbers are written in Rust's shortest round-trip form, so reading a
//! written file gives back identical values. Row numbers in errors count
//! the header as row 1.

mod config;

pub use config::{
    classify_corpus, contrived_variance_config, derive_seed, extract_checked, run, write_neighbors, Classification, ClassifySpec,
    DataSource, ExperimentConfig, NeighborRow, QuerySpec, RunMetrics, RunSummary, CONFIG_VERSION,
};

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{CellDiagnostics, FeatureSeries, TimeSeries};

fn csv_err(row: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        row,
        message: message.into(),
    }
}

fn parse_cell(s: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| csv_err(row, format!("column {}: '{s}' is not a number", col + 1)))?;
    if !v.is_finite() {
        return Err(csv_err(row, format!("column {}: '{s}' is not finite", col + 1)));
    }
    Ok(v)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r)
}

pub fn read_series<R: Read>(r: R) -> Result<TimeSeries> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(csv_err(1, "header needs a time column and at least one channel"));
    }
    let names: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(row, e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(csv_err(row, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        let t = parse_cell(&rec[0], row, 0)?;
        if let Some(&last) = times.last() {
            if t <= last {
                return Err(csv_err(row, format!("time {t} does not increase on {last}")));
            }
        }
        times.push(t);
        for (c, cell) in rec.iter().enumerate().skip(1) {
            values.push(parse_cell(cell, row, c)?);
        }
    }
    if times.is_empty() {
        return Err(csv_err(2, "no data rows"));
    }
    let n = times.len();
    let m = DMatrix::from_row_slice(n, names.len(), &values);
    TimeSeries::new(times, m, names)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    read_series(File::open(path)?)
}

fn write_table<W: Write>(w: W, header: &[String], times: &[f64], values: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(header).map_err(io)?;
    for (i, t) in times.iter().enumerate() {
        let mut rec = Vec::with_capacity(values.ncols() + 1);
        rec.push(t.to_string());
        rec.extend(values.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_series<W: Write>(w: W, series: &TimeSeries) -> Result<()> {
    let mut header = vec!["time".to_string()];
    header.extend(series.channel_names().iter().cloned());
    write_table(w, &header, series.times(), series.values())
}

pub fn write_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    write_series(File::create(path)?, series)
}

pub fn write_features<W: Write>(w: W, fs: &FeatureSeries) -> Result<()> {
    let mut header = vec!["time".to_string()];
    header.extend(fs.feature_names.iter().cloned());
    write_table(w, &header, &fs.query_times, &fs.features)
}

/// Diagnostics sidecar for a feature CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub feature_names: Vec<String>,
    pub channels: Vec<String>,
    pub query_times: Vec<f64>,
    /// Indexed `[query][channel]`.
    pub cells: Vec<Vec<CellDiagnostics>>,
    pub failed_cells: usize,
}

impl DiagnosticsFile {
    pub fn new(fs: &FeatureSeries, channels: &[String]) -> Self {
        DiagnosticsFile {
            feature_names: fs.feature_names.clone(),
            channels: channels.to_vec(),
            query_times: fs.query_times.clone(),
            cells: fs.diagnostics.clone(),
            failed_cells: fs.failed_cells(),
        }
    }
}

/// Writes `<prefix>.features.csv` and `<prefix>.diagnostics.json`.
pub fn write_feature_files(fs: &FeatureSeries, channels: &[String], prefix: &str) -> Result<(String, String)> {
    let csv_path = format!("{prefix}.features.csv");
    let json_path = format!("{prefix}.diagnostics.json");
    write_features(File::create(&csv_path)?, fs)?;
    write_json(&DiagnosticsFile::new(fs, channels), &json_path)?;
    Ok((csv_path, json_path))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// One labeled item of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub id: String,
    pub label: String,
    pub series: TimeSeries,
}

pub fn read_corpus<R: Read>(r: R) -> Result<Vec<LabeledSeries>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    if headers.len() < 4 || &headers[0] != "item" || &headers[1] != "label" || &headers[2] != "time" {
        return Err(csv_err(1, "corpus header must start with item,label,time and name at least one channel"));
    }
    let names: Vec<String> = headers.iter().skip(3).map(|s| s.trim().to_string()).collect();
    let mut out: Vec<LabeledSeries> = Vec::new();
    let mut current: Option<(String, String, usize, Vec<f64>, Vec<f64>)> = None;
    let finish = |c: (String, String, usize, Vec<f64>, Vec<f64>), names: &[String]| -> Result<LabeledSeries> {
        let (id, label, row, times, vals) = c;
        let n = times.len();
        let series = TimeSeries::new(times, DMatrix::from_row_slice(n, names.len(), &vals), names.to_vec())
            .map_err(|e| csv_err(row, e.to_string()))?;
        Ok(LabeledSeries { id, label, series })
    };
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(row, e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(csv_err(row, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        let (id, label) = (rec[0].trim().to_string(), rec[1].trim().to_string());
        let t = parse_cell(&rec[2], row, 2)?;
        let same = current.as_ref().is_some_and(|c| c.0 == id);
        if !same {
            if out.iter().any(|o| o.id == id) {
                return Err(csv_err(row, format!("rows of item '{id}' are not contiguous")));
            }
            if let Some(c) = current.take() {
                out.push(finish(c, &names)?);
            }
            current = Some((id, label.clone(), row, vec![], vec![]));
        }
        let c = current.as_mut().expect("set above");
        if c.1 != label {
            return Err(csv_err(row, format!("item '{}' changes label", c.0)));
        }
        if let Some(&last) = c.3.last() {
            if t <= last {
                return Err(csv_err(row, format!("time {t} does not increase on {last}")));
            }
        }
        c.3.push(t);
        for (k, cell) in rec.iter().enumerate().skip(3) {
            c.4.push(parse_cell(cell, row, k)?);
        }
    }
    if let Some(c) = current.take() {
        out.push(finish(c, &names)?);
    }
    Ok(out)
}

pub fn read_corpus_csv(path: impl AsRef<Path>) -> Result<Vec<LabeledSeries>> {
    read_corpus(File::open(path)?)
}

pub fn write_corpus<W: Write>(w: W, items: &[LabeledSeries]) -> Result<()> {
    let Some(first) = items.first() else {
        return Err(Error::InvalidInput("cannot write an empty corpus".into()));
    };
    let names = first.series.channel_names();
    if items.iter().any(|i| i.series.channel_names() != names) {
        return Err(Error::InvalidInput("corpus items must share channel names".into()));
    }
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["item".to_string(), "label".into(), "time".into()];
    header.extend(names.iter().cloned());
    wtr.write_record(&header).map_err(io)?;
    for item in items {
        for (i, t) in item.series.times().iter().enumerate() {
            let mut rec = vec![item.id.clone(), item.label.clone(), t.to_string()];
            rec.extend(item.series.values().row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec).map_err(io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_corpus_csv(items: &[LabeledSeries], path: impl AsRef<Path>) -> Result<()> {
    write_corpus(File::create(path)?, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TimeSeries {
        TimeSeries::new(
            vec![0.0, 0.5, 1.25],
            DMatrix::from_row_slice(3, 2, &[1.0, -2.5, 0.1 + 0.2, 1e-300, 6.02e23, -0.0]),
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn round_trip(s: &TimeSeries) -> TimeSeries {
        let mut buf = Vec::new();
        write_series(&mut buf, s).unwrap();
        read_series(buf.as_slice()).unwrap()
    }

    #[test]
    fn series_round_trip() {
        let s = sample();
        assert_eq!(round_trip(&s), s);
    }

    #[test]
    fn duplicate_time_names_the_row() {
        let text = "time,x\n0,1\n1,2\n1,3\n";
        match read_series(text.as_bytes()) {
            Err(Error::Csv { row, .. }) => assert_eq!(row, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_input() {
        assert!(matches!(read_series("time,x\n0,abc\n".as_bytes()), Err(Error::Csv { row: 2, .. })));
        assert!(matches!(read_series("time,x\n0,1,2\n".as_bytes()), Err(Error::Csv { row: 2, .. })));
        assert!(matches!(read_series("time,x\n0,NaN\n".as_bytes()), Err(Error::Csv { row: 2, .. })));
        assert!(read_series("time\n0\n".as_bytes()).is_err());
        assert!(read_series("time,x\n".as_bytes()).is_err());
    }

    #[test]
    fn scientific_notation() {
        let s = read_series("time,x\n-1e3,2.5E-7\n1e-2,+3e+2\n".as_bytes()).unwrap();
        assert_eq!(s.times(), [-1000.0, 0.01]);
        assert_eq!(s.values()[(0, 0)], 2.5e-7);
        assert_eq!(s.values()[(1, 0)], 300.0);
    }

    proptest! {
        #[test]
        fn lossless_for_any_finite_values(
            vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..30),
            exps in prop::collection::vec(-300i32..300, 1..30),
        ) {
            let n = vals.len().min(exps.len());
            let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 3.0).collect();
            let ys: Vec<f64> = (0..n).map(|i| vals[i] * 10f64.powi(exps[i] % 10)).filter(|v| v.is_finite()).collect();
            prop_assume!(ys.len() == n);
            let s = TimeSeries::univariate(times, ys, "v").unwrap();
            prop_assert_eq!(round_trip(&s), s);
        }
    }

    #[test]
    fn corpus_round_trip_and_validation() {
        let items = vec![
            LabeledSeries { id: "s0".into(), label: "calm".into(), series: sample() },
            LabeledSeries { id: "s1".into(), label: "noisy".into(), series: sample() },
        ];
        let mut buf = Vec::new();
        write_corpus(&mut buf, &items).unwrap();
        assert_eq!(read_corpus(buf.as_slice()).unwrap(), items);

        let split = "item,label,time,x\na,0,0,1\nb,0,0,1\na,0,1,1\n";
        assert!(matches!(read_corpus(split.as_bytes()), Err(Error::Csv { row: 4, .. })));
        let relabel = "item,label,time,x\na,0,0,1\na,1,1,1\n";
        assert!(matches!(read_corpus(relabel.as_bytes()), Err(Error::Csv { row: 3, .. })));
        assert!(read_corpus("id,label,time,x\n".as_bytes()).is_err());
    }
}
