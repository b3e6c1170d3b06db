//! CSV series files and canonical JSON.
//!
//! Series files carry a header `t,y[,xi_1..xi_r]`, one row per time step with
//! `t` counting from 0. JSON documents are written with lexicographically
//! ordered keys and shortest round-trip floats, so equal values give equal bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use odmlab_core::model::count_from_signed;
use odmlab_core::ObservationSeries;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub fn read_series(path: &Path) -> CliResult<ObservationSeries> {
    let file = fs::File::open(path).map_err(|e| CliError::io(format!("cannot open {}", path.display()), e))?;
    parse_series(file, &path.display().to_string())
}

/// Parses a series file; `origin` prefixes error messages.
pub fn parse_series<R: Read>(reader: R, origin: &str) -> CliResult<ObservationSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let bad = |line: u64, msg: String| CliError::Usage(format!("{origin}: line {line}: {msg}"));

    let headers = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if headers.len() < 2 || &headers[0] != "t" || &headers[1] != "y" {
        return Err(bad(1, "header must start with `t,y`".into()));
    }
    let r = headers.len() - 2;
    for (j, h) in headers.iter().skip(2).enumerate() {
        if h != format!("xi_{}", j + 1) {
            return Err(bad(1, format!("expected column `xi_{}`, found `{h}`", j + 1)));
        }
    }

    let mut y = Vec::new();
    let mut cov: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(row as u64 + 2, |p| p.line());
            bad(line, e.to_string())
        })?;
        let line = rec.position().map_or(row as u64 + 2, |p| p.line());
        let t: usize = rec[0].parse().map_err(|_| bad(line, format!("invalid time index `{}`", &rec[0])))?;
        if t != row {
            return Err(bad(line, format!("time index {t} out of sequence, expected {row}")));
        }
        let count: i64 = rec[1].parse().map_err(|_| bad(line, format!("invalid count `{}`", &rec[1])))?;
        y.push(count_from_signed(count).map_err(|e| bad(line, e.to_string()))?);
        if r > 0 {
            let xi = (2..rec.len())
                .map(|j| {
                    rec[j]
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| bad(line, format!("invalid covariate `{}`", &rec[j])))
                })
                .collect::<CliResult<Vec<f64>>>()?;
            cov.push(xi);
        }
    }
    if y.is_empty() {
        return Err(CliError::Usage(format!("{origin}: no observations")));
    }
    if r > 0 {
        Ok(ObservationSeries::with_covariates(y, cov)?)
    } else {
        Ok(ObservationSeries::new(y))
    }
}

pub fn write_series<W: Write>(out: W, series: &ObservationSeries) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let r = series.covariates.as_ref().and_then(|c| c.first()).map_or(0, Vec::len);
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend((1..=r).map(|j| format!("xi_{j}")));
    let wrap = |e: csv::Error| CliError::Usage(format!("cannot write series: {e}"));
    w.write_record(&header).map_err(wrap)?;
    for t in 0..series.len() {
        let mut row = vec![t.to_string(), series.y[t].to_string()];
        if let Some(cov) = &series.covariates {
            row.extend(cov[t].iter().map(|v| v.to_string()));
        }
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io("cannot write series", e))
}

/// Recursively rebuilds objects with sorted keys, independent of the map backend.
fn canonical(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonical(v))).collect::<Map<_, _>>())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        other => other,
    }
}

/// Pretty-printed canonical JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Usage(format!("cannot encode JSON: {e}")))?;
    let mut s = serde_json::to_string_pretty(&canonical(v)).expect("values always encode");
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_file(path, to_json(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_round_trip() {
        let s = ObservationSeries::with_covariates(vec![0, 3, 1], vec![vec![0.5, -1.0], vec![1e-3, 2.0], vec![0.0, 0.1]]).unwrap();
        let mut buf = Vec::new();
        write_series(&mut buf, &s).unwrap();
        assert!(buf.starts_with(b"t,y,xi_1,xi_2\n0,0,0.5,-1\n"));
        assert_eq!(parse_series(buf.as_slice(), "mem").unwrap(), s);
    }

    #[test]
    fn errors_name_the_line() {
        let cases = [
            ("t,y\n0,1\n1,-2\n", "line 3"),
            ("t,y\n0,1\n2,2\n", "line 3"),
            ("t,y\n0,1\n1,x\n", "line 3"),
            ("t,y\n0,1,4\n", "line 2"),
            ("y,t\n0,1\n", "line 1"),
            ("t,y,xi_2\n0,1,0.0\n", "line 1"),
        ];
        for (text, want) in cases {
            let err = parse_series(text.as_bytes(), "d.csv").unwrap_err().to_string();
            assert!(err.contains(want), "{text:?}: {err}");
        }
    }

    #[test]
    fn json_keys_are_sorted() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: f64,
        }
        assert_eq!(to_json(&S { zeta: 1, alpha: 0.1 }).unwrap(), "{\n  \"alpha\": 0.1,\n  \"zeta\": 1\n}\n");
    }
}
