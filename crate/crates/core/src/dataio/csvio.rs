use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, SeriesMatrix};
use crate::error::{LatteError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CsvLayout {
    /// Header of series names, one row per time step. A leading column named
    /// `time`, `timestamp`, `date`, `datetime`, `t` or left blank holds labels.
    #[default]
    Wide,
    /// `series,time,value` triples with a header row.
    Long,
}

impl std::str::FromStr for CsvLayout {
    type Err = LatteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wide" => Ok(CsvLayout::Wide),
            "long" => Ok(CsvLayout::Long),
            other => Err(LatteError::config(format!("unknown CSV layout '{other}'"))),
        }
    }
}

const TIME_HEADERS: [&str; 6] = ["time", "timestamp", "date", "datetime", "t", ""];

fn is_missing(cell: &str) -> bool {
    matches!(cell.to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null")
}

fn parse_cell(cell: &str, line: usize) -> Result<f64> {
    if is_missing(cell) {
        return Ok(f64::NAN);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(LatteError::Parse {
            line,
            message: format!("non-finite value '{cell}'"),
        }),
        Err(_) => Err(LatteError::Parse {
            line,
            message: format!("cannot parse '{cell}' as a number"),
        }),
    }
}

fn csv_err(e: csv::Error) -> LatteError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    LatteError::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn load_csv(path: &Path, layout: CsvLayout) -> Result<SeriesMatrix> {
    let file = std::fs::File::open(path)?;
    parse_csv(file, layout)
}

pub fn parse_csv<R: Read>(reader: R, layout: CsvLayout) -> Result<SeriesMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(LatteError::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    match layout {
        CsvLayout::Wide => parse_wide(rdr, header),
        CsvLayout::Long => parse_long(rdr, header),
    }
}

fn parse_wide<R: Read>(mut rdr: csv::Reader<R>, header: Vec<String>) -> Result<SeriesMatrix> {
    let has_time = TIME_HEADERS.contains(&header[0].to_ascii_lowercase().as_str());
    let names: Vec<String> = header[usize::from(has_time)..].to_vec();
    if names.is_empty() {
        return Err(LatteError::Parse {
            line: 1,
            message: "header names no series".into(),
        });
    }
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(LatteError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let mut cells = rec.iter();
        times.push(if has_time {
            cells.next().unwrap_or_default().to_string()
        } else {
            rows.len().to_string()
        });
        rows.push(cells.map(|c| parse_cell(c, line)).collect::<Result<_>>()?);
    }
    if rows.is_empty() {
        return Err(LatteError::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let t_total = rows.len();
    let mut values = vec![0.0; names.len() * t_total];
    for (t, row) in rows.iter().enumerate() {
        for (n, v) in row.iter().enumerate() {
            values[n * t_total + t] = *v;
        }
    }
    SeriesMatrix::new(names, times, values)
}

fn parse_long<R: Read>(mut rdr: csv::Reader<R>, header: Vec<String>) -> Result<SeriesMatrix> {
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| LatteError::Parse {
                line: 1,
                message: format!("long layout needs a '{name}' column"),
            })
    };
    let (cs, ct, cv) = (col("series")?, col("time")?, col("value")?);
    let mut series_index: HashMap<String, usize> = HashMap::new();
    let mut names = Vec::new();
    let mut time_set: HashMap<String, ()> = HashMap::new();
    let mut cells: HashMap<(usize, String), f64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(LatteError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let name = rec[cs].to_string();
        let time = rec[ct].to_string();
        let value = parse_cell(&rec[cv], line)?;
        let idx = *series_index.entry(name.clone()).or_insert_with(|| {
            names.push(name.clone());
            names.len() - 1
        });
        time_set.insert(time.clone(), ());
        if cells.insert((idx, time.clone()), value).is_some() {
            return Err(LatteError::Parse {
                line,
                message: format!("duplicate entry for series '{name}' at time '{time}'"),
            });
        }
    }
    if names.is_empty() {
        return Err(LatteError::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let mut times: Vec<String> = time_set.into_keys().collect();
    if times.iter().all(|t| t.parse::<i64>().is_ok()) {
        times.sort_by_key(|t| t.parse::<i64>().expect("checked"));
    } else {
        times.sort();
    }
    let t_total = times.len();
    let mut values = vec![f64::NAN; names.len() * t_total];
    for (n, _) in names.iter().enumerate() {
        for (t, label) in times.iter().enumerate() {
            if let Some(v) = cells.get(&(n, label.clone())) {
                values[n * t_total + t] = *v;
            }
        }
    }
    SeriesMatrix::new(names, times, values)
}

fn format_cell(m: &SeriesMatrix, n: usize, t: usize) -> String {
    if m.is_observed(n, t) {
        // Display for f64 is the shortest representation that round-trips.
        m.get(n, t).to_string()
    } else {
        String::new()
    }
}

pub fn write_csv_string(m: &SeriesMatrix, layout: CsvLayout) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| LatteError::Io(std::io::Error::other(e));
    match layout {
        CsvLayout::Wide => {
            let mut header = vec!["time".to_string()];
            header.extend(m.names().iter().cloned());
            w.write_record(&header).map_err(io)?;
            for t in 0..m.len() {
                let mut row = vec![m.times()[t].clone()];
                row.extend((0..m.num_series()).map(|n| format_cell(m, n, t)));
                w.write_record(&row).map_err(io)?;
            }
        }
        CsvLayout::Long => {
            w.write_record(["series", "time", "value"]).map_err(io)?;
            for n in 0..m.num_series() {
                for t in 0..m.len() {
                    w.write_record([m.names()[n].as_str(), m.times()[t].as_str(), &format_cell(m, n, t)])
                        .map_err(io)?;
                }
            }
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| LatteError::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| LatteError::Io(std::io::Error::other(e)))
}

pub fn write_csv(m: &SeriesMatrix, path: &Path, layout: CsvLayout) -> Result<()> {
    write_atomic(path, write_csv_string(m, layout)?.as_bytes())
}
