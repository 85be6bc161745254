//! Report rows and their CSV / Markdown renderings.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! reading a CSV back yields the exact same values. Undefined metrics are
//! written as `NA`; infinite thresholds as `inf` / `-inf`.

use std::fmt::Write as _;
use std::io::Read;

use crate::error::{Error, Result};
use crate::eval::{Confusion, EvalReport, EvalSetting};

pub const CSV_HEADER: [&str; 11] = [
    "scenario",
    "monitor",
    "setting",
    "threshold",
    "precision",
    "recall",
    "f1",
    "tp",
    "fp",
    "fn",
    "tn",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub monitor: String,
    pub setting: EvalSetting,
    pub threshold: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub counts: Confusion,
}

impl ReportRow {
    pub fn from_report(scenario: &str, report: &EvalReport) -> Self {
        ReportRow {
            scenario: scenario.to_owned(),
            monitor: report.monitor.clone(),
            setting: report.setting,
            threshold: report.threshold,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            counts: report.counts,
        }
    }
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |v| v.to_string())
}

fn short(v: Option<f64>) -> String {
    match v {
        None => "NA".to_owned(),
        Some(v) if v.is_infinite() => v.to_string(),
        Some(v) => format!("{v:.4}"),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::usage(format!("csv: {e}"))
}

pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        let c = r.counts;
        w.write_record([
            r.scenario.clone(),
            r.monitor.clone(),
            r.setting.to_string(),
            num(r.threshold),
            num(r.precision),
            num(r.recall),
            num(r.f1),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::usage(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::usage(e.to_string()))
}

fn parse_num(field: &str, line: u64) -> Result<Option<f64>> {
    if field == "NA" {
        return Ok(None);
    }
    let v: f64 = field
        .parse()
        .map_err(|_| Error::usage(format!("line {line}: bad number {field:?}")))?;
    if v.is_nan() {
        return Err(Error::usage(format!("line {line}: NaN is not allowed")));
    }
    Ok(Some(v))
}

fn parse_count(field: &str, line: u64) -> Result<usize> {
    field
        .parse()
        .map_err(|_| Error::usage(format!("line {line}: bad count {field:?}")))
}

/// Parses a `reports.csv` produced by [`to_csv`].
pub fn read_csv<R: Read>(source: R) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_reader(source);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::usage(format!(
            "unexpected header {:?}, want {:?}",
            header.iter().collect::<Vec<_>>(),
            CSV_HEADER
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != CSV_HEADER.len() {
            return Err(Error::usage(format!("line {line}: expected 11 fields")));
        }
        let rate = |i: usize| -> Result<Option<f64>> {
            let v = parse_num(&record[i], line)?;
            if v.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::usage(format!("line {line}: {} outside [0, 1]", CSV_HEADER[i])));
            }
            Ok(v)
        };
        rows.push(ReportRow {
            scenario: record[0].to_owned(),
            monitor: record[1].to_owned(),
            setting: record[2].parse()?,
            threshold: parse_num(&record[3], line)?,
            precision: rate(4)?,
            recall: rate(5)?,
            f1: rate(6)?,
            counts: Confusion {
                tp: parse_count(&record[7], line)?,
                fp: parse_count(&record[8], line)?,
                fn_: parse_count(&record[9], line)?,
                tn: parse_count(&record[10], line)?,
            },
        });
    }
    Ok(rows)
}

pub fn to_markdown(rows: &[ReportRow]) -> String {
    let mut out =
        String::from("| scenario | monitor | setting | τ | precision | recall | f1 |\n|---|---|---|---|---|---|---|\n");
    for r in rows {
        writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.scenario,
            r.monitor,
            r.setting.as_str().to_uppercase(),
            short(r.threshold),
            short(r.precision),
            short(r.recall),
            short(r.f1)
        )
        .unwrap();
    }
    out
}
