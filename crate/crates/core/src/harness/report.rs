use std::path::Path;

use super::experiment::Method;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = ["sweep", "method", "mean_rate", "std_rate", "trials", "time_ms"];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep: f64,
    pub method: Method,
    pub mean_rate: f64,
    pub std_rate: f64,
    pub trials: usize,
    /// Mean wall time per decision; zero when timing is off.
    pub time_ms: f64,
}

/// `printf("%.6g")`: six significant digits, trailing zeros removed,
/// exponent form outside `[1e-5, 1e6)`.
pub fn format_significant(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-5..6).contains(&exp) {
        trim(format!("{v:.*}", (5 - exp) as usize))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa.to_string()), exp.abs())
    }
}

fn sorted(rows: &[ResultRow]) -> Vec<&ResultRow> {
    let mut v: Vec<&ResultRow> = rows.iter().collect();
    v.sort_by(|a, b| {
        a.sweep
            .total_cmp(&b.sweep)
            .then_with(|| a.method.name().cmp(b.method.name()))
    });
    v
}

/// CSV text ordered by sweep value, then method name.
pub fn csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in sorted(rows) {
        w.write_record([
            format_significant(r.sweep),
            r.method.name().to_string(),
            format_significant(r.mean_rate),
            format_significant(r.std_rate),
            r.trials.to_string(),
            format_significant(r.time_ms),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(rows)?)?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let bad = |e: &dyn std::fmt::Display| Error::invalid(format!("malformed results csv: {e}"));
    let header = r.headers().map_err(|e| bad(&e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(bad(&"unexpected header"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(&e));
        rows.push(ResultRow {
            sweep: num(0)?,
            method: rec[1].parse()?,
            mean_rate: num(2)?,
            std_rate: num(3)?,
            trials: rec[4].parse().map_err(|e| bad(&e))?,
            time_ms: num(5)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (12.345678, "12.3457"),
            (-0.000123456789, "-0.000123457"),
            (123456789.0, "1.23457e+08"),
            (999999.7, "1e+06"),
            (0.00000123, "1.23e-06"),
            (20.0, "20"),
            (f64::NEG_INFINITY, "-inf"),
        ];
        for (v, s) in cases {
            assert_eq!(format_significant(v), s, "{v}");
        }
    }

    fn row(sweep: f64, method: Method, mean: f64) -> ResultRow {
        ResultRow {
            sweep,
            method,
            mean_rate: mean,
            std_rate: 0.5,
            trials: 3,
            time_ms: 0.0,
        }
    }

    #[test]
    fn empty_rows_give_header_only() {
        assert_eq!(
            csv_string(&[]).unwrap(),
            "sweep,method,mean_rate,std_rate,trials,time_ms\n"
        );
    }

    #[test]
    fn rows_sorted_and_round_trip() {
        let rows = vec![
            row(10.0, Method::NoInterference, 9.0),
            row(5.0, Method::CnnMimo, 3.25),
            row(10.0, Method::Algorithm1, 7.5),
        ];
        let text = csv_string(&rows).unwrap();
        assert_eq!(text, csv_string(&rows).unwrap());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "5,cnn_mimo,3.25,0.5,3,0");
        assert_eq!(lines[2], "10,algorithm1,7.5,0.5,3,0");
        let back = parse_csv(&text).unwrap();
        assert_eq!(back, vec![rows[1].clone(), rows[2].clone(), rows[0].clone()]);
    }
}
