//! Time-series CSV: a `name,unit,t0,dt` header, one metadata row per
//! column, a `---` separator row, then one row of values per sample.

use std::fs;
use std::path::Path;

use roomsi_core::signal::TimeSeries;

use crate::error::{CliError, CliResult};

const HEADER: [&str; 4] = ["name", "unit", "t0", "dt"];
const SEPARATOR: &str = "---";

pub fn format_series(columns: &[TimeSeries]) -> CliResult<String> {
    let first = columns.first().ok_or_else(|| CliError::Config("nothing to write".into()))?;
    if let Some(bad) = columns.iter().find(|c| !c.same_grid(first)) {
        return Err(CliError::Config(format!("column {} is not on the grid of {}", bad.name(), first.name())));
    }
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record(HEADER).map_err(io)?;
    for c in columns {
        w.write_record([c.name().to_string(), c.unit().to_string(), c.t0().to_string(), c.dt().to_string()]).map_err(io)?;
    }
    w.write_record([SEPARATOR]).map_err(io)?;
    for k in 0..first.len() {
        w.write_record(columns.iter().map(|c| c.values()[k].to_string())).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_series(path: &Path, columns: &[TimeSeries]) -> CliResult<()> {
    fs::write(path, format_series(columns)?).map_err(|e| CliError::io(path, e))
}

pub fn read_series(path: &Path) -> CliResult<Vec<TimeSeries>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_series(&text, &path.display().to_string())
}

struct Meta {
    name: String,
    unit: String,
    t0: f64,
    dt: f64,
    line: u64,
}

pub fn parse_series(text: &str, origin: &str) -> CliResult<Vec<TimeSeries>> {
    let fail = |line: u64, column: usize, message: String| CliError::Format { path: origin.into(), line, column, message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let mut next = |last: u64| -> CliResult<Option<(u64, csv::StringRecord)>> {
        match records.next() {
            None => Ok(None),
            Some(Ok(r)) => Ok(Some((r.position().map_or(last + 1, |p| p.line()), r))),
            Some(Err(e)) => Err(fail(e.position().map_or(last + 1, |p| p.line()), 1, e.to_string())),
        }
    };

    let (line, header) = next(0)?.ok_or_else(|| fail(1, 1, "empty file".into()))?;
    if header.iter().ne(HEADER) {
        return Err(fail(line, 1, format!("expected header {:?}", HEADER.join(","))));
    }

    let mut metas: Vec<Meta> = Vec::new();
    let mut last = line;
    loop {
        let (line, rec) = next(last)?.ok_or_else(|| fail(last + 1, 1, format!("missing {SEPARATOR} separator row")))?;
        last = line;
        if rec.len() == 1 && &rec[0] == SEPARATOR {
            break;
        }
        if rec.len() != 4 {
            return Err(fail(line, rec.len().min(4) + 1, format!("metadata row needs 4 fields, found {}", rec.len())));
        }
        let num = |col: usize| -> CliResult<f64> {
            rec[col].parse::<f64>().map_err(|e| fail(line, col + 1, format!("{:?}: {e}", &rec[col])))
        };
        metas.push(Meta { name: rec[0].to_string(), unit: rec[1].to_string(), t0: num(2)?, dt: num(3)?, line });
    }
    if metas.is_empty() {
        return Err(fail(last, 1, "no columns declared".into()));
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); metas.len()];
    while let Some((line, rec)) = next(last)? {
        last = line;
        if rec.len() != metas.len() {
            return Err(fail(line, rec.len().min(metas.len()) + 1, format!("expected {} values, found {}", metas.len(), rec.len())));
        }
        for (col, field) in rec.iter().enumerate() {
            let v = field.parse::<f64>().map_err(|e| fail(line, col + 1, format!("{field:?}: {e}")))?;
            values[col].push(v);
        }
    }
    metas
        .into_iter()
        .zip(values)
        .map(|(m, v)| TimeSeries::new(m.name, m.unit, m.t0, m.dt, v).map_err(|e| fail(m.line, 1, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(name: &str, v: Vec<f64>) -> TimeSeries {
        TimeSeries::new(name, "u", 0.0, 3600.0, v).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = series("a", vec![0.1, 1.0 / 3.0, -2.5e-300, 1e300]);
        let b = series("b, quoted", vec![f64::MIN_POSITIVE, 0.0, -0.0, 123456789.123456789]);
        let text = format_series(&[a.clone(), b.clone()]).unwrap();
        let back = parse_series(&text, "mem").unwrap();
        assert_eq!(back, vec![a, b]);
        for (x, y) in back[1].values().iter().zip([f64::MIN_POSITIVE, 0.0, -0.0, 123456789.123456789]) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn errors_carry_line_and_column() {
        let text = "name,unit,t0,dt\nx,-,0,1\ny,-,0,1\n---\n1,2\n3,oops\n";
        match parse_series(text, "f.csv") {
            Err(CliError::Format { line, column, .. }) => assert_eq!((line, column), (6, 2)),
            other => panic!("{other:?}"),
        }
        let short = "name,unit,t0,dt\nx,-,0,1\n---\n1\n2,3\n";
        assert!(matches!(parse_series(short, "f"), Err(CliError::Format { line: 5, column: 2, .. })));
        assert!(matches!(parse_series("a,b\n", "f"), Err(CliError::Format { line: 1, .. })));
        assert!(matches!(parse_series("name,unit,t0,dt\nx,-,0,1\n", "f"), Err(CliError::Format { line: 3, .. })));
        assert!(matches!(parse_series("name,unit,t0,dt\nx,-,0,-1\n---\n", "f"), Err(CliError::Format { line: 2, .. })));
    }
}
