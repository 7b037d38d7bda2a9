//! CSV ingestion: column 1 is the response, the rest are covariates.

use std::path::Path;

use anyhow::{bail, Context, Result};
use tailcp::Dataset;

/// Loaded data plus whether a header row was consumed.
pub struct Loaded {
    pub data: Dataset,
    pub header: bool,
}

fn parse_field(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads `path`. `header = None` treats the first row as a header when its
/// first field is not a number.
pub fn load_csv(path: &Path, header: Option<bool>) -> Result<Loaded> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open input file {}", path.display()))?;
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: malformed CSV at row {}", path.display(), i + 1))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        bail!("{}: no rows", path.display());
    }
    let header = header.unwrap_or_else(|| parse_field(&records[0][0]).is_none());
    let body = if header { &records[1..] } else { &records[..] };
    let width = records[0].len();
    if width < 2 {
        bail!("{}: need a response column and at least one covariate, found {width} column(s)", path.display());
    }
    let mut y = Vec::with_capacity(body.len());
    let mut rows = Vec::with_capacity(body.len());
    for (r, rec) in body.iter().enumerate() {
        let line = r + 1 + usize::from(header);
        if rec.len() != width {
            bail!("{}: row {line} has {} columns, expected {width}", path.display(), rec.len());
        }
        let mut vals = Vec::with_capacity(width);
        for (c, f) in rec.iter().enumerate() {
            match parse_field(f) {
                Some(v) => vals.push(v),
                None => {
                    bail!("{}: row {line}, column {}: cannot parse {f:?} as a finite number", path.display(), c + 1)
                }
            }
        }
        y.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    if rows.len() < 4 {
        bail!("{}: need at least 4 observations, found {}", path.display(), rows.len());
    }
    let data = Dataset::from_rows(&rows, y).with_context(|| format!("{}: invalid data", path.display()))?;
    Ok(Loaded { data, header })
}

/// Writes `y` then the covariates, with a `y,x1,..,xp` header.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut head = vec!["y".to_string()];
    head.extend((1..=data.p()).map(|j| format!("x{j}")));
    w.write_record(&head)?;
    for i in 0..data.n() {
        let mut row = vec![format!("{}", data.y()[i])];
        row.extend((0..data.p()).map(|j| format!("{}", data.x()[(i, j)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
