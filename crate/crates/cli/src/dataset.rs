//! CSV dataset files.
//!
//! Header contract: `y, a_star, s, a, x1..xp`, then optionally `kappa`.
//! Generated files may carry the simulator columns `a_full, y0, y1,
//! kappa_true` at the end.

use std::io::Write;
use std::path::Path;

use cvme::dgp::GeneratedSample;
use cvme::numerics::DesignMatrix;
use cvme::Dataset;

use crate::error::CliError;

pub const ORACLE_COLUMNS: [&str; 4] = ["a_full", "y0", "y1", "kappa_true"];

/// A parsed dataset plus the true exposure on every row when the file has it.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub data: Dataset,
    pub a_full: Option<Vec<bool>>,
}

fn parse_error(line: u64, msg: impl std::fmt::Display) -> CliError {
    CliError::Parse(format!("line {line}: {msg}"))
}

fn real(field: &str, name: &str, line: u64) -> Result<f64, CliError> {
    let v: f64 = field.trim().parse().map_err(|_| parse_error(line, format!("{name} = {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(line, format!("{name} is not finite")));
    }
    Ok(v)
}

fn binary(field: &str, name: &str, line: u64) -> Result<bool, CliError> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(parse_error(line, format!("{name} = {other:?} must be 0 or 1"))),
    }
}

struct Layout {
    p: usize,
    kappa: Option<usize>,
    a_full: Option<usize>,
}

fn layout(headers: &csv::StringRecord) -> Result<Layout, CliError> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let bad = |m: String| parse_error(1, m);
    for (i, want) in ["y", "a_star", "s", "a"].iter().enumerate() {
        if names.get(i) != Some(want) {
            return Err(bad(format!("column {} must be {want:?}, found {:?}", i + 1, names.get(i).unwrap_or(&""))));
        }
    }
    let mut p = 0;
    while names.get(4 + p).is_some_and(|n| *n == format!("x{}", p + 1)) {
        p += 1;
    }
    if p == 0 {
        return Err(bad("at least one covariate column x1 is required".into()));
    }
    let mut rest = &names[4 + p..];
    let mut kappa = None;
    if rest.first() == Some(&"kappa") {
        kappa = Some(4 + p);
        rest = &rest[1..];
    }
    let mut a_full = None;
    if !rest.is_empty() {
        if rest != ORACLE_COLUMNS {
            return Err(bad(format!("unexpected columns {rest:?}")));
        }
        a_full = Some(names.len() - 4);
    }
    Ok(Layout { p, kappa, a_full })
}

pub fn read_dataset(path: &Path) -> Result<LoadedDataset, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Parse(format!("{other:?}")),
    })?;
    let headers = reader.headers().map_err(|e| CliError::Parse(e.to_string()))?.clone();
    let lay = layout(&headers)?;

    let (mut y, mut a_star, mut s, mut a) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut x: Vec<Vec<f64>> = vec![Vec::new(); lay.p];
    let mut kappa = Vec::new();
    let mut a_full = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(parse_error(line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        y.push(real(&rec[0], "y", line)?);
        a_star.push(binary(&rec[1], "a_star", line)?);
        let si = binary(&rec[2], "s", line)?;
        s.push(si);
        let af = rec[3].trim();
        a.push(match (si, af.is_empty()) {
            (true, true) => return Err(parse_error(line, "a is required where s = 1")),
            (true, false) => Some(binary(af, "a", line)?),
            (false, true) => None,
            (false, false) => return Err(parse_error(line, "a must be empty where s = 0")),
        });
        for (j, col) in x.iter_mut().enumerate() {
            col.push(real(&rec[4 + j], &format!("x{}", j + 1), line)?);
        }
        if let Some(k) = lay.kappa {
            let v = real(&rec[k], "kappa", line)?;
            if !(v > 0.0 && v <= 1.0) {
                return Err(parse_error(line, format!("kappa = {v} is outside (0, 1]")));
            }
            kappa.push(v);
        }
        if let Some(k) = lay.a_full {
            a_full.push(binary(&rec[k], "a_full", line)?);
        }
    }
    if y.is_empty() {
        return Err(CliError::Parse("dataset has no data rows".into()));
    }
    let names: Vec<String> = (1..=lay.p).map(|j| format!("x{j}")).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let col_refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let design =
        DesignMatrix::from_columns(&name_refs, &col_refs, false).map_err(|e| CliError::Parse(e.to_string()))?;
    let data =
        Dataset::new(y, a_star, s, a, design, lay.kappa.map(|_| kappa)).map_err(|e| CliError::Parse(e.to_string()))?;
    Ok(LoadedDataset { data, a_full: lay.a_full.map(|_| a_full) })
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Serializes a generated sample. Floats use the shortest representation
/// that parses back to the same value.
pub fn render_dataset(sample: &GeneratedSample, include_oracle: bool) -> Vec<u8> {
    let d = &sample.data;
    let p = d.x().cols();
    let mut out = Vec::new();
    let mut header: Vec<String> = ["y", "a_star", "s", "a"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=p).map(|j| format!("x{j}")));
    if d.kappa().is_some() {
        header.push("kappa".into());
    }
    if include_oracle {
        header.extend(ORACLE_COLUMNS.iter().map(|s| s.to_string()));
    }
    writeln!(out, "{}", header.join(",")).expect("in-memory write");
    for i in 0..d.n() {
        let mut row = vec![
            format!("{}", d.y()[i]),
            bit(d.a_star()[i]).to_string(),
            bit(d.s()[i]).to_string(),
            d.a()[i].map_or(String::new(), |v| bit(v).to_string()),
        ];
        row.extend(d.x().row(i).iter().map(|v| format!("{v}")));
        if let Some(k) = d.kappa() {
            row.push(format!("{}", k[i]));
        }
        if include_oracle {
            row.push(bit(sample.a_full[i]).to_string());
            row.push(format!("{}", sample.y0[i]));
            row.push(format!("{}", sample.y1[i]));
            row.push(format!("{}", sample.kappa_true[i]));
        }
        writeln!(out, "{}", row.join(",")).expect("in-memory write");
    }
    out
}

/// Writes to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Writes to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cvme::dgp::{default_scenario, generate};

    #[test]
    fn render_then_read_is_lossless() {
        let mut sc = default_scenario();
        sc.n = 50;
        let g = generate(&sc, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_atomic(&path, &render_dataset(&g, true)).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.data, g.data);
        assert_eq!(back.a_full.unwrap(), g.a_full);
    }

    #[test]
    fn header_must_follow_contract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "y,s,a_star,a,x1\n1,0,0,,1\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(CliError::Parse(_))));
        std::fs::write(&path, "y,a_star,s,a,x1,extra\n1,0,0,,1,2\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(CliError::Parse(_))));
    }

    #[test]
    fn true_exposure_on_unvalidated_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "y,a_star,s,a,x1\n1,0,1,1,0.5\n2,1,0,1,0.1\n").unwrap();
        let err = read_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }
}
