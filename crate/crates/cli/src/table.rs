//! Comma-delimited measurement tables and result files.
//!
//! Input tables need a header row; lines starting with `#` are ignored.
//! Output files open with a `#` block recording everything needed to
//! regenerate them, followed by a plain CSV body.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Header plus data rows, with the 1-based source line of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

pub fn parse_raw(text: &str, path: &str) -> CliResult<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Parse {
            path: path.to_string(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let cells: Vec<String> = record.iter().map(str::to_string).collect();
        match &header {
            None => header = Some(cells),
            Some(h) if h.len() != cells.len() => {
                return Err(CliError::Parse {
                    path: path.to_string(),
                    line,
                    msg: format!("expected {} columns, found {}", h.len(), cells.len()),
                })
            }
            Some(_) => rows.push((line, cells)),
        }
    }
    let header = header.ok_or_else(|| CliError::Parse {
        path: path.to_string(),
        line: 1,
        msg: "missing header row".into(),
    })?;
    Ok(RawTable { header, rows })
}

fn header_line(text: &str) -> usize {
    text.lines()
        .position(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map_or(1, |i| i + 1)
}

/// Checks the header against the accepted column sets.
fn expect_header(raw: &RawTable, text: &str, path: &str, accepted: &[&[&str]]) -> CliResult<usize> {
    for (k, cols) in accepted.iter().enumerate() {
        if raw.header.len() == cols.len() && raw.header.iter().zip(cols.iter()).all(|(a, b)| a == b) {
            return Ok(k);
        }
    }
    let options: Vec<String> = accepted.iter().map(|c| c.join(",")).collect();
    Err(CliError::Parse {
        path: path.to_string(),
        line: header_line(text),
        msg: format!("header `{}` does not match any of: {}", raw.header.join(","), options.join(" | ")),
    })
}

fn number(path: &str, line: usize, column: &str, cell: &str) -> CliResult<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::Parse {
            path: path.to_string(),
            line,
            msg: format!("column `{column}`: `{cell}` is not a finite number"),
        }),
    }
}

fn numeric_rows(raw: &RawTable, path: &str) -> CliResult<Vec<(usize, Vec<f64>)>> {
    raw.rows
        .iter()
        .map(|(line, cells)| {
            let values = cells
                .iter()
                .zip(&raw.header)
                .map(|(c, h)| number(path, *line, h, c))
                .collect::<CliResult<Vec<_>>>()?;
            Ok((*line, values))
        })
        .collect()
}

/// `power_mw,gain[,sigma_gain]` rows.
pub fn parse_gain_table(text: &str, path: &str) -> CliResult<Vec<(f64, f64, Option<f64>)>> {
    let raw = parse_raw(text, path)?;
    expect_header(&raw, text, path, &[&["power_mw", "gain"], &["power_mw", "gain", "sigma_gain"]])?;
    Ok(numeric_rows(&raw, path)?
        .into_iter()
        .map(|(_, v)| (v[0], v[1], v.get(2).copied()))
        .collect())
}

/// `x,loss` rows.
pub fn parse_loss_table(text: &str, path: &str) -> CliResult<Vec<(f64, f64)>> {
    let raw = parse_raw(text, path)?;
    expect_header(&raw, text, path, &[&["x", "loss"]])?;
    Ok(numeric_rows(&raw, path)?.into_iter().map(|(_, v)| (v[0], v[1])).collect())
}

/// Observed level of one quadrature with its dB uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureRow {
    pub level_db: f64,
    pub sigma_db: f64,
}

/// `quadrature,level_db,sigma_db` with exactly one `squeezed` and one
/// `antisqueezed` row.
pub fn parse_quadrature_table(text: &str, path: &str) -> CliResult<(QuadratureRow, QuadratureRow)> {
    let raw = parse_raw(text, path)?;
    expect_header(&raw, text, path, &[&["quadrature", "level_db", "sigma_db"]])?;
    let (mut sq, mut anti) = (None, None);
    for (line, cells) in &raw.rows {
        let row = QuadratureRow {
            level_db: number(path, *line, "level_db", &cells[1])?,
            sigma_db: number(path, *line, "sigma_db", &cells[2])?,
        };
        let slot = match cells[0].as_str() {
            "squeezed" => &mut sq,
            "antisqueezed" => &mut anti,
            other => {
                return Err(CliError::Parse {
                    path: path.to_string(),
                    line: *line,
                    msg: format!("quadrature must be `squeezed` or `antisqueezed`, got `{other}`"),
                })
            }
        };
        if slot.replace(row).is_some() {
            return Err(CliError::Parse {
                path: path.to_string(),
                line: *line,
                msg: format!("duplicate `{}` row", cells[0]),
            });
        }
    }
    match (sq, anti) {
        (Some(s), Some(a)) => Ok((s, a)),
        _ => Err(CliError::Parse {
            path: path.to_string(),
            line: header_line(text),
            msg: "table needs one `squeezed` and one `antisqueezed` row".into(),
        }),
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Number formatting shared by every command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Digits(usize),
    /// Shortest representation that round-trips.
    Full,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::Digits(3)
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "full" {
            return Ok(Precision::Full);
        }
        match s.parse::<usize>() {
            Ok(d) if d <= 17 => Ok(Precision::Digits(d)),
            _ => Err(format!("expected 0..=17 or `full`, got `{s}`")),
        }
    }
}

fn strip_negative_zero(s: String) -> String {
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}

impl Precision {
    /// Levels in dB.
    pub fn db(&self, v: f64) -> String {
        match *self {
            Precision::Digits(d) => strip_negative_zero(format!("{v:.d$}")),
            Precision::Full => format!("{v}"),
        }
    }

    /// Dimensionless and physical quantities; three more places than dB.
    pub fn num(&self, v: f64) -> String {
        match *self {
            Precision::Digits(d) => strip_negative_zero(format!("{v:.prec$}", prec = d + 3)),
            Precision::Full => format!("{v}"),
        }
    }

    /// Large or tiny magnitudes (decay rates, linear levels far from 1).
    pub fn sci(&self, v: f64) -> String {
        match *self {
            Precision::Digits(d) => format!("{v:.prec$e}", prec = d + 3),
            Precision::Full => format!("{v:e}"),
        }
    }
}

/// A CSV body ready to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Writes `# ` metadata lines and the CSV body.
pub fn write_table<W: Write>(mut out: W, metadata: &[String], table: &Table) -> std::io::Result<()> {
    for line in metadata {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_file(path: &Path, metadata: &[String], table: &Table) -> CliResult<()> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut buf = std::io::BufWriter::new(file);
    write_table(&mut buf, metadata, table).map_err(io)?;
    buf.flush().map_err(io)
}

/// `<out>.path.csv` next to the main output file.
pub fn companion_path(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_table_with_comments_and_sigma() {
        let text = "# pump scan\npower_mw,gain,sigma_gain\n10, 1.6, 0.1\n\n# late row\n100,18.7,0.5\n";
        let rows = parse_gain_table(text, "g.csv").unwrap();
        assert_eq!(rows, vec![(10.0, 1.6, Some(0.1)), (100.0, 18.7, Some(0.5))]);
        let rows = parse_gain_table("power_mw,gain\n100,18.7\n", "g.csv").unwrap();
        assert_eq!(rows, vec![(100.0, 18.7, None)]);
    }

    #[test]
    fn malformed_header_names_its_line() {
        let err = parse_gain_table("# comment\n\npower,gain\n100,18.7\n", "g.csv").unwrap_err();
        match err {
            CliError::Parse { line, ref msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("power,gain"), "{msg}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_cells_name_their_line() {
        let err = parse_loss_table("x,loss\n0.1,0.003\n0.2,nan\n", "l.csv").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
        let err = parse_loss_table("x,loss\n0.1,0.003,7\n", "l.csv").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
        let err = parse_loss_table("# only comments\n", "l.csv").unwrap_err();
        assert!(err.to_string().contains("missing header"));
    }

    #[test]
    fn quadrature_table() {
        let text = "quadrature,level_db,sigma_db\nantisqueezed,15.12,0.14\nsqueezed,-9.01,0.15\n";
        let (s, a) = parse_quadrature_table(text, "q.csv").unwrap();
        assert_eq!((s.level_db, s.sigma_db, a.level_db, a.sigma_db), (-9.01, 0.15, 15.12, 0.14));
        let err = parse_quadrature_table("quadrature,level_db,sigma_db\nsqueezed,-9,0.1\n", "q.csv").unwrap_err();
        assert!(matches!(err, CliError::Parse { .. }));
        let err = parse_quadrature_table("quadrature,level_db,sigma_db\nphase,-9,0.1\n", "q.csv").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }));
    }

    #[test]
    fn precision_formats() {
        let p = Precision::default();
        assert_eq!(p.db(-9.2208), "-9.221");
        assert_eq!(p.db(-0.0), "0.000");
        assert_eq!(p.db(-1e-9), "0.000");
        assert_eq!(p.num(0.069412), "0.069412");
        assert_eq!(Precision::Full.db(-9.2208), "-9.2208");
        assert_eq!("full".parse::<Precision>().unwrap(), Precision::Full);
        assert_eq!("5".parse::<Precision>().unwrap(), Precision::Digits(5));
        assert!("x".parse::<Precision>().is_err());
    }

    #[test]
    fn written_table_reads_back() {
        let mut t = Table::new(&["x", "loss"]);
        t.push(vec!["0.5".into(), "0.0036".into()]);
        let mut buf = Vec::new();
        write_table(&mut buf, &["sqbudget fit-loss".into()], &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# sqbudget fit-loss\nx,loss\n0.5,0.0036\n");
        assert_eq!(parse_loss_table(&text, "t").unwrap(), vec![(0.5, 0.0036)]);
    }
}
