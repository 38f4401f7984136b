//! Report formats. Machine formats print floats with `{:?}`, which is the
//! shortest string that parses back to the same value and always uses a
//! decimal point.

use std::io::Write;

use anyhow::Result;
use mare_core::Matrix;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Human,
    Json,
    Csv,
}

/// Full-precision float for machine output.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Short float for human reports.
pub fn short(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-3..1e6).contains(&a) {
        format!("{v:.6}")
    } else {
        format!("{v:.6e}")
    }
}

pub fn human_matrix(name: &str, m: &Matrix) -> String {
    let mut out = format!("{name} =\n");
    for row in m.to_rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{:>14}", short(*v))).collect();
        out.push_str(&format!("  {}\n", cells.join(" ")));
    }
    out
}

pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, value)?;
    writeln!(stdout)?;
    Ok(())
}

pub fn csv_writer() -> csv::Writer<std::io::Stdout> {
    csv::Writer::from_writer(std::io::stdout())
}

/// Appends `name,row,col,value` records for every entry of `m`.
pub fn csv_matrix<W: Write>(w: &mut csv::Writer<W>, name: &str, m: &Matrix) -> Result<()> {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            w.write_record([name, &i.to_string(), &j.to_string(), &num(m.get(i, j))])?;
        }
    }
    Ok(())
}

pub fn write_json_file<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
}
