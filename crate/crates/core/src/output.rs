//! Deterministic text output shared by CSV and JSON writers.

use std::io::Write;

use serde::Serialize;

/// Fixed 17-significant-digit scientific format with `.` as separator.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // collapse -0.0 so identical runs cannot differ by sign of zero
        return format!("{:.16e}", 0.0);
    }
    format!("{v:.16e}")
}

/// Writes a numeric CSV table with a header row and `\n` line endings.
pub fn write_csv<W: Write>(mut w: W, header: &[&str], rows: &[Vec<f64>]) -> std::io::Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline; key order follows struct field order.
pub fn to_json_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
