//! Every table is produced as CSV first; json-lines output is derived from
//! it row by row, so both formats always carry the same columns.

use std::io::Write;
use std::path::Path;

use anyhow::Context;
use clap::ValueEnum;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    JsonLines,
    /// One human-readable line; only calculator commands differ from csv.
    Text,
}

/// Columns that stay strings in json-lines even when they look numeric.
fn is_text_column(name: &str) -> bool {
    name == "id"
        || name.ends_with("_id")
        || name.ends_with("_ids")
        || matches!(
            name,
            "mode" | "policy" | "model" | "reference" | "method" | "file" | "kind" | "detail" | "note" | "summary" | "state_hash" | "replay_hash"
        )
}

fn json_value(column: &str, field: &str) -> Value {
    if field.is_empty() {
        return Value::Null;
    }
    if is_text_column(column) {
        return Value::String(field.to_string());
    }
    if let Ok(i) = field.parse::<i64>() {
        return i.into();
    }
    if let Ok(f) = field.parse::<f64>() {
        if let Some(n) = serde_json::Number::from_f64(f) {
            return Value::Number(n);
        }
    }
    match field {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => Value::String(field.to_string()),
    }
}

pub fn csv_to_json_lines(csv_bytes: &[u8]) -> anyhow::Result<Vec<u8>> {
    let mut r = csv::Reader::from_reader(csv_bytes);
    let header = r.headers()?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        // Written by hand so keys keep the column order whatever Map type
        // serde_json was built with.
        out.push(b'{');
        for (i, (h, f)) in header.iter().zip(rec.iter()).enumerate() {
            if i > 0 {
                out.push(b',');
            }
            serde_json::to_writer(&mut out, h)?;
            out.push(b':');
            serde_json::to_writer(&mut out, &json_value(h, f))?;
        }
        out.extend_from_slice(b"}\n");
    }
    Ok(out)
}

/// Writes a CSV table in the requested format to `out`, or stdout.
pub fn emit_table(format: Format, csv_bytes: Vec<u8>, out: Option<&Path>) -> anyhow::Result<()> {
    let bytes = match format {
        Format::JsonLines => csv_to_json_lines(&csv_bytes)?,
        Format::Csv | Format::Text => csv_bytes,
    };
    match out {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(&bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Builds a CSV table from a header and rows of already-formatted fields.
pub fn table<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner()?)
}

/// A single-result command: `text` prints `line`, the other formats print
/// the one-row table.
pub fn emit_scalar<const N: usize>(format: Format, line: &str, header: [&str; N], row: [String; N]) -> anyhow::Result<()> {
    match format {
        Format::Text => {
            println!("{line}");
            Ok(())
        }
        other => emit_table(other, table(header, [row])?, None),
    }
}
