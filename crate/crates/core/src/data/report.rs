//! CSV result tables.
//!
//! RFC 4180 with LF line endings: fields containing commas, quotes, or
//! newlines are quoted with internal quotes doubled. Floats print as `{:.9e}`
//! (ten significant digits), enough to reconstruct any measurement made here
//! without drowning diffs in noise digits. Writers emit pure CSV; callers
//! that want provenance comments prepend them.

use std::path::Path;

use crate::error::{Error, Result};
use crate::train::EpochRecord;

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Text(String),
    Int(i64),
    Float(f64),
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Text(s) => escape(s),
            Field::Int(i) => i.to_string(),
            Field::Float(x) => format!("{x:.9e}"),
        }
    }
}

fn escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders a header and rows to CSV text. Every row must match the header
/// width.
pub fn render_csv(header: &[&str], rows: &[Vec<Field>]) -> Result<String> {
    if header.is_empty() {
        return Err(Error::domain("csv needs at least one column"));
    }
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| escape(h)).collect::<Vec<_>>().join(","));
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::shape(format!(
                "row {i} has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        out.push_str(&row.iter().map(Field::render).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Field>]) -> Result<()> {
    let text = render_csv(header, rows)?;
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source })
}

/// Writes a training history in the standard three-column layout.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let rows: Vec<Vec<Field>> = history
        .iter()
        .map(|r| {
            vec![
                Field::Int(r.step as i64),
                Field::Float(r.train_loss),
                Field::Float(r.val_accuracy),
            ]
        })
        .collect();
    write_csv(path, &["step", "train_loss", "val_accuracy"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_the_documented_shape() {
        let text = render_csv(
            &["method", "value"],
            &[
                vec![Field::Text("vanilla".into()), Field::Float(0.0104)],
                vec![Field::Text("gradcam".into()), Field::Int(3)],
            ],
        )
        .unwrap();
        assert_eq!(text, "method,value\nvanilla,1.040000000e-2\ngradcam,3\n");
    }

    #[test]
    fn quotes_awkward_fields() {
        let text = render_csv(
            &["name"],
            &[
                vec![Field::Text("plain".into())],
                vec![Field::Text("has,comma".into())],
                vec![Field::Text("has \"quote\"".into())],
                vec![Field::Text("two\nlines".into())],
            ],
        )
        .unwrap();
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(lines[1], "plain");
        assert_eq!(lines[2], "\"has,comma\"");
        assert_eq!(lines[3], "\"has \"\"quote\"\"\"");
        assert_eq!(lines[4], "\"two");
        assert_eq!(lines[5], "lines\"");
    }

    #[test]
    fn floats_use_ten_significant_digits() {
        let text = render_csv(&["x"], &[vec![Field::Float(std::f64::consts::PI)]]).unwrap();
        assert!(text.contains("3.141592654e0"), "{text}");
        let tiny = render_csv(&["x"], &[vec![Field::Float(3.9e-4)]]).unwrap();
        assert!(tiny.contains("3.900000000e-4"), "{tiny}");
    }

    #[test]
    fn history_writes_the_three_column_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let history = vec![
            EpochRecord { step: 1, train_loss: 0.693, val_accuracy: 0.5 },
            EpochRecord { step: 2, train_loss: 0.401, val_accuracy: 0.875 },
        ];
        write_history(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,train_loss,val_accuracy"));
        assert_eq!(lines.next(), Some("1,6.930000000e-1,5.000000000e-1"));
        assert_eq!(lines.next(), Some("2,4.010000000e-1,8.750000000e-1"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn mismatched_rows_are_rejected() {
        assert!(render_csv(&["a", "b"], &[vec![Field::Int(1)]]).is_err());
        assert!(render_csv(&[], &[]).is_err());
    }
}
