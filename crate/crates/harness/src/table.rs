use std::fmt::Write as _;

/// A result table, emitted both as CSV and as aligned text.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, headers: &[&str]) -> Self {
        Self {
            name: name.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    /// Column values for `header`.
    pub fn column(&self, header: &str) -> Option<Vec<&str>> {
        let i = self.headers.iter().position(|h| h == header)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn cell(&self, row_key: &str, header: &str) -> Option<&str> {
        let i = self.headers.iter().position(|h| h == header)?;
        self.rows
            .iter()
            .find(|r| r.first().is_some_and(|k| k == row_key))
            .map(|r| r[i].as_str())
    }

    pub fn to_csv(&self) -> String {
        let escape = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::new();
        for row in std::iter::once(&self.headers).chain(&self.rows) {
            let cells: Vec<_> = row.iter().map(|c| escape(c)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("== {} ==\n{}\n", self.name, line(&self.headers));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", line(&rule));
        for row in &self.rows {
            let _ = writeln!(out, "{}", line(row));
        }
        out
    }
}

/// Fixed-precision float formatting for table cells.
pub fn fmt_f(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn fmt_pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_csv_and_text() {
        let mut t = Table::new("demo", &["name", "value"]);
        t.push(vec!["a,b".into(), "1".into()]);
        t.push(vec!["long name".into(), "22".into()]);
        assert_eq!(t.to_csv(), "name,value\n\"a,b\",1\nlong name,22\n");
        let text = t.to_text();
        assert!(text.starts_with("== demo ==\nname       value\n"));
        assert_eq!(t.cell("long name", "value"), Some("22"));
        assert_eq!(t.column("value").unwrap(), vec!["1", "22"]);
    }
}
