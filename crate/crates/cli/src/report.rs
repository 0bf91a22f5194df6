//! Plain-text reports, one `name<TAB>value` pair per line.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    /// Tabs and newlines in `value` are replaced by spaces.
    pub fn push(&mut self, name: impl Into<String>, value: impl Display) {
        let value = value.to_string().replace(['\t', '\n', '\r'], " ");
        self.lines.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.lines
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn lines(&self) -> &[(String, String)] {
        &self.lines
    }

    pub fn render(&self) -> String {
        self.lines
            .iter()
            .map(|(n, v)| format!("{n}\t{v}\n"))
            .collect()
    }

    /// Writes to `path`, or stdout when `None`.
    pub fn write_to(&self, path: Option<&Path>) -> Result<()> {
        let text = self.render();
        match path {
            Some(p) => {
                std::fs::write(p, text).with_context(|| format!("writing report {}", p.display()))
            }
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())?;
                out.flush()?;
                Ok(())
            }
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        let lines = text
            .lines()
            .map(|l| {
                l.split_once('\t')
                    .map(|(n, v)| (n.to_string(), v.to_string()))
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Report { lines })
    }
}
