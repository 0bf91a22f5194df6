//! Scenario files: one request per line as comma-separated item indices;
//! a blank line is a mining checkpoint.

use std::path::Path;

use anyhow::{Context, Result};
use autocompose::Itemset;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Request { line: usize, items: Itemset },
    Checkpoint { line: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("scenario line {line}: {msg}")]
pub struct ScenarioError {
    pub line: usize,
    pub msg: String,
}

pub fn parse(text: &str) -> Result<Vec<Step>, ScenarioError> {
    text.lines()
        .enumerate()
        .map(|(i, raw)| {
            let line = i + 1;
            if raw.trim().is_empty() {
                return Ok(Step::Checkpoint { line });
            }
            let items = Itemset::parse_csv(raw).map_err(|e| ScenarioError {
                line,
                msg: format!("{e} in {raw:?}"),
            })?;
            Ok(Step::Request { line, items })
        })
        .collect()
}

pub fn load(path: &Path) -> Result<Vec<Step>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}
