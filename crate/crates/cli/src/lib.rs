//! Commands behind the `autocompose` binary.

pub mod mine;
pub mod report;
pub mod scenario;
pub mod serve;
pub mod simulate;

use std::path::Path;

use anyhow::{Context, Result};
use autocompose::decision::{default_rules, load_rules_file, FixedRule};
use autocompose::PriceCatalog;

/// Prices for the six-item reference shop, used when no catalog is given.
pub const DEFAULT_CATALOG: &str = "\
1 laptop 45000
2 external hard disk 6000
3 pen drive 800
4 printer 12000
5 modem 2500
6 os dvd 9900
";

pub fn load_catalog(path: Option<&Path>) -> Result<PriceCatalog> {
    match path {
        Some(p) => {
            PriceCatalog::load(p).with_context(|| format!("loading catalog {}", p.display()))
        }
        None => Ok(PriceCatalog::parse(DEFAULT_CATALOG)?),
    }
}

pub fn load_rules(path: Option<&Path>) -> Result<Vec<FixedRule>> {
    match path {
        Some(p) => load_rules_file(p).with_context(|| format!("loading rules {}", p.display())),
        None => Ok(default_rules()),
    }
}
