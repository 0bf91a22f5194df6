use std::path::Path;

use anyhow::{Context, Result};
use autocompose::mining::{frequent_itemsets, generate_rules};
use autocompose::repository::load_dataset;

use crate::report::Report;

/// Mines a transaction file and reports every frequent level (including
/// the first empty one) and every rule.
pub fn cmd_mine(transactions: &Path, config: &Path) -> Result<Report> {
    let (set, cfg) = load_dataset(transactions, config).context("loading dataset")?;
    let table = frequent_itemsets(&set, &cfg).context("mining")?;
    let rules = generate_rules(&table, &cfg);

    let mut report = Report::new();
    report.push("transactions", set.len());
    report.push("items", cfg.universe_size);
    report.push("min_support_percent", cfg.min_support_percent);
    report.push("min_support_count", table.min_support_count());
    report.push("min_confidence", cfg.min_confidence);
    report.push("frequent_itemsets", table.len());
    for k in 1..=table.max_level() + 1 {
        let level: Vec<String> = table
            .level(k)
            .iter()
            .map(|f| format!("{}:{}", f.itemset, f.support_count))
            .collect();
        report.push(format!("frequent.{k}"), level.join(" "));
    }
    report.push("rules", rules.len());
    for (i, rule) in rules.iter().enumerate() {
        report.push(format!("rule.{}", i + 1), rule);
    }
    Ok(report)
}
