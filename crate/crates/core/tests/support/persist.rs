//! Round-trip checks for the flat files, driven by a seed.

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use autocompose::mining::AssociationRule;
use autocompose::repository::{format_config, format_row, parse_config, RuleStoreEntry};
use autocompose::{Itemset, MiningConfig, Repository, RepositoryPaths, ServiceId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(rng: &mut ChaCha8Rng, universe: u32) -> Itemset {
    loop {
        let s = Itemset::from_indices((1..=universe).filter(|_| rng.gen_bool(0.4))).unwrap();
        if !s.is_empty() {
            return s;
        }
    }
}

/// Appends rows one at a time, reopening after each, and compares both
/// the parsed log and the raw file bytes with what was written.
pub fn check_append(seed: u64, dir: &Path) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let universe = rng.gen_range(1..=12);
    let paths = RepositoryPaths::in_dir(dir);
    let mut repo = Repository::create(paths.clone(), MiningConfig::new(universe, 0, 25.0))
        .map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    let mut expected_bytes = String::new();
    for _ in 0..rng.gen_range(1..20) {
        let row = random_set(&mut rng, universe);
        repo.append_transaction(&row).map_err(|e| e.to_string())?;
        expected_bytes.push_str(&format_row(&row, universe));
        expected_bytes.push('\n');
        rows.push(row);

        let reopened = Repository::open(paths.clone()).map_err(|e| e.to_string())?;
        let got: Vec<&Itemset> = reopened
            .transactions()
            .transactions()
            .iter()
            .map(|t| &t.items)
            .collect();
        if got != rows.iter().collect::<Vec<_>>() {
            return Err(format!("reloaded {got:?}, wrote {rows:?}"));
        }
        if reopened.config().transaction_count != rows.len() {
            return Err("declared count drifted".into());
        }
        let bytes = fs::read_to_string(&paths.transactions).map_err(|e| e.to_string())?;
        if bytes != expected_bytes {
            return Err(format!("file bytes {bytes:?}, expected {expected_bytes:?}"));
        }
    }
    Ok(rows.len())
}

/// Stores random rule entries and loads them back unchanged.
pub fn check_rule_store(seed: u64, dir: &Path) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = RepositoryPaths::in_dir(dir);
    let repo =
        Repository::create(paths, MiningConfig::new(10, 0, 30.0)).map_err(|e| e.to_string())?;
    let entries: Vec<RuleStoreEntry> = (0..rng.gen_range(0..15))
        .map(|_| {
            let whole = loop {
                let s = random_set(&mut rng, 10);
                if s.len() >= 2 {
                    break s;
                }
            };
            let antecedent = Itemset::from_indices(
                whole
                    .iter()
                    .take(rng.gen_range(1..whole.len()))
                    .map(|i| i.index()),
            )
            .unwrap();
            let support_count = rng.gen_range(1..100);
            let composite_service = composite_service(&mut rng, &whole);
            RuleStoreEntry {
                composite_service,
                rule: AssociationRule {
                    consequent: whole.difference(&antecedent),
                    antecedent,
                    support_count,
                    confidence: support_count as f64 / rng.gen_range(support_count..200) as f64,
                },
                discovered_at: rng.gen(),
            }
        })
        .collect();
    repo.store_rules(&entries).map_err(|e| e.to_string())?;
    let loaded = repo.load_rules().map_err(|e| e.to_string())?;
    if loaded != entries {
        return Err(format!("loaded {loaded:?}, stored {entries:?}"));
    }
    Ok(entries.len())
}

fn composite_service(rng: &mut ChaCha8Rng, whole: &Itemset) -> Option<ServiceId> {
    rng.gen_bool(0.5).then(|| ServiceId::composite(whole))
}

/// Config files with and without the optional confidence line.
pub fn check_config(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = Path::new("config.txt");
    let universe = rng.gen_range(1..50);
    let count = rng.gen_range(0..1000);
    let support = rng.gen_range(1..=1000) as f64 / 10.0;

    let three = format!("{universe}\n{count}\n{support}\n");
    let cfg = parse_config(&three, path).map_err(|e| e.to_string())?;
    if cfg != MiningConfig::new(universe, count, support) {
        return Err(format!("three-line config parsed as {cfg:?}"));
    }
    if format_config(&cfg) != three {
        return Err("default confidence should not be written".into());
    }

    let confidence = rng.gen_range(1..=100) as f64 / 100.0;
    let four = format!("{three}{confidence}\n");
    let cfg = parse_config(&four, path).map_err(|e| e.to_string())?;
    if cfg.min_confidence != confidence {
        return Err(format!("four-line config parsed as {cfg:?}"));
    }
    let again = parse_config(&format_config(&cfg), path).map_err(|e| e.to_string())?;
    if again != cfg {
        return Err(format!("{again:?} != {cfg:?}"));
    }
    Ok(())
}
