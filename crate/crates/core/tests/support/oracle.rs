//! Exhaustive reference miner: every non-empty subset of the universe as a
//! bitmask, support counted by masking each transaction.

#![allow(dead_code)]

use std::collections::BTreeMap;

use autocompose::Itemset;

pub fn mask_of(items: &Itemset) -> u32 {
    items.iter().fold(0, |m, i| m | 1 << (i.index() - 1))
}

pub fn itemset_of(mask: u32) -> Itemset {
    Itemset::from_indices((0..32).filter(|b| mask >> b & 1 == 1).map(|b| b + 1)).unwrap()
}

pub struct Oracle {
    pub n: usize,
    pub threshold: u32,
    /// Frequent masks with their support.
    pub frequent: BTreeMap<u32, u32>,
}

pub fn support(rows: &[u32], mask: u32) -> u32 {
    rows.iter().filter(|&&r| r & mask == mask).count() as u32
}

pub fn mine(universe: u32, rows: &[Itemset], support_percent: f64) -> Oracle {
    let masks: Vec<u32> = rows.iter().map(mask_of).collect();
    let n = rows.len();
    // smallest count c with c >= n * pct / 100, but at least one occurrence
    let mut threshold = 1u32;
    while (threshold as f64) < n as f64 * support_percent / 100.0 - 1e-9 {
        threshold += 1;
    }
    let mut frequent = BTreeMap::new();
    for mask in 1u32..(1 << universe) {
        let s = support(&masks, mask);
        if s >= threshold {
            frequent.insert(mask, s);
        }
    }
    Oracle {
        n,
        threshold,
        frequent,
    }
}

impl Oracle {
    /// Frequent itemsets of size `k`, sorted.
    pub fn level(&self, k: u32) -> Vec<(Itemset, u32)> {
        let mut out: Vec<_> = self
            .frequent
            .iter()
            .filter(|(m, _)| m.count_ones() == k)
            .map(|(&m, &s)| (itemset_of(m), s))
            .collect();
        out.sort();
        out
    }

    pub fn all(&self) -> Vec<(Itemset, u32)> {
        let mut out: Vec<_> = self
            .frequent
            .iter()
            .map(|(&m, &s)| (itemset_of(m), s))
            .collect();
        out.sort();
        out
    }

    /// Every (antecedent, consequent) split of every frequent set of size
    /// two or more whose confidence reaches `min_confidence`.
    pub fn rules(&self, min_confidence: f64) -> Vec<(Itemset, Itemset, u32, f64)> {
        let mut out = Vec::new();
        for (&whole, &s) in &self.frequent {
            if whole.count_ones() < 2 {
                continue;
            }
            let mut sub = (whole - 1) & whole;
            while sub != 0 {
                let ante_support = self.frequent[&sub];
                let confidence = s as f64 / ante_support as f64;
                if confidence >= min_confidence {
                    out.push((itemset_of(sub), itemset_of(whole & !sub), s, confidence));
                }
                sub = (sub - 1) & whole;
            }
        }
        out.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        out
    }

    /// Frequent masks with no frequent proper superset.
    pub fn maximal(&self) -> Vec<Itemset> {
        let mut out: Vec<_> = self
            .frequent
            .keys()
            .filter(|&&m| !self.frequent.keys().any(|&o| o != m && o & m == m))
            .map(|&m| itemset_of(m))
            .collect();
        out.sort();
        out
    }
}

/// The five baskets of the six-item reference dataset.
pub fn reference_rows() -> Vec<Itemset> {
    [
        &[1, 2, 3, 4][..],
        &[1, 2],
        &[1, 3, 4, 5],
        &[2, 3, 4, 6],
        &[1, 2, 3, 6],
    ]
    .iter()
    .map(|r| Itemset::from_indices(r.iter().copied()).unwrap())
    .collect()
}

use autocompose::mining::{frequent_itemsets, generate_rules};
use autocompose::{FrequentItemsetTable, MiningConfig, TransactionSet};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Instance {
    pub universe: u32,
    pub rows: Vec<Itemset>,
    pub support_percent: f64,
    pub min_confidence: f64,
}

/// Universe up to 8, up to 30 rows, support 10..=90 percent.
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let universe = rng.gen_range(1..=8);
    let n = rng.gen_range(0..=30);
    let density = rng.gen_range(0.2..0.8);
    let rows = (0..n)
        .map(|_| Itemset::from_indices((1..=universe).filter(|_| rng.gen_bool(density))).unwrap())
        .collect();
    Instance {
        universe,
        rows,
        support_percent: rng.gen_range(10..=90) as f64,
        min_confidence: [0.3, 0.5, 0.6, 0.75, 1.0][rng.gen_range(0..5)],
    }
}

impl Instance {
    pub fn config(&self) -> MiningConfig {
        MiningConfig::new(self.universe, self.rows.len(), self.support_percent)
            .with_min_confidence(self.min_confidence)
    }

    pub fn mine(&self) -> FrequentItemsetTable {
        let set = TransactionSet::from_rows(self.universe, self.rows.iter().cloned()).unwrap();
        frequent_itemsets(&set, &self.config()).unwrap()
    }
}

/// Compares the miner and the rule generator with the oracle on one
/// instance. `Err` describes the first disagreement.
pub fn check_instance(inst: &Instance) -> Result<FrequentItemsetTable, String> {
    let table = inst.mine();
    let oracle = mine(inst.universe, &inst.rows, inst.support_percent);
    if table.min_support_count() != oracle.threshold {
        return Err(format!(
            "threshold {} vs oracle {}",
            table.min_support_count(),
            oracle.threshold
        ));
    }
    for k in 1..=inst.universe {
        let got: Vec<_> = table
            .level(k as usize)
            .iter()
            .map(|f| (f.itemset.clone(), f.support_count))
            .collect();
        let want = oracle.level(k);
        if got != want {
            return Err(format!("level {k}: got {got:?}, oracle {want:?}"));
        }
    }
    let mut got: Vec<_> = generate_rules(&table, &inst.config())
        .into_iter()
        .map(|r| (r.antecedent, r.consequent, r.support_count, r.confidence))
        .collect();
    got.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    let want = oracle.rules(inst.min_confidence);
    if got != want {
        return Err(format!("rules: got {got:?}, oracle {want:?}"));
    }
    Ok(table)
}

/// (k-1)-subsets of frequent k-itemsets missing from level k-1.
pub fn anti_monotone_violations(table: &FrequentItemsetTable) -> usize {
    let mut violations = 0;
    for (k, level) in table.levels() {
        if k < 2 {
            continue;
        }
        let below: Vec<&Itemset> = table.level(k - 1).iter().map(|f| &f.itemset).collect();
        for f in level {
            for pos in 0..k {
                if !below.contains(&&f.itemset.without_position(pos)) {
                    violations += 1;
                }
            }
        }
    }
    violations
}
