//! Apriori frequent-itemset mining and confidence-based rule extraction.
//!
//! Mining is level-wise: frequent 1-itemsets are counted directly, then each
//! level's candidates are generated from the previous level by prefix merge
//! plus subset pruning, counted with one scan over the transactions, and
//! filtered by the support threshold. The loop stops at the first empty level.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::itemset::{ItemId, Itemset};

/// Default minimum confidence when the config file carries only three lines.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MiningError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub ordinal: usize,
    pub items: Itemset,
}

/// The mined log: `N` transactions over a universe of `universe_size` items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionSet {
    transactions: Vec<Transaction>,
    universe_size: u32,
}

impl TransactionSet {
    pub fn new(universe_size: u32) -> Self {
        TransactionSet {
            transactions: Vec::new(),
            universe_size,
        }
    }

    /// Builds a set with ordinals assigned in row order (1-based).
    pub fn from_rows<I>(universe_size: u32, rows: I) -> Result<Self, MiningError>
    where
        I: IntoIterator<Item = Itemset>,
    {
        let mut set = TransactionSet::new(universe_size);
        for row in rows {
            set.push(row)?;
        }
        Ok(set)
    }

    /// Appends a row with the next ordinal.
    pub fn push(&mut self, items: Itemset) -> Result<usize, MiningError> {
        items
            .check_universe(self.universe_size)
            .map_err(|e| MiningError::Contract(e.to_string()))?;
        let ordinal = self.transactions.len() + 1;
        self.transactions.push(Transaction { ordinal, items });
        Ok(ordinal)
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn universe_size(&self) -> u32 {
        self.universe_size
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    pub universe_size: u32,
    pub transaction_count: usize,
    /// Percentage in (0, 100].
    pub min_support_percent: f64,
    /// Ratio in (0, 1].
    pub min_confidence: f64,
}

impl MiningConfig {
    pub fn new(universe_size: u32, transaction_count: usize, min_support_percent: f64) -> Self {
        MiningConfig {
            universe_size,
            transaction_count,
            min_support_percent,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
        }
    }

    pub fn with_min_confidence(mut self, min_confidence: f64) -> Self {
        self.min_confidence = min_confidence;
        self
    }

    /// Range checks that do not depend on the data.
    pub fn validate(&self) -> Result<(), MiningError> {
        if self.universe_size == 0 {
            return Err(MiningError::Config("universe size must be positive".into()));
        }
        let sup = self.min_support_percent;
        if !(sup > 0.0 && sup <= 100.0) {
            return Err(MiningError::Config(format!(
                "support percent {sup} outside (0, 100]"
            )));
        }
        let conf = self.min_confidence;
        if !(conf > 0.0 && conf <= 1.0) {
            return Err(MiningError::Config(format!(
                "min confidence {conf} outside (0, 1]"
            )));
        }
        Ok(())
    }

    /// Checks the config against the data it is about to mine.
    pub fn validate_against(&self, transactions: &TransactionSet) -> Result<(), MiningError> {
        self.validate()?;
        if self.universe_size != transactions.universe_size() {
            return Err(MiningError::Config(format!(
                "config declares {} items but the transaction set has {}",
                self.universe_size,
                transactions.universe_size()
            )));
        }
        if self.transaction_count != transactions.len() {
            return Err(MiningError::Config(format!(
                "config declares {} transactions but {} were loaded",
                self.transaction_count,
                transactions.len()
            )));
        }
        Ok(())
    }

    /// Smallest support count that satisfies `count >= N * minsup`.
    ///
    /// Never below 1, so an empty log yields no frequent itemsets.
    pub fn min_support_count(&self, n: usize) -> u32 {
        let exact = n as f64 * self.min_support_percent / 100.0;
        // absorb representation error in fractional percentages (12.5% of 8 is 1, not 1.0000000001)
        let count = (exact - 1e-9).ceil().max(1.0);
        count as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequentItemset {
    pub itemset: Itemset,
    pub support_count: u32,
}

/// Frequent itemsets grouped by size. Level `k` holds only `k`-itemsets,
/// sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrequentItemsetTable {
    levels: BTreeMap<usize, Vec<FrequentItemset>>,
    transaction_count: usize,
    min_support_count: u32,
}

impl FrequentItemsetTable {
    pub fn level(&self, k: usize) -> &[FrequentItemset] {
        self.levels.get(&k).map_or(&[], Vec::as_slice)
    }

    /// Largest `k` with a non-empty level, 0 for an empty table.
    pub fn max_level(&self) -> usize {
        self.levels.keys().next_back().copied().unwrap_or(0)
    }

    pub fn levels(&self) -> impl Iterator<Item = (usize, &[FrequentItemset])> {
        self.levels.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &FrequentItemset> {
        self.levels.values().flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.levels.values().map(Vec::len).sum()
    }

    pub fn transaction_count(&self) -> usize {
        self.transaction_count
    }

    pub fn min_support_count(&self) -> u32 {
        self.min_support_count
    }

    /// Support count of a frequent itemset; `None` if it is not frequent.
    pub fn support(&self, itemset: &Itemset) -> Option<u32> {
        let level = self.levels.get(&itemset.len())?;
        level
            .binary_search_by(|f| f.itemset.cmp(itemset))
            .ok()
            .map(|i| level[i].support_count)
    }

    /// Frequent itemsets with no frequent proper superset, in level then
    /// lexicographic order.
    pub fn maximal(&self) -> Vec<&FrequentItemset> {
        self.iter()
            .filter(|f| {
                self.level(f.itemset.len() + 1)
                    .iter()
                    .all(|sup| !f.itemset.is_subset_of(&sup.itemset))
            })
            .collect()
    }
}

/// Apriori over `transactions`, returning every itemset whose support count
/// reaches `ceil(N * min_support_percent / 100)`.
pub fn frequent_itemsets(
    transactions: &TransactionSet,
    config: &MiningConfig,
) -> Result<FrequentItemsetTable, MiningError> {
    config.validate_against(transactions)?;
    let n = transactions.len();
    let threshold = config.min_support_count(n);
    let mut table = FrequentItemsetTable {
        levels: BTreeMap::new(),
        transaction_count: n,
        min_support_count: threshold,
    };

    let mut item_counts = vec![0u32; transactions.universe_size() as usize + 1];
    for t in transactions.transactions() {
        for item in t.items.iter() {
            item_counts[item.index() as usize] += 1;
        }
    }
    let mut current: Vec<FrequentItemset> = item_counts
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &c)| c >= threshold)
        .map(|(i, &c)| FrequentItemset {
            itemset: Itemset::single(ItemId::new(i as u32).expect("index starts at 1")),
            support_count: c,
        })
        .collect();

    let mut k = 1;
    while !current.is_empty() {
        let prior: Vec<Itemset> = current.iter().map(|f| f.itemset.clone()).collect();
        table.levels.insert(k, std::mem::take(&mut current));
        k += 1;

        let candidates = apriori_gen(&prior)?;
        if candidates.is_empty() {
            break;
        }
        let mut counts = vec![0u32; candidates.len()];
        for t in transactions.transactions() {
            for idx in matching_candidates(&candidates, &t.items) {
                counts[idx] += 1;
            }
        }
        current = candidates
            .into_iter()
            .zip(counts)
            .filter(|(_, c)| *c >= threshold)
            .map(|(itemset, support_count)| FrequentItemset {
                itemset,
                support_count,
            })
            .collect();
    }
    Ok(table)
}

/// Candidate `k`-itemsets from the frequent `(k-1)`-itemsets: pairs sharing
/// their first `k-2` members are merged, then any candidate with an
/// infrequent `(k-1)`-subset is dropped. Output is sorted and duplicate-free.
pub fn apriori_gen(prior_level: &[Itemset]) -> Result<Vec<Itemset>, MiningError> {
    let Some(first) = prior_level.first() else {
        return Ok(Vec::new());
    };
    let width = first.len();
    if width == 0 {
        return Err(MiningError::Contract(
            "candidate generation needs non-empty itemsets".into(),
        ));
    }
    if let Some(bad) = prior_level.iter().find(|s| s.len() != width) {
        return Err(MiningError::Contract(format!(
            "mixed itemset sizes in prior level: {} vs {}",
            width,
            bad.len()
        )));
    }

    let mut prior = prior_level.to_vec();
    prior.sort();
    let before = prior.len();
    prior.dedup();
    if prior.len() != before {
        return Err(MiningError::Contract(
            "prior level contains duplicates".into(),
        ));
    }

    let prefix = width - 1;
    let mut out = Vec::new();
    for (i, a) in prior.iter().enumerate() {
        for b in &prior[i + 1..] {
            // sorted input keeps equal prefixes contiguous
            if a.items()[..prefix] != b.items()[..prefix] {
                break;
            }
            let mut merged = a.items().to_vec();
            merged.push(b.items()[prefix]);
            let candidate = Itemset::from_sorted(merged);
            // the subsets dropping either of the last two members are a and b
            let pruned = (0..prefix).any(|pos| {
                prior
                    .binary_search(&candidate.without_position(pos))
                    .is_err()
            });
            if !pruned {
                out.push(candidate);
            }
        }
    }
    debug_assert!(out.windows(2).all(|w| w[0] < w[1]));
    Ok(out)
}

/// The candidates contained in `transaction`, in input order.
pub fn candidates_in_transaction(
    candidates: &[Itemset],
    transaction: &Transaction,
) -> Vec<Itemset> {
    matching_candidates(candidates, &transaction.items)
        .map(|i| candidates[i].clone())
        .collect()
}

fn matching_candidates<'a>(
    candidates: &'a [Itemset],
    items: &'a Itemset,
) -> impl Iterator<Item = usize> + 'a {
    candidates
        .iter()
        .enumerate()
        .filter(move |(_, c)| c.is_subset_of(items))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationRule {
    pub antecedent: Itemset,
    pub consequent: Itemset,
    /// Support count of `antecedent ∪ consequent`.
    pub support_count: u32,
    pub confidence: f64,
}

impl AssociationRule {
    pub fn itemset(&self) -> Itemset {
        self.antecedent.union(&self.consequent)
    }
}

impl std::fmt::Display for AssociationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} => {} support={} confidence={:.4}",
            self.antecedent, self.consequent, self.support_count, self.confidence
        )
    }
}

/// Every rule `A => I \ A` over frequent itemsets `I` of size two or more
/// and non-empty proper subsets `A`, kept when `σ(I) / σ(A)` reaches the
/// configured minimum confidence. Ordered by itemset (size, then
/// lexicographic), then antecedent.
pub fn generate_rules(table: &FrequentItemsetTable, config: &MiningConfig) -> Vec<AssociationRule> {
    let mut rules = Vec::new();
    for (k, level) in table.levels() {
        if k < 2 {
            continue;
        }
        for frequent in level {
            let mut antecedents = frequent.itemset.proper_subsets();
            antecedents.sort();
            for antecedent in antecedents {
                let Some(antecedent_support) = table.support(&antecedent) else {
                    // unreachable for tables built by frequent_itemsets
                    continue;
                };
                let confidence = frequent.support_count as f64 / antecedent_support as f64;
                if confidence >= config.min_confidence {
                    rules.push(AssociationRule {
                        consequent: frequent.itemset.difference(&antecedent),
                        antecedent,
                        support_count: frequent.support_count,
                        confidence,
                    });
                }
            }
        }
    }
    rules
}
