//! Items and canonical itemsets.
//!
//! An [`Itemset`] is kept as a strictly ascending list of [`ItemId`]s. Every
//! set operation in the crate assumes that canonical form, which makes prefix
//! merging and deduplication a matter of comparing slices.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// 1-based position of an item in the catalog universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(u32);

impl ItemId {
    /// Returns `None` for index 0, which is not a valid 1-based position.
    pub fn new(index: u32) -> Option<Self> {
        (index > 0).then_some(ItemId(index))
    }

    pub fn index(self) -> u32 {
        self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ItemsetError {
    #[error("item index 0 is not a valid 1-based position")]
    ZeroIndex,
    #[error("item {item} is outside the universe of {universe} items")]
    OutOfUniverse { item: u32, universe: u32 },
    #[error("invalid item token {0:?}")]
    BadToken(String),
}

/// Canonical (strictly ascending, duplicate-free) set of items.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Itemset(Vec<ItemId>);

impl Itemset {
    pub fn empty() -> Self {
        Itemset(Vec::new())
    }

    /// Builds an itemset from arbitrary indices, sorting and deduplicating.
    pub fn from_indices<I: IntoIterator<Item = u32>>(indices: I) -> Result<Self, ItemsetError> {
        let mut items = indices
            .into_iter()
            .map(|i| ItemId::new(i).ok_or(ItemsetError::ZeroIndex))
            .collect::<Result<Vec<_>, _>>()?;
        items.sort_unstable();
        items.dedup();
        Ok(Itemset(items))
    }

    /// Wraps an already sorted, duplicate-free vector.
    pub(crate) fn from_sorted(items: Vec<ItemId>) -> Self {
        debug_assert!(items.windows(2).all(|w| w[0] < w[1]));
        Itemset(items)
    }

    pub fn single(item: ItemId) -> Self {
        Itemset(vec![item])
    }

    pub fn items(&self) -> &[ItemId] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.0.binary_search(&item).is_ok()
    }

    /// Largest index, or 0 when empty.
    pub fn max_index(&self) -> u32 {
        self.0.last().map_or(0, |i| i.0)
    }

    pub fn check_universe(&self, universe: u32) -> Result<(), ItemsetError> {
        match self.0.last() {
            Some(last) if last.0 > universe => Err(ItemsetError::OutOfUniverse {
                item: last.0,
                universe,
            }),
            _ => Ok(()),
        }
    }

    /// Merge-based subset test over the canonical form.
    pub fn is_subset_of(&self, other: &Itemset) -> bool {
        if self.len() > other.len() {
            return false;
        }
        let mut theirs = other.0.iter();
        'outer: for mine in &self.0 {
            for t in theirs.by_ref() {
                match t.cmp(mine) {
                    std::cmp::Ordering::Less => continue,
                    std::cmp::Ordering::Equal => continue 'outer,
                    std::cmp::Ordering::Greater => return false,
                }
            }
            return false;
        }
        true
    }

    pub fn is_disjoint(&self, other: &Itemset) -> bool {
        self.intersection(other).is_empty()
    }

    pub fn union(&self, other: &Itemset) -> Itemset {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut a, mut b) = (self.0.iter().peekable(), other.0.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => match x.cmp(y) {
                    std::cmp::Ordering::Less => out.push(*a.next().unwrap()),
                    std::cmp::Ordering::Greater => out.push(*b.next().unwrap()),
                    std::cmp::Ordering::Equal => {
                        out.push(*a.next().unwrap());
                        b.next();
                    }
                },
                (Some(_), None) => out.push(*a.next().unwrap()),
                (None, Some(_)) => out.push(*b.next().unwrap()),
                (None, None) => break,
            }
        }
        Itemset(out)
    }

    pub fn intersection(&self, other: &Itemset) -> Itemset {
        Itemset(
            self.0
                .iter()
                .copied()
                .filter(|i| other.contains(*i))
                .collect(),
        )
    }

    pub fn difference(&self, other: &Itemset) -> Itemset {
        Itemset(
            self.0
                .iter()
                .copied()
                .filter(|i| !other.contains(*i))
                .collect(),
        )
    }

    /// Itemset with the member at `pos` removed.
    pub fn without_position(&self, pos: usize) -> Itemset {
        let mut v = self.0.clone();
        v.remove(pos);
        Itemset(v)
    }

    /// Every non-empty proper subset, in ascending bitmask order of positions.
    pub fn proper_subsets(&self) -> Vec<Itemset> {
        let n = self.len();
        if n == 0 || n >= usize::BITS as usize {
            return Vec::new();
        }
        (1..(1usize << n) - 1)
            .map(|mask| {
                Itemset(
                    (0..n)
                        .filter(|b| mask & (1 << b) != 0)
                        .map(|b| self.0[b])
                        .collect(),
                )
            })
            .collect()
    }

    /// Comma-separated indices, e.g. `2,3,6`.
    pub fn to_csv(&self) -> String {
        self.0
            .iter()
            .map(|i| i.0.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses comma-separated indices; whitespace around tokens is ignored.
    pub fn parse_csv(s: &str) -> Result<Self, ItemsetError> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Itemset::empty());
        }
        let indices = s
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<u32>()
                    .map_err(|_| ItemsetError::BadToken(tok.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Itemset::from_indices(indices)
    }
}

impl fmt::Display for Itemset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.to_csv())
    }
}

impl FromStr for Itemset {
    type Err = ItemsetError;

    /// Accepts `2,3,6` or `{2,3,6}`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let inner = s
            .strip_prefix('{')
            .and_then(|r| r.strip_suffix('}'))
            .unwrap_or(s);
        Itemset::parse_csv(inner)
    }
}

impl<'a> IntoIterator for &'a Itemset {
    type Item = &'a ItemId;
    type IntoIter = std::slice::Iter<'a, ItemId>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Shorthand used heavily in tests: `itemset(&[2, 3, 6])`.
pub fn itemset(indices: &[u32]) -> Itemset {
    Itemset::from_indices(indices.iter().copied()).expect("non-zero item indices")
}
