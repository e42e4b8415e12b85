//! Interaction corpora: ingestion rules, popularity statistics, the three
//! out-of-distribution split constructors and the confounded synthetic
//! generator.

mod split;
mod synthetic;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use split::{build_split, ShiftKind, SplitBundle, SplitOptions};
pub use synthetic::{generate_synthetic, GroundTruth, SyntheticSpec};

/// One observed user-item event, with dense 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
    pub rating: f64,
}

/// A parsed but not yet indexed row, keyed by the original string ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
    pub rating: f64,
}

/// Ingestion filters. Floors are applied iteratively until both hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    pub min_user_interactions: usize,
    pub min_item_interactions: usize,
    pub rating_threshold: f64,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            min_user_interactions: 1,
            min_item_interactions: 1,
            rating_threshold: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_users: usize,
    num_items: usize,
    interactions: Vec<Interaction>,
    item_popularity: Vec<usize>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: BTreeMap<String, usize>,
    item_index: BTreeMap<String, usize>,
}

impl Dataset {
    /// Assemble a dataset from already-indexed interactions.
    pub fn new(
        num_users: usize,
        num_items: usize,
        interactions: Vec<Interaction>,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
    ) -> Result<Self> {
        if interactions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if user_ids.len() != num_users || item_ids.len() != num_items {
            return Err(invalid("id map sizes do not match user/item counts"));
        }
        let mut item_popularity = vec![0usize; num_items];
        for r in &interactions {
            if r.user >= num_users || r.item >= num_items {
                return Err(invalid("interaction index out of range"));
            }
            if r.timestamp < 0 {
                return Err(invalid("negative timestamp"));
            }
            item_popularity[r.item] += 1;
        }
        let user_index = user_ids
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        let item_index = item_ids
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        Ok(Self {
            num_users,
            num_items,
            interactions,
            item_popularity,
            user_ids,
            item_ids,
            user_index,
            item_index,
        })
    }

    /// Index a dataset whose ids are their own decimal indices.
    pub fn with_numeric_ids(
        num_users: usize,
        num_items: usize,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        let users = (0..num_users).map(|i| alloc::format!("{i}")).collect();
        let items = (0..num_items).map(|i| alloc::format!("{i}")).collect();
        Self::new(num_users, num_items, interactions, users, items)
    }

    /// Apply the rating threshold, collapse duplicate (user, item) pairs to
    /// their latest timestamp, drop users and items under the floors until
    /// stable, then reindex densely in order of first appearance.
    pub fn from_records(records: &[RawRecord], opts: &FilterOptions) -> Result<Self> {
        if opts.rating_threshold.is_nan() {
            return Err(invalid("rating threshold is NaN"));
        }
        // latest occurrence per (user, item); later rows win timestamp ties
        let mut latest: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (row, r) in records.iter().enumerate() {
            if r.rating < opts.rating_threshold {
                continue;
            }
            latest
                .entry((r.user.as_str(), r.item.as_str()))
                .and_modify(|prev| {
                    if records[*prev].timestamp <= r.timestamp {
                        *prev = row;
                    }
                })
                .or_insert(row);
        }
        let mut keep: Vec<usize> = latest.into_values().collect();
        keep.sort_unstable();

        loop {
            let mut user_count: BTreeMap<&str, usize> = BTreeMap::new();
            let mut item_count: BTreeMap<&str, usize> = BTreeMap::new();
            for &row in &keep {
                *user_count.entry(records[row].user.as_str()).or_default() += 1;
                *item_count.entry(records[row].item.as_str()).or_default() += 1;
            }
            let before = keep.len();
            keep.retain(|&row| {
                let r = &records[row];
                user_count[r.user.as_str()] >= opts.min_user_interactions
                    && item_count[r.item.as_str()] >= opts.min_item_interactions
            });
            if keep.len() == before {
                break;
            }
        }
        if keep.is_empty() {
            return Err(Error::EmptyAfterFiltering);
        }

        let mut user_ids: Vec<String> = Vec::new();
        let mut item_ids: Vec<String> = Vec::new();
        let mut user_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut item_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut interactions = Vec::with_capacity(keep.len());
        for &row in &keep {
            let r = &records[row];
            let u = *user_index.entry(r.user.clone()).or_insert_with(|| {
                user_ids.push(r.user.clone());
                user_ids.len() - 1
            });
            let v = *item_index.entry(r.item.clone()).or_insert_with(|| {
                item_ids.push(r.item.clone());
                item_ids.len() - 1
            });
            interactions.push(Interaction {
                user: u,
                item: v,
                timestamp: r.timestamp,
                rating: r.rating,
            });
        }
        interactions.sort_by_key(|r| (r.user, r.timestamp, r.item));
        Self::new(
            user_ids.len(),
            item_ids.len(),
            interactions,
            user_ids,
            item_ids,
        )
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn item_popularity(&self) -> &[usize] {
        &self.item_popularity
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    /// Per-user sorted, deduplicated item lists over a subset of interactions.
    pub fn user_items(&self, indices: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &i in indices {
            let r = &self.interactions[i];
            out[r.user].push(r.item);
        }
        for items in &mut out {
            items.sort_unstable();
            items.dedup();
        }
        out
    }
}

/// Equal-frequency popularity buckets over items: items are ranked by
/// popularity (descending, ties by ascending index) and cut into
/// `num_buckets` groups of near-equal size. Bucket 0 is the most popular.
pub fn popularity_buckets(popularity: &[usize], num_buckets: usize) -> Result<Vec<usize>> {
    let n = popularity.len();
    if num_buckets == 0 {
        return Err(invalid("num_buckets must be at least 1"));
    }
    if num_buckets > n {
        return Err(invalid(alloc::format!(
            "num_buckets {num_buckets} exceeds item count {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| popularity[b].cmp(&popularity[a]).then(a.cmp(&b)));
    let mut buckets = vec![0usize; n];
    for (rank, &item) in order.iter().enumerate() {
        buckets[item] = rank * num_buckets / n;
    }
    Ok(buckets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn rec(u: &str, i: &str, t: i64, r: f64) -> RawRecord {
        RawRecord {
            user: u.to_string(),
            item: i.to_string(),
            timestamp: t,
            rating: r,
        }
    }

    #[test]
    fn three_rows_one_user_no_filtering() {
        let rows = [
            rec("a", "x", 1, 1.0),
            rec("a", "y", 2, 1.0),
            rec("a", "z", 3, 1.0),
        ];
        let opts = FilterOptions {
            min_user_interactions: 1,
            min_item_interactions: 1,
            rating_threshold: 0.0,
        };
        let ds = Dataset::from_records(&rows, &opts).unwrap();
        assert_eq!((ds.num_users(), ds.num_items(), ds.len()), (1, 3, 3));
        assert_eq!(ds.item_popularity(), &[1, 1, 1]);
    }

    #[test]
    fn floor_removing_everything_is_an_error() {
        let rows: Vec<_> = (0..10).map(|u| rec(&u.to_string(), "x", 0, 1.0)).collect();
        let opts = FilterOptions {
            min_user_interactions: 2,
            min_item_interactions: 1,
            rating_threshold: 0.0,
        };
        assert_eq!(
            Dataset::from_records(&rows, &opts),
            Err(Error::EmptyAfterFiltering)
        );
    }

    #[test]
    fn duplicates_collapse_to_latest_timestamp() {
        let rows = [
            rec("a", "x", 5, 1.0),
            rec("a", "x", 9, 2.0),
            rec("a", "x", 7, 3.0),
            rec("b", "x", 1, 1.0),
        ];
        let ds = Dataset::from_records(&rows, &FilterOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        let a = ds.user_index("a").unwrap();
        let r = ds.interactions().iter().find(|r| r.user == a).unwrap();
        assert_eq!((r.timestamp, r.rating), (9, 2.0));
    }

    #[test]
    fn rating_threshold_drops_low_rows() {
        let rows = [
            rec("a", "x", 1, 3.0),
            rec("a", "y", 2, 4.0),
            rec("a", "z", 3, 5.0),
        ];
        let opts = FilterOptions {
            rating_threshold: 4.0,
            ..FilterOptions::default()
        };
        let ds = Dataset::from_records(&rows, &opts).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.item_index("x").is_none());
    }

    #[test]
    fn filtering_cascades_until_stable() {
        // item q has two users; dropping user c (1 interaction) leaves q with one
        // user, which then violates the item floor and takes user b below its floor.
        let rows = [
            rec("a", "p", 1, 1.0),
            rec("a", "r", 2, 1.0),
            rec("d", "p", 1, 1.0),
            rec("d", "r", 2, 1.0),
            rec("b", "q", 1, 1.0),
            rec("b", "p", 2, 1.0),
            rec("c", "q", 3, 1.0),
        ];
        let opts = FilterOptions {
            min_user_interactions: 2,
            min_item_interactions: 2,
            rating_threshold: 0.0,
        };
        let ds = Dataset::from_records(&rows, &opts).unwrap();
        assert!(ds.user_index("c").is_none());
        assert!(ds.item_index("q").is_none());
        assert!(ds.user_index("b").is_none());
        assert_eq!(ds.len(), 4);
        let users = ds.user_items(&(0..ds.len()).collect::<Vec<_>>());
        assert!(users.iter().all(|items| items.len() >= 2));
        assert!(ds.item_popularity().iter().all(|&p| p >= 2));
    }

    #[test]
    fn ingestion_is_deterministic() {
        let rows = [
            rec("b", "y", 4, 1.0),
            rec("a", "x", 1, 1.0),
            rec("a", "y", 2, 1.0),
        ];
        let a = Dataset::from_records(&rows, &FilterOptions::default()).unwrap();
        let b = Dataset::from_records(&rows, &FilterOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.user_ids(), &["b".to_string(), "a".to_string()]);
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(
            popularity_buckets(&[10, 10, 5, 1], 2).unwrap(),
            vec![0, 0, 1, 1]
        );
        assert_eq!(
            popularity_buckets(&[10, 10, 5, 1], 1).unwrap(),
            vec![0, 0, 0, 0]
        );
        assert_eq!(
            popularity_buckets(&[4, 3, 2, 1], 4).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert_eq!(
            popularity_buckets(&[1, 2, 3, 4], 4).unwrap(),
            vec![3, 2, 1, 0]
        );
        assert!(popularity_buckets(&[1, 2], 3).is_err());
        assert!(popularity_buckets(&[1, 2], 0).is_err());
    }

    #[test]
    fn popularity_invariants_hold() {
        let ds = Dataset::with_numeric_ids(
            2,
            3,
            vec![
                Interaction {
                    user: 0,
                    item: 0,
                    timestamp: 0,
                    rating: 1.0,
                },
                Interaction {
                    user: 1,
                    item: 0,
                    timestamp: 0,
                    rating: 1.0,
                },
                Interaction {
                    user: 1,
                    item: 2,
                    timestamp: 0,
                    rating: 1.0,
                },
            ],
        )
        .unwrap();
        assert_eq!(ds.item_popularity(), &[2, 0, 1]);
        assert_eq!(ds.item_popularity().iter().sum::<usize>(), ds.len());
    }
}
