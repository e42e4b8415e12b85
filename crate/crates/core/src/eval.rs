//! Full-ranking metrics, the false-hard-negative ratio and grouped reports.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingState;
use crate::error::{Error, Result};
use crate::math;

/// Cut-offs reported in every [`MetricBlock`].
pub const CUTOFFS: [usize; 2] = [10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricBlock {
    #[serde(rename = "recall@10")]
    pub recall_10: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg_10: f64,
    #[serde(rename = "recall@20")]
    pub recall_20: f64,
    #[serde(rename = "ndcg@20")]
    pub ndcg_20: f64,
    pub users: usize,
}

/// Recall@K and NDCG@K of one ranked list. `ranked` needs at least `k`
/// entries when that many items exist; `relevant` is sorted.
pub fn user_metrics(ranked: &[usize], relevant: &[usize], k: usize) -> (f64, f64) {
    if relevant.is_empty() {
        return (0.0, 0.0);
    }
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (r, v) in ranked.iter().take(k).enumerate() {
        if relevant.binary_search(v).is_ok() {
            hits += 1;
            dcg += 1.0 / math::log2(r as f64 + 2.0);
        }
    }
    let idcg: f64 = (0..relevant.len().min(k))
        .map(|r| 1.0 / math::log2(r as f64 + 2.0))
        .sum();
    (hits as f64 / relevant.len() as f64, dcg / idcg)
}

/// Items in descending score order, ties by ascending index, with `masked`
/// (sorted) removed; truncated to `k`.
pub fn top_k(scores: &[f64], masked: &[usize], k: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..scores.len())
        .filter(|v| masked.binary_search(v).is_err())
        .collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if items.len() > k && k > 0 {
        items.select_nth_unstable_by(k - 1, cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
    items.truncate(k);
    items
}

/// Top-`k` lists for every user, masking each user's `masked` items.
pub fn ranked_lists(state: &EmbeddingState, masked: &[Vec<usize>], k: usize) -> Vec<Vec<usize>> {
    let mut scores = Vec::with_capacity(state.num_items);
    (0..state.num_users)
        .map(|u| {
            state.user_scores(u, &mut scores);
            top_k(&scores, &masked[u], k)
        })
        .collect()
}

fn block_from_lists(lists: &[Vec<usize>], ground_truth: &[Vec<usize>]) -> MetricBlock {
    let mut out = MetricBlock::default();
    for (list, gt) in lists.iter().zip(ground_truth) {
        if gt.is_empty() {
            continue;
        }
        let (r10, n10) = user_metrics(list, gt, CUTOFFS[0]);
        let (r20, n20) = user_metrics(list, gt, CUTOFFS[1]);
        out.recall_10 += r10;
        out.ndcg_10 += n10;
        out.recall_20 += r20;
        out.ndcg_20 += n20;
        out.users += 1;
    }
    if out.users > 0 {
        let n = out.users as f64;
        out.recall_10 /= n;
        out.ndcg_10 /= n;
        out.recall_20 /= n;
        out.ndcg_20 /= n;
    }
    out
}

/// Mean Recall/NDCG at 10 and 20 over users with nonempty ground truth.
/// `ground_truth` and `masked` are per user and sorted.
pub fn rank_metrics(
    state: &EmbeddingState,
    ground_truth: &[Vec<usize>],
    masked: &[Vec<usize>],
) -> MetricBlock {
    block_from_lists(&ranked_lists(state, masked, CUTOFFS[1]), ground_truth)
}

/// A negative counts as a false hard negative when its cosine similarity to
/// any of the user's test items exceeds `tau_sim`.
pub fn is_false_hard(
    negative: &[f64],
    test_items: &[usize],
    items: &EmbeddingState,
    tau_sim: f64,
) -> bool {
    test_items
        .iter()
        .any(|&v| math::cosine(negative, items.item(v)) > tau_sim)
}

/// Fraction of `(user, negative)` pairs that are false hard negatives;
/// `None` for an empty list.
pub fn fhns_ratio(
    negatives: &[(usize, Vec<f64>)],
    test_items: &[Vec<usize>],
    items: &EmbeddingState,
    tau_sim: f64,
) -> Option<f64> {
    if negatives.is_empty() {
        return None;
    }
    let hits = negatives
        .iter()
        .filter(|(u, n)| is_false_hard(n, &test_items[*u], items, tau_sim))
        .count();
    Some(hits as f64 / negatives.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBlock {
    pub group: usize,
    /// Ground-truth interactions falling in the group.
    pub support: usize,
    /// `None` when the group has no ground truth.
    pub metrics: Option<MetricBlock>,
    /// Sampled negatives attributed to the group.
    pub negatives: usize,
    pub fhns: Option<f64>,
}

/// Metrics with each user's ground truth restricted to one group at a time.
/// `group_of(user, item)` assigns every ground-truth interaction a group;
/// `fhns_flags` holds `(group, is_false_hard)` per sampled negative.
pub fn grouped_report(
    state: &EmbeddingState,
    ground_truth: &[Vec<usize>],
    masked: &[Vec<usize>],
    group_of: &dyn Fn(usize, usize) -> usize,
    num_groups: usize,
    fhns_flags: &[(usize, bool)],
) -> Result<Vec<GroupBlock>> {
    let groups: Vec<Vec<usize>> = ground_truth
        .iter()
        .enumerate()
        .map(|(u, items)| items.iter().map(|&v| group_of(u, v)).collect())
        .collect();
    if let Some(&g) = groups.iter().flatten().find(|&&g| g >= num_groups) {
        return Err(Error::UnknownGroup(g));
    }
    if let Some(&(g, _)) = fhns_flags.iter().find(|f| f.0 >= num_groups) {
        return Err(Error::UnknownGroup(g));
    }
    let lists = ranked_lists(state, masked, CUTOFFS[1]);
    let mut out = Vec::with_capacity(num_groups);
    for g in 0..num_groups {
        let gt: Vec<Vec<usize>> = ground_truth
            .iter()
            .zip(&groups)
            .map(|(items, gs)| {
                items
                    .iter()
                    .zip(gs)
                    .filter(|(_, &h)| h == g)
                    .map(|(&v, _)| v)
                    .collect()
            })
            .collect();
        let support = gt.iter().map(Vec::len).sum();
        let flagged: Vec<bool> = fhns_flags
            .iter()
            .filter(|f| f.0 == g)
            .map(|f| f.1)
            .collect();
        let fhns = (!flagged.is_empty())
            .then(|| flagged.iter().filter(|&&b| b).count() as f64 / flagged.len() as f64);
        let metrics = (support > 0).then(|| block_from_lists(&lists, &gt));
        out.push(GroupBlock {
            group: g,
            support,
            metrics,
            negatives: flagged.len(),
            fhns,
        });
    }
    Ok(out)
}

/// Merge per-user item lists into sorted, deduplicated sets.
pub fn union_sorted(a: &[Vec<usize>], b: &[Vec<usize>]) -> Vec<Vec<usize>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let mut v: Vec<usize> = x.iter().chain(y).copied().collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect()
}

/// Per-user sorted, deduplicated copies.
pub fn sorted_sets(lists: &[Vec<usize>]) -> Vec<Vec<usize>> {
    union_sorted(lists, &vec![Vec::new(); lists.len()])
}
