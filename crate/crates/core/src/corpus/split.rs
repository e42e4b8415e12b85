use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Interaction, RawRecord};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    Popularity,
    Temporal,
    Exposure,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub kind: ShiftKind,
    /// train : val : test_iid weights for the non-OOD remainder.
    pub ratios: [u32; 3],
    pub ood_fraction: f64,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            kind: ShiftKind::Popularity,
            ratios: [7, 1, 2],
            ood_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Disjoint train / val / IID-test / OOD-test partitions of a dataset.
///
/// Indices below `dataset.len()` refer to the dataset's interactions. In
/// exposure mode the OOD set lives in `external`, addressed by indices
/// `dataset.len() + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub shift_kind: ShiftKind,
    pub seed: u64,
    pub ratios: [u32; 3],
    pub ood_fraction: f64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test_iid: Vec<usize>,
    pub test_ood: Vec<usize>,
    pub external: Vec<Interaction>,
    /// Users too short for a temporal cut, kept entirely in train.
    pub short_users: usize,
}

impl SplitBundle {
    pub fn interaction<'a>(&'a self, dataset: &'a Dataset, index: usize) -> &'a Interaction {
        if index < dataset.len() {
            &dataset.interactions()[index]
        } else {
            &self.external[index - dataset.len()]
        }
    }

    /// Per-user sorted item lists for one of the partitions.
    pub fn user_items(&self, dataset: &Dataset, indices: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); dataset.num_users()];
        for &i in indices {
            let r = self.interaction(dataset, i);
            out[r.user].push(r.item);
        }
        for items in &mut out {
            items.sort_unstable();
            items.dedup();
        }
        out
    }

    pub fn counts(&self) -> [usize; 4] {
        [
            self.train.len(),
            self.val.len(),
            self.test_iid.len(),
            self.test_ood.len(),
        ]
    }
}

/// `ceil(fraction * n)`, robust to representation error in `fraction * n`.
fn ood_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let c = math::ceil(raw - 1e-9);
    (c.max(0.0) as usize).min(n)
}

/// Largest-remainder apportionment of `n` items to integer ratios.
fn apportion(n: usize, ratios: &[u32; 3]) -> [usize; 3] {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let mut counts = [0usize; 3];
    let mut rem = [0u64; 3];
    for k in 0..3 {
        let num = n as u64 * ratios[k] as u64;
        counts[k] = (num / total) as usize;
        rem[k] = num % total;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(a.cmp(&b)));
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Split each user's remaining interactions uniformly at random by `ratios`.
fn split_remainder<R: Rng>(
    per_user: Vec<Vec<usize>>,
    ratios: &[u32; 3],
    rng: &mut R,
    bundle: &mut SplitBundle,
) {
    for mut items in per_user {
        items.shuffle(rng);
        let [a, b, _] = apportion(items.len(), ratios);
        bundle.train.extend_from_slice(&items[..a]);
        bundle.val.extend_from_slice(&items[a..a + b]);
        bundle.test_iid.extend_from_slice(&items[a + b..]);
    }
}

/// Build train / val / IID-test / OOD-test partitions.
///
/// - `Popularity`: OOD drawn by inverse-popularity-weighted sampling without
///   replacement (Efraimidis-Spirakis keys), which flattens the OOD
///   popularity histogram.
/// - `Temporal`: per user, the latest `ceil(f * n_u)` interactions.
/// - `Exposure`: OOD is the externally supplied fully exposed log.
/// - `None`: no OOD set.
///
/// The remainder is always split per user 7:1:2 (by default) with
/// largest-remainder rounding.
pub fn build_split(
    dataset: &Dataset,
    opts: &SplitOptions,
    exposure_test: Option<&[RawRecord]>,
) -> Result<SplitBundle> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&opts.ood_fraction) {
        return Err(invalid("ood_fraction must lie in [0, 1]"));
    }
    if opts.ratios.iter().all(|&r| r == 0) {
        return Err(invalid("split ratios must not all be zero"));
    }
    let mut rng = rng::stream(opts.seed, Stream::Split, 0);
    let mut bundle = SplitBundle {
        shift_kind: opts.kind,
        seed: opts.seed,
        ratios: opts.ratios,
        ood_fraction: opts.ood_fraction,
        train: Vec::new(),
        val: Vec::new(),
        test_iid: Vec::new(),
        test_ood: Vec::new(),
        external: Vec::new(),
        short_users: 0,
    };
    let n = dataset.len();
    let mut in_ood = vec![false; n];

    match opts.kind {
        ShiftKind::Popularity => {
            let k = ood_count(opts.ood_fraction, n);
            let pop = dataset.item_popularity();
            // key = ln(u) / w with w = 1/pop; the k largest keys form the sample
            let mut keyed: Vec<(f64, usize)> = dataset
                .interactions()
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    (math::ln(u) * pop[r.item] as f64, i)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in keyed.iter().take(k) {
                in_ood[i] = true;
            }
            bundle.test_ood = (0..n).filter(|&i| in_ood[i]).collect();
        }
        ShiftKind::Temporal => {
            let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_users()];
            for (i, r) in dataset.interactions().iter().enumerate() {
                per_user[r.user].push(i);
            }
            for items in &mut per_user {
                if items.is_empty() {
                    continue;
                }
                if items.len() < 2 {
                    bundle.short_users += 1;
                    continue;
                }
                items.sort_by_key(|&i| {
                    let r = &dataset.interactions()[i];
                    (r.timestamp, r.item, i)
                });
                let k = ood_count(opts.ood_fraction, items.len());
                for &i in &items[items.len() - k..] {
                    in_ood[i] = true;
                }
            }
            bundle.test_ood = (0..n).filter(|&i| in_ood[i]).collect();
        }
        ShiftKind::Exposure => {
            let external = exposure_test
                .ok_or_else(|| invalid("exposure split requires an exposure test log"))?;
            for rec in external {
                let user = dataset
                    .user_index(&rec.user)
                    .ok_or_else(|| Error::UnknownId {
                        kind: "user",
                        id: rec.user.clone(),
                    })?;
                let item = dataset
                    .item_index(&rec.item)
                    .ok_or_else(|| Error::UnknownId {
                        kind: "item",
                        id: rec.item.clone(),
                    })?;
                bundle.external.push(Interaction {
                    user,
                    item,
                    timestamp: rec.timestamp,
                    rating: rec.rating,
                });
            }
            bundle.test_ood = (n..n + bundle.external.len()).collect();
        }
        ShiftKind::None => {}
    }

    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_users()];
    for (i, r) in dataset.interactions().iter().enumerate() {
        if !in_ood[i] {
            per_user[r.user].push(i);
        }
    }
    split_remainder(per_user, &opts.ratios, &mut rng, &mut bundle);
    bundle.train.sort_unstable();
    bundle.val.sort_unstable();
    bundle.test_iid.sort_unstable();
    Ok(bundle)
}
