//! One-vs-rest experiment protocol: the training set is every sample of the
//! normal class from the source training partition; the test set mixes held-
//! out normals with abnormals drawn as evenly as possible across the
//! remaining classes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::Dataset;

/// Output of protocol assembly: a normals-only training set and a labeled
/// test set (roles mark abnormals).
#[derive(Debug, Clone)]
pub struct ProtocolSplit {
    pub train: Dataset,
    pub test: Dataset,
}

/// Split `total` across per-class capacities as evenly as possible: classes
/// short on samples contribute everything they have and the shortfall is
/// redistributed over the rest. Returns `None` when capacity is insufficient.
fn waterfill(capacities: &[usize], total: usize) -> Option<Vec<usize>> {
    if capacities.iter().sum::<usize>() < total {
        return None;
    }
    let mut quotas = vec![0usize; capacities.len()];
    let mut remaining = total;
    while remaining > 0 {
        let open: Vec<usize> = (0..capacities.len())
            .filter(|&i| quotas[i] < capacities[i])
            .collect();
        let share = remaining / open.len();
        if share == 0 {
            for &i in open.iter().take(remaining) {
                quotas[i] += 1;
            }
            break;
        }
        for &i in &open {
            let add = share.min(capacities[i] - quotas[i]);
            quotas[i] += add;
            remaining -= add;
        }
    }
    Some(quotas)
}

/// Draw `k` distinct elements from `pool` by partial Fisher-Yates shuffle.
fn sample_without_replacement(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool = pool.to_vec();
    for i in 0..k {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Assemble the one-vs-rest protocol for `normal_class`.
///
/// * Training set: every `normal_class` sample from `train_part`, roles all
///   normal.
/// * Test set: `test_normal` samples of `normal_class` plus `test_abnormal`
///   samples spread across the other classes (evenly where counts allow),
///   drawn without replacement from `test_part`. Roles mark the abnormals.
///
/// Requesting more samples than a partition holds is an error naming the
/// shortfall. Sampling is deterministic in `seed`.
pub fn make_protocol(
    train_part: &Dataset,
    test_part: &Dataset,
    normal_class: u8,
    test_normal: usize,
    test_abnormal: usize,
    seed: u64,
) -> Result<ProtocolSplit> {
    let train_idx: Vec<usize> = (0..train_part.n())
        .filter(|&i| train_part.class_labels()[i] == normal_class)
        .collect();
    if train_idx.is_empty() {
        return Err(Error::data(format!(
            "protocol: no training samples of class {normal_class}"
        )));
    }
    let train = train_part
        .select(&train_idx)
        .with_roles(vec![false; train_idx.len()])?;

    let normal_pool: Vec<usize> = (0..test_part.n())
        .filter(|&i| test_part.class_labels()[i] == normal_class)
        .collect();
    if normal_pool.len() < test_normal {
        return Err(Error::data(format!(
            "protocol: requested {test_normal} normal test samples of class \
             {normal_class}, only {} available",
            normal_pool.len()
        )));
    }

    let mut other_classes: Vec<u8> = test_part
        .class_labels()
        .iter()
        .copied()
        .filter(|&c| c != normal_class)
        .collect();
    other_classes.sort_unstable();
    other_classes.dedup();
    let pools: Vec<Vec<usize>> = other_classes
        .iter()
        .map(|&c| {
            (0..test_part.n())
                .filter(|&i| test_part.class_labels()[i] == c)
                .collect()
        })
        .collect();
    let capacities: Vec<usize> = pools.iter().map(Vec::len).collect();
    let quotas = waterfill(&capacities, test_abnormal).ok_or_else(|| {
        Error::data(format!(
            "protocol: requested {test_abnormal} abnormal test samples, only {} \
             available outside class {normal_class}",
            capacities.iter().sum::<usize>()
        ))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample_without_replacement(&normal_pool, test_normal, &mut rng);
    let mut roles = vec![false; test_normal];
    for (pool, &quota) in pools.iter().zip(&quotas) {
        picked.extend(sample_without_replacement(pool, quota, &mut rng));
        roles.extend(std::iter::repeat_n(true, quota));
    }
    let test = test_part.select(&picked).with_roles(roles)?;
    Ok(ProtocolSplit { train, test })
}
