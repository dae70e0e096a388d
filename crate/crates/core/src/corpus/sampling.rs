use std::collections::HashMap;

use super::types::GkgRecord;
use crate::error::{Error, Result};
use crate::rng::keyed_u64;

/// `round(fraction * n)`, rounding halves away from zero.
pub fn quota(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Group key used for per-task proportional sampling: the `task.dataset`
/// prefix of the record id.
fn group_of(record: &GkgRecord) -> &str {
    match record.id.rsplit_once('.') {
        Some((prefix, _)) => prefix,
        None => "",
    }
}

/// Split `total` across groups proportionally (largest remainder), so every
/// group receives its exact share rounded up or down.
fn apportion(sizes: &[usize], p: f64, total: usize) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&n| p * n as f64).collect();
    let mut quotas: Vec<usize> = exact
        .iter()
        .zip(sizes)
        .map(|(&e, &n)| (e.floor() as usize).min(n))
        .collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // stable sort keeps group order for equal remainders
    order.sort_by(|&a, &b| {
        let ra = exact[a] - quotas[a] as f64;
        let rb = exact[b] - quotas[b] as f64;
        rb.total_cmp(&ra)
    });
    let mut left = total.saturating_sub(assigned);
    for &g in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if quotas[g] < sizes[g] {
            quotas[g] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Deterministic proportional subsample of `records`.
///
/// Returns `round(p * n)` records, split across `task.dataset` groups in
/// proportion to their sizes, keeping the original relative order.
pub fn sample_fraction(records: &[GkgRecord], p: f64, seed: u64) -> Result<Vec<GkgRecord>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sample fraction {p} outside (0, 1]"
        )));
    }
    if p == 1.0 {
        return Ok(records.to_vec());
    }

    let mut group_index: HashMap<&str, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let g = *group_index.entry(group_of(r)).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[g].push(i);
    }

    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = apportion(&sizes, p, quota(p, records.len()));

    let mut keep = vec![false; records.len()];
    for (group, &q) in members.iter_mut().zip(&quotas) {
        group.sort_by_key(|&i| (keyed_u64(seed, "sample", &records[i].id), i));
        for &i in &group[..q] {
            keep[i] = true;
        }
    }
    Ok(records
        .iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then(|| r.clone()))
        .collect())
}
