//! Cluster-level block randomization.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::policies::check_weights;
use crate::seeding;

#[derive(Debug, Clone, PartialEq)]
pub struct Randomization {
    pub arms: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Assign whole clusters to arms so that, within each block, the number of
/// individuals per arm tracks `shares`. Clusters are visited in random order
/// and each goes to the arm furthest below its target
/// (`share_a * (placed + size) - count_a`), ties to the lowest arm. A
/// cluster's block is the block of its first row.
///
/// `clusters` must be dense ids in `0..num_clusters`.
pub fn block_randomize_clusters(
    clusters: &[usize],
    blocks: &[usize],
    shares: &[f64],
    seed: u64,
) -> Result<Randomization> {
    if clusters.len() != blocks.len() {
        return Err(Error::Dimension(format!(
            "{} cluster ids for {} block labels",
            clusters.len(),
            blocks.len()
        )));
    }
    check_weights(shares)?;
    let num_clusters = clusters.iter().max().map_or(0, |m| m + 1);
    let mut size = vec![0usize; num_clusters];
    let mut block_of = vec![usize::MAX; num_clusters];
    for (&c, &b) in clusters.iter().zip(blocks) {
        size[c] += 1;
        if block_of[c] == usize::MAX {
            block_of[c] = b;
        }
    }
    let mut by_block: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for c in 0..num_clusters {
        if size[c] > 0 {
            by_block.entry(block_of[c]).or_default().push(c);
        }
    }
    let active = shares.iter().filter(|&&s| s > 0.0).count();
    let mut arm_of = vec![0usize; num_clusters];
    let mut warnings = Vec::new();
    for (&block, members) in by_block.iter_mut() {
        if members.len() < active {
            warnings.push(format!(
                "block {block} has {} clusters for {active} arms; shares are best effort",
                members.len()
            ));
        }
        members.shuffle(&mut seeding::rng_at(seed, &[block as u64]));
        let mut counts = vec![0usize; shares.len()];
        let mut placed = 0usize;
        for &c in members.iter() {
            let s = size[c];
            let mut best = usize::MAX;
            let mut best_gap = f64::NEG_INFINITY;
            for (a, &share) in shares.iter().enumerate() {
                if share <= 0.0 {
                    continue;
                }
                let gap = share * (placed + s) as f64 - counts[a] as f64;
                if gap > best_gap + 1e-9 {
                    best = a;
                    best_gap = gap;
                }
            }
            arm_of[c] = best;
            counts[best] += s;
            placed += s;
        }
    }
    Ok(Randomization { arms: clusters.iter().map(|&c| arm_of[c]).collect(), warnings })
}

/// [`block_randomize_clusters`] over a dataset's clusters.
pub fn block_randomize(ds: &Dataset, blocks: &[usize], shares: &[f64], seed: u64) -> Result<Randomization> {
    if blocks.len() != ds.n() {
        return Err(Error::Dimension(format!("{} block labels for {} rows", blocks.len(), ds.n())));
    }
    if shares.len() != ds.num_arms() {
        return Err(Error::Dimension(format!(
            "{} shares for {} arms",
            shares.len(),
            ds.num_arms()
        )));
    }
    block_randomize_clusters(ds.clusters(), blocks, shares, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singletons_split_exactly() {
        let clusters: Vec<usize> = (0..300).collect();
        let r = block_randomize_clusters(&clusters, &vec![0; 300], &[1.0 / 3.0; 3], 5).unwrap();
        for a in 0..3 {
            assert_eq!(r.arms.iter().filter(|&&x| x == a).count(), 100);
        }
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn clusters_stay_whole() {
        let clusters = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let r = block_randomize_clusters(&clusters, &vec![0; 10], &[0.5, 0.5], 9).unwrap();
        assert!(r.arms[..5].iter().all(|&a| a == r.arms[0]));
        assert!(r.arms[5..].iter().all(|&a| a == r.arms[5]));
        assert_ne!(r.arms[0], r.arms[5]);
    }

    #[test]
    fn small_block_warns() {
        let r = block_randomize_clusters(&[0, 1], &[0, 1], &[0.5, 0.5], 1).unwrap();
        assert_eq!(r.warnings.len(), 2);
    }

    #[test]
    fn zero_share_never_used() {
        let clusters: Vec<usize> = (0..50).collect();
        let r = block_randomize_clusters(&clusters, &vec![0; 50], &[0.0, 0.5, 0.5], 2).unwrap();
        assert!(r.arms.iter().all(|&a| a != 0));
    }
}
