//! Greedy average-linkage agglomeration over the affinity matrix.

use super::affinity::AffinityMatrix;

/// One merge step: the two clusters joined and their average affinity.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub average: f64,
}

/// Starts from singletons of `members` and repeatedly joins the pair of
/// clusters with the highest average affinity among pairs that clear their
/// threshold. `threshold(x, y)` may depend on the clusters involved.
/// Returns the final clusters (each sorted, ordered by smallest member) and
/// the merge log.
pub fn agglomerate(
    aff: &AffinityMatrix,
    members: &[usize],
    threshold: impl Fn(&[usize], &[usize]) -> f64,
) -> (Vec<Vec<usize>>, Vec<Merge>) {
    let mut clusters: Vec<Vec<usize>> = members.iter().map(|&m| vec![m]).collect();
    clusters.sort();
    let mut log = Vec::new();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let avg = aff.average(&clusters[i], &clusters[j]);
                if avg < threshold(&clusters[i], &clusters[j]) {
                    continue;
                }
                // strict comparison keeps the earliest pair on ties
                if best.is_none_or(|b| avg > b.2) {
                    best = Some((i, j, avg));
                }
            }
        }
        let Some((i, j, avg)) = best else { break };
        let right = clusters.remove(j);
        let left = clusters[i].clone();
        clusters[i].extend(&right);
        clusters[i].sort_unstable();
        log.push(Merge {
            left,
            right,
            average: avg,
        });
        clusters.sort();
    }
    (clusters, log)
}

/// Full merge order with no stopping threshold.
pub fn merge_order(aff: &AffinityMatrix, members: &[usize]) -> Vec<Merge> {
    agglomerate(aff, members, |_, _| f64::NEG_INFINITY).1
}
