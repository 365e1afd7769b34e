use std::ops::Range;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{FeatureMatrix, Targets, Tree};

fn loss(y: &Targets, row: usize, leaf: &[f64]) -> f64 {
    match y {
        Targets::Regression(v) => (leaf[0] - v[row]).powi(2),
        Targets::Classification { labels, .. } => 1.0 - leaf[labels[row]],
    }
}

/// Breiman permutation importance on each tree's out-of-bag rows.
///
/// Returns the per-feature mean error increase and the mean baseline
/// out-of-bag error, averaged over trees with at least two OOB rows.
pub(super) fn permutation_importance(
    x: &FeatureMatrix,
    y: &Targets,
    grown: &[(Tree, Vec<usize>, ChaCha8Rng)],
) -> Option<(Vec<f64>, f64)> {
    use rayon::prelude::*;
    let per_tree: Vec<(Vec<f64>, f64)> = grown
        .par_iter()
        .filter(|(_, oob, _)| oob.len() >= 2)
        .map(|(tree, oob, rng)| {
            let mut rng = rng.clone();
            let base: f64 =
                oob.iter().map(|&r| loss(y, r, tree.leaf(x.row(r)))).sum::<f64>() / oob.len() as f64;
            let mut deltas = vec![0.0; x.cols];
            let mut buf = vec![0.0; x.cols];
            let mut perm: Vec<usize> = oob.clone();
            for (f, delta) in deltas.iter_mut().enumerate() {
                if !tree.uses_feature(f) {
                    continue;
                }
                perm.copy_from_slice(oob);
                perm.shuffle(&mut rng);
                let mut err = 0.0;
                for (&r, &donor) in oob.iter().zip(&perm) {
                    buf.copy_from_slice(x.row(r));
                    buf[f] = x.get(donor, f);
                    err += loss(y, r, tree.leaf(&buf));
                }
                *delta = err / oob.len() as f64 - base;
            }
            (deltas, base)
        })
        .collect();
    if per_tree.is_empty() {
        return None;
    }
    let n = per_tree.len() as f64;
    let mut mean = vec![0.0; x.cols];
    let mut base = 0.0;
    for (d, b) in &per_tree {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v / n;
        }
        base += b / n;
    }
    Some((mean, base))
}

pub(super) fn normalize(raw: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    if s > 0.0 {
        clipped.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

/// Importance aggregated per feature block and divided by the block width,
/// then renormalized to sum to one. Blocks with zero total stay at zero.
pub fn block_importance(importance: &[f64], blocks: &[Range<usize>]) -> Vec<f64> {
    let per_dim: Vec<f64> = blocks
        .iter()
        .map(|b| {
            let w = b.len().max(1) as f64;
            importance[b.clone()].iter().sum::<f64>() / w
        })
        .collect();
    let s: f64 = per_dim.iter().sum();
    if s > 0.0 {
        per_dim.iter().map(|v| v / s).collect()
    } else {
        per_dim
    }
}
