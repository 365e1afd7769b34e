use rand::seq::index::sample;
use rand::Rng;

use super::{FeatureMatrix, ForestParams, Targets};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Regression: one value (mean target). Classification: class
    /// distribution.
    Leaf { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf reached by `x`.
    pub fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { values } => return values,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub(crate) fn uses_feature(&self, f: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature, .. } if *feature as usize == f))
    }
}

struct Builder<'a, R> {
    x: &'a FeatureMatrix,
    y: &'a Targets,
    params: &'a ForestParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

pub(crate) fn build<R: Rng>(
    x: &FeatureMatrix,
    y: &Targets,
    rows: Vec<usize>,
    params: &ForestParams,
    rng: &mut R,
) -> Tree {
    let mut b = Builder {
        x,
        y,
        params,
        rng,
        nodes: Vec::new(),
    };
    b.grow(rows, 0);
    Tree { nodes: b.nodes }
}

impl<R: Rng> Builder<'_, R> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { values: vec![] });
        let split = if depth < self.params.max_depth
            && rows.len() >= 2 * self.params.min_samples_leaf.max(1)
            && impurity(self.y, &rows) > 0.0
        {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            Some(c) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| self.x.get(i, c.feature) <= c.threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id as usize] = Node::Split {
                    feature: c.feature as u32,
                    threshold: c.threshold,
                    left,
                    right,
                };
            }
            None => {
                self.nodes[id as usize] = Node::Leaf {
                    values: leaf_values(self.y, &rows),
                };
            }
        }
        id
    }

    /// Exhaustive midpoint scan over a random feature subset. Ties keep the
    /// lowest feature index, then the lowest threshold.
    fn best_split(&mut self, rows: &[usize]) -> Option<Candidate> {
        let d = self.x.cols;
        let m = self.params.n_random_features_per_node.min(d);
        let mut features = sample(self.rng, d, m).into_vec();
        features.sort_unstable();
        let parent = impurity(self.y, rows);
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<Candidate> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for &f in &features {
            order.clear();
            order.extend(rows.iter().map(|&i| (self.x.get(i, f), i)));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut scan = Scan::new(self.y, rows);
            for pos in 0..order.len() - 1 {
                scan.move_left(self.y, order[pos].1);
                let n_left = pos + 1;
                if n_left < min_leaf || order.len() - n_left < min_leaf {
                    continue;
                }
                let (lo, hi) = (order[pos].0, order[pos + 1].0);
                if lo == hi {
                    continue;
                }
                let gain = parent - scan.children_impurity();
                if gain > 1e-12 * parent.max(1e-300) && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Sum of squared deviations (regression) or count-weighted Gini
/// (classification).
pub(crate) fn impurity(y: &Targets, rows: &[usize]) -> f64 {
    match y {
        Targets::Regression(v) => {
            let n = rows.len() as f64;
            let mean = rows.iter().map(|&i| v[i]).sum::<f64>() / n;
            rows.iter().map(|&i| (v[i] - mean).powi(2)).sum()
        }
        Targets::Classification { labels, n_classes } => {
            let mut counts = vec![0usize; *n_classes];
            for &i in rows {
                counts[labels[i]] += 1;
            }
            gini(&counts, rows.len())
        }
    }
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let s: f64 = counts.iter().map(|&c| (c as f64 / nf).powi(2)).sum();
    nf * (1.0 - s)
}

fn leaf_values(y: &Targets, rows: &[usize]) -> Vec<f64> {
    match y {
        Targets::Regression(v) => {
            vec![rows.iter().map(|&i| v[i]).sum::<f64>() / rows.len() as f64]
        }
        Targets::Classification { labels, n_classes } => {
            let mut p = vec![0.0; *n_classes];
            for &i in rows {
                p[labels[i]] += 1.0;
            }
            let n = rows.len() as f64;
            p.iter_mut().for_each(|v| *v /= n);
            p
        }
    }
}

/// Running left/right statistics for a sorted threshold scan.
enum Scan {
    Regression {
        n: usize,
        sum: f64,
        sum_sq: f64,
        left_n: usize,
        left_sum: f64,
        left_sq: f64,
    },
    Classification {
        n: usize,
        total: Vec<usize>,
        left: Vec<usize>,
        left_n: usize,
    },
}

impl Scan {
    fn new(y: &Targets, rows: &[usize]) -> Self {
        match y {
            Targets::Regression(v) => Scan::Regression {
                n: rows.len(),
                sum: rows.iter().map(|&i| v[i]).sum(),
                sum_sq: rows.iter().map(|&i| v[i] * v[i]).sum(),
                left_n: 0,
                left_sum: 0.0,
                left_sq: 0.0,
            },
            Targets::Classification { labels, n_classes } => {
                let mut total = vec![0; *n_classes];
                for &i in rows {
                    total[labels[i]] += 1;
                }
                Scan::Classification {
                    n: rows.len(),
                    total,
                    left: vec![0; *n_classes],
                    left_n: 0,
                }
            }
        }
    }

    fn move_left(&mut self, y: &Targets, row: usize) {
        match (self, y) {
            (
                Scan::Regression {
                    left_n,
                    left_sum,
                    left_sq,
                    ..
                },
                Targets::Regression(v),
            ) => {
                *left_n += 1;
                *left_sum += v[row];
                *left_sq += v[row] * v[row];
            }
            (Scan::Classification { left, left_n, .. }, Targets::Classification { labels, .. }) => {
                left[labels[row]] += 1;
                *left_n += 1;
            }
            _ => unreachable!("scan and targets disagree on task"),
        }
    }

    fn children_impurity(&self) -> f64 {
        match self {
            Scan::Regression {
                n,
                sum,
                sum_sq,
                left_n,
                left_sum,
                left_sq,
            } => {
                let ln = *left_n as f64;
                let rn = (*n - *left_n) as f64;
                let rs = sum - left_sum;
                let rq = sum_sq - left_sq;
                let l = (left_sq - left_sum * left_sum / ln).max(0.0);
                let r = (rq - rs * rs / rn).max(0.0);
                l + r
            }
            Scan::Classification {
                n,
                total,
                left,
                left_n,
            } => {
                let right: Vec<usize> = total.iter().zip(left).map(|(t, l)| t - l).collect();
                gini(left, *left_n) + gini(&right, n - left_n)
            }
        }
    }
}
