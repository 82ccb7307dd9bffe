//! Leaf-wise regression tree grown on histogram bins from per-row
//! gradient/hessian pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::BinMapper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

pub(crate) struct GrowParams {
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub l2_lambda: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy)]
struct SplitInfo {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct Candidate {
    node: usize,
    rows: Vec<usize>,
    best: Option<SplitInfo>,
}

fn leaf_value(g: f64, h: f64, params: &GrowParams) -> f64 {
    -params.learning_rate * g / (h + params.l2_lambda)
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn best_split(
    rows: &[usize],
    bins: &[Vec<u8>],
    mapper: &BinMapper,
    grad: &[f64],
    hess: &[f64],
    params: &GrowParams,
) -> Option<SplitInfo> {
    if rows.len() < 2 * params.min_samples_leaf {
        return None;
    }
    let (g_tot, h_tot) = rows
        .iter()
        .fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]));
    let parent = score(g_tot, h_tot, params.l2_lambda);
    let n = rows.len();

    // Features are scanned in parallel; the reduction below runs in feature
    // order so the outcome does not depend on the thread count.
    let per_feature: Vec<Option<SplitInfo>> = (0..mapper.n_features())
        .into_par_iter()
        .map(|f| {
            let n_bins = mapper.n_bins(f);
            if n_bins < 2 {
                return None;
            }
            let mut hist = vec![(0.0f64, 0.0f64, 0usize); n_bins];
            let col = &bins[f];
            for &r in rows {
                let e = &mut hist[col[r] as usize];
                e.0 += grad[r];
                e.1 += hess[r];
                e.2 += 1;
            }
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            let mut best: Option<SplitInfo> = None;
            for (b, &(g, h, c)) in hist.iter().enumerate().take(n_bins - 1) {
                gl += g;
                hl += h;
                nl += c;
                if nl < params.min_samples_leaf || n - nl < params.min_samples_leaf {
                    continue;
                }
                if c == 0 {
                    continue;
                }
                let gain = score(gl, hl, params.l2_lambda)
                    + score(g_tot - gl, h_tot - hl, params.l2_lambda)
                    - parent;
                if best.is_none_or(|s| gain > s.gain) {
                    best = Some(SplitInfo { feature: f, bin: b, gain });
                }
            }
            best
        })
        .collect();

    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<SplitInfo>, s| match acc {
            Some(a) if a.gain >= s.gain => Some(a),
            _ => Some(s),
        })
        .filter(|s| s.gain > 1e-12)
}

/// Grows one tree; leaf values are already scaled by the learning rate.
pub(crate) fn grow_tree(
    rows: Vec<usize>,
    bins: &[Vec<u8>],
    mapper: &BinMapper,
    grad: &[f64],
    hess: &[f64],
    params: &GrowParams,
) -> Tree {
    let leaf_of = |rows: &[usize]| {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]));
        leaf_value(g, h, params)
    };

    let mut nodes = vec![Node::Leaf { value: leaf_of(&rows) }];
    let best = best_split(&rows, bins, mapper, grad, hess, params);
    let mut open = vec![Candidate { node: 0, rows, best }];
    let mut n_leaves = 1;

    while n_leaves < params.max_leaves {
        // Highest gain first; ties go to the earliest created leaf.
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.best.map(|s| (i, s.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                Some((_, ag)) if ag >= g => acc,
                _ => Some((i, g)),
            });
        let Some((idx, _)) = pick else { break };
        let cand = open.swap_remove(idx);
        let split = cand.best.expect("picked candidates have a split");
        let col = &bins[split.feature];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            cand.rows.iter().partition(|&&r| col[r] as usize <= split.bin);

        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { value: leaf_of(&left_rows) });
        nodes.push(Node::Leaf { value: leaf_of(&right_rows) });
        nodes[cand.node] = Node::Split {
            feature: split.feature,
            threshold: mapper.threshold(split.feature, split.bin),
            left,
            right,
        };
        n_leaves += 1;

        for (node, rows) in [(left, left_rows), (right, right_rows)] {
            let best = best_split(&rows, bins, mapper, grad, hess, params);
            open.push(Candidate { node, rows, best });
        }
        // Keep creation order so tie-breaking is stable.
        open.sort_by_key(|c| c.node);
    }
    Tree { nodes }
}
