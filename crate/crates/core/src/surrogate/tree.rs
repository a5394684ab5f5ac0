use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One node of a regression tree; trees are flat arrays with the root at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    /// Whether the tree is a single leaf.
    pub fn is_stump(&self) -> bool {
        self.nodes.len() <= 1
    }
}

/// Score of a node holding gradient sum `g` over `h` rows.
pub(crate) fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

pub(crate) fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub gain: f64,
    pub feature: usize,
    pub threshold: f64,
}

impl Candidate {
    /// Larger gain wins; ties go to the lower feature index, then threshold.
    fn beats(&self, other: &Candidate) -> bool {
        match self.gain.total_cmp(&other.gain) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => self
                .feature
                .cmp(&other.feature)
                .then(self.threshold.total_cmp(&other.threshold))
                .is_lt(),
        }
    }
}

pub(crate) fn best_of(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if b.beats(&a) { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    }
}

/// Best split of one feature given the node's rows in ascending feature order.
pub(crate) fn scan_feature(
    x: &[Vec<f64>],
    r: &[f64],
    order: &[u32],
    feature: usize,
    g_total: f64,
    lambda: f64,
) -> Option<Candidate> {
    let h_total = order.len() as f64;
    let mut gl = 0.0;
    let mut best: Option<Candidate> = None;
    for w in 0..order.len().saturating_sub(1) {
        let i = order[w] as usize;
        gl += r[i];
        let lo = x[i][feature];
        let hi = x[order[w + 1] as usize][feature];
        if !(lo < hi) {
            continue;
        }
        let hl = (w + 1) as f64;
        let gain = split_gain(gl, hl, g_total - gl, h_total - hl, lambda);
        let mid = lo + (hi - lo) / 2.0;
        let threshold = if mid > lo && mid <= hi { mid } else { hi };
        best = best_of(
            best,
            Some(Candidate {
                gain,
                feature,
                threshold,
            }),
        );
    }
    best
}

pub(crate) struct Builder<'a> {
    pub x: &'a [Vec<f64>],
    pub r: &'a [f64],
    pub max_depth: usize,
    pub lambda: f64,
    pub min_gain: f64,
}

const PARALLEL_MIN_ROWS: usize = 512;

impl Builder<'_> {
    /// Grow a tree over rows given by per-feature sorted index lists and the
    /// same rows in ascending index order.
    pub fn grow(&self, sorted: Vec<Vec<u32>>, members: Vec<u32>) -> Tree {
        let mut tree = Tree::default();
        self.node(&mut tree, sorted, members, 0);
        tree
    }

    fn node(
        &self,
        tree: &mut Tree,
        sorted: Vec<Vec<u32>>,
        members: Vec<u32>,
        depth: usize,
    ) -> usize {
        let id = tree.nodes.len();
        let g: f64 = members.iter().map(|&i| self.r[i as usize]).sum();
        let h = members.len() as f64;
        tree.nodes.push(Node::Leaf {
            value: g / (h + self.lambda),
        });
        if depth >= self.max_depth || members.len() < 2 {
            return id;
        }
        let scan = |f: usize| scan_feature(self.x, self.r, &sorted[f], f, g, self.lambda);
        let best = if members.len() >= PARALLEL_MIN_ROWS {
            (0..sorted.len())
                .into_par_iter()
                .map(scan)
                .reduce(|| None, best_of)
        } else {
            (0..sorted.len()).map(scan).fold(None, best_of)
        };
        let Some(best) = best else { return id };
        if !(best.gain > self.min_gain) {
            return id;
        }
        let goes_left = |i: &u32| self.x[*i as usize][best.feature] < best.threshold;
        let (mut sl, mut sr) = (
            Vec::with_capacity(sorted.len()),
            Vec::with_capacity(sorted.len()),
        );
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(goes_left);
            sl.push(l);
            sr.push(r);
        }
        let (ml, mr): (Vec<u32>, Vec<u32>) = members.into_iter().partition(goes_left);
        let left = self.node(tree, sl, ml, depth + 1);
        let right = self.node(tree, sr, mr, depth + 1);
        tree.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            gain: best.gain,
        };
        id
    }
}
