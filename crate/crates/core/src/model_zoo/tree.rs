//! CART with Gini impurity for classification and squared-error reduction
//! for regression. Nodes live in a flat arena; child indices point into it.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Leaf {
    /// Laplace-smoothed class frequencies.
    Probs(Vec<f64>),
    Gaussian {
        mean: f64,
        var: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(Leaf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub laplace_alpha: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 6, min_leaf: 5, laplace_alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Training targets borrowed from the design matrix.
#[derive(Clone, Copy)]
pub enum TreeTarget<'a> {
    Classes { labels: &'a [usize], n_classes: usize },
    Real(&'a [f64]),
}

struct Builder<'a> {
    data: &'a [f64],
    d: usize,
    target: TreeTarget<'a>,
    params: TreeParams,
    nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(&self, x: &[f64]) -> &Leaf {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf(l) => return l,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf(_) => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn fit(data: &[f64], n_rows: usize, d: usize, target: TreeTarget, params: TreeParams) -> Tree {
        let mut b = Builder { data, d, target, params, nodes: Vec::new() };
        let rows: Vec<usize> = (0..n_rows).collect();
        b.grow(rows, 0);
        Tree { nodes: b.nodes }
    }

    /// Raises every regression leaf variance to at least `floor`.
    pub fn floor_variance(&mut self, floor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf(Leaf::Gaussian { var, .. }) = n {
                *var = var.max(floor);
            }
        }
    }
}

impl Builder<'_> {
    fn x(&self, row: usize, j: usize) -> f64 {
        self.data[row * self.d + j]
    }

    fn make_leaf(&self, rows: &[usize]) -> Leaf {
        match self.target {
            TreeTarget::Classes { labels, n_classes } => {
                let mut counts = vec![0.0; n_classes];
                for &r in rows {
                    counts[labels[r]] += 1.0;
                }
                let a = self.params.laplace_alpha;
                let denom = rows.len() as f64 + a * n_classes as f64;
                Leaf::Probs(counts.iter().map(|c| (c + a) / denom).collect())
            }
            TreeTarget::Real(y) => {
                let n = rows.len() as f64;
                let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n;
                let var = rows.iter().map(|&r| (y[r] - mean).powi(2)).sum::<f64>() / n;
                Leaf::Gaussian { mean, var }
            }
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self.target {
            TreeTarget::Classes { labels, .. } => rows.iter().all(|&r| labels[r] == labels[rows[0]]),
            TreeTarget::Real(y) => rows.iter().all(|&r| y[r] == y[rows[0]]),
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.make_leaf(&rows)));
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf.max(1) || self.is_pure(&rows) {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x(i, feature) <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    /// Lowest weighted child impurity over all features and midpoints.
    /// Ties keep the first candidate in (feature, threshold) order.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for j in 0..self.d {
            order.sort_by(|&a, &b| self.x(a, j).total_cmp(&self.x(b, j)));
            let mut scan = Scan::new(self.target, &order);
            for k in 1..n {
                scan.move_left(order[k - 1]);
                let (lo, hi) = (self.x(order[k - 1], j), self.x(order[k], j));
                if lo == hi || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let cost = scan.cost(k, n);
                if best.is_none_or(|(c, _, _)| cost < c) {
                    best = Some((cost, j, lo + (hi - lo) / 2.0));
                }
            }
        }
        best.map(|(_, j, t)| (j, t))
    }
}

/// Running sufficient statistics while sweeping a sorted column.
enum Scan<'a> {
    Gini { labels: &'a [usize], left: Vec<f64>, right: Vec<f64> },
    Sse { y: &'a [f64], ls: f64, lss: f64, rs: f64, rss: f64 },
}

impl<'a> Scan<'a> {
    fn new(target: TreeTarget<'a>, rows: &[usize]) -> Scan<'a> {
        match target {
            TreeTarget::Classes { labels, n_classes } => {
                let mut right = vec![0.0; n_classes];
                for &r in rows {
                    right[labels[r]] += 1.0;
                }
                Scan::Gini { labels, left: vec![0.0; n_classes], right }
            }
            TreeTarget::Real(y) => {
                let rs = rows.iter().map(|&r| y[r]).sum();
                let rss = rows.iter().map(|&r| y[r] * y[r]).sum();
                Scan::Sse { y, ls: 0.0, lss: 0.0, rs, rss }
            }
        }
    }

    fn move_left(&mut self, row: usize) {
        match self {
            Scan::Gini { labels, left, right } => {
                left[labels[row]] += 1.0;
                right[labels[row]] -= 1.0;
            }
            Scan::Sse { y, ls, lss, rs, rss } => {
                let v = y[row];
                *ls += v;
                *lss += v * v;
                *rs -= v;
                *rss -= v * v;
            }
        }
    }

    /// Weighted impurity of the split with `k` rows on the left.
    fn cost(&self, k: usize, n: usize) -> f64 {
        let (nl, nr) = (k as f64, (n - k) as f64);
        match self {
            Scan::Gini { left, right, .. } => {
                let gini = |c: &[f64], m: f64| 1.0 - c.iter().map(|v| (v / m) * (v / m)).sum::<f64>();
                (nl * gini(left, nl) + nr * gini(right, nr)) / n as f64
            }
            Scan::Sse { ls, lss, rs, rss, .. } => (lss - ls * ls / nl) + (rss - rs * rs / nr),
        }
    }
}
