//! Regression trees for gradient boosting on a pre-binned design.
//!
//! Every design column is mapped once to the ranks of its distinct values, or
//! to at most `max_bins` quantile bins of them, so split search is a scan
//! over bin boundaries driven by per-node histograms. Trees grow best-first: the leaf whose best split
//! gives the largest weighted variance reduction is split next, until the
//! split budget is spent or no admissible split remains.

use crate::tabular::DesignMatrix;

/// Bin cap used when training propensity trees.
pub const TREE_MAX_BINS: usize = 256;

/// How a design column is histogrammed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnSlot {
    /// Own histogram over its distinct values.
    Single { group: usize },
    /// Indicator inside a mutually exclusive one-hot group.
    Indicator { group: usize, slot: usize },
}

/// Design columns replaced by the ranks of their distinct sorted values.
///
/// Consecutive 0/1 columns of the same covariate that are never 1 together
/// share one histogram keyed by which of them is set, so a row costs one
/// histogram update per covariate rather than one per indicator.
#[derive(Debug, Clone)]
pub struct BinnedDesign {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major bin indices, `bins[row * n_cols + col]`.
    pub bins: Vec<u32>,
    /// Same layout as `bins`, shifted by the column offset into a flattened
    /// per-column histogram.
    pub flat: Vec<u32>,
    /// Smallest value in each bin, per column. With exact binning this is
    /// the list of distinct sorted values.
    pub values: Vec<Vec<f64>>,
    /// Largest value in each bin, per column.
    pub upper: Vec<Vec<f64>>,
    /// Start of each column's block in a flattened per-column histogram.
    pub offsets: Vec<usize>,
    pub total_bins: usize,
    pub slots: Vec<ColumnSlot>,
    pub n_groups: usize,
    /// Row-major absolute histogram index per group, `group_bins[row * n_groups + g]`.
    pub group_bins: Vec<u32>,
    pub group_offsets: Vec<usize>,
    pub group_total_bins: usize,
}

fn is_indicator(values: &[f64]) -> bool {
    values.iter().all(|&v| v == 0.0 || v == 1.0)
}

impl BinnedDesign {
    /// One bin per distinct value.
    pub fn new(design: &DesignMatrix) -> Self {
        Self::with_max_bins(design, usize::MAX)
    }

    /// Columns with more than `max_bins` distinct values are cut into
    /// roughly equal-count bins that never split a run of equal values.
    pub fn with_max_bins(design: &DesignMatrix, max_bins: usize) -> Self {
        let max_bins = max_bins.max(2);
        let n_rows = design.n_rows;
        let n_cols = design.n_cols();
        let mut bins = vec![0u32; n_rows * n_cols];
        let mut values = Vec::with_capacity(n_cols);
        let mut upper = Vec::with_capacity(n_cols);
        let mut offsets = Vec::with_capacity(n_cols);
        let mut total_bins = 0;
        for (c, col) in design.columns.iter().enumerate() {
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            let mut distinct = sorted.clone();
            distinct.dedup();
            // Bin of each distinct value.
            let bin_of: Vec<u32> = if distinct.len() <= max_bins {
                (0..distinct.len() as u32).collect()
            } else {
                let mut out = Vec::with_capacity(distinct.len());
                let (mut below, mut id, mut last) = (0usize, 0u32, 0usize);
                for (k, v) in distinct.iter().enumerate() {
                    let q = below * max_bins / n_rows;
                    if k > 0 && q > last {
                        id += 1;
                        last = q;
                    }
                    out.push(id);
                    below += sorted[below..].iter().take_while(|x| x.total_cmp(v).is_eq()).count();
                }
                out
            };
            let nb = bin_of.last().map_or(0, |&b| b as usize + 1);
            let mut lo = vec![f64::INFINITY; nb];
            let mut hi = vec![f64::NEG_INFINITY; nb];
            for (v, &b) in distinct.iter().zip(&bin_of) {
                lo[b as usize] = lo[b as usize].min(*v);
                hi[b as usize] = hi[b as usize].max(*v);
            }
            for (r, x) in col.iter().enumerate() {
                let k = distinct
                    .binary_search_by(|v| v.total_cmp(x))
                    .expect("value present in its own column");
                bins[r * n_cols + c] = bin_of[k];
            }
            offsets.push(total_bins);
            total_bins += nb.max(1);
            values.push(lo);
            upper.push(hi);
        }
        let flat = bins
            .chunks(n_cols.max(1))
            .flat_map(|row| row.iter().zip(&offsets).map(|(&b, &o)| b + o as u32))
            .collect();

        // Group consecutive exclusive indicators of the same covariate.
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut set_count = vec![0u8; n_rows];
        for c in 0..n_cols {
            let label = &design.labels[c];
            let col = &design.columns[c];
            let joinable = label.level.is_some() && is_indicator(&values[c]);
            if joinable {
                if let Some(last) = groups.last_mut() {
                    let prev = *last.last().unwrap();
                    let same_cov = design.labels[prev].covariate == label.covariate
                        && design.labels[prev].level.is_some()
                        && is_indicator(&values[prev]);
                    if same_cov && col.iter().zip(&set_count).all(|(&x, &k)| x == 0.0 || k == 0) {
                        for (k, &x) in set_count.iter_mut().zip(col) {
                            *k += (x == 1.0) as u8;
                        }
                        last.push(c);
                        continue;
                    }
                }
            }
            set_count.iter_mut().zip(col).for_each(|(k, &x)| {
                *k = if joinable { (x == 1.0) as u8 } else { 0 };
            });
            groups.push(vec![c]);
        }

        let n_groups = groups.len();
        let mut slots = vec![ColumnSlot::Single { group: 0 }; n_cols];
        let mut group_offsets = Vec::with_capacity(n_groups);
        let mut group_total_bins = 0;
        let mut group_bins = vec![0u32; n_rows * n_groups];
        for (g, members) in groups.iter().enumerate() {
            group_offsets.push(group_total_bins);
            let c0 = members[0];
            let one_hot = design.labels[c0].level.is_some() && is_indicator(&values[c0]);
            if one_hot {
                for (j, &c) in members.iter().enumerate() {
                    slots[c] = ColumnSlot::Indicator { group: g, slot: j };
                }
                let none = members.len();
                for r in 0..n_rows {
                    let j = members
                        .iter()
                        .position(|&c| design.columns[c][r] == 1.0)
                        .unwrap_or(none);
                    group_bins[r * n_groups + g] = (group_total_bins + j) as u32;
                }
                group_total_bins += none + 1;
            } else {
                slots[c0] = ColumnSlot::Single { group: g };
                for r in 0..n_rows {
                    group_bins[r * n_groups + g] = (group_total_bins + bins[r * n_cols + c0] as usize) as u32;
                }
                group_total_bins += values[c0].len().max(1);
            }
        }

        BinnedDesign {
            n_rows,
            n_cols,
            bins,
            flat,
            values,
            upper,
            offsets,
            total_bins,
            slots,
            n_groups,
            group_bins,
            group_offsets,
            group_total_bins,
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u32] {
        &self.bins[r * self.n_cols..(r + 1) * self.n_cols]
    }

    #[inline]
    pub fn flat_row(&self, r: usize) -> &[u32] {
        &self.flat[r * self.n_cols..(r + 1) * self.n_cols]
    }

    #[inline]
    fn group_row(&self, r: usize) -> &[u32] {
        &self.group_bins[r * self.n_groups..(r + 1) * self.n_groups]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        column: usize,
        /// Rows with bin index `<= bin` go left (training data).
        bin: u32,
        /// Rows with value `<= threshold` go left (new data).
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    #[inline]
    pub fn predict_binned(&self, row: &[u32]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    column,
                    bin,
                    left,
                    right,
                    ..
                } => k = if row[*column] <= *bin { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    column,
                    threshold,
                    left,
                    right,
                    ..
                } => k = if row[*column] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], k: usize) -> usize {
            match &nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    column: usize,
    bin: u32,
    gain: f64,
}

/// Per-bin (sum of weights, sum of weighted residuals) over group
/// histograms, plus the node totals.
struct Hist {
    cells: Vec<[f64; 2]>,
    total: [f64; 2],
}

impl Hist {
    fn minus(&self, other: &Hist) -> Hist {
        Hist {
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(p, s)| [p[0] - s[0], p[1] - s[1]])
                .collect(),
            total: [self.total[0] - other.total[0], self.total[1] - other.total[1]],
        }
    }
}

struct OpenLeaf {
    node: usize,
    rows: Vec<u32>,
    hist: Hist,
    best: Option<SplitCandidate>,
}

/// Inputs to one tree fit. `residual` and `hessian` are per-row gradient
/// statistics; `weight` the (normalized) sample weights.
pub struct TreeProblem<'a> {
    pub design: &'a BinnedDesign,
    pub residual: &'a [f64],
    pub hessian: &'a [f64],
    pub weight: &'a [f64],
    pub max_splits: usize,
    pub min_node_weight: f64,
}

impl TreeProblem<'_> {
    fn histogram(&self, rows: &[u32]) -> Hist {
        let d = self.design;
        let mut cells = vec![[0.0f64; 2]; d.group_total_bins];
        let (mut tw, mut tg) = (0.0, 0.0);
        for &r in rows {
            let r = r as usize;
            let w = self.weight[r];
            let wr = w * self.residual[r];
            tw += w;
            tg += wr;
            for &b in d.group_row(r) {
                let cell = &mut cells[b as usize];
                cell[0] += w;
                cell[1] += wr;
            }
        }
        Hist {
            cells,
            total: [tw, tg],
        }
    }

    fn consider(&self, best: &mut Option<SplitCandidate>, column: usize, bin: u32, left: [f64; 2], total: [f64; 2]) {
        let [tw, tg] = total;
        let [lw, lg] = left;
        let rw = tw - lw;
        if lw < self.min_node_weight || rw < self.min_node_weight || lw <= 0.0 || rw <= 0.0 {
            return;
        }
        let parent = tg * tg / tw;
        let rg = tg - lg;
        let gain = lg * lg / lw + rg * rg / rw - parent;
        if gain > 1e-12 * parent + 1e-16 && best.is_none_or(|s| gain > s.gain) {
            *best = Some(SplitCandidate { column, bin, gain });
        }
    }

    fn best_split(&self, hist: &Hist) -> Option<SplitCandidate> {
        let d = self.design;
        let mut best: Option<SplitCandidate> = None;
        if hist.total[0] <= 0.0 {
            return None;
        }
        for c in 0..d.n_cols {
            let nb = d.values[c].len();
            if nb < 2 {
                continue;
            }
            match d.slots[c] {
                ColumnSlot::Indicator { group, slot } => {
                    let one = hist.cells[d.group_offsets[group] + slot];
                    let zero = [hist.total[0] - one[0], hist.total[1] - one[1]];
                    self.consider(&mut best, c, 0, zero, hist.total);
                }
                ColumnSlot::Single { group } => {
                    let off = d.group_offsets[group];
                    let block = &hist.cells[off..off + nb];
                    let mut left = [0.0, 0.0];
                    for (b, cell) in block.iter().enumerate().take(nb - 1) {
                        left[0] += cell[0];
                        left[1] += cell[1];
                        self.consider(&mut best, c, b as u32, left, hist.total);
                    }
                }
            }
        }
        best
    }

    fn leaf_value(&self, rows: &[u32]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &r in rows {
            let r = r as usize;
            num += self.weight[r] * self.residual[r];
            den += self.weight[r] * self.hessian[r];
        }
        if den > 1e-300 {
            num / den
        } else {
            0.0
        }
    }

    /// Grows one tree on `rows`. Leaf values are Newton steps
    /// `sum(w * r) / sum(w * h)` over the leaf's rows.
    pub fn grow(&self, rows: Vec<u32>) -> Tree {
        let hist = self.histogram(&rows);
        let best = self.best_split(&hist);
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut open = vec![OpenLeaf {
            node: 0,
            rows,
            hist,
            best,
        }];

        for done in 0..self.max_splits {
            // Largest gain wins; on equal gain the earliest opened leaf.
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.best.map(|b| (i, b.gain)))
                .fold(None::<(usize, f64)>, |acc, (i, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((i, g)),
                });
            let Some((idx, _)) = pick else { break };
            let leaf = open.remove(idx);
            let split = leaf.best.expect("picked leaf has a split");
            let d = self.design;
            let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf
                .rows
                .iter()
                .partition(|&&r| d.bins[r as usize * d.n_cols + split.column] <= split.bin);

            let (small, large_is_left) = if left_rows.len() <= right_rows.len() {
                (&left_rows, false)
            } else {
                (&right_rows, true)
            };
            let small_hist = self.histogram(small);
            let large_hist = leaf.hist.minus(&small_hist);
            let (left_hist, right_hist) = if large_is_left {
                (large_hist, small_hist)
            } else {
                (small_hist, large_hist)
            };

            let lo = d.upper[split.column][split.bin as usize];
            let hi = d.values[split.column][split.bin as usize + 1];
            let mid = lo + (hi - lo) / 2.0;
            let threshold = if mid < hi { mid } else { lo };

            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[leaf.node] = Node::Split {
                column: split.column,
                bin: split.bin,
                threshold,
                left,
                right: left + 1,
            };
            let more = done + 1 < self.max_splits;
            for (node, rows, hist) in [(left, left_rows, left_hist), (left + 1, right_rows, right_hist)] {
                let best = if more { self.best_split(&hist) } else { None };
                open.push(OpenLeaf {
                    node,
                    rows,
                    hist,
                    best,
                });
            }
        }

        for leaf in open {
            nodes[leaf.node] = Node::Leaf {
                value: self.leaf_value(&leaf.rows),
            };
        }
        Tree { nodes }
    }
}
