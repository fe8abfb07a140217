//! Nested-dissection orderings producing a supernode (separator) tree.
//!
//! Every tree node owns a set of variables that is eliminated as one dense
//! front. Children are eliminated before parents, and variables of
//! different subtrees must never be coupled in the matrix; the multifrontal
//! symbolic phase verifies this.

use crate::grid::{AugmentedGrid, BoxPartition, TimeGrid};
use crate::linalg::sparse::CscMatrix;

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub vars: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Nodes stored in postorder (children before parents); roots have no parent.
#[derive(Clone, Debug, Default)]
pub struct SupernodeTree {
    pub nodes: Vec<TreeNode>,
}

impl SupernodeTree {
    fn push(&mut self, vars: Vec<usize>, children: Vec<usize>) -> usize {
        let id = self.nodes.len();
        for &c in &children {
            self.nodes[c].parent = Some(id);
        }
        self.nodes.push(TreeNode { vars, parent: None, children });
        id
    }

    /// One dense front holding every variable.
    pub fn single(n: usize) -> Self {
        let mut t = Self::default();
        t.push((0..n).collect(), Vec::new());
        t
    }

    pub fn n_vars(&self) -> usize {
        self.nodes.iter().map(|n| n.vars.len()).sum()
    }

    /// Elimination order (postorder of the tree).
    pub fn permutation(&self) -> Vec<usize> {
        self.nodes.iter().flat_map(|n| n.vars.iter().copied()).collect()
    }
}

/// Variables arranged on a structured grid of cells, several variables per
/// cell allowed. Cells are numbered with axis 0 fastest.
#[derive(Clone, Debug)]
pub struct GridLayout {
    pub extents: Vec<usize>,
    pub periodic: Vec<bool>,
    pub cuttable: Vec<bool>,
    pub cell_of_var: Vec<usize>,
}

impl GridLayout {
    pub fn for_partition(part: &BoxPartition) -> Self {
        let n = part.n_boxes();
        Self {
            extents: part.counts().to_vec(),
            periodic: part.domain().periodic.clone(),
            cuttable: vec![true; part.dim()],
            cell_of_var: (0..n).collect(),
        }
    }

    /// Ulam grids treat time as one more (periodic) axis; collocation grids
    /// couple all nodes in time, so each box carries `M` variables.
    pub fn for_augmented(grid: &AugmentedGrid) -> Self {
        let p = &grid.partition;
        let nb = p.n_boxes();
        match grid.time {
            TimeGrid::Ulam { n_t } => {
                let mut extents = p.counts().to_vec();
                extents.push(n_t);
                let mut periodic = p.domain().periodic.clone();
                periodic.push(true);
                let cuttable = vec![true; extents.len()];
                Self { extents, periodic, cuttable, cell_of_var: (0..nb * n_t).collect() }
            }
            TimeGrid::Collocation { m } => Self {
                extents: p.counts().to_vec(),
                periodic: p.domain().periodic.clone(),
                cuttable: vec![true; p.dim()],
                cell_of_var: (0..nb * m).map(|v| v % nb).collect(),
            },
        }
    }

    fn n_cells(&self) -> usize {
        self.extents.iter().product()
    }
}

#[derive(Clone, Copy, Debug)]
struct Span {
    start: usize,
    len: usize,
    wraps: bool,
}

/// Geometric nested dissection: recursively cut the axis with the smallest
/// separator until subdomains hold at most `leaf_size` variables.
pub fn nested_dissection(layout: &GridLayout, leaf_size: usize) -> SupernodeTree {
    let ncell = layout.n_cells();
    let mut vars_of_cell: Vec<Vec<usize>> = vec![Vec::new(); ncell];
    for (v, &c) in layout.cell_of_var.iter().enumerate() {
        vars_of_cell[c].push(v);
    }
    let per_cell = (layout.cell_of_var.len() as f64 / ncell.max(1) as f64).max(1.0);
    let mut strides = vec![1usize; layout.extents.len()];
    for k in 1..strides.len() {
        strides[k] = strides[k - 1] * layout.extents[k - 1];
    }
    let region: Vec<Span> =
        (0..layout.extents.len()).map(|k| Span { start: 0, len: layout.extents[k], wraps: layout.periodic[k] }).collect();
    let mut ctx = GeoCtx { layout, vars_of_cell: &vars_of_cell, strides, per_cell, leaf: leaf_size.max(1), tree: SupernodeTree::default() };
    ctx.recurse(region);
    ctx.tree
}

struct GeoCtx<'a> {
    layout: &'a GridLayout,
    vars_of_cell: &'a [Vec<usize>],
    strides: Vec<usize>,
    per_cell: f64,
    leaf: usize,
    tree: SupernodeTree,
}

impl GeoCtx<'_> {
    fn collect_vars(&self, region: &[Span]) -> Vec<usize> {
        let mut out = Vec::new();
        let d = region.len();
        if region.iter().any(|s| s.len == 0) {
            return out;
        }
        let mut idx = vec![0usize; d];
        loop {
            let mut cell = 0;
            for k in 0..d {
                let c = (region[k].start + idx[k]) % self.layout.extents[k];
                cell += c * self.strides[k];
            }
            out.extend_from_slice(&self.vars_of_cell[cell]);
            let mut k = 0;
            loop {
                if k == d {
                    return out;
                }
                idx[k] += 1;
                if idx[k] < region[k].len {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    fn recurse(&mut self, region: Vec<Span>) -> Option<usize> {
        let cells: usize = region.iter().map(|s| s.len).product();
        if cells == 0 {
            return None;
        }
        let nvars = cells as f64 * self.per_cell;
        let mut best: Option<(usize, usize)> = None;
        if nvars > self.leaf as f64 {
            for (k, s) in region.iter().enumerate() {
                if !self.layout.cuttable[k] {
                    continue;
                }
                let min_len = if s.wraps { 4 } else { 3 };
                if s.len < min_len {
                    continue;
                }
                let sep = cells / s.len * if s.wraps { 2 } else { 1 };
                let better = match best {
                    None => true,
                    Some((bk, bsep)) => sep < bsep || (sep == bsep && s.len > region[bk].len),
                };
                if better {
                    best = Some((k, sep));
                }
            }
        }
        let Some((k, _)) = best else {
            let vars = self.collect_vars(&region);
            return Some(self.tree.push(vars, Vec::new()));
        };
        let s = region[k];
        let mut seps = Vec::new();
        let mut parts = Vec::new();
        if s.wraps {
            let half = s.len / 2;
            seps.push(Span { start: s.start, len: 1, wraps: false });
            seps.push(Span { start: s.start + half, len: 1, wraps: false });
            parts.push(Span { start: s.start + 1, len: half - 1, wraps: false });
            parts.push(Span { start: s.start + half + 1, len: s.len - half - 1, wraps: false });
        } else {
            let mid = s.len / 2;
            seps.push(Span { start: s.start + mid, len: 1, wraps: false });
            parts.push(Span { start: s.start, len: mid, wraps: false });
            parts.push(Span { start: s.start + mid + 1, len: s.len - mid - 1, wraps: false });
        }
        let mut children = Vec::new();
        for p in parts {
            let mut r = region.clone();
            r[k] = p;
            if let Some(c) = self.recurse(r) {
                children.push(c);
            }
        }
        let mut vars = Vec::new();
        for sp in seps {
            let mut r = region.clone();
            r[k] = sp;
            vars.extend(self.collect_vars(&r));
        }
        Some(self.tree.push(vars, children))
    }
}

/// Symmetric adjacency of `A + A^T` without the diagonal.
pub fn symmetric_adjacency(a: &CscMatrix) -> (Vec<usize>, Vec<usize>) {
    let n = a.nrows();
    let at = a.transpose();
    let mut ptr = vec![0usize; n + 1];
    let mut idx = Vec::with_capacity(2 * a.nnz());
    let mut mark = vec![usize::MAX; n];
    for j in 0..n {
        mark[j] = j;
        for (i, _) in a.col(j).chain(at.col(j)) {
            if mark[i] != j {
                mark[i] = j;
                idx.push(i);
            }
        }
        ptr[j + 1] = idx.len();
    }
    (ptr, idx)
}

/// Nested dissection from breadth-first level structures, for matrices
/// without geometric information.
pub fn graph_nested_dissection(a: &CscMatrix, leaf_size: usize) -> SupernodeTree {
    let n = a.nrows();
    let (ptr, adj) = symmetric_adjacency(a);
    let mut g = GraphCtx { ptr, adj, in_set: vec![u32::MAX; n], level: vec![u32::MAX; n], stamp: 0, leaf: leaf_size.max(1), tree: SupernodeTree::default() };
    let all: Vec<usize> = (0..n).collect();
    g.dissect(all);
    g.tree
}

struct GraphCtx {
    ptr: Vec<usize>,
    adj: Vec<usize>,
    in_set: Vec<u32>,
    level: Vec<u32>,
    stamp: u32,
    leaf: usize,
    tree: SupernodeTree,
}

impl GraphCtx {
    fn mark(&mut self, set: &[usize]) -> u32 {
        self.stamp += 1;
        for &v in set {
            self.in_set[v] = self.stamp;
        }
        self.stamp
    }

    /// BFS inside the marked set; returns vertices in visit order and their levels.
    fn bfs(&mut self, root: usize, stamp: u32) -> (Vec<usize>, Vec<u32>) {
        let mut order = vec![root];
        let mut lev = vec![0u32];
        self.level[root] = stamp;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            let l = lev[head];
            head += 1;
            for &w in &self.adj[self.ptr[v]..self.ptr[v + 1]] {
                if self.in_set[w] == stamp && self.level[w] != stamp {
                    self.level[w] = stamp;
                    order.push(w);
                    lev.push(l + 1);
                }
            }
        }
        (order, lev)
    }

    /// Returns the roots of the subtrees created for `set`.
    fn dissect(&mut self, set: Vec<usize>) -> Vec<usize> {
        if set.is_empty() {
            return Vec::new();
        }
        if set.len() <= self.leaf {
            return vec![self.tree.push(set, Vec::new())];
        }
        // split into connected components first
        let stamp = self.mark(&set);
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for &v in &set {
            if self.level[v] != stamp {
                let (order, _) = self.bfs(v, stamp);
                comps.push(order);
            }
        }
        if comps.len() > 1 {
            let mut roots = Vec::new();
            // group small components into leaves to keep the forest shallow
            let mut pending: Vec<usize> = Vec::new();
            for c in comps {
                if c.len() <= self.leaf {
                    if pending.len() + c.len() > self.leaf && !pending.is_empty() {
                        roots.push(self.tree.push(std::mem::take(&mut pending), Vec::new()));
                    }
                    pending.extend(c);
                } else {
                    roots.extend(self.dissect(c));
                }
            }
            if !pending.is_empty() {
                roots.push(self.tree.push(pending, Vec::new()));
            }
            return roots;
        }
        let comp = comps.pop().unwrap();
        // pseudo-peripheral start: farthest vertex from an arbitrary one
        let stamp = self.mark(&comp);
        let (order, _) = self.bfs(comp[0], stamp);
        let far = *order.last().unwrap();
        let stamp = self.mark(&comp);
        let (order, lev) = self.bfs(far, stamp);
        let depth = *lev.last().unwrap() as usize + 1;
        if depth < 3 {
            return vec![self.tree.push(comp, Vec::new())];
        }
        let mut counts = vec![0usize; depth];
        for &l in &lev {
            counts[l as usize] += 1;
        }
        let half = comp.len() / 2;
        let mut acc = 0;
        let mut cut = 1;
        for (l, &c) in counts.iter().enumerate() {
            acc += c;
            if acc >= half {
                cut = l.clamp(1, depth - 2);
                break;
            }
        }
        let (mut a, mut b, mut sep) = (Vec::new(), Vec::new(), Vec::new());
        for (v, l) in order.into_iter().zip(lev) {
            match (l as usize).cmp(&cut) {
                std::cmp::Ordering::Less => a.push(v),
                std::cmp::Ordering::Equal => sep.push(v),
                std::cmp::Ordering::Greater => b.push(v),
            }
        }
        let mut children = self.dissect(a);
        children.extend(self.dissect(b));
        vec![self.tree.push(sep, children)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Domain;

    fn check_partition(t: &SupernodeTree, n: usize) {
        let mut p = t.permutation();
        p.sort_unstable();
        assert_eq!(p, (0..n).collect::<Vec<_>>());
        for (i, node) in t.nodes.iter().enumerate() {
            for &c in &node.children {
                assert!(c < i);
                assert_eq!(t.nodes[c].parent, Some(i));
            }
        }
    }

    #[test]
    fn geometric_tree_covers_all_vars() {
        let d = Domain::new(vec![0.0, 0.0], vec![2.0, 1.0], vec![true, false]).unwrap();
        let p = BoxPartition::new(d, vec![17, 9]).unwrap();
        for grid in [AugmentedGrid::ulam(p.clone(), 5, 1.0).unwrap(), AugmentedGrid::collocation(p.clone(), 3, 1.0).unwrap()] {
            let layout = GridLayout::for_augmented(&grid);
            let t = nested_dissection(&layout, 20);
            check_partition(&t, grid.len());
            assert!(t.nodes.len() > 3);
        }
    }

    #[test]
    fn graph_tree_covers_all_vars() {
        // path graph plus isolated vertices
        let mut trip = Vec::new();
        for i in 0..99 {
            trip.push((i, i + 1, 1.0));
        }
        for i in 0..120 {
            trip.push((i, i, 1.0));
        }
        let a = CscMatrix::from_triplets(120, 120, &trip);
        let t = graph_nested_dissection(&a, 8);
        check_partition(&t, 120);
    }
}
