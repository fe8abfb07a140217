//! Multifrontal sparse LU for `A - sigma I` over a supernode tree.
//!
//! Each tree node is eliminated as one dense front: the node's own variables
//! are fully summed, the remaining rows/columns (its update set) form a
//! contribution block passed to the parent. Pivoting is partial and restricted
//! to the fully summed rows of each front. Dense kernels come from faer.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::lu::partial_pivoting::factor::{lu_in_place, lu_in_place_scratch};
use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_unit_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Accum, Mat, MatMut, Par};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::ordering::{graph_nested_dissection, nested_dissection, GridLayout, SupernodeTree};
use crate::linalg::sparse::CscMatrix;

/// Scalars the factorization is generic over (`f64` and `Complex64`).
pub trait Scalar:
    faer::traits::ComplexField
    + Copy
    + Send
    + Sync
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn modulus(self) -> f64;
    fn zero_val() -> Self;
    fn re_im(self) -> (f64, f64);
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn zero_val() -> Self {
        0.0
    }
    fn re_im(self) -> (f64, f64) {
        (self, 0.0)
    }
}

impl Scalar for Complex64 {
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn zero_val() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn re_im(self) -> (f64, f64) {
        (self.re, self.im)
    }
}

/// Pivots below this fraction of the matrix scale are treated as zero.
const PIVOT_TOL: f64 = 1e-13;

/// Structure of the factorization: tree, elimination positions, update sets.
#[derive(Clone, Debug)]
pub struct Symbolic {
    n: usize,
    tree: SupernodeTree,
    update: Vec<Vec<usize>>,
    factor_entries: usize,
    flops: f64,
    max_front: usize,
}

impl Symbolic {
    /// Symbolic analysis of the pattern of `A + A^T` for the given tree.
    pub fn analyze(a: &CscMatrix, tree: SupernodeTree) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
        }
        if tree.n_vars() != n {
            return Err(Error::Degenerate(format!("ordering covers {} of {n} variables", tree.n_vars())));
        }
        let at = a.transpose();
        let nn = tree.nodes.len();
        let mut node_of = vec![usize::MAX; n];
        let mut pos = vec![0usize; n];
        let mut end = vec![0usize; nn];
        let mut p = 0;
        for (k, node) in tree.nodes.iter().enumerate() {
            for &v in &node.vars {
                if node_of[v] != usize::MAX {
                    return Err(Error::Degenerate(format!("variable {v} appears twice in the ordering")));
                }
                node_of[v] = k;
                pos[v] = p;
                p += 1;
            }
            end[k] = p;
        }
        // first descendant in postorder: descendants of w are [first[w], w)
        let mut first = (0..nn).collect::<Vec<_>>();
        for k in 0..nn {
            if let Some(par) = tree.nodes[k].parent {
                first[par] = first[par].min(first[k]);
            }
        }
        let mut update: Vec<Vec<usize>> = vec![Vec::new(); nn];
        let mut mark = vec![usize::MAX; n];
        let (mut entries, mut flops, mut max_front) = (0usize, 0.0f64, 0usize);
        for k in 0..nn {
            let node = &tree.nodes[k];
            let mut u: Vec<usize> = Vec::new();
            for &c in &node.children {
                for &v in &update[c] {
                    if pos[v] >= end[k] && mark[v] != k {
                        mark[v] = k;
                        u.push(v);
                    }
                }
            }
            for &j in &node.vars {
                for (i, _) in a.col(j).chain(at.col(j)) {
                    if pos[i] >= end[k] && mark[i] != k {
                        mark[i] = k;
                        u.push(i);
                    }
                }
            }
            for &v in &u {
                let w = node_of[v];
                if !(first[w] <= k && k < w) {
                    return Err(Error::Degenerate("ordering couples independent subtrees".into()));
                }
            }
            u.sort_unstable_by_key(|&v| pos[v]);
            let s = node.vars.len() as f64;
            let uu = u.len() as f64;
            entries += node.vars.len() * (node.vars.len() + 2 * u.len());
            flops += 2.0 / 3.0 * s * s * s + 2.0 * s * s * uu + 2.0 * s * uu * uu;
            max_front = max_front.max(node.vars.len() + u.len());
            update[k] = u;
        }
        Ok(Self { n, tree, update, factor_entries: entries, flops, max_front })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn factor_entries(&self) -> usize {
        self.factor_entries
    }

    pub fn flops(&self) -> f64 {
        self.flops
    }

    pub fn max_front(&self) -> usize {
        self.max_front
    }

    pub fn tree(&self) -> &SupernodeTree {
        &self.tree
    }
}

/// Picks an ordering: geometric nested dissection when a layout is known,
/// level-set dissection otherwise (dense for tiny systems).
pub fn analyze(a: &CscMatrix, layout: Option<&GridLayout>) -> Result<Symbolic> {
    let n = a.nrows();
    if n <= 64 {
        return Symbolic::analyze(a, SupernodeTree::single(n));
    }
    if let Some(l) = layout {
        if l.cell_of_var.len() == n {
            match Symbolic::analyze(a, nested_dissection(l, 96)) {
                Ok(s) => return Ok(s),
                Err(e) => log::debug!("geometric ordering rejected ({e}); using graph ordering"),
            }
        }
    }
    Symbolic::analyze(a, graph_nested_dissection(a, 64))
}

struct NodeFactor<T> {
    lu: Mat<T>,
    l21: Mat<T>,
    u12: Mat<T>,
    /// Row `i` of the permuted front is row `perm[i]` of the original.
    perm: Vec<usize>,
}

/// Numeric LU factors of `A - sigma I`.
pub struct Factorization<T: Scalar> {
    sym: Symbolic,
    nodes: Vec<NodeFactor<T>>,
    shift: T,
}

fn par_mode() -> Par {
    let t = rayon::current_num_threads();
    if t > 1 {
        Par::rayon(t)
    } else {
        Par::Seq
    }
}

impl<T: Scalar> Factorization<T> {
    pub fn factor(a: &CscMatrix, sym: Symbolic, shift: T) -> Result<Self> {
        let n = sym.n;
        if a.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.nrows() });
        }
        let at = a.transpose();
        let par = par_mode();
        let scale = a.max_abs().max(shift.modulus()).max(f64::MIN_POSITIVE);
        let mut loc = vec![usize::MAX; n];
        let mut stack: Vec<Mat<T>> = Vec::new();
        let mut nodes = Vec::with_capacity(sym.tree.nodes.len());
        // elimination position bounds per node, to route entries
        let mut node_end = Vec::with_capacity(sym.tree.nodes.len());
        let mut pos = vec![0usize; n];
        {
            let mut p = 0;
            for node in &sym.tree.nodes {
                for &v in &node.vars {
                    pos[v] = p;
                    p += 1;
                }
                node_end.push(p);
            }
        }
        for (k, node) in sym.tree.nodes.iter().enumerate() {
            let s = node.vars.len();
            let upd = &sym.update[k];
            let r = s + upd.len();
            for (i, &v) in node.vars.iter().chain(upd.iter()).enumerate() {
                loc[v] = i;
            }
            let start = node_end[k] - s;
            let mut front = Mat::<T>::zeros(r, r);
            for (jj, &j) in node.vars.iter().enumerate() {
                for (i, v) in a.col(j) {
                    if pos[i] >= start {
                        let li = loc[i];
                        front[(li, jj)] += T::from_f64(v);
                    }
                }
                for (jcol, v) in at.col(j) {
                    // row j of A: entries (j, jcol) with jcol in the update set
                    if pos[jcol] >= node_end[k] {
                        let lj = loc[jcol];
                        front[(jj, lj)] += T::from_f64(v);
                    }
                }
                front[(jj, jj)] -= shift;
            }
            // extend-add children contributions (top of the stack, in order)
            let nc = node.children.len();
            let cbs: Vec<Mat<T>> = stack.drain(stack.len() - nc..).collect();
            for (cb, &c) in cbs.iter().zip(&node.children) {
                let map: Vec<usize> = sym.update[c].iter().map(|&v| loc[v]).collect();
                for (jj, &lj) in map.iter().enumerate() {
                    for (ii, &li) in map.iter().enumerate() {
                        front[(li, lj)] += cb[(ii, jj)];
                    }
                }
            }
            drop(cbs);
            let (nf, cb) = partial_factor(front, s, par, scale).map_err(|e| match e {
                Error::SingularShift { .. } => {
                    let (re, im) = shift.re_im();
                    Error::SingularShift { re, im }
                }
                other => other,
            })?;
            if let Some(cb) = cb {
                stack.push(cb);
            }
            nodes.push(nf);
            for &v in node.vars.iter().chain(upd.iter()) {
                loc[v] = usize::MAX;
            }
        }
        Ok(Self { sym, nodes, shift })
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    pub fn n(&self) -> usize {
        self.sym.n
    }

    pub fn symbolic(&self) -> &Symbolic {
        &self.sym
    }

    /// Overwrites the columns of `b` with `(A - sigma I)^{-1} b`.
    pub fn solve_in_place(&self, mut b: MatMut<'_, T>) {
        let k = b.ncols();
        let par = par_mode();
        for (idx, (node, f)) in self.sym.tree.nodes.iter().zip(&self.nodes).enumerate() {
            let s = node.vars.len();
            let upd = &self.sym.update[idx];
            let mut y = Mat::<T>::zeros(s, k);
            for c in 0..k {
                for i in 0..s {
                    y[(i, c)] = b[(node.vars[f.perm[i]], c)];
                }
            }
            solve_unit_lower_triangular_in_place(f.lu.as_ref(), y.as_mut(), par);
            if !upd.is_empty() {
                let mut t = Mat::<T>::zeros(upd.len(), k);
                matmul(t.as_mut(), Accum::Replace, f.l21.as_ref(), y.as_ref(), T::from_f64(1.0), par);
                for c in 0..k {
                    for (i, &v) in upd.iter().enumerate() {
                        b[(v, c)] -= t[(i, c)];
                    }
                }
            }
            for c in 0..k {
                for i in 0..s {
                    b[(node.vars[i], c)] = y[(i, c)];
                }
            }
        }
        for (idx, (node, f)) in self.sym.tree.nodes.iter().zip(&self.nodes).enumerate().rev() {
            let s = node.vars.len();
            let upd = &self.sym.update[idx];
            let mut y = Mat::<T>::zeros(s, k);
            for c in 0..k {
                for i in 0..s {
                    y[(i, c)] = b[(node.vars[i], c)];
                }
            }
            if !upd.is_empty() {
                let mut xu = Mat::<T>::zeros(upd.len(), k);
                for c in 0..k {
                    for (i, &v) in upd.iter().enumerate() {
                        xu[(i, c)] = b[(v, c)];
                    }
                }
                matmul(y.as_mut(), Accum::Add, f.u12.as_ref(), xu.as_ref(), T::from_f64(-1.0), par);
            }
            solve_upper_triangular_in_place(f.lu.as_ref(), y.as_mut(), par);
            for c in 0..k {
                for i in 0..s {
                    b[(node.vars[i], c)] = y[(i, c)];
                }
            }
        }
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let mut m = Mat::<T>::from_fn(b.len(), 1, |i, _| b[i]);
        self.solve_in_place(m.as_mut());
        (0..b.len()).map(|i| m[(i, 0)]).collect()
    }
}

/// Eliminates the first `s` rows/columns of `front`; returns the node factor
/// and the Schur complement (contribution block).
fn partial_factor<T: Scalar>(mut front: Mat<T>, s: usize, par: Par, scale: f64) -> Result<(NodeFactor<T>, Option<Mat<T>>)> {
    let r = front.nrows();
    let u = r - s;
    let mut perm = vec![0usize; s];
    let mut perm_inv = vec![0usize; s];
    {
        let fm = front.as_mut();
        let (mut f11, mut f12, mut f21, mut f22) = fm.split_at_mut(s, s);
        if s > 0 {
            let mut mem = MemBuffer::new(lu_in_place_scratch::<usize, T>(s, s, par, Default::default()));
            let stack = MemStack::new(&mut mem);
            lu_in_place(f11.rb_mut(), &mut perm, &mut perm_inv, par, stack, Default::default());
            for i in 0..s {
                let p = f11[(i, i)].modulus();
                if !(p.is_finite() && p > PIVOT_TOL * scale) {
                    // the caller fills in the shift
                    return Err(Error::SingularShift { re: f64::NAN, im: f64::NAN });
                }
            }
        }
        if u > 0 && s > 0 {
            // apply the row permutation to the coupling block
            let orig = f12.to_owned();
            for i in 0..s {
                for c in 0..u {
                    f12[(i, c)] = orig[(perm[i], c)];
                }
            }
            solve_unit_lower_triangular_in_place(f11.rb(), f12.rb_mut(), par);
            solve_lower_triangular_in_place(f11.rb().transpose(), f21.rb_mut().transpose_mut(), par);
            matmul(f22.rb_mut(), Accum::Add, f21.rb(), f12.rb(), T::from_f64(-1.0), par);
        }
    }
    let lu = front.get(0..s, 0..s).to_owned();
    let u12 = front.get(0..s, s..r).to_owned();
    let l21 = front.get(s..r, 0..s).to_owned();
    let cb = if u > 0 { Some(front.get(s..r, s..r).to_owned()) } else { None };
    Ok((NodeFactor { lu, l21, u12, perm }, cb))
}

use faer::reborrow::*;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Domain;
    use crate::grid::{AugmentedGrid, BoxPartition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual<T: Scalar>(a: &CscMatrix, shift: T, x: &[T], b: &[T]) -> f64 {
        let n = a.nrows();
        let mut r: Vec<T> = b.to_vec();
        for j in 0..n {
            for (i, v) in a.col(j) {
                r[i] -= T::from_f64(v) * x[j];
            }
            r[j] += shift * x[j];
        }
        let num = r.iter().map(|v| v.modulus()).fold(0.0, f64::max);
        let den = b.iter().map(|v| v.modulus()).fold(0.0, f64::max);
        num / den
    }

    fn random_grid_matrix(grid: &AugmentedGrid, rng: &mut ChaCha8Rng) -> CscMatrix {
        // random coefficients on the stencil pattern of the augmented generator
        let layout = GridLayout::for_augmented(grid);
        let n = grid.len();
        let p = &grid.partition;
        let nb = p.n_boxes();
        let mut t = Vec::new();
        for v in 0..n {
            let (l, b) = (v / nb, v % nb);
            t.push((v, v, -4.0 - rng.random::<f64>()));
            for f in p.faces() {
                if let Some(nbx) = p.neighbor(b, f) {
                    t.push((l * nb + nbx, v, rng.random::<f64>()));
                }
            }
            match grid.time {
                crate::grid::TimeGrid::Ulam { n_t } => {
                    t.push(((((l + 1) % n_t) * nb) + b, v, 1.0 + rng.random::<f64>()));
                }
                crate::grid::TimeGrid::Collocation { m } => {
                    for k in 0..m {
                        if k != l {
                            t.push((k * nb + b, v, rng.random::<f64>() - 0.5));
                        }
                    }
                }
            }
        }
        let _ = layout;
        CscMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn dense_front_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 30;
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                t.push((i, j, rng.random::<f64>() - 0.5));
            }
        }
        let a = CscMatrix::from_triplets(n, n, &t);
        let sym = Symbolic::analyze(&a, SupernodeTree::single(n)).unwrap();
        let f = Factorization::<f64>::factor(&a, sym, 0.3).unwrap();
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x = f.solve_vec(&b);
        assert!(residual(&a, 0.3, &x, &b) < 1e-12);
    }

    #[test]
    fn nested_dissection_solves_real_and_complex() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![true, false]).unwrap();
        let part = BoxPartition::new(dom, vec![13, 11]).unwrap();
        for grid in [AugmentedGrid::ulam(part.clone(), 6, 1.0).unwrap(), AugmentedGrid::collocation(part.clone(), 5, 1.0).unwrap()] {
            let a = random_grid_matrix(&grid, &mut rng);
            let layout = GridLayout::for_augmented(&grid);
            let sym = analyze(&a, Some(&layout)).unwrap();
            assert!(sym.tree().nodes.len() > 1);
            let n = a.nrows();
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let f = Factorization::<f64>::factor(&a, sym.clone(), -0.7).unwrap();
            let x = f.solve_vec(&b);
            assert!(residual(&a, -0.7, &x, &b) < 1e-11);
            let sigma = Complex64::new(-0.5, 6.2);
            let fc = Factorization::<Complex64>::factor(&a, sym, sigma).unwrap();
            let bc: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 1.0 - v)).collect();
            let xc = fc.solve_vec(&bc);
            assert!(residual(&a, sigma, &xc, &bc) < 1e-11);
        }
    }

    #[test]
    fn graph_ordering_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, -3.0));
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                t.push((j, i, rng.random::<f64>()));
            }
        }
        let a = CscMatrix::from_triplets(n, n, &t);
        let sym = analyze(&a, None).unwrap();
        let f = Factorization::<f64>::factor(&a, sym, 0.1).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = f.solve_vec(&b);
        assert!(residual(&a, 0.1, &x, &b) < 1e-11);
    }

    #[test]
    fn singular_shift_is_detected() {
        // columns sum to zero: A^T 1 = 0, so 0 is an eigenvalue
        let a = CscMatrix::from_triplets(3, 3, &[(0, 0, -1.0), (1, 0, 1.0), (1, 1, -2.0), (2, 1, 2.0), (2, 2, -1.0), (0, 2, 1.0)]);
        let sym = Symbolic::analyze(&a, SupernodeTree::single(3)).unwrap();
        let r = Factorization::<f64>::factor(&a, sym, 0.0);
        assert!(matches!(r, Err(Error::SingularShift { .. })));
    }

    #[test]
    fn bad_ordering_is_rejected() {
        // two leaves coupled directly without a separator
        let a = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, 1.0)]);
        let mut tree = SupernodeTree::default();
        tree.nodes.push(crate::linalg::ordering::TreeNode { vars: vec![0], parent: None, children: vec![] });
        tree.nodes.push(crate::linalg::ordering::TreeNode { vars: vec![1], parent: None, children: vec![] });
        assert!(Symbolic::analyze(&a, tree).is_err());
    }
}
