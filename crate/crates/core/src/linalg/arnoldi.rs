//! Restarted Arnoldi for the largest-magnitude eigenvalues of a linear operator.
//!
//! The iteration keeps a Krylov decomposition `A V = V B + v b^H` and restarts
//! implicitly by compressing onto the wanted Ritz vectors (thick restart),
//! which is equivalent to implicit QR restarts with exact shifts.

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);

pub trait LinearOperator: Sync {
    fn n(&self) -> usize;
    fn apply(&self, x: &[C], y: &mut [C]) -> Result<()>;
}

#[derive(Clone, Debug)]
pub struct ArnoldiOptions {
    pub nev: usize,
    /// Krylov subspace dimension (default `3 nev + 10`).
    pub ncv: Option<usize>,
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
    /// Starting vector; random when absent.
    pub start: Option<Vec<C>>,
}

impl ArnoldiOptions {
    pub fn new(nev: usize) -> Self {
        Self { nev, ncv: None, tol: 1e-10, max_restarts: 300, seed: 0x5eed, start: None }
    }
}

#[derive(Clone, Debug)]
pub struct RitzPair {
    pub value: C,
    pub vector: Vec<C>,
    /// `|b^H y|`, the Arnoldi estimate of `||A x - theta x||`.
    pub residual_estimate: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct ArnoldiResult {
    pub pairs: Vec<RitzPair>,
    pub converged: bool,
    pub restarts: usize,
    pub applications: usize,
}

pub(crate) fn dot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).fold(ZERO, |s, (x, y)| s + x.conj() * y)
}

pub(crate) fn norm(a: &[C]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(alpha: C, x: &[C], y: &mut [C]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// Orthogonalizes `w` against `basis` with two classical Gram-Schmidt passes;
/// returns the accumulated coefficients.
fn orthogonalize(basis: &[Vec<C>], w: &mut [C]) -> Vec<C> {
    let mut h = vec![ZERO; basis.len()];
    for _ in 0..2 {
        let c: Vec<C> = basis.iter().map(|v| dot(v, w)).collect();
        for (v, &ci) in basis.iter().zip(&c) {
            axpy(-ci, v, w);
        }
        h.iter_mut().zip(&c).for_each(|(h, c)| *h += c);
    }
    h
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<C> {
    (0..n).map(|_| C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
}

/// Computes the `nev` largest-magnitude eigenvalues of `op` and their vectors.
pub fn arnoldi(op: &dyn LinearOperator, opts: &ArnoldiOptions) -> Result<ArnoldiResult> {
    let n = op.n();
    if opts.nev == 0 {
        return Err(Error::Config("need at least one eigenvalue".into()));
    }
    let nev = opts.nev.min(n);
    let ncv = opts.ncv.unwrap_or(3 * nev + 10).max(nev + 2).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v0 = match &opts.start {
        Some(s) if s.len() == n => s.clone(),
        Some(s) => return Err(Error::DimensionMismatch { expected: n, got: s.len() }),
        None => random_vector(n, &mut rng),
    };
    let nrm = norm(&v0);
    if nrm == 0.0 {
        return Err(Error::Degenerate("zero starting vector".into()));
    }
    v0.iter_mut().for_each(|x| *x /= nrm);

    // V holds up to ncv + 1 vectors; B is (ncv + 1) x ncv with the residual row last
    let mut v: Vec<Vec<C>> = vec![v0];
    let mut b = Mat::<C>::zeros(ncv + 1, ncv);
    let mut k = 0usize;
    let mut applications = 0usize;
    let mut w = vec![ZERO; n];
    let mut invariant = false;
    for restart in 0..=opts.max_restarts {
        // expand to ncv columns
        let mut m = k;
        while m < ncv {
            op.apply(&v[m], &mut w)?;
            applications += 1;
            let h = orthogonalize(&v[..=m], &mut w);
            for (i, hi) in h.iter().enumerate() {
                b[(i, m)] = *hi;
            }
            let beta = norm(&w);
            let scale = h.iter().map(|x| x.norm()).fold(beta, f64::max);
            m += 1;
            if beta <= 1e-13 * scale.max(f64::MIN_POSITIVE) || m == n {
                // invariant subspace: continue with a fresh orthogonal direction
                b[(m, m - 1)] = ZERO;
                if m == n {
                    invariant = true;
                    v.truncate(m);
                    break;
                }
                let mut r = random_vector(n, &mut rng);
                orthogonalize(&v[..m], &mut r);
                let rn = norm(&r);
                r.iter_mut().for_each(|x| *x /= rn);
                v.truncate(m);
                v.push(r);
            } else {
                b[(m, m - 1)] = C::new(beta, 0.0);
                w.iter_mut().for_each(|x| *x /= beta);
                v.truncate(m);
                v.push(w.clone());
            }
        }
        let m = if invariant { v.len() } else { ncv };
        // Ritz pairs of the projected matrix
        let bm = b.get(0..m, 0..m).to_owned();
        let evd = bm.eigen().map_err(|e| Error::NoConvergence(format!("projected eigenproblem: {e:?}")))?;
        let s = evd.S();
        let u = evd.U();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| s[j].norm().partial_cmp(&s[i].norm()).unwrap_or(std::cmp::Ordering::Equal));
        let bnorm = (0..m).map(|j| (0..=m.min(ncv)).map(|i| b[(i.min(ncv), j)].norm()).sum::<f64>()).fold(0.0, f64::max);
        let res_est = |i: usize| -> f64 {
            if invariant {
                return 0.0;
            }
            let y = u.col(i);
            let ny = (0..m).map(|r| y[r].norm_sqr()).sum::<f64>().sqrt();
            let mut acc = ZERO;
            for j in 0..m {
                acc += b[(m, j)] * y[j];
            }
            acc.norm() / ny
        };
        let conv_tol = |theta: C| opts.tol * theta.norm().max(f64::EPSILON.powf(2.0 / 3.0) * bnorm);
        let nconv = order.iter().take(nev).filter(|&&i| res_est(i) <= conv_tol(s[i])).count();
        let done = nconv >= nev || invariant || restart == opts.max_restarts;
        if done {
            let pairs = order
                .iter()
                .take(nev)
                .map(|&i| {
                    let y = u.col(i);
                    let mut x = vec![ZERO; n];
                    for j in 0..m {
                        axpy(y[j], &v[j], &mut x);
                    }
                    let nx = norm(&x);
                    x.iter_mut().for_each(|c| *c /= nx);
                    let r = res_est(i);
                    RitzPair { value: s[i], vector: x, residual_estimate: r, converged: r <= conv_tol(s[i]) }
                })
                .collect::<Vec<_>>();
            let converged = pairs.iter().all(|p| p.converged);
            return Ok(ArnoldiResult { pairs, converged, restarts: restart, applications });
        }
        // thick restart onto the leading Ritz vectors
        let keep = (nev + nconv.min((ncv - nev) / 2)).max(nev).min(ncv - 1);
        let mut q = Mat::<C>::zeros(m, keep);
        for (c, &i) in order.iter().take(keep).enumerate() {
            for r in 0..m {
                q[(r, c)] = u[(r, i)];
            }
        }
        orthonormalize_columns(&mut q);
        let bq = &bm * &q;
        let bnew = q.adjoint() * &bq;
        let mut row = vec![ZERO; keep];
        for (c, rc) in row.iter_mut().enumerate() {
            for j in 0..m {
                *rc += b[(m, j)] * q[(j, c)];
            }
        }
        let resid = v[m].clone();
        let mut vnew: Vec<Vec<C>> = Vec::with_capacity(ncv + 1);
        for c in 0..keep {
            let mut x = vec![ZERO; n];
            for j in 0..m {
                axpy(q[(j, c)], &v[j], &mut x);
            }
            vnew.push(x);
        }
        vnew.push(resid);
        v = vnew;
        b.fill(ZERO);
        for i in 0..keep {
            for j in 0..keep {
                b[(i, j)] = bnew[(i, j)];
            }
        }
        for (j, rc) in row.iter().enumerate() {
            b[(keep, j)] = *rc;
        }
        k = keep;
        log::trace!("arnoldi restart {restart}: {nconv}/{nev} converged");
    }
    unreachable!("loop returns on the final restart")
}

/// Modified Gram-Schmidt with one reorthogonalization on the columns of `q`.
fn orthonormalize_columns(q: &mut Mat<C>) {
    let (m, k) = (q.nrows(), q.ncols());
    for c in 0..k {
        for _ in 0..2 {
            for p in 0..c {
                let mut d = ZERO;
                for r in 0..m {
                    d += q[(r, p)].conj() * q[(r, c)];
                }
                for r in 0..m {
                    let qp = q[(r, p)];
                    q[(r, c)] -= d * qp;
                }
            }
        }
        let nrm = (0..m).map(|r| q[(r, c)].norm_sqr()).sum::<f64>().sqrt();
        for r in 0..m {
            q[(r, c)] /= nrm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense(Vec<Vec<f64>>);

    impl LinearOperator for Dense {
        fn n(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, x: &[C], y: &mut [C]) -> Result<()> {
            for (i, row) in self.0.iter().enumerate() {
                y[i] = row.iter().zip(x).fold(ZERO, |s, (a, x)| s + x * *a);
            }
            Ok(())
        }
    }

    #[test]
    fn finds_dominant_diagonal_entries() {
        let n = 200;
        let a = Dense((0..n).map(|i| (0..n).map(|j| if i == j { 1.0 / (1.0 + i as f64) } else { 0.0 }).collect()).collect());
        let r = arnoldi(&a, &ArnoldiOptions::new(4)).unwrap();
        assert!(r.converged);
        for (k, p) in r.pairs.iter().enumerate() {
            assert!((p.value - C::new(1.0 / (1.0 + k as f64), 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn rotation_block_gives_conjugate_pair() {
        // 2x2 rotation scaled by 2 embedded in a diagonal matrix
        let n = 60;
        let mut m = vec![vec![0.0; n]; n];
        m[0][0] = 0.0;
        m[0][1] = -2.0;
        m[1][0] = 2.0;
        for (i, row) in m.iter_mut().enumerate().skip(2) {
            row[i] = 1.0 / i as f64;
        }
        let r = arnoldi(&Dense(m), &ArnoldiOptions::new(2)).unwrap();
        let mut ims: Vec<f64> = r.pairs.iter().map(|p| p.value.im).collect();
        ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ims[0] + 2.0).abs() < 1e-10 && (ims[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn small_matrix_exhausts_krylov_space() {
        let a = Dense(vec![vec![2.0, 1.0, 0.0], vec![0.0, 3.0, 0.0], vec![0.0, 0.0, -5.0]]);
        let r = arnoldi(&a, &ArnoldiOptions::new(3)).unwrap();
        let mut v: Vec<f64> = r.pairs.iter().map(|p| p.value.re).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((v[0] + 5.0).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12 && (v[2] - 3.0).abs() < 1e-12);
    }
}
