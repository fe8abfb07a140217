//! Selected eigenpairs of sparse (augmented) generators.
//!
//! Eigenvalues near a shift come from Arnoldi on `(A - sigma I)^{-1}` with the
//! multifrontal LU. A shift of exactly zero on a mass-conserving matrix is
//! handled by pinning one row: the kernel vector is obtained from one extra
//! solve and deflated, so the remaining spectrum is computed on the invariant
//! complement `{x : 1^T x = 0}`.

use std::f64::consts::PI;
use std::io::{BufWriter, Write};
use std::path::Path;

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::augmented::{hybrid_companion_shift, ulam_companion_shift, AugmentedGenerator};
use crate::error::{Error, Result};
use crate::grid::{AugmentedGrid, TimeGrid};
use crate::linalg::arnoldi::{arnoldi, dot, norm, ArnoldiOptions, LinearOperator};
use crate::linalg::multifrontal::{analyze, Factorization, Symbolic};
use crate::linalg::ordering::GridLayout;
use crate::linalg::sparse::{CscMatrix, TripletBuilder};

type C = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Eigenvalues closest to zero.
    SmallestMagnitude,
    /// Rightmost eigenvalues, via a sweep of real shifts.
    LargestReal,
    /// Eigenvalues closest to an explicit (possibly complex) shift.
    NearestShift,
    /// Largest modulus, by plain Arnoldi on the matrix itself.
    LargestMagnitude,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SmallestMagnitude => "smallest-magnitude",
            Mode::LargestReal => "largest-real-part",
            Mode::NearestShift => "nearest-shift",
            Mode::LargestMagnitude => "largest-magnitude",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigsOptions {
    pub k: usize,
    pub mode: Mode,
    /// Shift for `NearestShift` (and an override for `SmallestMagnitude`).
    pub shift: Option<C>,
    /// Most negative shift of the largest-real-part sweep.
    pub sigma_max: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub ncv: Option<usize>,
    pub seed: u64,
    /// `|Im mu|` beyond which eigenvalues are flagged as band-edge artifacts.
    pub band_limit: Option<f64>,
}

impl EigsOptions {
    pub fn new(k: usize, mode: Mode) -> Self {
        Self { k, mode, shift: None, sigma_max: -1.0, tol: 1e-8, max_iter: 300, ncv: None, seed: 7, band_limit: None }
    }

    pub fn with_shift(mut self, s: C) -> Self {
        self.shift = Some(s);
        self
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: C,
    /// Unit 2-norm, largest-modulus entry real and positive.
    pub vector: Vec<C>,
    /// `||A v - mu v||_2`.
    pub residual: f64,
    pub converged: bool,
    pub band_edge: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompanionLink {
    pub index: usize,
    pub base: usize,
    /// Temporal Fourier mode of the modulation (+1 or -1).
    pub k: i64,
    /// `|c|` between pair `index` and the modulated base eigenvector.
    pub correlation: f64,
    pub predicted: C,
    pub is_companion: bool,
}

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub mode: Mode,
    pub pairs: Vec<EigenPair>,
    pub companions: Vec<CompanionLink>,
    pub shifts: Vec<C>,
    pub norm_estimate: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl SpectrumReport {
    pub fn values(&self) -> Vec<C> {
        self.pairs.iter().map(|p| p.value).collect()
    }

    /// Index of the eigenvalue closest to `z`.
    pub fn closest(&self, z: C) -> Option<usize> {
        (0..self.pairs.len()).min_by(|&a, &b| {
            (self.pairs[a].value - z).norm().partial_cmp(&(self.pairs[b].value - z).norm()).unwrap()
        })
    }

    /// Writes `index,re,im,residual,companion_of,abs_c`; header lines become `#` comments.
    pub fn write_csv(&self, path: &Path, header: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            for h in header {
                writeln!(w, "# {h}")?;
            }
            writeln!(w, "# mode: {}", self.mode.name())?;
            writeln!(w, "index,re,im,residual,companion_of,abs_c")?;
            for (i, p) in self.pairs.iter().enumerate() {
                let link = self.companions.iter().filter(|l| l.index == i).max_by(|a, b| {
                    a.correlation.partial_cmp(&b.correlation).unwrap()
                });
                let (of, c) = match link {
                    Some(l) if l.is_companion => (l.base.to_string(), format!("{:.6}", l.correlation)),
                    Some(l) => (String::new(), format!("{:.6}", l.correlation)),
                    None => (String::new(), String::new()),
                };
                writeln!(w, "{i},{:.10e},{:.10e},{:.3e},{of},{c}", p.value.re, p.value.im, p.residual)?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }

    /// Writes the selected eigenvectors slice-major as `index,slice,box,re,im`
    /// plus a JSON sidecar (same stem, `.json`) describing the grid.
    pub fn write_eigenvectors(&self, indices: &[usize], grid: &AugmentedGrid, path: &Path, header: &[String]) -> Result<()> {
        for &i in indices {
            let p = self.pairs.get(i).ok_or_else(|| Error::Config(format!("no eigenpair with index {i}")))?;
            if p.vector.len() != grid.len() {
                return Err(Error::DimensionMismatch { expected: grid.len(), got: p.vector.len() });
            }
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            for h in header {
                writeln!(w, "# {h}")?;
            }
            writeln!(w, "index,slice,box,re,im")?;
            for &i in indices {
                for (g, z) in self.pairs[i].vector.iter().enumerate() {
                    let (l, b) = grid.split(g);
                    writeln!(w, "{i},{l},{b},{:.12e},{:.12e}", z.re, z.im)?;
                }
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))?;
        let side = path.with_extension("json");
        let meta = serde_json::json!({
            "grid": grid,
            "scheme": grid.scheme_name(),
            "layout": "slice-major: row index = slice * n_boxes + box",
            "n_boxes": grid.n_boxes(),
            "n_slices": grid.n_slices(),
            "slice_times": grid.slice_times(),
            "eigenvalues": indices.iter().map(|&i| [self.pairs[i].value.re, self.pairs[i].value.im]).collect::<Vec<_>>(),
            "indices": indices,
            "header": header,
        });
        let s = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse { path: side.clone(), msg: e.to_string() })?;
        std::fs::write(&side, s).map_err(|e| Error::io(&side, e))
    }
}

/// Band beyond which the time discretization cannot resolve oscillations:
/// `pi n_t / tau` (Ulam) or `pi (M - 1) / tau` (hybrid).
pub fn band_limit(grid: &AugmentedGrid) -> f64 {
    match grid.time {
        TimeGrid::Ulam { n_t } => PI * n_t as f64 / grid.period,
        TimeGrid::Collocation { m } => PI * (m as f64 - 1.0) / grid.period,
    }
}

enum Factor {
    Real(Factorization<f64>),
    Complex(Factorization<C>),
}

impl Factor {
    fn solve(&self, x: &[C], y: &mut [C]) {
        match self {
            Factor::Real(f) => {
                let mut m = Mat::<f64>::from_fn(x.len(), 2, |i, j| if j == 0 { x[i].re } else { x[i].im });
                f.solve_in_place(m.as_mut());
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi = C::new(m[(i, 0)], m[(i, 1)]);
                }
            }
            Factor::Complex(f) => {
                let mut m = Mat::<C>::from_fn(x.len(), 1, |i, _| x[i]);
                f.solve_in_place(m.as_mut());
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi = m[(i, 0)];
                }
            }
        }
    }
}

/// `(A - sigma I)^{-1}`, or the deflated inverse on `{1^T x = 0}` when pinned.
struct ShiftInvert {
    factor: Factor,
    pin: Option<Pin>,
}

struct Pin {
    row: usize,
    kernel: Vec<f64>,
    kernel_sum: f64,
}

impl LinearOperator for ShiftInvert {
    fn n(&self) -> usize {
        match &self.factor {
            Factor::Real(f) => f.n(),
            Factor::Complex(f) => f.n(),
        }
    }

    fn apply(&self, x: &[C], y: &mut [C]) -> Result<()> {
        match &self.pin {
            None => self.factor.solve(x, y),
            Some(p) => {
                let mean = x.iter().sum::<C>() / x.len() as f64;
                let mut b: Vec<C> = x.iter().map(|v| v - mean).collect();
                b[p.row] = C::new(0.0, 0.0);
                self.factor.solve(&b, y);
                let alpha = y.iter().sum::<C>() / p.kernel_sum;
                y.iter_mut().zip(&p.kernel).for_each(|(y, r)| *y -= alpha * r);
            }
        }
        Ok(())
    }
}

struct MatrixOp<'a>(&'a CscMatrix);

impl LinearOperator for MatrixOp<'_> {
    fn n(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, x: &[C], y: &mut [C]) -> Result<()> {
        self.0.matvec_complex(x, y);
        Ok(())
    }
}

/// Replaces row `p` by the unit row `e_p^T`.
fn pin_row(a: &CscMatrix, p: usize) -> CscMatrix {
    let mut tb = TripletBuilder::with_capacity(a.nrows(), a.ncols(), a.nnz() + 1);
    for (r, c, v) in a.triplets() {
        if r != p {
            tb.push(r, c, v);
        }
    }
    tb.push(p, p, 1.0);
    tb.build()
}

fn column_sums_vanish(a: &CscMatrix) -> bool {
    let n = a.ncols();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    (0..n).all(|c| a.col(c).map(|(_, v)| v).sum::<f64>().abs() <= 1e-10 * scale)
}

fn norm_inf(a: &CscMatrix) -> f64 {
    let mut rows = vec![0.0; a.nrows()];
    for (r, _, v) in a.triplets() {
        rows[r] += v.abs();
    }
    rows.into_iter().fold(0.0, f64::max)
}

fn residual(a: &CscMatrix, v: &[C], mu: C) -> f64 {
    let mut y = vec![C::new(0.0, 0.0); v.len()];
    a.matvec_complex(v, &mut y);
    y.iter().zip(v).map(|(y, x)| (y - mu * x).norm_sqr()).sum::<f64>().sqrt()
}

/// Returns the better of `mu` and the Rayleigh quotient of unit `v`, with its residual.
fn refine(a: &CscMatrix, v: &[C], mu: C) -> (C, f64) {
    let mut y = vec![C::new(0.0, 0.0); v.len()];
    a.matvec_complex(v, &mut y);
    let res = |m: C| y.iter().zip(v).map(|(y, x)| (y - m * x).norm_sqr()).sum::<f64>().sqrt();
    let rq = dot(v, &y);
    let (r0, r1) = (res(mu), res(rq));
    if r1 < r0 {
        (rq, r1)
    } else {
        (mu, r0)
    }
}

/// Unit norm with the largest-modulus entry real positive.
pub fn normalize_phase(v: &mut [C]) {
    let nrm = norm(v);
    if nrm == 0.0 {
        return;
    }
    let big = v.iter().copied().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
    let rot = big.conj() / (big.norm() * nrm);
    v.iter_mut().for_each(|x| *x *= rot);
}

struct Solver<'a> {
    a: &'a CscMatrix,
    layout: Option<&'a GridLayout>,
    sym: Option<Symbolic>,
    conserving: bool,
    norm: f64,
}

impl<'a> Solver<'a> {
    fn new(a: &'a CscMatrix, layout: Option<&'a GridLayout>) -> Self {
        let norm = (a.norm1() * norm_inf(a)).sqrt();
        Self { a, layout, sym: None, conserving: column_sums_vanish(a), norm }
    }

    fn symbolic(&mut self) -> Result<Symbolic> {
        if self.sym.is_none() {
            self.sym = Some(analyze(self.a, self.layout)?);
        }
        Ok(self.sym.clone().expect("analyzed"))
    }

    fn factor(&mut self, m: &CscMatrix, sigma: C) -> Result<Factor> {
        let sym = self.symbolic()?;
        if sigma.im == 0.0 {
            Factorization::factor(m, sym, sigma.re).map(Factor::Real)
        } else {
            Factorization::factor(m, sym, sigma).map(Factor::Complex)
        }
    }

    /// Shift-invert operator at `sigma`; also returns the kernel pair when
    /// `sigma = 0` on a conserving matrix, and the shift actually used.
    fn operator(&mut self, sigma: C, warnings: &mut Vec<String>) -> Result<(ShiftInvert, Option<Vec<f64>>, C)> {
        let n = self.a.nrows();
        if sigma == C::new(0.0, 0.0) && self.conserving {
            let p = n / 2;
            let pinned = pin_row(self.a, p);
            match self.factor(&pinned, sigma) {
                Ok(factor) => {
                    let mut e = vec![C::new(0.0, 0.0); n];
                    e[p] = C::new(1.0, 0.0);
                    let mut r = vec![C::new(0.0, 0.0); n];
                    factor.solve(&e, &mut r);
                    let kernel: Vec<f64> = r.iter().map(|z| z.re).collect();
                    let kernel_sum: f64 = kernel.iter().sum();
                    if kernel_sum.abs() > 1e-300 && kernel.iter().all(|x| x.is_finite()) {
                        let op = ShiftInvert { factor, pin: Some(Pin { row: p, kernel: kernel.clone(), kernel_sum }) };
                        return Ok((op, Some(kernel), sigma));
                    }
                    warnings.push("kernel vector orthogonal to the mass vector; not deflated".into());
                }
                Err(Error::SingularShift { .. }) => {
                    warnings.push("kernel is not one-dimensional; not deflated".into());
                }
                Err(e) => return Err(e),
            }
        }
        match self.factor(self.a, sigma) {
            Ok(f) => Ok((ShiftInvert { factor: f, pin: None }, None, sigma)),
            Err(Error::SingularShift { .. }) => {
                let s2 = sigma + C::new(1e-8, 0.0);
                warnings.push(format!("shift {sigma} is singular; retrying at {s2}"));
                let f = self.factor(self.a, s2)?;
                Ok((ShiftInvert { factor: f, pin: None }, None, s2))
            }
            Err(e) => Err(e),
        }
    }

    /// Up to `k` eigenpairs nearest `sigma`, with conjugates completed.
    fn nearest(&mut self, sigma: C, k: usize, opts: &EigsOptions, warnings: &mut Vec<String>) -> Result<Vec<EigenPair>> {
        let n = self.a.nrows();
        let (op, kernel, sigma) = self.operator(sigma, warnings)?;
        let mut pairs = Vec::new();
        if let Some(r) = kernel {
            let mut v: Vec<C> = r.iter().map(|&x| C::new(x, 0.0)).collect();
            normalize_phase(&mut v);
            let res = residual(self.a, &v, C::new(0.0, 0.0));
            pairs.push(self.pair(C::new(0.0, 0.0), v, res, opts));
        }
        let want = k.saturating_sub(pairs.len()).min(n - pairs.len());
        if want > 0 {
            let mut aopts = ArnoldiOptions::new(want);
            aopts.ncv = opts.ncv;
            aopts.tol = 0.5 * opts.tol;
            aopts.max_restarts = opts.max_iter;
            aopts.seed = opts.seed;
            let mut start: Vec<C> = (0..n).map(|i| C::new(1.0 + ((i * 7919) % 113) as f64 / 113.0, 0.0)).collect();
            if op.pin.is_some() {
                let mean = start.iter().sum::<C>() / n as f64;
                start.iter_mut().for_each(|x| *x -= mean);
            }
            aopts.start = Some(start);
            let res = arnoldi(&op, &aopts)?;
            if !res.converged {
                warnings.push(format!(
                    "Arnoldi at shift {sigma} stopped after {} restarts with {}/{} converged",
                    res.restarts,
                    res.pairs.iter().filter(|p| p.converged).count(),
                    want
                ));
            }
            for rp in res.pairs {
                if rp.value.norm() == 0.0 {
                    continue;
                }
                let mut v = rp.vector;
                normalize_phase(&mut v);
                let (mu, r) = refine(self.a, &v, sigma + C::new(1.0, 0.0) / rp.value);
                pairs.push(self.pair(mu, v, r, opts));
            }
        }
        complete_conjugates(&mut pairs);
        Ok(pairs)
    }

    fn pair(&self, value: C, vector: Vec<C>, residual: f64, opts: &EigsOptions) -> EigenPair {
        let band_edge = opts.band_limit.is_some_and(|b| value.im.abs() > b);
        let converged = residual <= opts.tol * self.norm.max(f64::MIN_POSITIVE);
        EigenPair { value, vector, residual, converged, band_edge }
    }
}

fn same(a: C, b: C) -> bool {
    (a - b).norm() <= 1e-6 * (1.0 + a.norm())
}

/// Adds the conjugate partner of every complex pair that lacks one (real matrices).
fn complete_conjugates(pairs: &mut Vec<EigenPair>) {
    let mut extra = Vec::new();
    for p in pairs.iter() {
        if p.value.im.abs() <= 1e-8 * (1.0 + p.value.norm()) {
            continue;
        }
        let c = p.value.conj();
        if !pairs.iter().chain(extra.iter()).any(|q: &EigenPair| same(q.value, c)) {
            let mut v: Vec<C> = p.vector.iter().map(|z| z.conj()).collect();
            normalize_phase(&mut v);
            extra.push(EigenPair { value: c, vector: v, ..p.clone() });
        }
    }
    pairs.extend(extra);
}

/// Merges `new` into `acc`, keeping the smaller residual among duplicates.
fn merge(acc: &mut Vec<EigenPair>, new: Vec<EigenPair>) {
    for p in new {
        match acc.iter_mut().find(|q| same(q.value, p.value)) {
            Some(q) => {
                if p.residual < q.residual {
                    *q = p;
                }
            }
            None => acc.push(p),
        }
    }
}

fn sort_pairs(pairs: &mut [EigenPair], mode: Mode, shift: C) {
    let key = |p: &EigenPair| -> f64 {
        match mode {
            Mode::SmallestMagnitude => p.value.norm(),
            Mode::LargestReal => -p.value.re,
            Mode::NearestShift => (p.value - shift).norm(),
            Mode::LargestMagnitude => -p.value.norm(),
        }
    };
    pairs.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        if (ka - kb).abs() <= 1e-9 * (1.0 + ka.abs()) {
            b.value.im.partial_cmp(&a.value.im).unwrap()
        } else {
            ka.partial_cmp(&kb).unwrap()
        }
    });
}

/// Truncates to `k`, keeping a conjugate partner that would be cut off.
fn truncate_pairs(pairs: &mut Vec<EigenPair>, k: usize) {
    if pairs.len() <= k {
        return;
    }
    let mut keep = k;
    let last = pairs[k - 1].value;
    if last.im.abs() > 1e-8 * (1.0 + last.norm()) && same(pairs[k].value, last.conj()) {
        keep += 1;
    }
    pairs.truncate(keep);
}

/// Computes `opts.k` eigenpairs of `a` in the requested mode. A layout enables
/// geometric nested dissection for the factorization.
pub fn eigs(a: &CscMatrix, layout: Option<&GridLayout>, opts: &EigsOptions) -> Result<SpectrumReport> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    if opts.k == 0 {
        return Err(Error::Config("eigs needs k >= 1".into()));
    }
    let mut solver = Solver::new(a, layout);
    let mut warnings = Vec::new();
    let mut pairs = Vec::new();
    let mut shifts = Vec::new();
    let zero = C::new(0.0, 0.0);
    match opts.mode {
        Mode::SmallestMagnitude | Mode::NearestShift => {
            let sigma = match (opts.mode, opts.shift) {
                (_, Some(s)) => s,
                (Mode::NearestShift, None) => return Err(Error::Config("nearest-shift mode needs a shift".into())),
                _ => zero,
            };
            shifts.push(sigma);
            pairs = solver.nearest(sigma, opts.k, opts, &mut warnings)?;
            sort_pairs(&mut pairs, opts.mode, sigma);
        }
        Mode::LargestReal => {
            if opts.sigma_max >= 0.0 {
                return Err(Error::Config("sigma_max must be negative".into()));
            }
            for s in [0.0, 0.5 * opts.sigma_max, opts.sigma_max] {
                let sigma = C::new(s, 0.0);
                shifts.push(sigma);
                let found = solver.nearest(sigma, opts.k, opts, &mut warnings)?;
                merge(&mut pairs, found);
            }
            sort_pairs(&mut pairs, opts.mode, zero);
        }
        Mode::LargestMagnitude => {
            let mut aopts = ArnoldiOptions::new(opts.k.min(a.nrows()));
            aopts.ncv = opts.ncv;
            aopts.tol = 0.5 * opts.tol;
            aopts.max_restarts = opts.max_iter;
            aopts.seed = opts.seed;
            let res = arnoldi(&MatrixOp(a), &aopts)?;
            if !res.converged {
                warnings.push(format!("Arnoldi stopped after {} restarts", res.restarts));
            }
            for rp in res.pairs {
                let mut v = rp.vector;
                normalize_phase(&mut v);
                let (mu, r) = refine(a, &v, rp.value);
                pairs.push(solver.pair(mu, v, r, opts));
            }
            complete_conjugates(&mut pairs);
            sort_pairs(&mut pairs, opts.mode, zero);
        }
    }
    truncate_pairs(&mut pairs, opts.k);
    let converged = pairs.iter().all(|p| p.converged);
    if !converged {
        warnings.push("some eigenpairs did not reach the residual tolerance".into());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SpectrumReport { mode: opts.mode, pairs, companions: Vec::new(), shifts, norm_estimate: solver.norm, converged, warnings })
}

/// `eigs` on an augmented generator, with its grid layout and band limit.
pub fn eigs_augmented(g: &AugmentedGenerator, opts: &EigsOptions) -> Result<SpectrumReport> {
    let a = g.to_sparse();
    let layout = GridLayout::for_augmented(&g.grid);
    let mut o = opts.clone();
    if o.band_limit.is_none() {
        o.band_limit = Some(band_limit(&g.grid));
    }
    eigs(&a, Some(&layout), &o)
}

/// Multiplies each slice of `v` by the temporal Fourier mode `psi_k`
/// (`omega^{k l}` on Ulam slabs, `exp(2 pi i k t_l / tau)` on collocation nodes).
pub fn modulate(grid: &AugmentedGrid, v: &[C], k: i64) -> Vec<C> {
    let n = grid.n_boxes();
    v.iter()
        .enumerate()
        .map(|(g, z)| {
            let t = grid.slice_time(g / n);
            z * C::from_polar(1.0, 2.0 * PI * k as f64 * t / grid.period)
        })
        .collect()
}

/// Offset of the companion eigenvalue produced by modulation with `psi_k`.
pub fn companion_offset(grid: &AugmentedGrid, k: i64) -> C {
    match grid.time {
        TimeGrid::Ulam { n_t } => ulam_companion_shift(n_t, grid.period, k),
        TimeGrid::Collocation { .. } => hybrid_companion_shift(grid.period, k),
    }
}

/// `|<u, w>| / (||u|| ||w||)`.
pub fn correlation(u: &[C], w: &[C]) -> f64 {
    let d = norm(u) * norm(w);
    if d == 0.0 {
        0.0
    } else {
        dot(u, w).norm() / d
    }
}

/// Correlates every other eigenvector with the base eigenvector modulated by
/// `psi_{+1}` and `psi_{-1}`; pairs with `|c| >= 0.99` are companions.
pub fn companion_scan(report: &SpectrumReport, grid: &AugmentedGrid, base: usize) -> Result<Vec<CompanionLink>> {
    let b = report.pairs.get(base).ok_or_else(|| Error::Config(format!("no eigenpair with index {base}")))?;
    if b.vector.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: b.vector.len() });
    }
    let mods: Vec<(i64, Vec<C>)> = [1i64, -1].iter().map(|&k| (k, modulate(grid, &b.vector, k))).collect();
    let mut out = Vec::new();
    for (i, p) in report.pairs.iter().enumerate() {
        if i == base {
            continue;
        }
        let (k, c) = mods
            .iter()
            .map(|(k, w)| (*k, correlation(&p.vector, w)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("two modulations");
        out.push(CompanionLink {
            index: i,
            base,
            k,
            correlation: c,
            predicted: b.value + companion_offset(grid, k),
            is_companion: c >= 0.99,
        });
    }
    Ok(out)
}

/// Residual `||A (psi_k v) - (mu + offset_k) psi_k v|| / ||v||` of a modulated eigenpair.
pub fn companion_residual(g: &AugmentedGenerator, pair: &EigenPair, k: i64) -> Result<f64> {
    let w = modulate(&g.grid, &pair.vector, k);
    let mut y = vec![C::new(0.0, 0.0); w.len()];
    g.matvec_complex(&w, &mut y)?;
    let mu = pair.value + companion_offset(&g.grid, k);
    let r = y.iter().zip(&w).map(|(y, x)| (y - mu * x).norm_sqr()).sum::<f64>().sqrt();
    Ok(r / norm(&pair.vector))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmented::{assemble_hybrid, assemble_ulam};
    use crate::fields::{DoubleGyre, VectorField};
    use crate::grid::BoxPartition;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(d: &[f64]) -> CscMatrix {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        CscMatrix::from_triplets(d.len(), d.len(), &t)
    }

    #[test]
    fn diagonal_smallest_magnitude() {
        let a = diag(&[0.0, -1.0, -2.0]);
        let r = eigs(&a, None, &EigsOptions::new(2, Mode::SmallestMagnitude)).unwrap();
        let v = r.values();
        assert_eq!(v.len(), 2);
        assert!(v[0].norm() < 1e-12 && (v[1] + 1.0).norm() < 1e-12, "{v:?}");
    }

    #[test]
    fn singular_shift_is_perturbed() {
        // nonconserving singular matrix: zero shift must be retried
        let a = diag(&[0.0, -1.0, -3.0, -4.0]);
        let r = eigs(&a, None, &EigsOptions::new(2, Mode::SmallestMagnitude)).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("singular")));
        assert!(r.pairs[0].value.norm() < 1e-7);
    }

    /// Random sparse Metzler matrix with zero column sums.
    fn metzler(n: usize, seed: u64) -> CscMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        let mut colsum = vec![0.0; n];
        for j in 0..n {
            for _ in 0..4 {
                let i = rng.random_range(0..n);
                if i != j {
                    let v = rng.random::<f64>();
                    t.push((i, j, v));
                    colsum[j] += v;
                }
            }
            // a ring edge keeps the matrix irreducible
            let i = (j + 1) % n;
            t.push((i, j, 0.5));
            colsum[j] += 0.5;
        }
        for (j, s) in colsum.iter().enumerate() {
            t.push((j, j, -s));
        }
        CscMatrix::from_triplets(n, n, &t)
    }

    fn dense_eigenvalues(a: &CscMatrix) -> Vec<C> {
        let n = a.nrows();
        let d = a.to_dense();
        let m = DMatrix::from_fn(n, n, |i, j| d[i][j]);
        m.complex_eigenvalues().iter().map(|z| C::new(z.re, z.im)).collect()
    }

    fn check_against_dense(a: &CscMatrix, r: &SpectrumReport, dense: &[C], keyf: impl Fn(C) -> f64) {
        let mut sorted = dense.to_vec();
        sorted.sort_by(|x, y| keyf(*x).partial_cmp(&keyf(*y)).unwrap());
        let kth = keyf(sorted[r.pairs.len() - 1]);
        for p in &r.pairs {
            let best = dense.iter().map(|z| (z - p.value).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-8, "{} not in dense spectrum (off by {best:e})", p.value);
            assert!(keyf(p.value) <= kth + 1e-8, "{} is not among the wanted eigenvalues", p.value);
            assert!(p.converged && p.residual <= 1e-8 * (a.norm1() * norm_inf(a)).sqrt());
        }
    }

    #[test]
    fn metzler_matches_dense_solver() {
        for (n, seed) in [(120usize, 1u64), (400, 2)] {
            let a = metzler(n, seed);
            let dense = dense_eigenvalues(&a);
            let sm = eigs(&a, None, &EigsOptions::new(6, Mode::SmallestMagnitude)).unwrap();
            assert!(sm.pairs[0].value.norm() < 1e-10);
            check_against_dense(&a, &sm, &dense, |z| z.norm());
            let lr = eigs(&a, None, &EigsOptions::new(5, Mode::LargestReal)).unwrap();
            // the sweep is local: compare against the dense list near the shifts
            for p in &lr.pairs {
                let best = dense.iter().map(|z| (z - p.value).norm()).fold(f64::INFINITY, f64::min);
                assert!(best < 1e-8);
            }
            let mut sorted = lr.values();
            sorted.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
            assert_eq!(sorted, lr.values());
            let s = C::new(-1.0, 2.0);
            let ns = eigs(&a, None, &EigsOptions::new(4, Mode::NearestShift).with_shift(s)).unwrap();
            for p in &ns.pairs {
                let best = dense.iter().map(|z| (z - p.value).norm()).fold(f64::INFINITY, f64::min);
                assert!(best < 1e-8);
            }
            let lm = eigs(&a, None, &EigsOptions::new(4, Mode::LargestMagnitude)).unwrap();
            check_against_dense(&a, &lm, &dense, |z| -z.norm());
        }
    }

    #[test]
    fn eigenvectors_are_normalized_with_fixed_phase() {
        let a = metzler(150, 9);
        let r = eigs(&a, None, &EigsOptions::new(5, Mode::SmallestMagnitude)).unwrap();
        for p in &r.pairs {
            assert!((norm(&p.vector) - 1.0).abs() < 1e-12);
            let big = p.vector.iter().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
            assert!(big.im.abs() < 1e-14 && big.re > 0.0);
        }
    }

    fn gyre_grid(nx: usize, ny: usize, time: TimeGrid) -> AugmentedGrid {
        let d = DoubleGyre::default();
        let part = BoxPartition::new(d.domain().clone(), vec![nx, ny]).unwrap();
        AugmentedGrid::new(part, time, 1.0).unwrap()
    }

    #[test]
    fn kernel_is_constant_for_divergence_free_fields() {
        let grid = gyre_grid(20, 10, TimeGrid::Ulam { n_t: 12 });
        let g = assemble_ulam(&grid, &DoubleGyre::default(), 0.1, 4).unwrap();
        let r = eigs_augmented(&g, &EigsOptions::new(4, Mode::SmallestMagnitude)).unwrap();
        let z = &r.pairs[0];
        assert!(z.value.norm() < 1e-12);
        let c = 1.0 / (g.n() as f64).sqrt();
        assert!(z.vector.iter().all(|x| (x - c).norm() < 1e-9));
        assert!(r.converged);
    }

    #[test]
    fn kernel_companions_are_exact() {
        let grid = gyre_grid(20, 10, TimeGrid::Ulam { n_t: 12 });
        let g = assemble_ulam(&grid, &DoubleGyre::default(), 0.1, 4).unwrap();
        let pred = companion_offset(&grid, -1);
        let r = eigs_augmented(&g, &EigsOptions::new(4, Mode::NearestShift).with_shift(pred + C::new(0.01, 0.01))).unwrap();
        let i = r.closest(pred).unwrap();
        assert!((r.pairs[i].value - pred).norm() < 1e-8);
        let base = EigenPair {
            value: C::new(0.0, 0.0),
            vector: vec![C::new(1.0 / (g.n() as f64).sqrt(), 0.0); g.n()],
            residual: 0.0,
            converged: true,
            band_edge: false,
        };
        let mut rep = r.clone();
        rep.pairs.push(base);
        let links = companion_scan(&rep, &grid, rep.pairs.len() - 1).unwrap();
        let l = links.iter().find(|l| l.index == i).unwrap();
        assert!(l.is_companion && (l.correlation - 1.0).abs() < 1e-9 && l.k == -1);
        for k in [-2, 1, 3] {
            assert!(companion_residual(&g, &rep.pairs[rep.pairs.len() - 1], k).unwrap() < 1e-10);
        }
    }

    #[test]
    fn band_limits() {
        let u = gyre_grid(4, 2, TimeGrid::Ulam { n_t: 30 });
        assert!((band_limit(&u) - 30.0 * PI).abs() < 1e-12);
        let h = gyre_grid(4, 2, TimeGrid::Collocation { m: 21 });
        assert!((band_limit(&h) - 20.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn hybrid_spectrum_is_in_left_half_plane() {
        let grid = gyre_grid(16, 8, TimeGrid::Collocation { m: 7 });
        let g = assemble_hybrid(&grid, &DoubleGyre::default(), 0.1, 4).unwrap();
        let r = eigs_augmented(&g, &EigsOptions::new(6, Mode::SmallestMagnitude)).unwrap();
        assert!(r.converged);
        assert!(r.pairs.iter().all(|p| p.value.re <= 1e-9));
    }

    #[test]
    fn csv_and_sidecar_exports() {
        let grid = gyre_grid(6, 3, TimeGrid::Ulam { n_t: 3 });
        let g = assemble_ulam(&grid, &DoubleGyre::default(), 0.1, 4).unwrap();
        let r = eigs_augmented(&g, &EigsOptions::new(3, Mode::SmallestMagnitude)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("spec.csv");
        r.write_csv(&p, &["config_hash: abc".into()]).unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert!(s.starts_with("# config_hash: abc"));
        assert_eq!(s.lines().filter(|l| !l.starts_with('#')).count(), 1 + r.pairs.len());
        let v = dir.path().join("vec.csv");
        r.write_eigenvectors(&[0, 1], &grid, &v, &[]).unwrap();
        let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("vec.json")).unwrap()).unwrap();
        assert_eq!(side["n_boxes"], 18);
        assert_eq!(std::fs::read_to_string(&v).unwrap().lines().count(), 1 + 2 * g.n());
    }
}
