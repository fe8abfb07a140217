//! Euler-Maruyama ensembles with reflecting boundaries: escape-rate estimates
//! for set families and sampled Ulam transfer matrices.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coherent::CoherentFamily;
use crate::error::{Error, Result};
use crate::fields::{Domain, VectorField, MAX_DIM};
use crate::grid::BoxPartition;
use crate::linalg::sparse::{CscMatrix, TripletBuilder};

/// Maximum number of folds per axis before a step is rejected.
pub const MAX_FOLDS: usize = 100;

/// Per-point RNG: one ChaCha stream per ensemble member, so results do not
/// depend on scheduling.
pub fn point_rng(seed: u64, point: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point);
    rng
}

/// Folds non-periodic coordinates back into `[lo, hi]` and wraps periodic ones.
pub fn reflect(domain: &Domain, x: &mut [f64]) -> Result<()> {
    for k in 0..domain.dim() {
        if domain.periodic[k] {
            continue;
        }
        let (lo, hi) = (domain.lo[k], domain.hi[k]);
        let mut folds = 0;
        while x[k] < lo || x[k] > hi {
            if folds == MAX_FOLDS || !x[k].is_finite() {
                return Err(Error::StepTooLarge);
            }
            x[k] = if x[k] < lo { 2.0 * lo - x[k] } else { 2.0 * hi - x[k] };
            folds += 1;
        }
    }
    domain.wrap(x);
    Ok(())
}

/// One step `x + h v(t, x) + eps sqrt(h) xi` followed by reflection.
pub fn em_step(field: &dyn VectorField, eps: f64, x: &mut [f64], t: f64, h: f64, rng: &mut impl Rng) -> Result<()> {
    let d = field.dim();
    let mut v = [0.0; MAX_DIM];
    field.evaluate(t, &x[..d], &mut v[..d]);
    let noise = eps * h.sqrt();
    for k in 0..d {
        x[k] += h * v[k];
        if eps > 0.0 {
            let xi: f64 = rng.sample(StandardNormal);
            x[k] += noise * xi;
        }
    }
    reflect(field.domain(), &mut x[..d])
}

/// Where the ensemble is seeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Seeding {
    /// Uniform over the domain; points outside the starting set are discarded.
    Uniform,
    /// Uniform over a union of boxes of `partition` (boxes drawn with equal weight).
    Boxes { boxes: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n: usize,
    pub seeding: Seeding,
    pub seed: u64,
    pub h: f64,
    pub s: f64,
    pub t: f64,
}

impl EnsembleSpec {
    pub fn uniform(n: usize, seed: u64, h: f64, s: f64, t: f64) -> Self {
        Self { n, seeding: Seeding::Uniform, seed, h, s, t }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("ensemble needs N >= 1".into()));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Config(format!("step h must be positive, got {}", self.h)));
        }
        if !(self.t > self.s) {
            return Err(Error::Config(format!("escape estimate needs t > s (s={}, t={})", self.s, self.t)));
        }
        Ok(())
    }

    /// Number of steps and the (possibly shortened) step so that `s + K h = t`.
    pub fn steps(&self) -> (usize, f64) {
        let k = ((self.t - self.s) / self.h - 1e-9).ceil().max(1.0) as usize;
        (k, (self.t - self.s) / k as f64)
    }
}

fn uniform_in_box(part: &BoxPartition, b: usize, rng: &mut impl Rng, x: &mut [f64]) {
    let lo = part.box_lower(b);
    for k in 0..part.dim() {
        x[k] = lo[k] + rng.random::<f64>() * part.widths()[k];
    }
}

fn uniform_in_domain(dom: &Domain, rng: &mut impl Rng, x: &mut [f64]) {
    for k in 0..dom.dim() {
        x[k] = dom.lo[k] + rng.random::<f64>() * dom.width(k);
    }
}

/// Membership test for the family `{A_r}`.
pub enum Membership<'a> {
    /// `A_r^+` (`plus = true`) or `A_r^-` of a coherent family, box-wise on
    /// the sign field, with an optional level.
    Family { family: &'a CoherentFamily, plus: bool, level: Option<f64> },
    /// Arbitrary indicator `(r, x) -> bool`.
    Indicator(&'a (dyn Fn(f64, &[f64]) -> bool + Sync)),
}

/// Membership precomputed on the step times.
enum Tester<'a> {
    Boxes { part: &'a BoxPartition, sets: Vec<Vec<bool>> },
    Indicator(&'a (dyn Fn(f64, &[f64]) -> bool + Sync)),
}

impl Tester<'_> {
    fn new<'a>(m: &Membership<'a>, s: f64, step: f64, k: usize) -> Tester<'a> {
        match *m {
            Membership::Family { family, plus, level } => {
                let lv = level.unwrap_or(0.0).abs();
                let sets = (0..=k)
                    .into_par_iter()
                    .map(|i| {
                        let g = family.sign_field(s + i as f64 * step);
                        g.iter().map(|&v| if plus { v >= lv } else { v <= -lv }).collect()
                    })
                    .collect();
                Tester::Boxes { part: &family.grid.partition, sets }
            }
            Membership::Indicator(f) => Tester::Indicator(f),
        }
    }

    fn inside(&self, step: usize, r: f64, x: &[f64]) -> bool {
        match self {
            Tester::Boxes { part, sets } => part.locate(x).is_ok_and(|b| sets[step][b]),
            Tester::Indicator(f) => f(r, x),
        }
    }
}

/// Monte Carlo escape-rate estimate from one ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub n: usize,
    pub starters: usize,
    pub survivors: usize,
    /// Survivors when membership is checked only at `s + k tau`.
    pub poincare_survivors: usize,
    /// `-log(survivors / starters) / (t - s)`; `+inf` if nobody survived.
    pub rate: f64,
    pub poincare_rate: f64,
    /// Delta-method standard error of `rate` (infinite if nobody survived).
    pub std_error: f64,
    pub infinite: bool,
    pub seed: u64,
    pub h: f64,
    pub s: f64,
    pub t: f64,
    pub times: Vec<f64>,
    /// Fraction of starters still inside at each step time.
    pub curve: Vec<f64>,
}

impl EscapeEstimate {
    pub fn write_csv(&self, path: &Path, header: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            for h in header {
                writeln!(w, "# {h}")?;
            }
            writeln!(w, "# seed = {}, N = {}, h = {}, starters = {}, rate = {}", self.seed, self.n, self.h, self.starters, self.rate)?;
            writeln!(w, "t,survivor_fraction")?;
            for (t, f) in self.times.iter().zip(&self.curve) {
                writeln!(w, "{t:.10},{f:.10}")?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }
}

fn rate(survivors: usize, starters: usize, span: f64) -> f64 {
    if survivors == 0 {
        f64::INFINITY
    } else {
        -(survivors as f64 / starters as f64).ln() / span
    }
}

/// Seeds `spec.n` points, keeps those inside `A_s`, and advances them with
/// Euler-Maruyama, checking membership at every step time `s + j h`.
/// `partition` is required for [`Seeding::Boxes`].
pub fn escape_estimate(
    field: &dyn VectorField,
    eps: f64,
    family: &Membership<'_>,
    spec: &EnsembleSpec,
    partition: Option<&BoxPartition>,
) -> Result<EscapeEstimate> {
    spec.validate()?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("eps must be >= 0, got {eps}")));
    }
    let dom = field.domain();
    let d = dom.dim();
    let (k, step) = spec.steps();
    let tester = Tester::new(family, spec.s, step, k);
    let tau = field.period();
    let is_return = |j: usize| {
        let q = j as f64 * step / tau;
        (q - q.round()).abs() * tau < 1e-9 * (1.0 + tau) + 1e-6 * step
    };
    let boxes = match &spec.seeding {
        Seeding::Uniform => None,
        Seeding::Boxes { boxes } => {
            let part = partition.ok_or_else(|| Error::Config("box seeding needs a partition".into()))?;
            if boxes.is_empty() {
                return Err(Error::NoStarters);
            }
            if let Some(&b) = boxes.iter().find(|&&b| b >= part.n_boxes()) {
                return Err(Error::Config(format!("seed box {b} out of range")));
            }
            Some((part, boxes))
        }
    };
    // per point: None if not a starter, else (exit step, Poincare exit step)
    let outcomes: Vec<Option<(Option<usize>, Option<usize>)>> = (0..spec.n)
        .into_par_iter()
        .map(|p| -> Result<_> {
            let mut rng = point_rng(spec.seed, p as u64);
            let mut x = [0.0; MAX_DIM];
            match boxes {
                None => uniform_in_domain(dom, &mut rng, &mut x[..d]),
                Some((part, bs)) => {
                    let b = bs[rng.random_range(0..bs.len())];
                    uniform_in_box(part, b, &mut rng, &mut x[..d]);
                }
            }
            if !tester.inside(0, spec.s, &x[..d]) {
                return Ok(None);
            }
            let (mut exit, mut pexit) = (None, None);
            for j in 1..=k {
                let r = spec.s + (j - 1) as f64 * step;
                em_step(field, eps, &mut x[..d], r, step, &mut rng)?;
                let t = spec.s + j as f64 * step;
                let ok = tester.inside(j, t, &x[..d]);
                if !ok {
                    exit.get_or_insert(j);
                    if is_return(j) {
                        pexit = Some(j);
                        break;
                    }
                }
            }
            Ok(Some((exit, pexit)))
        })
        .collect::<Result<_>>()?;
    let starters = outcomes.iter().flatten().count();
    if starters == 0 {
        return Err(Error::NoStarters);
    }
    let mut exits = vec![0usize; k + 2];
    let mut poincare_survivors = 0;
    for (e, pe) in outcomes.iter().flatten() {
        exits[e.unwrap_or(k + 1)] += 1;
        if pe.is_none() {
            poincare_survivors += 1;
        }
    }
    let mut alive = starters;
    let curve: Vec<f64> = (0..=k)
        .map(|j| {
            alive -= exits[j];
            alive as f64 / starters as f64
        })
        .collect();
    let survivors = alive;
    let span = spec.t - spec.s;
    let p = survivors as f64 / starters as f64;
    let std_error = if survivors == 0 { f64::INFINITY } else { ((1.0 - p) / (p * starters as f64)).sqrt() / span };
    Ok(EscapeEstimate {
        n: spec.n,
        starters,
        survivors,
        poincare_survivors,
        rate: rate(survivors, starters, span),
        poincare_rate: rate(poincare_survivors, starters, span),
        std_error,
        infinite: survivors == 0,
        seed: spec.seed,
        h: step,
        s: spec.s,
        t: spec.t,
        times: (0..=k).map(|j| spec.s + j as f64 * step).collect(),
        curve,
    })
}

/// Runs `runs` independent ensembles with seeds `seed, seed + 1, ...` and
/// returns them with the mean rate.
pub fn escape_runs(
    field: &dyn VectorField,
    eps: f64,
    family: &Membership<'_>,
    spec: &EnsembleSpec,
    runs: usize,
) -> Result<(Vec<EscapeEstimate>, f64)> {
    let mut out = Vec::with_capacity(runs);
    for r in 0..runs {
        let mut sp = spec.clone();
        sp.seed = spec.seed.wrapping_add(r as u64);
        out.push(escape_estimate(field, eps, family, &sp, None)?);
    }
    let mean = out.iter().map(|e| e.rate).sum::<f64>() / runs.max(1) as f64;
    Ok((out, mean))
}

/// Column-stochastic box-to-box transition matrix from sampled trajectories.
#[derive(Clone, Debug)]
pub struct TransferMatrix {
    pub matrix: CscMatrix,
    pub points_per_box: usize,
    pub h: f64,
    pub s: f64,
    pub t: f64,
    pub seed: u64,
    pub eps: f64,
}

impl TransferMatrix {
    pub fn header_lines(&self) -> Vec<String> {
        vec![format!(
            "sampled transfer matrix: points_per_box={} h={} s={} t={} eps={} seed={}",
            self.points_per_box, self.h, self.s, self.t, self.eps, self.seed
        )]
    }

    pub fn write_matrix_market(&self, path: &Path, extra: &[String]) -> Result<()> {
        let mut header = extra.to_vec();
        header.extend(self.header_lines());
        self.matrix.write_matrix_market(path, &header)
    }
}

/// `P_ij = #{k : x_t^(k) in B_i} / N` for `N` uniform points per box `B_j`
/// advanced from `s` to `t` with Euler-Maruyama.
#[allow(clippy::too_many_arguments)]
pub fn sample_transfer_matrix(
    field: &dyn VectorField,
    eps: f64,
    partition: &BoxPartition,
    s: f64,
    t: f64,
    points_per_box: usize,
    h: f64,
    seed: u64,
) -> Result<TransferMatrix> {
    if points_per_box == 0 || !(h > 0.0) || !(t >= s) {
        return Err(Error::Config(format!("transfer sampling needs N >= 1, h > 0, t >= s (N={points_per_box}, h={h}, s={s}, t={t})")));
    }
    if partition.dim() != field.dim() {
        return Err(Error::DimensionMismatch { expected: field.dim(), got: partition.dim() });
    }
    let d = partition.dim();
    let n = partition.n_boxes();
    let k = if t == s { 0 } else { ((t - s) / h - 1e-9).ceil().max(1.0) as usize };
    let step = if k == 0 { 0.0 } else { (t - s) / k as f64 };
    let columns: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|j| -> Result<_> {
            let mut counts: Vec<(usize, u32)> = Vec::new();
            for p in 0..points_per_box {
                let mut rng = point_rng(seed, (j * points_per_box + p) as u64);
                let mut x = [0.0; MAX_DIM];
                uniform_in_box(partition, j, &mut rng, &mut x[..d]);
                for i in 0..k {
                    em_step(field, eps, &mut x[..d], s + i as f64 * step, step, &mut rng)?;
                }
                let b = partition.locate(&x[..d])?;
                counts.push((b, 1));
            }
            counts.sort_unstable_by_key(|c| c.0);
            counts.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 += a.1;
                    true
                } else {
                    false
                }
            });
            Ok(counts.into_iter().map(|(i, c)| (i, c as f64 / points_per_box as f64)).collect())
        })
        .collect::<Result<_>>()?;
    let mut tb = TripletBuilder::with_capacity(n, n, columns.iter().map(Vec::len).sum());
    for (j, col) in columns.iter().enumerate() {
        for &(i, v) in col {
            tb.push(i, j, v);
        }
    }
    Ok(TransferMatrix { matrix: tb.build(), points_per_box, h: step, s, t, seed, eps })
}
