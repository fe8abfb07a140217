//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! `AUGFLOW_ACCEPTANCE_ONLY=1,7` runs a subset; `AUGFLOW_ACCEPTANCE_FAST=1`
//! samples the transfer matrix with 500 points per box and the wider tolerance.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use augflow::augmented::{assemble_hybrid, assemble_ulam};
use augflow::fields::{rotating_interval, zero_field};
use augflow::generator::assemble;
use augflow::spectral::{companion_offset, companion_residual, companion_scan, correlation, eigs, eigs_augmented, modulate};
use augflow::stochastic::{escape_runs, sample_transfer_matrix, EnsembleSpec, Membership};
use augflow::transport::{advected_interval_family, det_identity_check, rotating_interval_family, survivor_evolve, Quadrature};
use augflow::*;

type C = Complex64;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn fmt(z: C) -> String {
    format!("{:.4}{:+.4}i", z.re, z.im)
}

/// Nearest computed value to `target`, and whether both components are within `tol`.
fn nearest(values: &[C], target: C, tol: f64) -> (C, bool) {
    let z = values.iter().copied().min_by(|a, b| (a - target).norm().partial_cmp(&(b - target).norm()).unwrap()).unwrap();
    (z, (z.re - target.re).abs() <= tol && (z.im - target.im).abs() <= tol)
}

/// Double gyre, Ulam scheme, 30 x 100 x 50, eps 0.1.
struct Gyre {
    grid: AugmentedGrid,
    gen: AugmentedGenerator,
    report: SpectrumReport,
    second: usize,
}

fn gyre() -> Gyre {
    let g = DoubleGyre::default();
    let part = BoxPartition::new(g.domain().clone(), vec![100, 50]).unwrap();
    let grid = AugmentedGrid::ulam(part, 30, 1.0).unwrap();
    let gen = assemble_ulam(&grid, &g, 0.1, 4).unwrap();
    let report = eigs_augmented(&gen, &EigsOptions::new(11, Mode::LargestReal)).unwrap();
    let second = report.closest(c(-0.0832, 0.0)).unwrap();
    Gyre { grid, gen, report, second }
}

fn criterion_1(gy: &Gyre) -> Verdict {
    let vals = gy.report.values();
    let targets = [c(0.0, 0.0), c(-0.0832, 0.0), c(-0.3160, 1.1437), c(-0.3160, -1.1437), c(-0.3663, 0.0)];
    let mut ok = gy.report.converged;
    let mut found = Vec::new();
    for t in targets {
        let (z, hit) = nearest(&vals, t, 0.005);
        ok &= hit;
        found.push(fmt(z));
    }
    verdict(ok, format!("found [{}]", found.join(", ")))
}

fn criterion_2(gy: &Gyre) -> Verdict {
    // Companions lie far from the real axis, where the real-shift sweep does not
    // reach; collect them with complex shifts (conjugates follow by symmetry).
    let mut merged = gy.report.clone();
    for shift in [c(-0.7, 6.24), c(-0.97, 5.1)] {
        let near = eigs_augmented(&gy.gen, &EigsOptions::new(6, Mode::NearestShift).with_shift(shift)).unwrap();
        for p in near.pairs {
            for q in [p.clone(), EigenPair { value: p.value.conj(), vector: p.vector.iter().map(|z| z.conj()).collect(), ..p }] {
                if merged.pairs.iter().all(|r| (r.value - q.value).norm() > 1e-8) {
                    merged.pairs.push(q);
                }
            }
        }
    }
    // the first 20 eigenvectors by real part
    merged.pairs.sort_by(|a, b| b.value.re.partial_cmp(&a.value.re).unwrap());
    merged.pairs.truncate(20);
    let second = merged.closest(c(-0.0832, 0.0)).unwrap();
    let vals = merged.values();
    let (kp, okp) = nearest(&vals, c(-0.6556, 6.2374), 0.01);
    let (km, okm) = nearest(&vals, c(-0.6556, -6.2374), 0.01);
    let links = companion_scan(&merged, &gy.grid, second).unwrap();
    let mut comp_ok = true;
    let mut comp = Vec::new();
    let mut partners = Vec::new();
    for t in [c(-0.7362, 6.2443), c(-0.7362, -6.2443)] {
        let (z, hit) = nearest(&vals, t, 0.01);
        let i = merged.closest(z).unwrap();
        let l = links.iter().find(|l| l.index == i).unwrap();
        comp_ok &= hit && l.correlation >= 0.99;
        comp.push(format!("{} |c|={:.4}", fmt(z), l.correlation));
        partners.push(i);
    }
    let (worst, at) = links
        .iter()
        .filter(|l| !partners.contains(&l.index))
        .map(|l| (l.correlation, merged.pairs[l.index].value))
        .fold((0.0, c(0.0, 0.0)), |m, x| if x.0 > m.0 { x } else { m });
    let last = vals.last().copied().unwrap_or_default();
    verdict(
        okp && okm && comp_ok && worst <= 0.05,
        format!(
            "kernel companions {} {}, companions {}, max non-companion |c| {worst:.4} at {} (20 rightmost, down to Re {:.4})",
            fmt(kp),
            fmt(km),
            comp.join(", "),
            fmt(at),
            last.re
        ),
    )
}

fn criterion_3(gy: &Gyre) -> Verdict {
    let field = DoubleGyre::default();
    let fam = CoherentFamily::from_eigenpair(&gy.report.pairs[gy.second], &gy.grid, 0.0).unwrap();
    let spec = EnsembleSpec::uniform(50_000, 1, 1.0 / 30.0, 0.0, 10.0);
    let mut ok = true;
    let mut parts = Vec::new();
    for (plus, paper) in [(true, 0.0657), (false, 0.0645)] {
        let m = Membership::Family { family: &fam, plus, level: None };
        let (_, mean) = escape_runs(&field, 0.1, &m, &spec, 5).unwrap();
        ok &= (0.05..=0.0832).contains(&mean) && (mean - paper).abs() <= 0.008;
        parts.push(format!("A{}: {mean:.4} (reference {paper})", if plus { "+" } else { "-" }));
    }
    verdict(ok, format!("{}, bound {:.4}", parts.join(", "), fam.decay_rate_bound()))
}

fn criterion_4() -> Verdict {
    let field = rotating_interval();
    let (space, time) = (Quadrature::new(1, 8), Quadrature::new(32, 8));
    let a = rotating_interval_family().flux_report(&field, space, time).unwrap();
    let b = advected_interval_family().flux_report(&field, space, time).unwrap();
    let ok_a = a.rel_diff <= 1e-8 && (a.cumulative / 0.4 - 1.0).abs() <= 1e-8;
    let ok_b = b.abs_diff <= 1e-8 && b.cumulative.abs() <= 1e-8;
    verdict(
        ok_a && ok_b,
        format!("rotating {:.10} / {:.10}, advected {:.1e} / {:.1e}", a.cumulative, a.instantaneous, b.cumulative, b.instantaneous),
    )
}

fn criterion_5() -> Verdict {
    let mut worst = 0.0f64;
    let mut ok = true;
    for k in 2..=4 {
        let r = det_identity_check(k, 1000, 1e-10, 2024 + k as u64).unwrap();
        worst = worst.max(r.max_rel_error);
        ok &= r.passed() && r.max_rel_error <= 1e-10;
    }
    verdict(ok, format!("3000 trials, max relative error {worst:.2e}"))
}

fn criterion_6() -> Verdict {
    let n = 400_000;
    let inside = |t: f64, x: &[f64]| {
        let s = 0.2 * t.sin();
        x[0] >= 0.3 + s && x[0] <= 0.7 + s
    };
    let rec = survivor_evolve(&rotating_interval(), &inside, 0.0, 2.0 * PI, n, 2.0 * PI / 600.0, 5).unwrap();
    let at = rec.measure(PI / 2.0);
    let sigma = (0.3 * 0.7 / n as f64).sqrt();
    let flat = (rec.measure(PI / 2.0 + 0.02) - rec.measure(PI - 0.02)).abs();
    let m = rec.measures();
    let monotone = m.windows(2).all(|w| w[1] <= w[0]);
    let nested = [1.0, PI, 2.0 * PI].iter().all(|&t| rec.mask(t).iter().zip(rec.poincare_mask(t)).all(|(d, p)| !d || p));
    verdict(
        (at / 0.3 - 1.0).abs() <= 0.01 && flat <= 3.0 * sigma && monotone && nested,
        format!("measure at pi/2 {at:.5}, drift on (pi/2, pi) {flat:.1e}, monotone {monotone}, poincare superset {nested}"),
    )
}

fn criterion_7() -> Verdict {
    let eps = 0.1;
    let dom = DoubleGyre::default().domain().clone();
    let part = BoxPartition::new(dom.clone(), vec![100, 50]).unwrap();
    let g = assemble(&part, &zero_field(dom, 1.0).unwrap(), 0.0, eps, 4).unwrap();
    let r = eigs(&g.matrix, None, &EigsOptions::new(4, Mode::SmallestMagnitude)).unwrap();
    let mut vals: Vec<f64> = r.pairs.iter().map(|p| p.value.re).filter(|v| v.abs() > 1e-10).collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let first = -0.5 * eps * eps * PI * PI / 4.0;
    let second = -0.5 * eps * eps * PI * PI;
    let next = vals.iter().copied().find(|v| (v - vals[0]).abs() > 1e-6).unwrap_or(f64::NAN);
    let ok = r.converged && (vals[0] / first - 1.0).abs() < 0.02 && (next / second - 1.0).abs() < 0.02;
    verdict(ok, format!("subdominant {:.6e} (exact {first:.6e}), next distinct {next:.6e} (exact {second:.6e})", vals[0]))
}

fn criterion_8(gy: &Gyre) -> Verdict {
    let fast = std::env::var("AUGFLOW_ACCEPTANCE_FAST").is_ok_and(|v| v == "1");
    let (ppb, tol) = if fast { (500, 0.04) } else { (2500, 0.02) };
    let field = DoubleGyre::default();
    let p = sample_transfer_matrix(&field, 0.1, &gy.grid.partition, 0.0, 1.0, ppb, 1.0 / 30.0, 1).unwrap();
    let r = eigs(&p.matrix, None, &EigsOptions::new(6, Mode::LargestMagnitude)).unwrap();
    let mut vals = r.values();
    vals.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    let l2 = vals[1];
    let gen = gy.report.pairs[gy.second].value.re;
    let (l3, hit3) = nearest(&vals[2..], c(0.3993, 0.6678), 0.05);
    let ok = l2.im.abs() < 1e-8 && (l2.re - 0.9150).abs() <= tol && (l2.re.ln() - gen).abs() <= 0.01 && hit3;
    verdict(
        ok,
        format!("{ppb} pts/box: lambda2 {:.4}, log {:.4} vs generator {gen:.4}, third {}", l2.re, l2.re.ln(), fmt(l3)),
    )
}

fn criterion_9() -> Verdict {
    let b = BickleyJet::new(BickleyParams::default()).unwrap();
    let part = BoxPartition::new(b.domain().clone(), vec![150, 60]).unwrap();
    let grid = AugmentedGrid::collocation(part, 11, b.period()).unwrap();
    let gen = assemble_hybrid(&grid, &b, 0.1, 4).unwrap();
    let r = eigs_augmented(&gen, &EigsOptions::new(12, Mode::SmallestMagnitude)).unwrap();
    let zero = r.closest(c(0.0, 0.0)).unwrap();
    let kernel = &r.pairs[zero];
    let ones = vec![c(1.0, 0.0); gen.n()];
    let right = correlation(&kernel.vector, &ones);
    // mass conservation: the constant is an exact left null vector
    let sums = gen.to_sparse().transpose().mul_vec(&vec![1.0; gen.n()]);
    let left = sums.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let stable = r.pairs.iter().all(|p| p.value.re <= 1e-8);
    let slow: Vec<f64> = r
        .pairs
        .iter()
        .map(|p| p.value)
        .filter(|z| z.im.abs() < 1e-8 && (0.005..=0.08).contains(&z.re.abs()))
        .map(|z| z.re)
        .collect();
    let mut shift_err = 0.0f64;
    let mut shift_corr = 1.0f64;
    let mut alias = 0.0f64;
    for k in [1i64, 2] {
        let target = kernel.value + companion_offset(&grid, k);
        let near = eigs_augmented(&gen, &EigsOptions::new(1, Mode::NearestShift).with_shift(target + c(1e-3, 1e-3))).unwrap();
        let z = &near.pairs[0];
        shift_err = shift_err.max((z.value - target).norm());
        shift_corr = shift_corr.min(correlation(&z.vector, &modulate(&grid, &kernel.vector, k)));
        // aliasing of the kernel's time dependence; informational only
        alias = alias.max(companion_residual(&gen, kernel, k).unwrap());
    }
    let ok = kernel.value.norm() <= 1e-8 && right >= 0.99 && left <= 1e-10 && stable && slow.len() >= 2 && shift_err <= 1e-8 && shift_corr >= 0.99;
    verdict(
        ok,
        format!(
            "kernel {:.1e} (|c| with constant {right:.4}, left residual {left:.1e}), stable {stable}, slow real {slow:.5?}, companion error {shift_err:.1e} |c| {shift_corr:.4} (modulation residual {alias:.1e})",
            kernel.value.norm()
        ),
    )
}

fn criterion_10() -> Verdict {
    let gyre = DoubleGyre::default();
    let part = BoxPartition::new(gyre.domain().clone(), vec![20, 10]).unwrap();
    let subdominant = |g: &AugmentedGenerator| {
        let r = eigs_augmented(g, &EigsOptions::new(4, Mode::LargestReal)).unwrap();
        r.pairs.iter().map(|p| p.value).filter(|z| z.norm() > 1e-8).max_by(|a, b| a.re.partial_cmp(&b.re).unwrap()).unwrap()
    };
    let ulam = subdominant(&assemble_ulam(&AugmentedGrid::ulam(part.clone(), 120, 1.0).unwrap(), &gyre, 0.1, 4).unwrap());
    let hybrid = subdominant(&assemble_hybrid(&AugmentedGrid::collocation(part, 21, 1.0).unwrap(), &gyre, 0.1, 4).unwrap());
    let rel = (ulam - hybrid).norm() / hybrid.norm();
    verdict(rel <= 0.02, format!("ulam {} vs hybrid {} (rel {rel:.2e})", fmt(ulam), fmt(hybrid)))
}

const NAMES: [&str; 10] = [
    "double-gyre spectrum",
    "companion structure",
    "escape-rate bound",
    "flux equality",
    "determinant identity",
    "survivor oracle",
    "pure-diffusion spectrum",
    "sampled transfer operator",
    "bickley jet hybrid",
    "cross-scheme consistency",
];

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("AUGFLOW_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let needs_gyre = [1, 2, 3, 8].iter().any(|&i| wanted(i));
    let start = Instant::now();
    let gy = if needs_gyre { catch_unwind(gyre).ok() } else { None };
    let mut failed = 0;
    for (i, name) in NAMES.iter().enumerate().map(|(i, n)| (i + 1, n)) {
        if !wanted(i) {
            continue;
        }
        let t = Instant::now();
        let run = || match i {
            1 => criterion_1(gy.as_ref().expect("double-gyre spectrum unavailable")),
            2 => criterion_2(gy.as_ref().expect("double-gyre spectrum unavailable")),
            3 => criterion_3(gy.as_ref().expect("double-gyre spectrum unavailable")),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(gy.as_ref().expect("double-gyre spectrum unavailable")),
            9 => criterion_9(),
            _ => criterion_10(),
        };
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| e.downcast_ref::<String>().cloned());
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !v.pass {
            failed += 1;
        }
        println!("{} [{i:>2}] {name}: {} ({:.1?})", if v.pass { "PASS" } else { "FAIL" }, v.detail, t.elapsed());
    }
    println!("acceptance: {failed} failed, total {:.1?}", start.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
