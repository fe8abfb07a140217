//! Quick closed-form checks that need no config.

use std::f64::consts::PI;

use augflow::fields::{rotating_interval, zero_field, DoubleGyre, VectorField};
use augflow::generator::assemble;
use augflow::spectral::{eigs, EigsOptions, Mode};
use augflow::transport::{det_identity_check, rotating_interval_family, survivor_evolve, Quadrature};
use augflow::BoxPartition;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> augflow::Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

pub fn run() -> Vec<Check> {
    vec![
        check("determinant identity", || {
            let mut worst = 0.0f64;
            let mut ok = true;
            for k in 2..=4 {
                let r = det_identity_check(k, 200, 1e-10, 11)?;
                worst = worst.max(r.max_rel_error);
                ok &= r.passed();
            }
            Ok((ok, format!("max relative error {worst:.2e}")))
        }),
        check("rotating interval survivors", || {
            let n = 40_000;
            let inside = |t: f64, x: &[f64]| {
                let c = 0.2 * t.sin();
                x[0] >= 0.3 + c && x[0] <= 0.7 + c
            };
            let rec = survivor_evolve(&rotating_interval(), &inside, 0.0, 2.0 * PI, n, 2.0 * PI / 400.0, 3)?;
            let tol = 3.0 * (0.21 / n as f64).sqrt() + 0.002;
            let errs = [rec.measure(0.0) - 0.4, rec.measure(PI / 2.0) - 0.3, rec.measure(1.0) - (0.4 - 0.1 * 1f64.sin())];
            let worst = errs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
            Ok((worst < tol, format!("max deviation {worst:.4} (tolerance {tol:.4})")))
        }),
        check("pure diffusion spectrum", || {
            let eps = 0.1;
            let dom = DoubleGyre::default().domain().clone();
            let part = BoxPartition::new(dom.clone(), vec![40, 20])?;
            let g = assemble(&part, &zero_field(dom, 1.0)?, 0.0, eps, 4)?;
            let r = eigs(&g.matrix, None, &EigsOptions::new(3, Mode::SmallestMagnitude))?;
            let exact = -0.5 * eps * eps * PI * PI / 4.0;
            let lead = r.pairs.iter().map(|p| p.value.re).filter(|v| v.abs() > 1e-10).fold(f64::NEG_INFINITY, f64::max);
            let rel = (lead / exact - 1.0).abs();
            Ok((r.converged && rel < 0.02, format!("{lead:.7} vs {exact:.7} (rel {rel:.1e})")))
        }),
        check("moving boundary flux", || {
            let r = rotating_interval_family().flux_report(&rotating_interval(), Quadrature::new(1, 4), Quadrature::new(32, 8))?;
            let ok = (r.cumulative - 0.4).abs() < 1e-8 && (r.instantaneous - 0.4).abs() < 1e-8;
            Ok((ok, format!("cumulative {:.10}, instantaneous {:.10}", r.cumulative, r.instantaneous)))
        }),
    ]
}
