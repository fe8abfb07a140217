//! Subcommand implementations. Every artifact carries the config hash.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use augflow::augmented::{assemble_hybrid, assemble_ulam_with};
use augflow::coherent::CoherentFamily;
use augflow::fields::VectorField;
use augflow::spectral::{companion_scan, eigs, eigs_augmented, EigenPair, EigsOptions, Mode, SpectrumReport};
use augflow::stochastic::{escape_runs, sample_transfer_matrix, EnsembleSpec, Membership};
use augflow::transport::{
    advected_interval_family, augmented_box_family_flux, box_family_flux, moving_circle, rotating_interval_family,
    Quadrature,
};
use augflow::{AugmentedGenerator, AugmentedGrid, Complex64, Error};
use serde_json::{json, Value};

use crate::config::{BoundarySpec, ExperimentConfig, FluxSpec, SchemeSpec};
use crate::Failure;

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub config_path: PathBuf,
    pub hash: String,
    pub out: PathBuf,
}

type Res<T> = std::result::Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

impl Ctx {
    pub fn header(&self, what: &str) -> Vec<String> {
        vec![
            format!("augflow {} {what}", env!("CARGO_PKG_VERSION")),
            format!("experiment: {}", self.cfg.name),
            format!("config: {}", self.config_path.display()),
            format!("config_sha256: {}", self.hash),
        ]
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Res<()> {
        fs::create_dir_all(&self.out).map_err(|e| io_err(&self.out, e))
    }

    fn write_json(&self, name: &str, what: &str, mut body: Value) -> Res<PathBuf> {
        let path = self.path(name);
        if let Value::Object(m) = &mut body {
            m.insert("config_sha256".into(), json!(self.hash));
            m.insert("experiment".into(), json!(self.cfg.name));
            m.insert("command".into(), json!(what));
        }
        let text = serde_json::to_string_pretty(&body).expect("json values serialize");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    fn field(&self) -> Res<Box<dyn VectorField>> {
        Ok(self.cfg.field.build()?)
    }

    fn grid(&self, field: &dyn VectorField) -> Res<AugmentedGrid> {
        Ok(self.cfg.grid(field)?)
    }

    fn generator(&self, field: &dyn VectorField, grid: &AugmentedGrid) -> Res<AugmentedGenerator> {
        let t = Instant::now();
        let g = match self.cfg.scheme {
            SchemeSpec::Ulam { sampling, .. } => assemble_ulam_with(grid, field, self.cfg.eps, self.cfg.quadrature, sampling)?,
            SchemeSpec::Hybrid { .. } => assemble_hybrid(grid, field, self.cfg.eps, self.cfg.quadrature)?,
        };
        log::info!("assembled {} unknowns in {:.2?}", g.n(), t.elapsed());
        Ok(g)
    }
}

fn c(z: Complex64) -> Value {
    json!([z.re, z.im])
}

pub fn assemble(ctx: &Ctx) -> Res<()> {
    ctx.ensure_out()?;
    let field = ctx.field()?;
    let grid = ctx.grid(field.as_ref())?;
    let g = ctx.generator(field.as_ref(), &grid)?;
    let a = g.to_sparse();
    let g1 = g.apply(&vec![1.0; g.n()])?;
    let vol = grid.partition.box_volume();
    let mass = a.weighted_col_sums(&vec![vol; g.n()]);
    let mtx = ctx.path("generator.mtx");
    g.write_matrix_market(&mtx, &ctx.header("assemble"))?;
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ctx.write_json(
        "assemble.json",
        "assemble",
        json!({
            "n": g.n(),
            "nnz": a.nnz(),
            "n_boxes": g.n_boxes(),
            "n_slices": g.n_slices(),
            "scheme": g.scheme.name(),
            "max_abs_g_ones": max_abs(&g1),
            "max_abs_column_mass": max_abs(&mass),
            "matrix": mtx.file_name().unwrap().to_string_lossy(),
        }),
    )?;
    println!("wrote {} ({} x {}, {} nonzeros)", mtx.display(), g.n(), g.n(), a.nnz());
    Ok(())
}

/// Runs the eigensolver and writes the spectrum and eigenvectors.
fn solve(ctx: &Ctx, g: &AugmentedGenerator) -> Res<SpectrumReport> {
    ctx.ensure_out()?;
    let t = Instant::now();
    let mut report = eigs_augmented(g, &ctx.cfg.eigs.options())?;
    log::info!("eigs finished in {:.2?}", t.elapsed());
    if let Some(base) = ctx.cfg.eigs.companion_base {
        if base < report.pairs.len() {
            report.companions = companion_scan(&report, &g.grid, base)?;
        }
    }
    let header = ctx.header("eigs");
    report.write_csv(&ctx.path("spectrum.csv"), &header)?;
    let indices: Vec<usize> = match &ctx.cfg.eigs.vectors {
        Some(v) => v.iter().copied().filter(|&i| i < report.pairs.len()).collect(),
        None => (0..report.pairs.len()).collect(),
    };
    report.write_eigenvectors(&indices, &g.grid, &ctx.path("eigenvectors.csv"), &header)?;
    ctx.write_json(
        "spectrum.json",
        "eigs",
        json!({
            "mode": report.mode,
            "shifts": report.shifts.iter().map(|z| c(*z)).collect::<Vec<_>>(),
            "converged": report.converged,
            "norm_estimate": report.norm_estimate,
            "warnings": report.warnings,
            "eigenvalues": report.pairs.iter().map(|p| json!({
                "value": c(p.value),
                "residual": p.residual,
                "converged": p.converged,
                "band_edge": p.band_edge,
                "decay_rate_bound": -p.value.re,
            })).collect::<Vec<_>>(),
            "companions": report.companions,
        }),
    )?;
    Ok(report)
}

pub fn eigs_cmd(ctx: &Ctx) -> Res<()> {
    let field = ctx.field()?;
    let grid = ctx.grid(field.as_ref())?;
    let g = ctx.generator(field.as_ref(), &grid)?;
    let report = solve(ctx, &g)?;
    for (i, p) in report.pairs.iter().enumerate() {
        let flag = if p.band_edge { "  band_edge" } else { "" };
        println!("{i:>3} {:>12.6} {:>+12.6}i  residual {:.1e}{flag}", p.value.re, p.value.im, p.residual);
    }
    for l in report.companions.iter().filter(|l| l.is_companion) {
        println!("companion: {} ~ {} shifted by k={} (|c| = {:.4})", l.index, l.base, l.k, l.correlation);
    }
    if !report.converged {
        return Err(Failure::NoConvergence(report.warnings.join("; ")));
    }
    Ok(())
}

/// Eigenpairs from a previous `eigs` run with the same config, if all
/// `needed` indices are present; otherwise solves again.
fn pairs(ctx: &Ctx, g: &AugmentedGenerator, needed: &[usize]) -> Res<Vec<Option<EigenPair>>> {
    match load_cached(ctx, g.n()) {
        Ok(Some(p)) if needed.iter().all(|&i| p.get(i).is_some_and(Option::is_some)) => {
            log::info!("reusing eigenvectors from {}", ctx.path("eigenvectors.csv").display());
            return Ok(p);
        }
        Ok(_) => {}
        Err(e) => log::warn!("ignoring cached eigenvectors: {e}"),
    }
    let r = solve(ctx, g)?;
    for &i in needed {
        if i >= r.pairs.len() {
            return Err(Failure::NoConvergence(format!("eigenpair {i} not computed ({} found)", r.pairs.len())));
        }
    }
    Ok(r.pairs.into_iter().map(Some).collect())
}

fn load_cached(ctx: &Ctx, n: usize) -> std::result::Result<Option<Vec<Option<EigenPair>>>, String> {
    let csv = ctx.path("eigenvectors.csv");
    let side = csv.with_extension("json");
    let spectrum = ctx.path("spectrum.csv");
    if !(csv.exists() && side.exists() && spectrum.exists()) {
        return Ok(None);
    }
    let meta: Value = serde_json::from_str(&fs::read_to_string(&side).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let tag = format!("config_sha256: {}", ctx.hash);
    let fresh = meta["header"].as_array().is_some_and(|h| h.iter().any(|l| l.as_str() == Some(&tag)));
    if !fresh {
        return Ok(None);
    }
    // residuals and values from the spectrum table
    let mut table = Vec::new();
    for line in fs::read_to_string(&spectrum).map_err(|e| e.to_string())?.lines() {
        if line.starts_with('#') || line.starts_with("index") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{}: {e}", spectrum.display()));
        table.push((Complex64::new(num(f[1])?, num(f[2])?), num(f[3])?));
    }
    let mut out: Vec<Option<EigenPair>> = vec![None; table.len()];
    let file = fs::File::open(&csv).map_err(|e| e.to_string())?;
    let mut vecs: Vec<Vec<Complex64>> = vec![Vec::new(); table.len()];
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| e.to_string())?;
        if line.starts_with('#') || line.starts_with("index") {
            continue;
        }
        let mut it = line.split(',');
        let idx: usize = it.next().and_then(|s| s.parse().ok()).ok_or("bad index column")?;
        let rest: Vec<f64> = it.map(|s| s.parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
        let v = vecs.get_mut(idx).ok_or("eigenvector index beyond spectrum")?;
        v.push(Complex64::new(rest[2], rest[3]));
    }
    for (i, v) in vecs.into_iter().enumerate() {
        if v.len() == n {
            let (value, residual) = table[i];
            out[i] = Some(EigenPair { value, vector: v, residual, converged: true, band_edge: false });
        }
    }
    Ok(Some(out))
}

fn pair_at(p: &[Option<EigenPair>], i: usize) -> Res<&EigenPair> {
    p.get(i).and_then(Option::as_ref).ok_or_else(|| Failure::NoConvergence(format!("eigenpair {i} unavailable")))
}

pub fn extract(ctx: &Ctx) -> Res<()> {
    let spec = ctx.cfg.extract.clone().ok_or_else(|| Failure::Config("config has no \"extract\" section".into()))?;
    let field = ctx.field()?;
    let grid = ctx.grid(field.as_ref())?;
    let g = ctx.generator(field.as_ref(), &grid)?;
    let all = pairs(ctx, &g, &spec.indices)?;
    let header = ctx.header("extract");
    let mut families = Vec::new();
    for &i in &spec.indices {
        for &phase in &spec.phases {
            let fam = CoherentFamily::from_eigenpair(pair_at(&all, i)?, &grid, phase)?;
            for &t in &spec.times {
                fam.write_slice_csv(t, &ctx.path(&format!("slice_i{i}_p{phase:.4}_t{t:.4}.csv")), &header)?;
            }
            let sets = ctx.path(&format!("sets_i{i}_p{phase:.4}.csv"));
            fam.write_sets_csv(&spec.times, spec.level, &sets, &header)?;
            families.push(json!({
                "index": i,
                "phase": fam.phase,
                "eigenvalue": c(fam.eigenvalue),
                "decay_rate_bound": fam.decay_rate_bound(),
                "phase_period": fam.phase_period(),
                "sets": sets.file_name().unwrap().to_string_lossy(),
            }));
        }
    }
    ctx.write_json("families.json", "extract", json!({ "times": spec.times, "level": spec.level, "families": families }))?;
    println!("wrote {} families to {}", families.len(), ctx.out.display());
    Ok(())
}

pub fn escape(ctx: &Ctx) -> Res<()> {
    let spec = ctx.cfg.escape.clone().ok_or_else(|| Failure::Config("config has no \"escape\" section".into()))?;
    let field = ctx.field()?;
    let grid = ctx.grid(field.as_ref())?;
    let g = ctx.generator(field.as_ref(), &grid)?;
    let all = pairs(ctx, &g, &[spec.index])?;
    let fam = CoherentFamily::from_eigenpair(pair_at(&all, spec.index)?, &grid, spec.phase)?.with_anchor(spec.s);
    let bound = fam.decay_rate_bound();
    let h = spec.h.unwrap_or(grid.step());
    let ens = EnsembleSpec::uniform(spec.n, spec.seed, h, spec.s, spec.t);
    let header = ctx.header("escape");
    let mut rows = Vec::new();
    let mut table = String::from("family,bound,mean_rate,std_error,min_rate,max_rate,runs,mean_starters,poincare_mean_rate\n");
    for (name, plus) in [("plus", true), ("minus", false)] {
        let t = Instant::now();
        let m = Membership::Family { family: &fam, plus, level: spec.level };
        let (runs, mean) = escape_runs(field.as_ref(), ctx.cfg.eps, &m, &ens, spec.runs)?;
        log::info!("escape {name}: {} runs in {:.2?}", runs.len(), t.elapsed());
        for (r, e) in runs.iter().enumerate() {
            e.write_csv(&ctx.path(&format!("escape_{name}_run{r}.csv")), &header)?;
        }
        let rates: Vec<f64> = runs.iter().map(|e| e.rate).collect();
        let k = rates.len() as f64;
        let sd = if rates.len() > 1 { (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() / k.sqrt() } else { runs[0].std_error };
        let pmean = runs.iter().map(|e| e.poincare_rate).sum::<f64>() / k;
        let starters = runs.iter().map(|e| e.starters).sum::<usize>() as f64 / k;
        let (lo, hi) = rates.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
        table.push_str(&format!("{name},{bound:.6},{mean:.6},{sd:.6},{lo:.6},{hi:.6},{},{starters:.1},{pmean:.6}\n", runs.len()));
        println!("A{}: bound {bound:.4}, escape estimate {mean:.4} +- {sd:.4} ({} runs, N = {})", if plus { "+" } else { "-" }, runs.len(), spec.n);
        rows.push(json!({
            "family": name,
            "bound": bound,
            "mean_rate": mean,
            "std_error": sd,
            "poincare_mean_rate": pmean,
            "rates": rates,
            "starters": runs.iter().map(|e| e.starters).collect::<Vec<_>>(),
            "within_bound": mean <= bound + 3.0 * sd,
        }));
    }
    let path = ctx.path("escape.csv");
    let mut text: String = header.iter().map(|h| format!("# {h}\n")).collect();
    text.push_str(&format!("# seed = {}, N = {}, h = {h}, s = {}, t = {}\n", spec.seed, spec.n, spec.s, spec.t));
    text.push_str(&table);
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    ctx.write_json(
        "escape.json",
        "escape",
        json!({ "index": spec.index, "eigenvalue": c(fam.eigenvalue), "seed": spec.seed, "n": spec.n, "h": h, "s": spec.s, "t": spec.t, "families": rows }),
    )?;
    Ok(())
}

pub fn flux(ctx: &Ctx) -> Res<()> {
    ctx.ensure_out()?;
    let spec = ctx.cfg.flux.clone().ok_or_else(|| Failure::Config("config has no \"flux\" section".into()))?;
    let field = ctx.field()?;
    match spec {
        FluxSpec::Boundary { family, space_panels, time_panels, nodes } => {
            let tau = field.period();
            let fam = match family {
                BoundarySpec::RotatingInterval => rotating_interval_family(),
                BoundarySpec::AdvectedInterval => advected_interval_family(),
                BoundarySpec::Circle { centre, amplitude, radius } => {
                    let w = 2.0 * std::f64::consts::PI / tau;
                    let pos = move |t: f64| [centre[0] + amplitude[0] * (w * t).sin(), centre[1] + amplitude[1] * (w * t).sin()];
                    let vel = move |t: f64| [amplitude[0] * w * (w * t).cos(), amplitude[1] * w * (w * t).cos()];
                    moving_circle(tau, pos, vel, radius)
                }
            };
            if (fam.period - tau).abs() > 1e-12 * tau {
                return Err(Failure::Config(format!("boundary family period {} differs from the field period {tau}", fam.period)));
            }
            let r = fam.flux_report(field.as_ref(), Quadrature::new(space_panels, nodes), Quadrature::new(time_panels, nodes))?;
            println!("cumulative {:.12}  instantaneous {:.12}  rel diff {:.2e}", r.cumulative, r.instantaneous, r.rel_diff);
            ctx.write_json("flux.json", "flux", json!({ "kind": "boundary", "report": r }))?;
        }
        FluxSpec::BoxSets { index, phase, level, plus } => {
            let grid = ctx.grid(field.as_ref())?;
            let g = ctx.generator(field.as_ref(), &grid)?;
            let all = pairs(ctx, &g, &[index])?;
            let fam = CoherentFamily::from_eigenpair(pair_at(&all, index)?, &grid, phase)?;
            let lv = level.unwrap_or(0.0).abs();
            let sets: Vec<Vec<bool>> = (0..grid.n_slices())
                .map(|l| fam.sign_field(grid.slice_time(l)).iter().map(|&v| if plus { v >= lv } else { v <= -lv }).collect())
                .collect();
            let spatial = box_family_flux(&g, &sets)?;
            let augmented = augmented_box_family_flux(&g, &sets)?;
            let volume: f64 = sets.iter().map(|s| s.iter().filter(|&&b| b).count() as f64).sum::<f64>() * grid.partition.box_volume() * grid.step();
            println!("box flux {spatial:.6} (with time coupling {augmented:.6}), augmented volume {volume:.6}, ratio {:.6}", spatial / volume);
            ctx.write_json(
                "flux.json",
                "flux",
                json!({ "kind": "box_sets", "index": index, "plus": plus, "phase": phase, "level": level,
                        "spatial_flux": spatial, "augmented_flux": augmented, "augmented_volume": volume,
                        "flux_to_volume": spatial / volume }),
            )?;
        }
    }
    Ok(())
}

pub fn ulam_compare(ctx: &Ctx) -> Res<()> {
    ctx.ensure_out()?;
    let spec = ctx.cfg.ulam_compare.clone().ok_or_else(|| Failure::Config("config has no \"ulam_compare\" section".into()))?;
    let field = ctx.field()?;
    let grid = ctx.grid(field.as_ref())?;
    let t0 = Instant::now();
    let p = sample_transfer_matrix(field.as_ref(), ctx.cfg.eps, &grid.partition, spec.s, spec.t, spec.points_per_box, spec.h, spec.seed)?;
    log::info!("sampled transfer matrix in {:.2?}", t0.elapsed());
    let header = ctx.header("ulam-compare");
    if spec.write_matrix {
        p.write_matrix_market(&ctx.path("transfer.mtx"), &header)?;
    }
    let rep = eigs(&p.matrix, None, &EigsOptions::new(spec.k, Mode::LargestMagnitude))?;
    let generator: Vec<Complex64> = if spec.generator {
        let g = ctx.generator(field.as_ref(), &grid)?;
        let all = pairs(ctx, &g, &[])?;
        all.into_iter().flatten().map(|q| q.value).collect()
    } else {
        Vec::new()
    };
    let span = spec.t - spec.s;
    let mut csv: String = header.iter().map(|h| format!("# {h}\n")).collect();
    csv.push_str(&format!("# points_per_box = {}, h = {}, s = {}, t = {}, seed = {}\n", spec.points_per_box, p.h, spec.s, spec.t, spec.seed));
    csv.push_str("index,re,im,abs,log_re,log_im,generator_re,generator_im\n");
    let mut rows = Vec::new();
    for (i, q) in rep.pairs.iter().enumerate() {
        let l = q.value.ln() / span;
        let near = generator.iter().copied().min_by(|a, b| (a - l).norm().partial_cmp(&(b - l).norm()).unwrap());
        let (gr, gi) = near.map_or((String::new(), String::new()), |z| (format!("{:.6}", z.re), format!("{:.6}", z.im)));
        csv.push_str(&format!("{i},{:.6},{:.6},{:.6},{:.6},{:.6},{gr},{gi}\n", q.value.re, q.value.im, q.value.norm(), l.re, l.im));
        println!("{i:>3} {:>9.4} {:>+9.4}i   log/T {:>9.4} {:>+9.4}i   generator {}", q.value.re, q.value.im, l.re, l.im, near.map_or("-".into(), |z| format!("{:.4} {:+.4}i", z.re, z.im)));
        rows.push(json!({ "value": c(q.value), "log_rate": c(l), "nearest_generator": near.map(c) }));
    }
    let path = ctx.path("ulam_compare.csv");
    fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
    ctx.write_json(
        "ulam_compare.json",
        "ulam-compare",
        json!({ "points_per_box": spec.points_per_box, "h": p.h, "s": spec.s, "t": spec.t, "seed": spec.seed, "eigenvalues": rows }),
    )?;
    Ok(())
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}
