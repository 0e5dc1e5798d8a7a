//! One function per subcommand. Each one appends its files and checks to an
//! [`Outputs`] sink and stops at the first hard failure; whatever was
//! produced up to that point is still written out.

use anyhow::{bail, Result};
use nhalab::curves::{count_report, predict_eigenvalues_with, spacing_report, trace_arcs, ArcOptions};
use nhalab::hermitian::{eigenvalues_hermitian_with, ids_distance, log_holder_modulus, Boundary, SpectrumReal};
use nhalab::logpotential::{evaluate_U, evaluate_U_anchored, lambda_set_with, LambdaSet, LogPotentialField};
use nhalab::nha::{direct_spectrum_with, lyapunov_csv, lyapunov_sweep, NhaOperator, RootOptions, SpectrumComplex};
use nhalab::potentials::{c2_statistic, peak_count, realize, s_n_sequence, PotentialSpec};
use nhalab::table::{fmt_f64, Csv};
use nhalab::Execution;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub checks: Vec<Check>,
}

impl Outputs {
    fn add(&mut self, name: String, contents: impl Into<Vec<u8>>) {
        self.files.push((name, contents.into()));
    }

    fn add_json(&mut self, name: &str, value: &Value) {
        let mut text = serde_json::to_string_pretty(value).expect("json values always serialize");
        text.push('\n');
        self.add(name.to_owned(), text);
    }

    fn check(&mut self, name: String, value: f64, bound: f64) {
        self.checks.push(Check { name, value, bound, pass: value <= bound });
    }
}

pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub spec: PotentialSpec,
    pub exec: Execution,
    /// Verify the level identity on every emitted eigenvalue.
    pub check: bool,
}

fn tag(n: usize, g: f64) -> String {
    format!("n{n}_g{}", fmt_f64(g))
}

fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect(),
    }
}

impl Run<'_> {
    fn hermitian(&self, n: usize) -> Result<SpectrumReal> {
        let p = realize(&self.spec, n)?;
        Ok(eigenvalues_hermitian_with(&p, Boundary::Periodic, self.exec)?)
    }

    fn direct(&self, herm: &SpectrumReal, g: f64) -> Result<SpectrumComplex> {
        let op = NhaOperator::new(herm.potential().clone(), g)?;
        Ok(direct_spectrum_with(&op, herm, RootOptions { exec: self.exec, ..RootOptions::default() })?)
    }

    fn reference(&self) -> Result<LogPotentialField> {
        Ok(LogPotentialField::new(&self.hermitian(self.cfg.n_ref)?))
    }

    fn window(&self, field: &LogPotentialField) -> (f64, f64) {
        match self.cfg.window {
            Some([a, b]) => (a, b),
            None => {
                let (lo, hi) = field.support();
                (lo - 1.0, hi + 1.0)
            }
        }
    }

    fn lambda(&self, reference: &LogPotentialField, g: f64) -> Result<LambdaSet> {
        let tol = &self.cfg.tolerances;
        Ok(lambda_set_with(reference, g, self.window(reference), tol.lambda_step, tol.boundary_delta, self.exec)?)
    }

    fn arc_options(&self) -> ArcOptions {
        ArcOptions { step: self.cfg.curves.step, refine: true, exec: self.exec }
    }

    fn positive_drifts(&self) -> Result<Vec<f64>> {
        let gs = self.cfg.drifts();
        if gs.is_empty() {
            bail!("missing key: g or g_list");
        }
        if gs.contains(&0.0) {
            bail!("level arcs need g > 0");
        }
        Ok(gs)
    }

    /// Records `max |U_n(z) - g_n| / max(1, g)` over the spectrum.
    fn level_check(&self, out: &mut Outputs, name: String, field: &LogPotentialField, s: &SpectrumComplex) {
        if !self.check {
            return;
        }
        let scale = s.g().max(1.0);
        let worst = s
            .eigenvalues()
            .iter()
            .map(|ev| {
                let u = match ev.anchor {
                    Some(a) => evaluate_U_anchored(field, a.index, a.sign, a.log_offset),
                    None => evaluate_U(field, ev.z.re, ev.z.im.abs()),
                };
                (u - s.level()).abs() / scale
            })
            .fold(0.0, f64::max);
        out.check(name, worst, self.cfg.tolerances.level);
    }
}

pub fn spectrum(run: &Run, out: &mut Outputs) -> Result<()> {
    let gs = run.cfg.drifts();
    if gs.is_empty() {
        bail!("missing key: g or g_list");
    }
    let mut summary = Vec::new();
    let mut failures = 0;
    for n in run.cfg.sizes() {
        let herm = run.hermitian(n)?;
        let field = LogPotentialField::new(&herm);
        for &g in &gs {
            let name = format!("spectrum_{}.csv", tag(n, g));
            if g == 0.0 {
                let mut csv = Csv::new(&["re", "im", "residual"]);
                for &e in herm.energies() {
                    csv.row(&[e, 0.0, 0.0]);
                }
                out.add(name, csv.finish());
                summary.push(json!({ "n": n, "g": g, "level": Value::Null, "non_real_fraction": 0.0,
                    "max_residual": 0.0, "failures": 0 }));
                continue;
            }
            let s = run.direct(&herm, g)?;
            out.add(name, s.to_csv());
            run.level_check(out, format!("level_{}", tag(n, g)), &field, &s);
            let frac = s.non_real(run.cfg.tolerances.non_real).len() as f64 / n as f64;
            summary.push(json!({ "n": n, "g": g, "level": s.level(), "non_real_fraction": frac,
                "max_residual": s.max_residual(), "failures": s.failures() }));
            failures += s.failures();
        }
    }
    out.add_json("spectrum_summary.json", &Value::Array(summary));
    if failures > 0 {
        bail!("root finder did not converge for {failures} eigenvalue(s)");
    }
    Ok(())
}

pub fn curves(run: &Run, out: &mut Outputs) -> Result<()> {
    let gs = run.positive_drifts()?;
    let reference = run.reference()?;
    let mut summary = Vec::new();
    for n in run.cfg.sizes() {
        let field = LogPotentialField::new(&run.hermitian(n)?);
        for &g in &gs {
            let t = tag(n, g);
            let lambda = run.lambda(&reference, g)?;
            let arcs = trace_arcs(&field, &lambda, run.arc_options())?;
            let mut preds = Csv::new(&["arc", "quantum", "re", "im", "residual", "edge"]);
            let mut worst = 0.0f64;
            for (j, arc) in arcs.iter().enumerate() {
                out.add(format!("arc_{t}_{j}.csv"), arc.to_csv());
                let predicted = predict_eigenvalues_with(arc, &field, run.cfg.curves.phase, run.exec)?;
                for p in &predicted {
                    preds.indexed_row(j, &[p.quantum as f64, p.z.re, p.z.im, p.residual, f64::from(u8::from(p.edge))]);
                    worst = worst.max((evaluate_U(&field, p.z.re, p.z.im) - arc.level).abs() / g.max(1.0));
                }
                summary.push(json!({ "n": n, "g": g, "arc": j, "interval": lambda.intervals.get(arc.interval),
                    "start": arc.start, "end": arc.end, "points": arc.len(), "dropped": arc.dropped,
                    "min_theta_prime": arc.min_theta_prime, "max_residual": arc.max_residual,
                    "predictions": predicted.len() }));
            }
            out.add(format!("predicted_{t}.csv"), preds.finish());
            if run.check {
                out.check(format!("level_predicted_{t}"), worst, run.cfg.tolerances.level);
            }
        }
    }
    out.add_json("curves_summary.json", &Value::Array(summary));
    Ok(())
}

pub fn spacings(run: &Run, out: &mut Outputs) -> Result<()> {
    let gs = run.positive_drifts()?;
    let reference = run.reference()?;
    let mut summary = Vec::new();
    for n in run.cfg.sizes() {
        let herm = run.hermitian(n)?;
        let field = LogPotentialField::new(&herm);
        for &g in &gs {
            let t = tag(n, g);
            let direct = run.direct(&herm, g)?;
            run.level_check(out, format!("level_{t}"), &field, &direct);
            if direct.failures() > 0 {
                bail!("root finder did not converge for {} eigenvalue(s) at {t}", direct.failures());
            }
            let lambda = run.lambda(&reference, g)?;
            for (j, arc) in trace_arcs(&field, &lambda, run.arc_options())?.iter().enumerate() {
                let (lo, hi) = arc.central_half();
                let points: Vec<_> = direct.values().into_iter().filter(|z| z.re >= lo && z.re < hi).collect();
                let report = spacing_report(&points, &field, Some(&reference))?;
                out.add(format!("spacings_{t}_{j}.csv"), report.to_csv());
                let count = count_report(arc, &field, &direct, (lo, hi))?;
                summary.push(json!({ "n": n, "g": g, "arc": j, "window": [lo, hi], "pairs": report.pairs.len(),
                    "max_delta": report.max_delta, "median_delta": report.median_delta,
                    "median_prediction": report.median_prediction, "max_delta_flipped": report.max_delta_flipped,
                    "ordered": report.ordered, "count": count, "count_discrepancy": count.discrepancy() }));
            }
        }
    }
    out.add_json("spacings_summary.json", &Value::Array(summary));
    Ok(())
}

pub fn dos(run: &Run, out: &mut Outputs) -> Result<()> {
    let dos = &run.cfg.dos;
    let reference = run.hermitian(run.cfg.n_ref)?.ids();
    let mut summary = Vec::new();
    for n in run.cfg.sizes() {
        let herm = run.hermitian(n)?;
        let ids = herm.ids();
        let (lo, hi) = (herm.energies()[0], herm.energies()[n - 1]);
        out.add(format!("ids_n{n}.csv"), ids.to_csv(&linspace(lo - 0.5, hi + 0.5, dos.points)));
        let moduli = dos
            .energies
            .iter()
            .map(|&e| {
                Ok(json!({ "energy": e, "sigmas": dos.sigmas, "modulus": log_holder_modulus(&ids, e, &dos.sigmas)? }))
            })
            .collect::<Result<Vec<_>>>()?;
        summary.push(json!({ "n": n, "support": [lo, hi], "c2": c2_statistic(herm.potential()),
            "distance_to_reference": ids_distance(&ids, &reference), "n_ref": run.cfg.n_ref,
            "log_holder": moduli }));
    }
    out.add_json("dos_summary.json", &Value::Array(summary));
    Ok(())
}

pub fn sparse(run: &Run, out: &mut Outputs) -> Result<()> {
    let sizes = run.cfg.sizes();
    let s = s_n_sequence(&run.spec, &sizes)?;
    let mut csv = Csv::new(&["n", "s_n", "peaks"]);
    for (&n, &v) in sizes.iter().zip(&s) {
        csv.indexed_row(n, &[v, peak_count(&run.spec, n)? as f64]);
    }
    out.add("s_n.csv".into(), csv.finish());
    Ok(())
}

pub fn lyapunov(run: &Run, out: &mut Outputs) -> Result<()> {
    let section = &run.cfg.lyapunov;
    if section.im[0] <= 0.0 || section.im[1] <= 0.0 {
        bail!("lyapunov.im must lie above the real axis, got {:?}", section.im);
    }
    for n in run.cfg.sizes() {
        let herm = run.hermitian(n)?;
        let field = LogPotentialField::new(&herm);
        let [a, b] = match section.re.or(run.cfg.window) {
            Some(re) => re,
            None => {
                let (lo, hi) = field.support();
                [lo - 1.0, hi + 1.0]
            }
        };
        let xs = linspace(a, b, section.nx);
        let ys = linspace(section.im[0], section.im[1], section.ny);
        let zs: Vec<_> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| nhalab::Complex64::new(x, y))).collect();
        let samples = lyapunov_sweep(herm.potential(), &field, &zs, run.exec)?;
        out.add(format!("lyapunov_n{n}.csv"), lyapunov_csv(&samples));
        let min_gamma = samples.iter().map(|s| s.gamma).fold(f64::INFINITY, f64::min);
        out.check(format!("gamma_nonnegative_n{n}"), -min_gamma, 0.0);
    }
    Ok(())
}
