use parahom_core::corrector::{beta_sweep, corrector_residual, effective, flux, solve_cell, CorrectorOptions};
use parahom_core::ensemble::{derive_seed, sample, EnsembleKind};
use parahom_core::fluxcor::{growth_profile, solve_sigma, verify_identities};
use parahom_core::lattice::{write_phom, Lattice};
use parahom_core::stats::{fluct_suite, minimal_radius, mu_d, variance_scaling, MinimalRadiusSample};
use parahom_core::twoscale::{expansion, rate_experiment, CellData, CylinderProblem, ExpansionOptions, MacroGrid};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{DumpField, ExperimentConfig};
use crate::error::CliError;
use crate::output::{Csv, RunWriter};

fn f(v: f64) -> String {
    format!("{v}")
}

fn missing(block: &str) -> CliError {
    CliError::Schema(format!("this subcommand needs the run.{block} block"))
}

pub fn effective_cmd(cfg: &ExperimentConfig, seed: u64, out: &mut RunWriter) -> Result<(), CliError> {
    let l = cfg.lattice();
    let opts = cfg.corrector_options();
    let a = sample(&cfg.ensemble, &l, seed)?;
    let set = solve_cell(&a, 0.0, &opts)?;
    let abar = effective(&a, &set)?;
    let residuals = corrector_residual(&a, &set)?;
    let mut csv = Csv::new(&["i", "j", "value"]);
    for i in 0..l.d() {
        for j in 0..l.d() {
            csv.row(&[i.to_string(), j.to_string(), f(abar.get(i, j))]);
        }
    }
    out.write("abar.csv", &csv.into_bytes())?;
    out.write_json(
        "effective.json",
        &json!({
            "abar": abar.rows(),
            "eigen_range": abar.eigen_range(),
            "asymmetry": abar.asymmetry(),
            "ellipticity": a.ellipticity_report(),
            "residuals": residuals,
            "grad_norm": set.grad_norm(),
            "solves": set.reports,
        }),
    )
}

pub fn beta_sweep_cmd(cfg: &ExperimentConfig, seed: u64, out: &mut RunWriter) -> Result<(), CliError> {
    if cfg.run.betas.is_empty() {
        return Err(missing("betas"));
    }
    let l = cfg.lattice();
    let d = l.d();
    let a = sample(&cfg.ensemble, &l, seed)?;
    let rows = beta_sweep(&a, &cfg.run.betas, &cfg.corrector_options())?;
    let mut header = vec!["beta".to_string()];
    for i in 0..d {
        for j in 0..d {
            header.push(format!("a{i}{j}"));
        }
    }
    header.extend(["grad_norm", "phi_norm", "error"].map(String::from));
    let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for r in &rows {
        let mut cells = vec![f(r.beta)];
        for i in 0..d {
            for j in 0..d {
                cells.push(r.abar.as_ref().map_or(String::new(), |t| f(t.get(i, j))));
            }
        }
        cells.push(r.grad_norm.map_or(String::new(), f));
        cells.push(r.phi_norm.map_or(String::new(), f));
        cells.push(r.error.clone().unwrap_or_default().replace(',', ";"));
        csv.row(&cells);
    }
    out.write("beta_sweep.csv", &csv.into_bytes())?;
    out.write_json("beta_sweep.json", &rows)
}

fn unit_radius(l: &Lattice) -> f64 {
    l.h().max(l.tau().sqrt())
}

pub fn fluxcor_cmd(cfg: &ExperimentConfig, seed: u64, out: &mut RunWriter) -> Result<(), CliError> {
    let l = cfg.lattice();
    let d = l.d();
    let a = sample(&cfg.ensemble, &l, seed)?;
    let set = solve_cell(&a, 0.0, &cfg.corrector_options())?;
    let abar = effective(&a, &set)?;
    let q = flux(&a, &set, &abar)?;
    let sigma = solve_sigma(&q)?;
    let ids = verify_identities(&sigma, &q, &set);
    let unit = unit_radius(&l);
    let radii: Vec<f64> = if cfg.run.radii.is_empty() {
        std::iter::successors(Some(unit), |r| Some(r * 2.0)).take_while(|&r| r <= 0.5 * l.length() + 1e-12).collect()
    } else {
        cfg.run.radii.clone()
    };
    let mut csv = Csv::new(&["j", "r", "rms", "mu_d", "count"]);
    for j in 0..d {
        for row in growth_profile(&sigma.time_row(j), &radii, 0, unit)? {
            csv.row(&[j.to_string(), f(row.r), f(row.rms()), f(mu_d(row.r / unit, d)), row.count.to_string()]);
        }
    }
    out.write("growth.csv", &csv.into_bytes())?;
    out.write_json(
        "fluxcor.json",
        &json!({
            "identities": ids,
            "flux_max_mean": q.max_mean(),
            "abar": abar.rows(),
            "unit_radius": unit,
        }),
    )
}

pub fn rate_cmd(cfg: &ExperimentConfig, seed: u64, out: &mut RunWriter) -> Result<(), CliError> {
    let setup = cfg.run.rate.as_ref().ok_or_else(|| missing("rate"))?;
    let rep = rate_experiment(&cfg.ensemble, &cfg.lattice(), setup, seed, &cfg.corrector_options())?;
    let mut csv = Csv::new(&["eps", "sample", "err_L2", "w_norm", "residual"]);
    for r in &rep.rows {
        csv.row(&[f(r.eps), r.sample.to_string(), f(r.err_l2), f(r.w_norm), f(r.residual)]);
    }
    out.write("rate.csv", &csv.into_bytes())?;
    let failures: Vec<_> = rep.rows.iter().filter_map(|r| r.error.as_ref().map(|e| json!({"eps": r.eps, "sample": r.sample, "error": e}))).collect();
    out.write_json(
        "rate_summary.json",
        &json!({
            "mode": rep.mode,
            "summary": rep.summary,
            "slope": rep.slope,
            "slope_stderr": rep.slope_stderr,
            "flagged": rep.flagged,
            "abar": rep.abar,
            "failures": failures,
        }),
    )
}

pub fn residual_cmd(cfg: &ExperimentConfig, seed: u64, out: &mut RunWriter) -> Result<(), CliError> {
    let block = cfg.run.residual.as_ref().ok_or_else(|| missing("residual"))?;
    let coarse = cfg.lattice();
    let mut lattices = vec![coarse];
    if block.refine {
        lattices.push(Lattice::with_tau(coarse.d(), 2 * coarse.n(), 4 * coarse.n_t(), coarse.length(), Some(coarse.tau() / 4.0))?);
    }
    let problem = CylinderProblem {
        d: coarse.d(),
        r0: block.r0,
        t_end: block.t_end,
        eps: block.eps,
        source: block.source,
        geometry: block.geometry,
    };
    problem.validate()?;
    for l in &lattices {
        MacroGrid::new(&problem, l.h(), l.tau())?;
    }
    let opts = cfg.corrector_options();
    let mut csv = Csv::new(&[
        "n", "h_cell", "eps", "sigma_terms", "err_L2", "w_norm", "grad_w_norm", "residual", "residual_abs", "div_f_norm", "degenerate",
    ]);
    let mut reports = Vec::new();
    for l in &lattices {
        let cell = CellData::solve(sample(&cfg.ensemble, l, seed)?, &opts, true)?;
        let grid = MacroGrid::new(&problem, l.h(), l.tau())?;
        let variants: &[bool] = if block.drop_sigma_terms { &[false, true] } else { &[false] };
        for &drop in variants {
            let mut rep = expansion(&cell, &grid, &block.source, &ExpansionOptions { solve: opts.solve, drop_sigma_terms: drop })?;
            rep.seed = seed;
            csv.row(&[
                l.n().to_string(),
                f(l.h()),
                f(rep.eps),
                (!drop).to_string(),
                f(rep.err_l2),
                f(rep.w_l2),
                f(rep.grad_w_l2),
                f(rep.residual),
                f(rep.residual_abs),
                f(rep.div_f_norm),
                rep.degenerate.to_string(),
            ]);
            reports.push(json!({"n": l.n(), "sigma_terms": !drop, "report": rep}));
        }
    }
    let full: Vec<f64> = reports
        .iter()
        .filter(|r| r["sigma_terms"] == true)
        .map(|r| r["report"]["residual"].as_f64().unwrap_or(f64::NAN))
        .collect();
    let decrease = (full.len() == 2 && full[1] > 0.0).then(|| full[0] / full[1]);
    // the refined coefficient is the same field only for resolution-free kinds
    let same_field = match cfg.ensemble.kind {
        EnsembleKind::Gaussian => false,
        EnsembleKind::Checkerboard => cfg.ensemble.ell.is_some(),
        _ => true,
    };
    out.write("residual.csv", &csv.into_bytes())?;
    out.write_json("residual.json", &json!({"reports": reports, "decrease_factor": decrease, "same_field_under_refinement": same_field}))
}

pub fn fluct_cmd(cfg: &ExperimentConfig, seed: u64, out: &mut RunWriter) -> Result<(), CliError> {
    let opts = cfg.run.fluct.as_ref().ok_or_else(|| missing("fluct"))?;
    let rep = fluct_suite(&cfg.ensemble, &cfg.lattice(), opts, seed, &cfg.corrector_options())?;
    let mut csv = Csv::new(&["origin", "label", "p", "n_samples", "estimate", "half_width"]);
    for (origin, list) in [("origin", &rep.estimates), ("shifted", &rep.shifted)] {
        for e in list {
            csv.row(&[origin.into(), e.label.clone(), e.p.to_string(), e.n_samples.to_string(), f(e.estimate), f(e.half_width)]);
        }
    }
    out.write("fluct.csv", &csv.into_bytes())?;
    let mut chi = Csv::new(&["origin", "sample", "chi", "censored"]);
    for (origin, list) in [("origin", &rep.chi), ("shifted", &rep.chi_shifted)] {
        for (s, c) in list.iter().enumerate() {
            chi.row(&[origin.into(), s.to_string(), f(c.chi), c.censored.to_string()]);
        }
    }
    out.write("chi.csv", &chi.into_bytes())?;
    out.write_json(
        "fluct.json",
        &json!({
            "estimates": rep.estimates,
            "shifted": rep.shifted,
            "stationarity": rep.stationarity,
            "n_ok": rep.n_ok,
            "n_failed": rep.n_failed,
            "censored_fraction": rep.censored_fraction,
            "failures": rep.failures,
        }),
    )
}

pub fn minrad_cmd(cfg: &ExperimentConfig, seed: u64, out: &mut RunWriter) -> Result<(), CliError> {
    let block = cfg.run.minrad.as_ref().ok_or_else(|| missing("minrad"))?;
    let l = cfg.lattice();
    let opts = cfg.corrector_options();
    let results: Vec<Result<MinimalRadiusSample, String>> = (0..block.n_samples)
        .into_par_iter()
        .map(|s| {
            let go = || -> parahom_core::Result<MinimalRadiusSample> {
                let a = sample(&cfg.ensemble, &l, derive_seed(seed, s as u64))?;
                let set = solve_cell(&a, 0.0, &opts)?;
                let abar = effective(&a, &set)?;
                let sigma = solve_sigma(&flux(&a, &set, &abar)?)?;
                minimal_radius(&set, &sigma, block.theta, 0)
            };
            go().map_err(|e| e.to_string())
        })
        .collect();
    let mut csv = Csv::new(&["sample", "chi", "censored", "brute_force_chi", "error"]);
    let mut ok = Vec::new();
    for (s, r) in results.iter().enumerate() {
        match r {
            Ok(m) => {
                csv.row(&[s.to_string(), f(m.chi), m.censored.to_string(), f(m.brute_force_chi()), String::new()]);
                ok.push(m);
            }
            Err(e) => csv.row(&[s.to_string(), String::new(), String::new(), String::new(), e.replace(',', ";")]),
        }
    }
    if ok.is_empty() {
        return Err(CliError::Solver("every sample failed".into()));
    }
    let uncensored: Vec<f64> = ok.iter().filter(|m| !m.censored).map(|m| m.chi).collect();
    let censored = ok.len() - uncensored.len();
    let mean_sq = if uncensored.is_empty() {
        None
    } else {
        Some(uncensored.iter().map(|c| c * c).sum::<f64>() / uncensored.len() as f64)
    };
    out.write("minrad.csv", &csv.into_bytes())?;
    out.write_json(
        "minrad.json",
        &json!({
            "theta": block.theta,
            "n_ok": ok.len(),
            "n_failed": results.len() - ok.len(),
            "censored_fraction": censored as f64 / ok.len() as f64,
            "mean_chi_sq_uncensored": mean_sq,
            "samples": ok,
        }),
    )
}

pub fn commutator_cmd(cfg: &ExperimentConfig, seed: u64, out: &mut RunWriter) -> Result<(), CliError> {
    let setup = cfg.run.commutator.as_ref().ok_or_else(|| missing("commutator"))?;
    let rep = variance_scaling(&cfg.ensemble, &cfg.lattice(), setup, seed, &cfg.corrector_options())?;
    let mut csv = Csv::new(&["eps", "sample", "value", "error"]);
    for r in &rep.rows {
        csv.row(&[f(r.eps), r.sample.to_string(), f(r.value), r.error.clone().unwrap_or_default().replace(',', ";")]);
    }
    out.write("commutator.csv", &csv.into_bytes())?;
    out.write_json("commutator.json", &json!({"summary": rep.summary, "ratio": rep.ratio}))
}

pub fn dump_cmd(cfg: &ExperimentConfig, seed: u64, out: &mut RunWriter) -> Result<(), CliError> {
    let fields = cfg.run.dump.as_ref().map(|b| b.fields.clone()).unwrap_or_else(|| {
        vec![DumpField::Coefficient, DumpField::Corrector, DumpField::Flux, DumpField::Sigma]
    });
    let l = cfg.lattice();
    let d = l.d();
    let a = sample(&cfg.ensemble, &l, seed)?;
    let mut put = |name: String, values: &[f64]| -> Result<(), CliError> {
        write_phom(&out.dir().join(&name), &l, values)?;
        out.adopt(&name)
    };
    if fields.contains(&DumpField::Coefficient) {
        for i in 0..d {
            for k in 0..d {
                put(format!("a_{i}{k}.phom"), a.entry_field(i, k).values())?;
            }
        }
    }
    if fields.iter().any(|f| *f != DumpField::Coefficient) {
        let opts: CorrectorOptions = cfg.corrector_options();
        let set = solve_cell(&a, 0.0, &opts)?;
        if fields.contains(&DumpField::Corrector) {
            for (j, p) in set.phi.iter().enumerate() {
                put(format!("phi_{j}.phom"), p.values())?;
            }
        }
        if fields.contains(&DumpField::Flux) || fields.contains(&DumpField::Sigma) {
            let abar = effective(&a, &set)?;
            let q = flux(&a, &set, &abar)?;
            if fields.contains(&DumpField::Flux) {
                for (j, qj) in q.q.iter().enumerate() {
                    for (i, c) in qj.components().iter().enumerate() {
                        put(format!("q_{i}{j}.phom"), c.values())?;
                    }
                }
            }
            if fields.contains(&DumpField::Sigma) {
                let sigma = solve_sigma(&q)?;
                for j in 0..d {
                    for k in 0..=d {
                        for i in 0..=d {
                            put(format!("sigma_{k}{i}{j}.phom"), sigma.get(k, i, j).values())?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
