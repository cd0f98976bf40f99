//! Tidy `(x, y, series, stderr)` tables from a completed run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::CliError;
use crate::output::{Csv, RunManifest};

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().split(',').map(String::from).collect();
        let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(String::from).collect()).collect();
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize, CliError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Schema(format!("column {name} missing")))
    }

    fn num(row: &[String], c: usize) -> Option<f64> {
        row.get(c).and_then(|s| s.parse().ok())
    }
}

fn json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

struct Points(Vec<(f64, f64, String, Option<f64>)>);

impl Points {
    fn push(&mut self, x: f64, y: f64, series: &str, stderr: Option<f64>) {
        self.0.push((x, y, series.to_string(), stderr));
    }
}

/// Builds the plot table of the run in `dir`. The run must carry a
/// manifest whose checksums match.
pub fn emit(dir: &Path) -> Result<Vec<u8>, CliError> {
    let manifest = RunManifest::read(dir)?;
    let bad = manifest.mismatches(dir);
    if !bad.is_empty() {
        return Err(CliError::Schema(format!("files changed since the run: {}", bad.join(", "))));
    }
    let has = |name: &str| manifest.files.iter().any(|f| f.name == name);
    let mut pts = Points(Vec::new());

    if has("rate_summary.json") {
        let v = json(&dir.join("rate_summary.json"))?;
        for s in v["summary"].as_array().into_iter().flatten() {
            let (eps, m, se) = (s["eps"].as_f64(), s["mean_err"].as_f64(), s["stderr"].as_f64());
            if let (Some(eps), Some(m)) = (eps, m) {
                if m > 0.0 {
                    pts.push(eps.ln(), m.ln(), "log_err", se.map(|se| se / m));
                }
            }
        }
    }
    if has("growth.csv") {
        let t = Table::read(&dir.join("growth.csv"))?;
        let (cj, cr, crms, cmu) = (t.col("j")?, t.col("r")?, t.col("rms")?, t.col("mu_d")?);
        let mut mu_done = BTreeMap::new();
        for row in &t.rows {
            if let (Some(r), Some(rms), Some(mu)) = (Table::num(row, cr), Table::num(row, crms), Table::num(row, cmu)) {
                pts.push(r, rms, &format!("growth_rms_j{}", row[cj]), None);
                if mu_done.insert(row[cr].clone(), ()).is_none() {
                    pts.push(r, mu, "mu_d", None);
                }
            }
        }
    }
    if has("beta_sweep.csv") {
        let t = Table::read(&dir.join("beta_sweep.csv"))?;
        let cb = t.col("beta")?;
        for name in t.header.iter().filter(|h| h.len() == 3 && h.starts_with('a') && h.as_bytes()[1] == h.as_bytes()[2]) {
            let c = t.col(name)?;
            for row in &t.rows {
                if let (Some(b), Some(v)) = (Table::num(row, cb), Table::num(row, c)) {
                    pts.push(b, v, name, None);
                }
            }
        }
    }
    if has("abar.csv") {
        let t = Table::read(&dir.join("abar.csv"))?;
        let (ci, cj, cv) = (t.col("i")?, t.col("j")?, t.col("value")?);
        let d = (t.rows.len() as f64).sqrt().round() as usize;
        for row in &t.rows {
            if let (Some(i), Some(j), Some(v)) = (Table::num(row, ci), Table::num(row, cj), Table::num(row, cv)) {
                pts.push(i * d as f64 + j, v, "abar", None);
            }
        }
    }
    if has("residual.csv") {
        let t = Table::read(&dir.join("residual.csv"))?;
        let (ch, cs, cr) = (t.col("h_cell")?, t.col("sigma_terms")?, t.col("residual")?);
        for row in &t.rows {
            if let (Some(h), Some(r)) = (Table::num(row, ch), Table::num(row, cr)) {
                let series = if row[cs] == "true" { "residual" } else { "residual_no_sigma" };
                pts.push(h, r, series, None);
            }
        }
    }
    if has("commutator.json") {
        let v = json(&dir.join("commutator.json"))?;
        for s in v["summary"].as_array().into_iter().flatten() {
            if let (Some(eps), Some(sd)) = (s["eps"].as_f64(), s["scaled_sd"].as_f64()) {
                pts.push(eps, sd, "scaled_sd", None);
            }
        }
    }
    if has("fluct.csv") {
        let t = Table::read(&dir.join("fluct.csv"))?;
        let (co, cl, cp, ce, cw) = (t.col("origin")?, t.col("label")?, t.col("p")?, t.col("estimate")?, t.col("half_width")?);
        for row in &t.rows {
            if let (Some(p), Some(e)) = (Table::num(row, cp), Table::num(row, ce)) {
                pts.push(p, e, &format!("{}_{}", row[cl], row[co]), Table::num(row, cw));
            }
        }
    }
    for (file, series) in [("chi.csv", "chi_hist"), ("minrad.csv", "chi_hist")] {
        if has(file) {
            let t = Table::read(&dir.join(file))?;
            let (cc, cz) = (t.col("chi")?, t.col("censored")?);
            let origin = t.col("origin").ok();
            let mut counts: BTreeMap<(String, u64), usize> = BTreeMap::new();
            for row in &t.rows {
                if let Some(c) = Table::num(row, cc) {
                    let mut o = origin.map_or("origin".to_string(), |i| row[i].clone());
                    if row.get(cz).map(String::as_str) != Some("false") {
                        o.push_str("_censored");
                    }
                    *counts.entry((o, c.to_bits())).or_default() += 1;
                }
            }
            for ((o, bits), n) in counts {
                pts.push(f64::from_bits(bits), n as f64, &format!("{series}_{o}"), None);
            }
        }
    }
    if pts.0.is_empty() {
        return Err(CliError::Schema(format!("nothing to plot in {}", dir.display())));
    }
    let mut csv = Csv::new(&["x", "y", "series", "stderr"]);
    for (x, y, s, e) in pts.0 {
        csv.row(&[format!("{x}"), format!("{y}"), s, e.map_or(String::new(), |e| format!("{e}"))]);
    }
    Ok(csv.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::RunWriter;

    fn finish(w: RunWriter) {
        w.finish(RunManifest {
            tool: "parahom".into(),
            version: "0".into(),
            subcommand: "rate".into(),
            config_sha256: String::new(),
            seed: 0,
            workers: 1,
            wall_clock_seconds: 0.0,
            files: vec![],
        })
        .unwrap();
    }

    #[test]
    fn empty_or_incomplete_runs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit(dir.path()).is_err());
        fs::write(dir.path().join("rate.csv"), "eps\n").unwrap();
        assert!(emit(dir.path()).is_err());
    }

    #[test]
    fn rate_summary_becomes_log_series() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::new(dir.path()).unwrap();
        w.write_json(
            "rate_summary.json",
            &serde_json::json!({"summary": [{"eps": 0.5, "mean_err": 0.25, "stderr": 0.025}, {"eps": 0.25, "mean_err": 0.125, "stderr": 0.0}]}),
        )
        .unwrap();
        finish(w);
        let text = String::from_utf8(emit(dir.path()).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,series,stderr");
        let first: Vec<f64> = lines[1].split(',').filter_map(|s| s.parse().ok()).collect();
        assert!((first[0] - 0.5f64.ln()).abs() < 1e-15 && (first[1] - 0.25f64.ln()).abs() < 1e-15);
        assert!((first[2] - 0.1).abs() < 1e-15);
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn growth_table_gives_rms_and_mu() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::new(dir.path()).unwrap();
        w.write("growth.csv", b"j,r,rms,mu_d,count\n0,2,0.5,2,8\n1,2,0.7,2,8\n").unwrap();
        finish(w);
        let text = String::from_utf8(emit(dir.path()).unwrap()).unwrap();
        assert!(text.contains("2,0.5,growth_rms_j0,"));
        assert_eq!(text.matches(",mu_d,").count(), 1);
    }
}
