//! `spectrum`: exact Lindbladian spectra of small ladders.

use rayon::prelude::*;
use rsrgx_core::ladder::Distribution;
use rsrgx_core::liouville::{
    build_ladder_liouvillian, build_lindbladian, spectrum_checks, LadderSpec, SpectrumChecks, MAX_LADDER_RUNGS,
};
use rsrgx_core::rng::Purpose;
use rsrgx_core::spectra::{eig_general, eigenvalues_general, spectrum_rows};
use rsrgx_core::C64;
use serde::Serialize;

use super::jsonl;
use crate::config::{format_distribution, Ini};
use crate::model::bad;
use crate::output::{CliError, Format, Output};
use crate::svg::{Mark, Plot, Series};

pub const MODEL_KEYS: &[&str] = &["n_rungs", "J", "p", "beta"];
pub const RUN_KEYS: &[&str] = &["seed", "seeds"];

pub const STEADY_TOL: f64 = 1e-9;
pub const MODE_TOL: f64 = 1e-8;
pub const REAL_TOL: f64 = 1e-10;
pub const BUILDER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
struct SeedReport {
    seed: u64,
    couplings: Vec<f64>,
    rates: Vec<f64>,
    steady_state: f64,
    parity_mode: f64,
    xy_modes: f64,
    symmetry: f64,
    max_real: f64,
    builder_mismatch: f64,
    bottom_right: (f64, f64),
    passed: bool,
}

fn passes(c: &SpectrumChecks) -> bool {
    c.steady_state <= STEADY_TOL
        && c.parity_mode <= MODE_TOL
        && c.xy_modes <= MODE_TOL
        && c.symmetry <= MODE_TOL
        && c.max_real <= REAL_TOL
        && c.builder_mismatch <= BUILDER_TOL
}

/// Largest real part among the modes in the lowest decile of Im λ.
pub fn bottom_right(values: &[C64]) -> C64 {
    let mut by_im: Vec<C64> = values.to_vec();
    by_im.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
    let decile = by_im.len().div_ceil(10).max(1);
    by_im[..decile].iter().copied().max_by(|a, b| a.re.total_cmp(&b.re)).expect("nonempty spectrum")
}

pub fn run(ini: &Ini, resolved: &mut Ini, out: &mut Output) -> Result<(), CliError> {
    let n = ini.value("model", "n_rungs", 4usize)?;
    let couplings = ini.distribution("model", "J")?.unwrap_or(Distribution::LogUniform { decades: 3.0, scale: 1.0 });
    let rates = ini.distribution("model", "p")?.unwrap_or(Distribution::LogUniform { decades: 3.0, scale: 1.0 });
    let beta = ini.value("model", "beta", 1.0)?;
    let seed = ini.value("run", "seed", 0u64)?;
    let seeds = ini.value("run", "seeds", 4usize)?;
    resolved.set("model", "n_rungs", n);
    resolved.set("model", "J", format_distribution(&couplings));
    resolved.set("model", "p", format_distribution(&rates));
    resolved.set("model", "beta", beta);
    resolved.set("run", "seed", seed);
    resolved.set("run", "seeds", seeds);
    if n == 0 || n > MAX_LADDER_RUNGS {
        return Err(bad("n_rungs", format!("exact spectra need 1..={MAX_LADDER_RUNGS} rungs, got {n}")));
    }
    for (d, key) in [(&couplings, "J"), (&rates, "p")] {
        if let Distribution::Explicit { values } = d {
            if values.len() != n {
                return Err(bad(key, format!("{} values for {n} rungs", values.len())));
            }
        }
    }

    let results: Vec<Result<(SeedReport, String, Vec<C64>), CliError>> = (0..seeds as u64)
        .into_par_iter()
        .map(|k| {
            let s = seed + k;
            let j = couplings.values(s, Purpose::Coupling, n);
            let p = rates.values(s, Purpose::Rate, n);
            let spec = LadderSpec::new(j.clone(), p.clone(), beta).map_err(|e| bad("model", e.to_string()))?;
            let numerical = |e: &dyn std::fmt::Display| CliError::Numerical(e.to_string());
            let l = build_lindbladian(&spec).map_err(|e| numerical(&e))?;
            let dec = eig_general(&l).map_err(|e| numerical(&e))?;
            let rows = spectrum_rows(&l, &dec);
            let ladder = build_ladder_liouvillian(&spec).map_err(|e| numerical(&e))?;
            let ladder_values = eigenvalues_general(&ladder).map_err(|e| numerical(&e))?;
            let checks = spectrum_checks(&spec, &dec.eigenvalues, &ladder_values, l.frobenius_norm());
            let mut csv = String::from("index,re,im,residual\n");
            for (i, z, r) in &rows {
                csv.push_str(&format!("{i},{},{},{r:e}\n", z.re, z.im));
            }
            let br = bottom_right(&dec.eigenvalues);
            let report = SeedReport {
                seed: s,
                couplings: j,
                rates: p,
                steady_state: checks.steady_state,
                parity_mode: checks.parity_mode,
                xy_modes: checks.xy_modes,
                symmetry: checks.symmetry,
                max_real: checks.max_real,
                builder_mismatch: checks.builder_mismatch,
                bottom_right: (br.re, br.im),
                passed: passes(&checks),
            };
            Ok((report, csv, dec.eigenvalues))
        })
        .collect();

    let mut reports = Vec::with_capacity(seeds);
    for r in results {
        let (report, csv, values) = r?;
        out.write(Format::Csv, &format!("spectrum_seed{}.csv", report.seed), &csv)?;
        let mut plot = Plot::new(format!("Lindbladian spectrum, seed {}", report.seed), "Re λ", "Im λ");
        plot.push(Series::new("eigenvalues", values.iter().map(|z| (z.re, z.im)).collect(), Mark::Dots));
        plot.highlight = Some(report.bottom_right);
        out.write(Format::Svg, &format!("spectrum_seed{}.svg", report.seed), &plot.render())?;
        reports.push(report);
    }
    let mut csv = String::from("seed,steady_state,parity_mode,xy_modes,symmetry,max_real,builder_mismatch,br_re,br_im,passed\n");
    for r in &reports {
        csv.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}\n",
            r.seed, r.steady_state, r.parity_mode, r.xy_modes, r.symmetry, r.max_real, r.builder_mismatch,
            r.bottom_right.0, r.bottom_right.1, r.passed
        ));
    }
    out.write(Format::Csv, "checks.csv", &csv)?;
    out.write(Format::Jsonl, "checks.jsonl", &jsonl(&reports))?;

    let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.seed.to_string()).collect();
    println!("{} spectra, {} failing invariant checks", reports.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!("spectrum invariants fail for seed(s) {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bottom_right_picks_rightmost_low_mode() {
        let v: Vec<C64> = (0..20).map(|k| C64::new(-(k as f64), k as f64 - 10.0)).collect();
        // Lowest decile: Im = −10, −9, i.e. Re = 0, −1.
        assert_eq!(bottom_right(&v), C64::new(0.0, -10.0));
    }
}
