//! `flow-pde`: integrates the density flow and reports fixed-point metrics.

use rsrgx_core::flow::{integrate_flow_equations, FlowGrid, FlowOptions, FlowSystem, PEquation, DEFAULT_GRID_SPAN};
use serde::Serialize;

use super::jsonl;
use crate::config::Ini;
use crate::model::bad;
use crate::output::{CliError, Format, Output};
use crate::svg::{Mark, Plot, Series};

pub const RUN_KEYS: &[&str] = &[
    "seed",
    "system",
    "gamma0",
    "gamma_end",
    "points",
    "span",
    "dgamma",
    "record_every",
    "drift_limit",
    "initial",
    "initial_p",
    "p_equation",
    "keep_log_7_2",
];

#[derive(Serialize)]
struct FrameMetrics {
    gamma: f64,
    mass_j: f64,
    mass_p: Option<f64>,
    /// Mass carried past the far edge of the grid.
    beyond_j: f64,
    beyond_p: Option<f64>,
    mean_j: f64,
    /// L1 distance of p_J to e^(−ζ/Γ)/Γ.
    l1_to_idfp: f64,
    /// L1 change of the scaled density Γp(Γη) since the previous frame,
    /// per unit Γ/Γ₀.
    scaled_change_rate: Option<f64>,
}

fn initial_density(grid: &FlowGrid, kind: &str, gamma0: f64, key: &str) -> Result<Option<Vec<f64>>, CliError> {
    match kind {
        "exponential" => Ok(Some(grid.exponential(1.0 / gamma0))),
        // Uniform on [0, 2Γ₀]: same mean, far from the fixed point.
        "box" => Ok(Some(grid.sampled(|z| if z < 2.0 * gamma0 { 1.0 } else { 0.0 }))),
        "zero" => Ok(None),
        other => Err(bad(key, format!("expected exponential, box or zero, got '{other}'"))),
    }
}

pub fn run(ini: &Ini, resolved: &mut Ini, out: &mut Output) -> Result<(), CliError> {
    let seed = ini.value("run", "seed", 0u64)?;
    let system_name = ini.get("run", "system").unwrap_or("all0s").to_string();
    let gamma0 = ini.value("run", "gamma0", 1.0)?;
    let gamma_end = ini.value("run", "gamma_end", 5.0 * gamma0)?;
    let points = ini.value("run", "points", rsrgx_core::flow::DEFAULT_GRID_POINTS)?;
    let span = ini.value("run", "span", DEFAULT_GRID_SPAN)?;
    let defaults = FlowOptions::default();
    let dgamma: Option<f64> = ini.optional("run", "dgamma")?;
    let record_every = ini.value("run", "record_every", gamma0 * defaults.record_every)?;
    let drift_limit = match ini.get("run", "drift_limit") {
        Some("none") => None,
        Some(_) => Some(ini.value("run", "drift_limit", 0.0)?),
        None => defaults.drift_limit,
    };
    let initial = ini.get("run", "initial").unwrap_or("exponential").to_string();
    let initial_p = ini.get("run", "initial_p").unwrap_or("exponential").to_string();
    let p_equation = match ini.get("run", "p_equation").unwrap_or("conserving") {
        "conserving" => PEquation::Conserving,
        "as_printed" => PEquation::AsPrinted,
        other => return Err(bad("p_equation", format!("expected conserving or as_printed, got '{other}'"))),
    };
    let keep_log_7_2 = ini.value("run", "keep_log_7_2", false)?;
    let system = match system_name.as_str() {
        "all0s" => FlowSystem::AllZeros,
        "all2s" => FlowSystem::AllTwos { p_equation, keep_log_7_2 },
        other => return Err(bad("system", format!("expected all0s or all2s, got '{other}'"))),
    };

    resolved.set("run", "seed", seed);
    resolved.set("run", "system", &system_name);
    resolved.set("run", "gamma0", gamma0);
    resolved.set("run", "gamma_end", gamma_end);
    resolved.set("run", "points", points);
    resolved.set("run", "span", span);
    if let Some(d) = dgamma {
        resolved.set("run", "dgamma", d);
    }
    resolved.set("run", "record_every", record_every);
    resolved.set("run", "drift_limit", drift_limit.map_or("none".to_string(), |d| d.to_string()));
    resolved.set("run", "initial", &initial);
    if matches!(system, FlowSystem::AllTwos { .. }) {
        resolved.set("run", "initial_p", &initial_p);
        resolved.set("run", "p_equation", if p_equation == PEquation::Conserving { "conserving" } else { "as_printed" });
        resolved.set("run", "keep_log_7_2", keep_log_7_2);
    }

    let grid = FlowGrid::new(points, span * gamma0)?;
    let p_j = initial_density(&grid, &initial, gamma0, "initial")?.ok_or_else(|| bad("initial", "p_J cannot be zero"))?;
    let p_p = match system {
        FlowSystem::AllZeros => None,
        FlowSystem::AllTwos { .. } => Some(initial_density(&grid, &initial_p, gamma0, "initial_p")?.unwrap_or_else(|| vec![0.0; points])),
    };
    let options = FlowOptions { dgamma, record_every, drift_limit };
    let traj = integrate_flow_equations(grid, system, p_j, p_p, gamma0, gamma_end, &options)?;

    let mut metrics = Vec::with_capacity(traj.frames.len());
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for f in &traj.frames {
        let s = grid.scaled_density(&f.p_j, f.gamma, gamma0);
        let change = prev.as_ref().map(|(g, q)| {
            let l1 = grid.l1(&s, q) / gamma0;
            l1 / ((f.gamma - g) / gamma0)
        });
        metrics.push(FrameMetrics {
            gamma: f.gamma,
            mass_j: f.mass_j,
            mass_p: f.mass_p,
            beyond_j: f.beyond_j,
            beyond_p: f.beyond_p,
            mean_j: grid.mean(&f.p_j),
            l1_to_idfp: grid.l1_to_idfp(&f.p_j, f.gamma),
            scaled_change_rate: change,
        });
        prev = Some((f.gamma, s));
    }

    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let mut csv = String::from("gamma,mass_j,mass_p,beyond_j,beyond_p,mean_j,l1_to_idfp,scaled_change_rate\n");
    for m in &metrics {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.gamma,
            m.mass_j,
            opt(m.mass_p),
            m.beyond_j,
            opt(m.beyond_p),
            m.mean_j,
            m.l1_to_idfp,
            opt(m.scaled_change_rate)
        ));
    }
    out.write(Format::Csv, "metrics.csv", &csv)?;
    let mut dens = String::from("gamma,zeta,p_j,p_p\n");
    for f in &traj.frames {
        for k in 0..grid.points {
            let pp = f.p_p.as_ref().map(|p| p[k]);
            dens.push_str(&format!("{},{},{},{}\n", f.gamma, grid.center(k), f.p_j[k], opt(pp)));
        }
    }
    out.write(Format::Csv, "densities.csv", &dens)?;
    out.write(Format::Jsonl, "metrics.jsonl", &jsonl(&metrics))?;

    if out.emit.has(Format::Svg) && !traj.frames.is_empty() {
        let frames = &traj.frames;
        let mut plot = Plot::new("Scaled coupling density", "η = ζ/Γ", "Γ p_J(Γη)");
        let shown = (0..grid.points).filter(|&k| grid.center(k) <= 6.0 * gamma0);
        let shown: Vec<usize> = shown.collect();
        for k in [0, frames.len() / 2, frames.len() - 1] {
            let f = &frames[k];
            let s = grid.scaled_density(&f.p_j, f.gamma, gamma0);
            let pts = shown.iter().map(|&i| (grid.center(i) / gamma0, s[i])).collect();
            plot.push(Series::new(format!("Γ = {:.2}", f.gamma), pts, Mark::Line));
        }
        let fixed = shown.iter().map(|&i| {
            let eta = grid.center(i) / gamma0;
            (eta, (-eta).exp())
        });
        plot.push(Series::new("e^(−η)", fixed.collect(), Mark::Dashed));
        out.write(Format::Svg, "densities.svg", &plot.render())?;
    }

    let last = metrics.last().expect("at least the initial frame");
    println!(
        "{} frames to Γ = {:.4}; L1 to fixed point {:.3e}; max drift {:.3e} per unit Γ",
        metrics.len(),
        last.gamma,
        last.l1_to_idfp,
        traj.max_drift
    );
    Ok(())
}
