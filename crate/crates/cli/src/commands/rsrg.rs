//! `rsrg`: one decimation run with snapshots, event log and final state.

use rsrgx_core::flow::{
    fg_prediction, histogram, survivor_prediction, AnalyticModel, FgVariant, FlowSnapshot,
};
use rsrgx_core::ladder::{
    final_state_description, init_chain, run as run_chain, write_events_jsonl, Distribution, FinalState, Policy,
    SnapshotSchedule, StopCriteria, StopReason,
};
use rsrgx_core::rulegen::{Branch, RuleTable};
use serde::Serialize;

use crate::config::{format_list, parse_list, Ini};
use crate::model::{bad, chain_config, record_chain_config};
use crate::output::{CliError, Format, Output};
use crate::svg::{Mark, Plot, Series};

pub const RUN_KEYS: &[&str] =
    &["seed", "policy", "min_survivors", "max_steps", "gamma_target", "snapshots", "histogram_bins", "prediction_gamma0"];

pub fn parse_policy(s: &str, seed: u64) -> Result<Policy, CliError> {
    match s.trim() {
        "default" => Ok(Policy::Default),
        "random" => Ok(Policy::Random { seed }),
        other => other
            .parse::<Branch>()
            .map(|branch| Policy::Constant { branch })
            .map_err(|_| bad("policy", format!("expected default, min, max or random, got '{other}'"))),
    }
}

/// `none`, `every:STEPS`, `gamma:DELTA` or `at:S1,S2,...`.
pub fn parse_schedule(s: &str) -> Result<SnapshotSchedule, CliError> {
    let s = s.trim();
    if s == "none" {
        return Ok(SnapshotSchedule::None);
    }
    let (kind, arg) = s.split_once(':').ok_or_else(|| bad("snapshots", format!("expected kind:value, got '{s}'")))?;
    let err = |e: String| bad("snapshots", e);
    match kind.trim() {
        "every" => Ok(SnapshotSchedule::EverySteps { steps: arg.trim().parse().map_err(|e| err(format!("{e}")))? }),
        "gamma" => {
            let delta: f64 = arg.trim().parse().map_err(|e| err(format!("{e}")))?;
            if !(delta > 0.0) {
                return Err(err("Γ step must be positive".into()));
            }
            Ok(SnapshotSchedule::GammaStep { delta })
        }
        "at" => Ok(SnapshotSchedule::AtSteps { steps: parse_list(arg).map_err(err)? }),
        other => Err(err(format!("unknown schedule '{other}'"))),
    }
}

pub fn format_schedule(s: &SnapshotSchedule) -> String {
    match s {
        SnapshotSchedule::None => "none".into(),
        SnapshotSchedule::EverySteps { steps } => format!("every:{steps}"),
        SnapshotSchedule::GammaStep { delta } => format!("gamma:{delta}"),
        SnapshotSchedule::AtSteps { steps } => format!("at:{}", format_list(steps)),
    }
}

pub fn format_policy(p: &Policy) -> String {
    match p {
        Policy::Default => "default".into(),
        Policy::Constant { branch } => branch.to_string(),
        Policy::Random { .. } => "random".into(),
        Policy::Explicit { .. } => "explicit".into(),
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    stop: StopReason,
    steps: u64,
    gamma: f64,
    survivors: usize,
    non_monotone: u64,
    census: [usize; 6],
    closeout: Option<(f64, f64)>,
    accumulated_eigenvalue: (f64, f64),
    final_state: &'a FinalState,
}

pub fn run(ini: &Ini, resolved: &mut Ini, out: &mut Output) -> Result<(), CliError> {
    let seed = ini.value("run", "seed", 0u64)?;
    let cfg = chain_config(ini, seed)?;
    record_chain_config(&cfg, resolved);
    let policy = parse_policy(ini.get("run", "policy").unwrap_or("default"), seed)?;
    let stop = StopCriteria {
        min_survivors: ini.optional("run", "min_survivors")?,
        max_steps: ini.optional("run", "max_steps")?,
        gamma_target: ini.optional("run", "gamma_target")?,
    };
    let schedule = parse_schedule(ini.get("run", "snapshots").unwrap_or("gamma:1"))?;
    let bins = ini.value("run", "histogram_bins", 40usize)?;
    let prediction_gamma0: Option<f64> = match ini.optional("run", "prediction_gamma0")? {
        Some(g) => Some(g),
        None => match cfg.couplings {
            Distribution::Exponential { gamma0 } => Some(gamma0),
            _ => None,
        },
    };
    resolved.set("run", "policy", format_policy(&policy));
    if let Some(n) = stop.min_survivors {
        resolved.set("run", "min_survivors", n);
    }
    if let Some(n) = stop.max_steps {
        resolved.set("run", "max_steps", n);
    }
    if let Some(g) = stop.gamma_target {
        resolved.set("run", "gamma_target", g);
    }
    resolved.set("run", "snapshots", format_schedule(&schedule));
    resolved.set("run", "histogram_bins", bins);
    if let Some(g) = prediction_gamma0 {
        resolved.set("run", "prediction_gamma0", g);
    }

    let rules = RuleTable::generate(&Branch::BOTH);
    let mut chain = init_chain(&cfg)?;
    let output = run_chain(&mut chain, &rules, &policy, &stop, &schedule)?;
    let state = final_state_description(&chain)?;

    let mut csv = format!("{}\n", FlowSnapshot::csv_header());
    for s in &output.snapshots {
        csv.push_str(&s.csv_row());
        csv.push('\n');
    }
    out.write(Format::Csv, "snapshots.csv", &csv)?;

    let mut hist = String::from("step,gamma,variable,bin_lo,bin_hi,count,density\n");
    for s in &output.snapshots {
        for (name, samples) in [("J", &s.zeta_j), ("p", &s.zeta_p)] {
            for b in histogram(samples, bins) {
                hist.push_str(&format!("{},{},{name},{},{},{},{}\n", s.step, s.gamma, b.lo, b.hi, b.count, b.density));
            }
        }
    }
    out.write(Format::Csv, "histograms.csv", &hist)?;

    let model = prediction_gamma0.map(|g| AnalyticModel::new(g, FgVariant::OdeIntegrated)).transpose()?;
    let closed = prediction_gamma0.map(|g| AnalyticModel::new(g, FgVariant::ClosedForm)).transpose()?;
    let n0 = cfg.n_rungs as f64;
    let mut fits = String::from("step,gamma,n,f,f_err,g,g_err,f_ode,g_ode,n_ode,f_closed,g_closed\n");
    let mut rows = Vec::new();
    for s in &output.snapshots {
        let ode = match &model {
            Some(m) if s.gamma >= m.gamma0 => Some((fg_prediction(m, s.gamma)?, survivor_prediction(m, s.gamma, n0)?)),
            _ => None,
        };
        let cf = match &closed {
            Some(m) if s.gamma >= m.gamma0 => Some(fg_prediction(m, s.gamma)?),
            _ => None,
        };
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        fits.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.step,
            s.gamma,
            s.survivors,
            opt(s.fit_f.map(|f| f.rate)),
            opt(s.fit_f.map(|f| f.stderr)),
            opt(s.fit_g.map(|f| f.rate)),
            opt(s.fit_g.map(|f| f.stderr)),
            opt(ode.map(|o| o.0 .0)),
            opt(ode.map(|o| o.0 .1)),
            opt(ode.map(|o| o.1)),
            opt(cf.map(|c| c.0)),
            opt(cf.map(|c| c.1)),
        ));
        rows.push((s, ode, cf));
    }
    out.write(Format::Csv, "fits.csv", &fits)?;

    if out.emit.has(Format::Jsonl) {
        let mut buf = Vec::new();
        write_events_jsonl(&output.events, &mut buf)?;
        out.write(Format::Jsonl, "events.jsonl", &String::from_utf8(buf).expect("JSON is UTF-8"))?;
    }

    if out.emit.has(Format::Svg) && !output.snapshots.is_empty() {
        let snaps = &output.snapshots;
        let picks = [0, snaps.len() / 2, snaps.len() - 1];
        let mut plot = Plot::new("Log-histograms of ζ_J", "ζ", "ln density");
        for &k in &picks {
            let s = &snaps[k];
            let pts = histogram(&s.zeta_j, bins).iter().filter(|b| b.count > 0).map(|b| (0.5 * (b.lo + b.hi), b.density.ln())).collect();
            plot.push(Series::new(format!("step {}, Γ = {:.2}", s.step, s.gamma), pts, Mark::Line));
        }
        out.write(Format::Svg, "histograms.svg", &plot.render())?;

        let mut plot = Plot::new("Fitted rates", "Γ", "rate");
        let fit_series = |label: &str, pick: fn(&FlowSnapshot) -> Option<(f64, f64)>| {
            let (pts, errs): (Vec<_>, Vec<_>) =
                rows.iter().filter_map(|(s, _, _)| pick(s).map(|(r, e)| ((s.gamma, r), e))).unzip();
            Series::new(label, pts, Mark::Dots).with_errors(errs)
        };
        plot.push(fit_series("f (fit)", |s| s.fit_f.map(|f| (f.rate, f.stderr))));
        plot.push(fit_series("g (fit)", |s| s.fit_g.map(|f| (f.rate, f.stderr))));
        if model.is_some() {
            let ode: Vec<_> = rows.iter().filter_map(|(s, o, _)| o.map(|o| (s.gamma, o.0))).collect();
            plot.push(Series::new("f (ODE)", ode.iter().map(|(g, fg)| (*g, fg.0)).collect(), Mark::Line));
            plot.push(Series::new("g (ODE)", ode.iter().map(|(g, fg)| (*g, fg.1)).collect(), Mark::Line));
            let cf: Vec<_> = rows.iter().filter_map(|(s, _, c)| c.map(|c| (s.gamma, c))).collect();
            plot.push(Series::new("f (closed form)", cf.iter().map(|(g, c)| (*g, c.0)).collect(), Mark::Dashed));
            plot.push(Series::new("g (closed form)", cf.iter().map(|(g, c)| (*g, c.1)).collect(), Mark::Dashed));
        }
        out.write(Format::Svg, "fits.svg", &plot.render())?;
    }

    let acc = chain.accumulated_eigenvalue();
    let summary = Summary {
        stop: output.stop,
        steps: chain.steps(),
        gamma: chain.gamma(),
        survivors: chain.survivors(),
        non_monotone: chain.non_monotone_count(),
        census: chain.type_census(),
        closeout: chain.closeout().map(|z| (z.re, z.im)),
        accumulated_eigenvalue: (acc.re, acc.im),
        final_state: &state,
    };
    out.write_always("final_state.json", &(serde_json::to_string_pretty(&summary).expect("serializable") + "\n"))?;
    println!(
        "{} steps, stop {:?}, Γ = {:.4}, {} survivors, {} pairs, {} mixed, {} decaying, {} frozen",
        chain.steps(),
        output.stop,
        chain.gamma(),
        chain.survivors(),
        state.pairs.len(),
        state.mixed_sites.len(),
        state.decaying_sites.len(),
        state.frozen.len()
    );
    Ok(())
}
