//! `phase-scan`: runs over a (β, seed) grid, each classified by phase.

use rayon::prelude::*;
use rsrgx_core::ladder::{
    final_state_description, init_chain, run as run_chain, search_sextuple, ChainConfig, DecimationEvent, Policy,
    SextuplePreset, SextupleSearch, StopCriteria,
};
use rsrgx_core::rulegen::{Branch, CellType, RuleKind, RuleTable};
use serde::Serialize;

use super::rsrg::{format_schedule, parse_schedule};
use super::{csv_field, jsonl};
use crate::config::{format_list, Ini};
use crate::model::{bad, chain_config, record_chain_config, MODEL_KEYS as CHAIN_KEYS};
use crate::output::{CliError, Format, Output};
use crate::svg::{Mark, Plot, Series};

pub const MODEL_KEYS: &[&str] = &[
    "n_rungs",
    "J",
    "p",
    "initial_type",
    "coupling_noise",
    "drop_imag_vertical",
    "preset",
    "sextuple_alpha",
    "sextuple_trials",
];
pub const RUN_KEYS: &[&str] = &["seed", "betas", "seeds", "max_steps", "snapshots"];

/// Share of the run's events, counted from the end, that the labels read.
pub const LATE_EVENT_FRACTION: f64 = 0.1;
/// Share of late events of one outcome needed for a label.
pub const LABEL_SHARE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    All0sLike,
    All2sLike,
    Disconnected,
    Other,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::All0sLike => "all-0s-like",
            Phase::All2sLike => "all-2s-like",
            Phase::Disconnected => "disconnected",
            Phase::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Features {
    pub j_events: usize,
    pub p_events: usize,
    /// Original rungs left as mixed or decaying sites.
    pub disconnected_fraction: f64,
    /// Live cells by type −1..=4 when decimation stopped.
    pub census: [usize; 6],
    pub late_type2_share: f64,
    pub late_disconnected_share: f64,
    pub non_monotone_fraction: f64,
}

/// Outcome shares over the last `LATE_EVENT_FRACTION` of events.
fn late_shares(events: &[DecimationEvent]) -> (f64, f64) {
    if events.is_empty() {
        return (0.0, 0.0);
    }
    let k = ((events.len() as f64 * LATE_EVENT_FRACTION).ceil() as usize).max(1);
    let late = &events[events.len() - k..];
    let type2 = CellType::new(2).expect("valid");
    let share = |pred: &dyn Fn(&DecimationEvent) -> bool| late.iter().filter(|e| pred(e)).count() as f64 / k as f64;
    (share(&|e| e.new_type == type2), share(&|e| !e.new_type.is_connected()))
}

pub fn classify(f: &Features) -> Phase {
    if f.p_events == 0 {
        Phase::All0sLike
    } else if f.late_disconnected_share >= LABEL_SHARE {
        Phase::Disconnected
    } else if f.late_type2_share >= LABEL_SHARE {
        Phase::All2sLike
    } else {
        Phase::Other
    }
}

#[derive(Debug, Clone, Serialize)]
struct CellResult {
    beta: f64,
    seed: u64,
    phase: Option<Phase>,
    features: Option<Features>,
    error: Option<String>,
    /// (step, Γ, f, g) per snapshot.
    trajectory: Vec<(u64, f64, Option<f64>, Option<f64>)>,
}

fn run_cell(cfg: &ChainConfig, rules: &RuleTable, stop: &StopCriteria, schedule: &rsrgx_core::ladder::SnapshotSchedule) -> Result<(Features, Vec<(u64, f64, Option<f64>, Option<f64>)>), CliError> {
    let mut chain = init_chain(cfg)?;
    let census = |c: &rsrgx_core::ladder::Chain| c.type_census();
    let out = run_chain(&mut chain, rules, &Policy::Default, stop, schedule)?;
    let state = final_state_description(&chain)?;
    let p_events = out.events.iter().filter(|e| e.kind == RuleKind::P).count();
    let (late_type2_share, late_disconnected_share) = late_shares(&out.events);
    let steps = chain.steps().max(1) as f64;
    let features = Features {
        j_events: out.events.len() - p_events,
        p_events,
        disconnected_fraction: (state.mixed_sites.len() + state.decaying_sites.len()) as f64 / chain.n_original() as f64,
        census: census(&chain),
        late_type2_share,
        late_disconnected_share,
        non_monotone_fraction: chain.non_monotone_count() as f64 / steps,
    };
    let trajectory =
        out.snapshots.iter().map(|s| (s.step, s.gamma, s.fit_f.map(|f| f.rate), s.fit_g.map(|f| f.rate))).collect();
    Ok((features, trajectory))
}

pub fn run(ini: &Ini, resolved: &mut Ini, out: &mut Output) -> Result<(), CliError> {
    let seed = ini.value("run", "seed", 0u64)?;
    let preset = ini.get("model", "preset").unwrap_or("none").to_string();
    let betas: Vec<f64> = ini.list("run", "betas")?.unwrap_or_else(|| vec![0.0, 0.5, 1.0, 2.0, 5.0]);
    let seeds = ini.value("run", "seeds", 2usize)?;
    let max_steps: Option<u64> = ini.optional("run", "max_steps")?;
    let schedule = parse_schedule(ini.get("run", "snapshots").unwrap_or("none"))?;
    if betas.is_empty() || betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(bad("betas", "need a non-empty list of finite β ≥ 0"));
    }
    let rules = RuleTable::generate(&Branch::BOTH);

    let base: ChainConfig = match preset.as_str() {
        "none" => {
            let cfg = chain_config(ini, seed)?;
            record_chain_config(&cfg, resolved);
            // β comes from the scan grid.
            resolved.remove("model", "beta");
            cfg
        }
        "sextuple" => {
            for key in CHAIN_KEYS {
                if ini.get("model", key).is_some() {
                    return Err(bad(key, "not used with the sextuple preset"));
                }
            }
            let search = SextupleSearch {
                alpha: ini.value("model", "sextuple_alpha", 0.1)?,
                max_trials: ini.value("model", "sextuple_trials", 100_000usize)?,
                seed,
                ..SextupleSearch::default()
            };
            resolved.set("model", "sextuple_alpha", search.alpha);
            resolved.set("model", "sextuple_trials", search.max_trials);
            resolved.set("run", "seed", seed);
            let hit = search_sextuple(&search, &rules)?
                .ok_or_else(|| CliError::Numerical(format!("no sextuple pattern in {} trials", search.max_trials)))?;
            out.write_always("sextuple_preset.json", &(serde_json::to_string_pretty(&hit.preset).expect("serializable") + "\n"))?;
            let p: &SextuplePreset = &hit.preset;
            println!("sextuple pattern after {} trials: J exponents {:?}, p exponents {:?}", hit.trials, p.j_exponents, p.p_exponents);
            p.config()
        }
        other => return Err(bad("preset", format!("expected none or sextuple, got '{other}'"))),
    };
    resolved.set("model", "preset", &preset);
    resolved.set("run", "betas", format_list(&betas));
    resolved.set("run", "seeds", seeds);
    if let Some(m) = max_steps {
        resolved.set("run", "max_steps", m);
    }
    resolved.set("run", "snapshots", format_schedule(&schedule));

    let stop = StopCriteria { max_steps, ..StopCriteria::default() };
    let grid: Vec<(usize, f64, u64)> =
        betas.iter().enumerate().flat_map(|(i, &b)| (0..seeds as u64).map(move |k| (i, b, seed + k))).collect();
    let mut results: Vec<((usize, u64), CellResult)> = grid
        .par_iter()
        .map(|&(i, beta, s)| {
            let mut cfg = base.clone();
            cfg.beta = beta;
            cfg.seed = s;
            let r = match run_cell(&cfg, &rules, &stop, &schedule) {
                Ok((f, trajectory)) => {
                    CellResult { beta, seed: s, phase: Some(classify(&f)), features: Some(f), error: None, trajectory }
                }
                // Per-cell failures are recorded and the scan goes on.
                Err(e) => CellResult { beta, seed: s, phase: None, features: None, error: Some(e.to_string()), trajectory: Vec::new() },
            };
            ((i, s), r)
        })
        .collect();
    results.sort_by_key(|(k, _)| *k);
    let results: Vec<CellResult> = results.into_iter().map(|(_, r)| r).collect();

    let mut csv = String::from(
        "beta,seed,phase,j_events,p_events,disconnected_fraction,census_m1,census_0,census_1,census_2,census_3,census_4,late_type2_share,late_disconnected_share,non_monotone_fraction,error\n",
    );
    for r in &results {
        let phase = r.phase.map_or("", |p| p.name());
        match &r.features {
            Some(f) => csv.push_str(&format!(
                "{},{},{phase},{},{},{},{},{},{},{},\n",
                r.beta,
                r.seed,
                f.j_events,
                f.p_events,
                f.disconnected_fraction,
                f.census.map(|c| c.to_string()).join(","),
                f.late_type2_share,
                f.late_disconnected_share,
                f.non_monotone_fraction
            )),
            None => csv.push_str(&format!(
                "{},{},,,,,,,,,,,,,,{}\n",
                r.beta,
                r.seed,
                csv_field(r.error.as_deref().unwrap_or(""))
            )),
        }
    }
    out.write(Format::Csv, "phase_scan.csv", &csv)?;
    let mut traj = String::from("beta,seed,step,gamma,fit_f,fit_g\n");
    for r in &results {
        for (step, gamma, f, g) in &r.trajectory {
            let opt = |x: &Option<f64>| x.map_or(String::new(), |v| v.to_string());
            traj.push_str(&format!("{},{},{step},{gamma},{},{}\n", r.beta, r.seed, opt(f), opt(g)));
        }
    }
    out.write(Format::Csv, "trajectories.csv", &traj)?;
    out.write(Format::Jsonl, "phase_scan.jsonl", &jsonl(&results))?;

    if out.emit.has(Format::Svg) {
        let mut plot = Plot::new("Phase scan", "β", "disconnected fraction");
        for phase in [Phase::All0sLike, Phase::All2sLike, Phase::Disconnected, Phase::Other] {
            let pts: Vec<(f64, f64)> = results
                .iter()
                .filter(|r| r.phase == Some(phase))
                .filter_map(|r| r.features.as_ref().map(|f| (r.beta, f.disconnected_fraction)))
                .collect();
            if !pts.is_empty() {
                plot.push(Series::new(phase.name(), pts, Mark::Dots));
            }
        }
        out.write(Format::Svg, "phase_scan.svg", &plot.render())?;
    }

    for r in &results {
        match (&r.phase, &r.error) {
            (Some(p), _) => println!("β = {} seed {}: {}", r.beta, r.seed, p.name()),
            (None, Some(e)) => println!("β = {} seed {}: failed: {e}", r.beta, r.seed),
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(p_events: usize, late2: f64, late_disc: f64) -> Features {
        Features {
            j_events: 1,
            p_events,
            disconnected_fraction: 0.0,
            census: [0; 6],
            late_type2_share: late2,
            late_disconnected_share: late_disc,
            non_monotone_fraction: 0.0,
        }
    }

    #[test]
    fn labels_follow_late_event_shares() {
        assert_eq!(classify(&features(0, 0.0, 1.0)), Phase::All0sLike);
        assert_eq!(classify(&features(3, 0.0, 1.0)), Phase::Disconnected);
        assert_eq!(classify(&features(3, 1.0, 0.0)), Phase::All2sLike);
        assert_eq!(classify(&features(3, 0.5, 0.5)), Phase::Other);
    }
}
