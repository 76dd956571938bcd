//! The `[model]` section shared by the decimation commands.
//!
//! For drawn distributions the `p` entry gives the vertical coupling
//! magnitude directly (scaled by β); an explicit `p` list gives measurement
//! rates, whose vertical coupling is βp/2.

use rsrgx_core::ladder::{ChainConfig, Distribution};
use rsrgx_core::rulegen::CellType;

use crate::config::{format_distribution, ConfigError, Ini};
use crate::output::CliError;

pub const MODEL_KEYS: &[&str] = &["n_rungs", "J", "p", "beta", "initial_type", "coupling_noise", "drop_imag_vertical"];

/// Defaults reproduce the all-2s strong-disorder start at Γ₀ = 11.5.
pub fn chain_config(ini: &Ini, seed: u64) -> Result<ChainConfig, CliError> {
    let n_rungs = ini.value("model", "n_rungs", 100_000usize)?;
    let couplings = ini.distribution("model", "J")?.unwrap_or(Distribution::Exponential { gamma0: 11.5 });
    let rates = ini.distribution("model", "p")?.unwrap_or(Distribution::Exponential { gamma0: 11.5 });
    let mut cfg = ChainConfig::new(n_rungs, couplings, rates);
    cfg.beta = ini.value("model", "beta", 1.0)?;
    let code: i32 = ini.value("model", "initial_type", 2)?;
    cfg.initial_type = CellType::new(code).map_err(|e| bad("initial_type", e.to_string()))?;
    cfg.coupling_noise = ini.value("model", "coupling_noise", 0.0)?;
    cfg.drop_imag_vertical = ini.value("model", "drop_imag_vertical", true)?;
    cfg.seed = seed;
    Ok(cfg)
}

pub fn record_chain_config(cfg: &ChainConfig, resolved: &mut Ini) {
    resolved.set("model", "n_rungs", cfg.n_rungs);
    resolved.set("model", "J", format_distribution(&cfg.couplings));
    resolved.set("model", "p", format_distribution(&cfg.rates));
    resolved.set("model", "beta", cfg.beta);
    resolved.set("model", "initial_type", cfg.initial_type.code());
    resolved.set("model", "coupling_noise", cfg.coupling_noise);
    resolved.set("model", "drop_imag_vertical", cfg.drop_imag_vertical);
    resolved.set("run", "seed", cfg.seed);
}

pub fn bad(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(format!("{key}: {}", msg.into())))
}
