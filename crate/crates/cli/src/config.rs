//! Sectioned key-value configuration.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment            (also ';')
//! [section]
//! key = value          (keys unique within a section)
//! ```
//!
//! Values are taken verbatim after trimming. Lists are comma separated.
//! Distribution descriptors are `exponential(G0)`, `loguniform(DECADES, SCALE)`,
//! `constant(X)`, `zero`, or a bare comma list of values. Rendering a parsed
//! file and parsing it again gives the same sections.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rsrgx_core::ladder::Distribution;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("[{section}] {key}: {msg}")]
    Value { section: String, key: String, msg: String },
    #[error("[{section}] unknown key(s): {keys}")]
    Unknown { section: String, keys: String },
    #[error("unknown section [{0}]")]
    Section(String),
    #[error("{0}")]
    Invalid(String),
}

/// Parsed configuration. Sections and keys are kept sorted so that
/// rendering is canonical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Ini, ConfigError> {
        let mut ini = Ini::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let line_no = i + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line: line_no, msg: "unterminated section header".into() })?
                    .trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return Err(ConfigError::Syntax { line: line_no, msg: format!("bad section name '{name}'") });
                }
                ini.sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: line_no, msg: "expected key = value".into() })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: line_no, msg: "empty key".into() });
            }
            let section = current
                .as_ref()
                .ok_or_else(|| ConfigError::Syntax { line: line_no, msg: "key outside a section".into() })?;
            let map = ini.sections.get_mut(section).expect("section exists");
            if map.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Syntax { line: line_no, msg: format!("duplicate key '{key}'") });
            }
        }
        Ok(ini)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl fmt::Display) {
        self.sections.entry(section.to_string()).or_default().insert(key.to_string(), value.to_string());
    }

    pub fn remove(&mut self, section: &str, key: &str) -> Option<String> {
        self.sections.get_mut(section)?.remove(key)
    }

    /// Typed value, or `default` when absent.
    pub fn value<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.parsed(section, key, |s| s.parse::<T>().map_err(|e| e.to_string())).map(|v| v.unwrap_or(default))
    }

    pub fn optional<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.parsed(section, key, |s| s.parse::<T>().map_err(|e| e.to_string()))
    }

    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.parsed(section, key, parse_list)
    }

    pub fn distribution(&self, section: &str, key: &str) -> Result<Option<Distribution>, ConfigError> {
        self.parsed(section, key, parse_distribution)
    }

    fn parsed<T>(
        &self,
        section: &str,
        key: &str,
        f: impl FnOnce(&str) -> Result<T, String>,
    ) -> Result<Option<T>, ConfigError> {
        self.get(section, key)
            .map(|s| f(s).map_err(|msg| ConfigError::Value { section: section.into(), key: key.into(), msg }))
            .transpose()
    }

    /// Rejects sections outside `sections` and keys outside `allowed`.
    pub fn check(&self, allowed: &[(&str, &[&str])]) -> Result<(), ConfigError> {
        for (name, keys) in &self.sections {
            let Some((_, accepted)) = allowed.iter().find(|(s, _)| s == name) else {
                return Err(ConfigError::Section(name.clone()));
            };
            let accepted: BTreeSet<&str> = accepted.iter().copied().collect();
            let unknown: Vec<&str> = keys.keys().map(String::as_str).filter(|k| !accepted.contains(k)).collect();
            if !unknown.is_empty() {
                return Err(ConfigError::Unknown { section: name.clone(), keys: unknown.join(", ") });
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, keys) in &self.sections {
            if !out.is_empty() {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in keys {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| format!("'{x}': {e}")))
        .collect()
}

pub fn parse_distribution(s: &str) -> Result<Distribution, String> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("zero") {
        return Ok(Distribution::Zero);
    }
    let Some(open) = s.find('(') else {
        return parse_list::<f64>(s).map(|values| Distribution::Explicit { values });
    };
    let name = s[..open].trim().to_ascii_lowercase();
    let args = s[open + 1..].strip_suffix(')').ok_or_else(|| format!("unterminated descriptor '{s}'"))?;
    let args: Vec<f64> = parse_list(args)?;
    let arity = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("{name} takes {n} argument(s), got {}", args.len()))
        }
    };
    match name.as_str() {
        "exponential" => arity(1).map(|_| Distribution::Exponential { gamma0: args[0] }),
        "loguniform" => arity(2).map(|_| Distribution::LogUniform { decades: args[0], scale: args[1] }),
        "constant" => arity(1).map(|_| Distribution::Constant { value: args[0] }),
        _ => Err(format!("unknown distribution '{name}'")),
    }
}

/// Inverse of `parse_distribution`.
pub fn format_distribution(d: &Distribution) -> String {
    match d {
        Distribution::Exponential { gamma0 } => format!("exponential({gamma0})"),
        Distribution::LogUniform { decades, scale } => format!("loguniform({decades}, {scale})"),
        Distribution::Constant { value } => format!("constant({value})"),
        Distribution::Explicit { values } => format_list(values),
        Distribution::Zero => "zero".into(),
    }
}

pub fn format_list<T: fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_round_trip() {
        let text = "# run\n[model]\nn_rungs = 8\nJ = exponential(11.5)\n\n[run]\n; note\nseed=3\n";
        let ini = Ini::parse(text).unwrap();
        assert_eq!(ini.get("model", "n_rungs"), Some("8"));
        assert_eq!(ini.value("run", "seed", 0u64).unwrap(), 3);
        assert_eq!(Ini::parse(&ini.render()).unwrap(), ini);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        assert!(matches!(Ini::parse("[model\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(Ini::parse("x = 1\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(Ini::parse("[a]\nx = 1\nx = 2\n"), Err(ConfigError::Syntax { line: 3, .. })));
        assert!(matches!(Ini::parse("[a]\njunk\n"), Err(ConfigError::Syntax { line: 2, .. })));
    }

    #[test]
    fn distributions_round_trip() {
        for d in [
            Distribution::Exponential { gamma0: 11.5 },
            Distribution::LogUniform { decades: 6.0, scale: 1.0 },
            Distribution::Constant { value: 10.0 },
            Distribution::Explicit { values: vec![1.0, -0.5, 0.0] },
            Distribution::Zero,
        ] {
            assert_eq!(parse_distribution(&format_distribution(&d)).unwrap(), d);
        }
        assert!(parse_distribution("gaussian(1)").is_err());
        assert!(parse_distribution("loguniform(1)").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let ini = Ini::parse("[model]\nn_rung = 4\n").unwrap();
        assert!(matches!(ini.check(&[("model", &["n_rungs"])]), Err(ConfigError::Unknown { .. })));
        let ini = Ini::parse("[modle]\n").unwrap();
        assert!(matches!(ini.check(&[("model", &[])]), Err(ConfigError::Section(_))));
    }
}
