//! Flat `key = value` scenario files.
//!
//! ```text
//! # strong selection, large meta-analysis
//! theta = -0.25
//! tau = 0.05
//! rho = -0.8
//! p20 = 0.1
//! p500 = 0.99
//! total = 100
//! reps = 1000
//! seed = 7
//! ```

use super::{ScenarioConfig, Selection};
use crate::error::{Error, Result};

const KEYS: [&str; 12] = [
    "theta", "tau", "rho", "p20", "p500", "alpha0", "alpha1", "total", "reps", "seed", "level",
    "copas",
];

/// Parses a scenario file. Unknown or repeated keys are errors; `theta`,
/// `reps`, `seed`, `level` and `copas` have defaults.
pub fn parse_scenario_config(text: &str) -> Result<ScenarioConfig> {
    let mut values: [Option<(usize, String)>; KEYS.len()] = Default::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected key = value, got `{line}`"),
        })?;
        let key = key.trim();
        let slot = KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("unknown key `{key}`"),
            })?;
        if values[slot].is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("key `{key}` given twice"),
            });
        }
        values[slot] = Some((line_no, value.trim().to_string()));
    }

    let get = |key: &str| values[KEYS.iter().position(|k| *k == key).expect("known key")].clone();
    let real = |key: &str| -> Result<Option<f64>> {
        get(key)
            .map(|(line, v)| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(Error::Parse {
                    line,
                    message: format!("`{key}` must be a finite number, got `{v}`"),
                }),
            })
            .transpose()
    };
    let int = |key: &str| -> Result<Option<u64>> {
        get(key)
            .map(|(line, v)| {
                v.parse::<u64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{key}` must be a nonnegative integer, got `{v}`"),
                })
            })
            .transpose()
    };
    let missing = |key: &str| Error::Parse {
        line: 0,
        message: format!("missing required key `{key}`"),
    };

    let selection = match (
        real("p20")?,
        real("p500")?,
        real("alpha0")?,
        real("alpha1")?,
    ) {
        (Some(p20), Some(p500), None, None) => Selection::Anchors { p20, p500 },
        (None, None, Some(alpha0), Some(alpha1)) => Selection::Alphas { alpha0, alpha1 },
        (None, None, None, None) => return Err(missing("p20/p500 or alpha0/alpha1")),
        _ => {
            return Err(Error::Parse {
                line: 0,
                message: "give exactly one of the pairs p20/p500 and alpha0/alpha1".into(),
            })
        }
    };
    let defaults = ScenarioConfig::default();
    let copas = match get("copas") {
        None => defaults.copas,
        Some((_, v)) if v == "true" || v == "1" => true,
        Some((_, v)) if v == "false" || v == "0" => false,
        Some((line, v)) => {
            return Err(Error::Parse {
                line,
                message: format!("`copas` must be true or false, got `{v}`"),
            })
        }
    };
    let config = ScenarioConfig {
        theta: real("theta")?.unwrap_or(defaults.theta),
        tau: real("tau")?.ok_or_else(|| missing("tau"))?,
        rho: real("rho")?.ok_or_else(|| missing("rho"))?,
        selection,
        total_studies: int("total")?.ok_or_else(|| missing("total"))? as usize,
        replications: int("reps")?
            .map(|v| v as usize)
            .unwrap_or(defaults.replications),
        seed: int("seed")?.unwrap_or(defaults.seed),
        ci_level: real("level")?.unwrap_or(defaults.ci_level),
        copas,
    };
    config.validate()?;
    Ok(config)
}

/// Inverse of [`parse_scenario_config`].
pub fn write_scenario_config(config: &ScenarioConfig) -> String {
    let mut out = format!(
        "theta = {}\ntau = {}\nrho = {}\n",
        config.theta, config.tau, config.rho
    );
    match config.selection {
        Selection::Anchors { p20, p500 } => out.push_str(&format!("p20 = {p20}\np500 = {p500}\n")),
        Selection::Alphas { alpha0, alpha1 } => {
            out.push_str(&format!("alpha0 = {alpha0}\nalpha1 = {alpha1}\n"))
        }
    }
    out.push_str(&format!(
        "total = {}\nreps = {}\nseed = {}\nlevel = {}\ncopas = {}\n",
        config.total_studies, config.replications, config.seed, config.ci_level, config.copas
    ));
    out
}
