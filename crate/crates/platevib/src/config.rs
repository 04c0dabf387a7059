//! Configuration files for the command-line frontend.
//!
//! The format is TOML with a fixed set of sections:
//!
//! ```toml
//! [domain]
//! rect1 = "0, 0, 1, 1"      # x0, y0, x1, y1; rect2, rect3, ... for unions
//! h0 = "1/5"                 # target mesh size of the coarsest level
//! levels = 5                 # number of meshes (each halves the previous h)
//!
//! [material]
//! rigidity = 1.0
//! poisson = 0.3
//! rho_d = 1.0                # surface density times thickness
//!
//! [oscillator.1]             # optional; consecutive numbering from 1
//! mass = 0.01
//! stiffness = 100.0
//! x = "9/26"                 # coordinates may be fractions or numbers
//! y = "19/26"
//!
//! [search]
//! re_min = 800.0             # eigenvalue window on the real axis
//! re_max = 6000.0
//! im_half = 600.0            # half-height of the search rectangle
//!
//! [sim]                      # optional; every key has a default
//! alpha = 1e-6
//! beta = 1e-6
//! m_per_edge = 8
//! seed = 0
//! probes = 2
//! max_depth = 48
//! cache_mb = 256
//! conv_m_per_edge = 2        # cheaper rule for the tight per-level boxes
//! ```
//!
//! Every key is checked: misspelled or unknown keys are errors, not silent
//! no-ops.  Numeric values may be written as TOML numbers or as fraction
//! strings like `"9/26"`, which parse to the correctly rounded quotient;
//! that matters for mesh coordinates that have no finite decimal expansion.

use crate::assembly::{Oscillator, PlateProblem};
use crate::mesh::{MeshError, PlateDomain, Rect};
use crate::sim::SimConfig;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;
use toml::Value;

/// Default Gauss rule for the tight per-level boxes of a convergence run.
pub const DEFAULT_CONV_M_PER_EDGE: usize = 2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("TOML syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("{place}: unknown key `{key}`")]
    UnknownKey { place: String, key: String },
    #[error("{place}: missing key `{key}`")]
    Missing { place: String, key: String },
    #[error("{place}: {why}")]
    Invalid { place: String, why: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// The search window on the complex plane, symmetric about the real axis.
#[derive(Clone, Copy, Debug)]
pub struct SearchWindow {
    pub re_min: f64,
    pub re_max: f64,
    pub im_half: f64,
}

/// A fully validated run description.
#[derive(Clone, Debug)]
pub struct Config {
    pub domain: PlateDomain,
    /// Target mesh size of the coarsest level.
    pub h0: f64,
    /// `h0` as a unit fraction if it was written as one; drives row labels.
    pub h0_frac: Option<(u64, u64)>,
    /// Number of meshes in a convergence run (level 0 plus refinements).
    pub levels: usize,
    pub problem: PlateProblem,
    pub search: SearchWindow,
    pub sim: SimConfig,
    /// Gauss rule for the tight continuation boxes of convergence levels.
    pub conv_m_per_edge: usize,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let root: Value = text.parse()?;
        let root = as_table(&root, "top level")?;
        for key in root.keys() {
            if !matches!(
                key.as_str(),
                "domain" | "material" | "oscillator" | "search" | "sim"
            ) {
                return Err(ConfigError::UnknownKey {
                    place: "top level".into(),
                    key: key.clone(),
                });
            }
        }

        let (domain, h0, h0_frac, levels) = parse_domain(require(root, "domain", "top level")?)?;
        let material = parse_material(require(root, "material", "top level")?)?;
        let oscillators = match root.get("oscillator") {
            Some(v) => parse_oscillators(v)?,
            None => Vec::new(),
        };
        let search = parse_search(require(root, "search", "top level")?)?;
        let (sim, conv_m_per_edge) = match root.get("sim") {
            Some(v) => parse_sim(v)?,
            None => (SimConfig::default(), DEFAULT_CONV_M_PER_EDGE),
        };

        let problem = PlateProblem {
            rigidity: material.0,
            poisson: material.1,
            rho_d: material.2,
            oscillators,
        };
        Ok(Config {
            domain,
            h0,
            h0_frac,
            levels,
            problem,
            search,
            sim,
            conv_m_per_edge,
        })
    }

    /// Mesh-size label of a refinement level: `1/5 -> 1/10 -> 1/20 ...` when
    /// `h0` was a unit fraction, otherwise the halved decimal value.
    pub fn h_label(&self, level: usize) -> String {
        match self.h0_frac {
            Some((1, den)) => format!("1/{}", den << level),
            Some((num, den)) => format!("{num}/{}", den << level),
            None => format!("{}", self.h0 / (1u64 << level) as f64),
        }
    }
}

fn as_table<'v>(
    v: &'v Value,
    place: &str,
) -> Result<&'v toml::map::Map<String, Value>, ConfigError> {
    v.as_table().ok_or_else(|| ConfigError::Invalid {
        place: place.into(),
        why: "expected a table".into(),
    })
}

fn require<'v>(
    table: &'v toml::map::Map<String, Value>,
    key: &str,
    place: &str,
) -> Result<&'v Value, ConfigError> {
    table.get(key).ok_or_else(|| ConfigError::Missing {
        place: place.into(),
        key: key.into(),
    })
}

fn check_keys(
    table: &toml::map::Map<String, Value>,
    allowed: &[&str],
    place: &str,
) -> Result<(), ConfigError> {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey {
                place: place.into(),
                key: key.clone(),
            });
        }
    }
    Ok(())
}

/// A number written as a TOML number or a fraction string `"a/b"`.
fn number(v: &Value, place: &str) -> Result<f64, ConfigError> {
    let out = match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        Value::String(s) => fraction(s),
        _ => None,
    };
    match out {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(ConfigError::Invalid {
            place: place.into(),
            why: format!("expected a number or a fraction string, got `{v}`"),
        }),
    }
}

/// Parses `"a/b"` (integers) or a plain decimal string.
fn fraction(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.split_once('/') {
        Some((num, den)) => {
            let num: i64 = num.trim().parse().ok()?;
            let den: i64 = den.trim().parse().ok()?;
            if den == 0 {
                None
            } else {
                Some(num as f64 / den as f64)
            }
        }
        None => s.parse().ok(),
    }
}

/// The `(numerator, denominator)` of a fraction string, when it is one.
fn unit_fraction(v: &Value) -> Option<(u64, u64)> {
    let s = v.as_str()?;
    let (num, den) = s.trim().split_once('/')?;
    let num: u64 = num.trim().parse().ok()?;
    let den: u64 = den.trim().parse().ok()?;
    (den != 0).then_some((num, den))
}

fn positive(v: &Value, place: &str) -> Result<f64, ConfigError> {
    let x = number(v, place)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(ConfigError::Invalid {
            place: place.into(),
            why: format!("must be positive, got {x}"),
        })
    }
}

fn count(v: &Value, place: &str) -> Result<usize, ConfigError> {
    match v.as_integer() {
        Some(i) if i >= 1 => Ok(i as usize),
        _ => Err(ConfigError::Invalid {
            place: place.into(),
            why: format!("expected a positive integer, got `{v}`"),
        }),
    }
}

type DomainParts = (PlateDomain, f64, Option<(u64, u64)>, usize);

fn parse_domain(v: &Value) -> Result<DomainParts, ConfigError> {
    let place = "[domain]";
    let table = as_table(v, place)?;
    let mut rects: BTreeMap<usize, Rect> = BTreeMap::new();
    for (key, value) in table {
        if let Some(idx) = key.strip_prefix("rect") {
            let idx: usize = idx.parse().map_err(|_| ConfigError::UnknownKey {
                place: place.into(),
                key: key.clone(),
            })?;
            rects.insert(idx, parse_rect(value, &format!("{place} {key}"))?);
        } else if !matches!(key.as_str(), "h0" | "levels") {
            return Err(ConfigError::UnknownKey {
                place: place.into(),
                key: key.clone(),
            });
        }
    }
    if rects.is_empty() {
        return Err(ConfigError::Missing {
            place: place.into(),
            key: "rect1".into(),
        });
    }
    for (pos, idx) in rects.keys().enumerate() {
        if *idx != pos + 1 {
            return Err(ConfigError::Invalid {
                place: place.into(),
                why: format!("rectangles must be numbered 1..{}, found rect{idx}", rects.len()),
            });
        }
    }
    let domain = PlateDomain::new(rects.into_values().collect())?;

    let h0_value = require(table, "h0", place)?;
    let h0 = positive(h0_value, &format!("{place} h0"))?;
    let h0_frac = unit_fraction(h0_value);
    let levels = count(require(table, "levels", place)?, &format!("{place} levels"))?;
    Ok((domain, h0, h0_frac, levels))
}

fn parse_rect(v: &Value, place: &str) -> Result<Rect, ConfigError> {
    let s = v.as_str().ok_or_else(|| ConfigError::Invalid {
        place: place.into(),
        why: "expected a string \"x0, y0, x1, y1\"".into(),
    })?;
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| fraction(p))
        .collect::<Option<_>>()
        .ok_or_else(|| ConfigError::Invalid {
            place: place.into(),
            why: format!("cannot parse `{s}` as four numbers"),
        })?;
    if parts.len() != 4 {
        return Err(ConfigError::Invalid {
            place: place.into(),
            why: format!("expected four numbers, got {}", parts.len()),
        });
    }
    let (x0, y0, x1, y1) = (parts[0], parts[1], parts[2], parts[3]);
    if !(x0 < x1 && y0 < y1) {
        return Err(ConfigError::Invalid {
            place: place.into(),
            why: format!("corners ({x0}, {y0}) and ({x1}, {y1}) do not span a rectangle"),
        });
    }
    Ok(Rect::new(x0, x1, y0, y1))
}

fn parse_material(v: &Value) -> Result<(f64, f64, f64), ConfigError> {
    let place = "[material]";
    let table = as_table(v, place)?;
    check_keys(table, &["rigidity", "poisson", "rho_d"], place)?;
    let rigidity = positive(require(table, "rigidity", place)?, &format!("{place} rigidity"))?;
    let poisson = number(require(table, "poisson", place)?, &format!("{place} poisson"))?;
    if !(0.0 <= poisson && poisson < 0.5) {
        return Err(ConfigError::Invalid {
            place: place.into(),
            why: format!("poisson ratio {poisson} outside [0, 0.5)"),
        });
    }
    let rho_d = positive(require(table, "rho_d", place)?, &format!("{place} rho_d"))?;
    Ok((rigidity, poisson, rho_d))
}

fn parse_oscillators(v: &Value) -> Result<Vec<Oscillator>, ConfigError> {
    let place = "[oscillator.*]";
    let table = as_table(v, place)?;
    let mut numbered: BTreeMap<usize, Oscillator> = BTreeMap::new();
    for (key, value) in table {
        let idx: usize = key.parse().map_err(|_| ConfigError::UnknownKey {
            place: place.into(),
            key: key.clone(),
        })?;
        let place = format!("[oscillator.{idx}]");
        let sub = as_table(value, &place)?;
        check_keys(sub, &["mass", "stiffness", "x", "y"], &place)?;
        numbered.insert(
            idx,
            Oscillator {
                mass: positive(require(sub, "mass", &place)?, &format!("{place} mass"))?,
                stiffness: positive(
                    require(sub, "stiffness", &place)?,
                    &format!("{place} stiffness"),
                )?,
                x: number(require(sub, "x", &place)?, &format!("{place} x"))?,
                y: number(require(sub, "y", &place)?, &format!("{place} y"))?,
            },
        );
    }
    for (pos, idx) in numbered.keys().enumerate() {
        if *idx != pos + 1 {
            return Err(ConfigError::Invalid {
                place: place.into(),
                why: format!(
                    "oscillators must be numbered 1..{}, found {idx}",
                    numbered.len()
                ),
            });
        }
    }
    Ok(numbered.into_values().collect())
}

fn parse_search(v: &Value) -> Result<SearchWindow, ConfigError> {
    let place = "[search]";
    let table = as_table(v, place)?;
    check_keys(table, &["re_min", "re_max", "im_half"], place)?;
    let re_min = number(require(table, "re_min", place)?, &format!("{place} re_min"))?;
    let re_max = number(require(table, "re_max", place)?, &format!("{place} re_max"))?;
    let im_half = positive(require(table, "im_half", place)?, &format!("{place} im_half"))?;
    if !(re_min < re_max) {
        return Err(ConfigError::Invalid {
            place: place.into(),
            why: format!("re_min = {re_min} must lie below re_max = {re_max}"),
        });
    }
    Ok(SearchWindow {
        re_min,
        re_max,
        im_half,
    })
}

fn parse_sim(v: &Value) -> Result<(SimConfig, usize), ConfigError> {
    let place = "[sim]";
    let table = as_table(v, place)?;
    check_keys(
        table,
        &[
            "alpha",
            "beta",
            "m_per_edge",
            "seed",
            "probes",
            "max_depth",
            "cache_mb",
            "conv_m_per_edge",
        ],
        place,
    )?;
    let mut sim = SimConfig::default();
    if let Some(v) = table.get("alpha") {
        sim.alpha = positive(v, &format!("{place} alpha"))?;
    }
    if let Some(v) = table.get("beta") {
        sim.beta = positive(v, &format!("{place} beta"))?;
    }
    if let Some(v) = table.get("m_per_edge") {
        sim.m_per_edge = count(v, &format!("{place} m_per_edge"))?;
    }
    if let Some(v) = table.get("seed") {
        sim.seed = v.as_integer().ok_or_else(|| ConfigError::Invalid {
            place: format!("{place} seed"),
            why: format!("expected an integer, got `{v}`"),
        })? as u64;
    }
    if let Some(v) = table.get("probes") {
        sim.probes = count(v, &format!("{place} probes"))?;
    }
    if let Some(v) = table.get("max_depth") {
        sim.max_depth = count(v, &format!("{place} max_depth"))?;
    }
    if let Some(v) = table.get("cache_mb") {
        sim.cache_bytes = count(v, &format!("{place} cache_mb"))? << 20;
    }
    let conv_m_per_edge = match table.get("conv_m_per_edge") {
        Some(v) => count(v, &format!("{place} conv_m_per_edge"))?,
        None => DEFAULT_CONV_M_PER_EDGE,
    };
    Ok((sim, conv_m_per_edge))
}
