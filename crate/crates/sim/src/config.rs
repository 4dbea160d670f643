//! Experiment configuration files (TOML or JSON).
//!
//! Every key is optional; omitted keys keep the built-in defaults. Decibel
//! keys (`*_db`, `*_dbm`) are converted to linear units here and nowhere else.
//! Any top-level key can be overridden from the environment as
//! `DMASIM_<KEY>` (case-insensitive); nested tables use a double underscore,
//! e.g. `DMASIM_TOLERANCES__EWR_TOL=1e-8`.

use std::path::Path;

use dmasim_core::dma::Constraint;
use dmasim_core::energy::Architecture;
use dmasim_core::rates::RateMode;
use dmasim_core::scenario::{db_to_linear, dbm_to_watts, Scenario};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::SimError;

pub const ENV_PREFIX: &str = "DMASIM_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub ewr_tol: Option<f64>,
    pub ewr_max_sweeps: Option<usize>,
    pub wmmse_tol: Option<f64>,
    pub wmmse_max_iterations: Option<usize>,
    pub pdd_inner_tol: Option<f64>,
    pub pdd_inner_max: Option<usize>,
    pub pdd_outer_max: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PddConfig {
    pub penalty: Option<f64>,
    pub penalty_shrink: Option<f64>,
    pub threshold_factor: Option<f64>,
    pub violation_tol: Option<f64>,
    pub initial_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub amplifier_efficiency: Option<f64>,
    pub rf_chain_dbm: Option<f64>,
    pub base_station_dbm: Option<f64>,
    pub phase_shifter_dbm: Option<f64>,
}

/// Raw file contents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(rename = "L")]
    pub microstrips: Option<usize>,
    #[serde(rename = "S")]
    pub elements_per_microstrip: Option<usize>,
    #[serde(rename = "K")]
    pub users: Option<usize>,
    pub wavelength: Option<f64>,
    pub dx: Option<f64>,
    pub dz: Option<f64>,
    pub alpha_wg: Option<f64>,
    pub gamma_wg: Option<f64>,
    pub feed_distances: Option<Vec<f64>>,
    #[serde(rename = "K0")]
    pub k0: Option<f64>,
    #[serde(rename = "K0_db")]
    pub k0_db: Option<f64>,
    pub r: Option<f64>,
    pub pathloss_exponent: Option<f64>,
    pub alpha0: Option<f64>,
    pub alpha0_db: Option<f64>,
    #[serde(rename = "D0")]
    pub reference_distance: Option<f64>,
    #[serde(rename = "N0")]
    pub n0: Option<f64>,
    #[serde(rename = "N0_db")]
    pub n0_db: Option<f64>,
    #[serde(rename = "Nk")]
    pub nk: Option<f64>,
    #[serde(rename = "Nk_dbm")]
    pub nk_dbm: Option<f64>,
    #[serde(rename = "Pmax")]
    pub pmax: Option<f64>,
    #[serde(rename = "Pmax_dbm")]
    pub pmax_dbm: Option<f64>,
    pub dma_position: Option<[f64; 3]>,
    pub user_center: Option<[f64; 3]>,
    #[serde(rename = "d0")]
    pub user_radius: Option<f64>,
    pub randomize_users: Option<bool>,
    pub constraint: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    /// Rate evaluated by `no-opt` and decoder used by `icsi-wmmse`: `sic`, `nsic` or `downlink`.
    pub link: Option<String>,
    /// Architecture used for energy efficiency: `DMA`, `HB` or `FD`.
    pub arch: Option<String>,
    pub tolerances: Option<ToleranceConfig>,
    pub pdd: Option<PddConfig>,
    pub power: Option<PowerConfig>,
}

/// Top-level keys accepted in a configuration file.
pub const KEYS: &[&str] = &[
    "L",
    "S",
    "K",
    "wavelength",
    "dx",
    "dz",
    "alpha_wg",
    "gamma_wg",
    "feed_distances",
    "K0",
    "K0_db",
    "r",
    "pathloss_exponent",
    "alpha0",
    "alpha0_db",
    "D0",
    "N0",
    "N0_db",
    "Nk",
    "Nk_dbm",
    "Pmax",
    "Pmax_dbm",
    "dma_position",
    "user_center",
    "d0",
    "randomize_users",
    "constraint",
    "trials",
    "seed",
    "link",
    "arch",
    "tolerances",
    "pdd",
    "power",
];

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub link: RateMode,
    pub arch: Architecture,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            link: RateMode::Sic,
            arch: Architecture::Dma,
        }
    }
}

fn exclusive<T>(
    key_lin: &'static str,
    lin: Option<T>,
    key_db: &'static str,
    db: Option<T>,
) -> Result<Option<(bool, T)>, SimError> {
    match (lin, db) {
        (Some(_), Some(_)) => Err(SimError::Config {
            key: key_lin.to_string(),
            reason: format!("set either `{key_lin}` or `{key_db}`, not both"),
        }),
        (Some(v), None) => Ok(Some((false, v))),
        (None, Some(v)) => Ok(Some((true, v))),
        (None, None) => Ok(None),
    }
}

pub fn parse_link(tag: &str) -> Result<RateMode, SimError> {
    match tag.to_ascii_lowercase().as_str() {
        "sic" => Ok(RateMode::Sic),
        "nsic" => Ok(RateMode::Nsic),
        "downlink" => Ok(RateMode::Downlink),
        other => Err(SimError::Config {
            key: "link".into(),
            reason: format!("expected sic, nsic or downlink, got `{other}`"),
        }),
    }
}

pub fn parse_arch(tag: &str) -> Result<Architecture, SimError> {
    Architecture::from_tag(tag).ok_or_else(|| SimError::Config {
        key: "arch".into(),
        reason: format!("expected DMA, HB or FD, got `{tag}`"),
    })
}

impl ConfigFile {
    /// Applies the file on top of the defaults and validates the result.
    pub fn resolve(&self) -> Result<RunConfig, SimError> {
        let mut sc = Scenario::default();
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(sc.microstrips, self.microstrips);
        set!(sc.elements_per_microstrip, self.elements_per_microstrip);
        set!(sc.users, self.users);
        if let Some(w) = self.wavelength {
            sc.wavelength = w;
            sc.spacing_x = w / 2.0;
            sc.spacing_z = w / 2.0;
        }
        set!(sc.spacing_x, self.dx);
        set!(sc.spacing_z, self.dz);
        set!(sc.waveguide_attenuation, self.alpha_wg);
        set!(sc.waveguide_wavenumber, self.gamma_wg);
        if self.feed_distances.is_some() {
            sc.feed_distances = self.feed_distances.clone();
        }
        if let Some((db, v)) = exclusive("K0", self.k0, "K0_db", self.k0_db)? {
            sc.rician_factor = if db { db_to_linear(v) } else { v };
        }
        set!(sc.correlation, self.r);
        set!(sc.pathloss_exponent, self.pathloss_exponent);
        if let Some((db, v)) = exclusive("alpha0", self.alpha0, "alpha0_db", self.alpha0_db)? {
            sc.reference_loss = if db { db_to_linear(v) } else { v };
        }
        set!(sc.reference_distance, self.reference_distance);
        if let Some((db, v)) = exclusive("N0", self.n0, "N0_db", self.n0_db)? {
            sc.uplink_noise = if db { db_to_linear(v) } else { v };
        }
        if let Some((db, v)) = exclusive("Nk", self.nk, "Nk_dbm", self.nk_dbm)? {
            sc.downlink_noise = if db { dbm_to_watts(v) } else { v };
        }
        if let Some((db, v)) = exclusive("Pmax", self.pmax, "Pmax_dbm", self.pmax_dbm)? {
            sc.max_power = Some(if db { dbm_to_watts(v) } else { v });
        }
        set!(sc.dma_position, self.dma_position);
        set!(sc.user_center, self.user_center);
        set!(sc.user_radius, self.user_radius);
        set!(sc.randomize_users, self.randomize_users);
        if let Some(tag) = &self.constraint {
            sc.constraint = Constraint::from_tag(tag).ok_or_else(|| SimError::Config {
                key: "constraint".into(),
                reason: format!("expected LP, AO, BA or UC, got `{tag}`"),
            })?;
        }
        set!(sc.trials, self.trials);
        set!(sc.seed, self.seed);
        if let Some(t) = &self.tolerances {
            let tol = &mut sc.tolerances;
            set!(tol.ewr_tol, t.ewr_tol);
            set!(tol.ewr_max_sweeps, t.ewr_max_sweeps);
            set!(tol.wmmse_tol, t.wmmse_tol);
            set!(tol.wmmse_max_iterations, t.wmmse_max_iterations);
            set!(tol.pdd_inner_tol, t.pdd_inner_tol);
            set!(tol.pdd_inner_max, t.pdd_inner_max);
            set!(tol.pdd_outer_max, t.pdd_outer_max);
        }
        if let Some(p) = &self.pdd {
            let s = &mut sc.pdd;
            set!(s.penalty, p.penalty);
            set!(s.penalty_shrink, p.penalty_shrink);
            set!(s.threshold_factor, p.threshold_factor);
            set!(s.violation_tol, p.violation_tol);
            set!(s.initial_threshold, p.initial_threshold);
        }
        if let Some(p) = &self.power {
            let pm = &mut sc.power_model;
            set!(pm.amplifier_efficiency, p.amplifier_efficiency);
            if let Some(v) = p.rf_chain_dbm {
                pm.rf_chain = dbm_to_watts(v);
            }
            if let Some(v) = p.base_station_dbm {
                pm.base_station = dbm_to_watts(v);
            }
            if let Some(v) = p.phase_shifter_dbm {
                pm.phase_shifter = dbm_to_watts(v);
            }
        }
        sc.validate()?;
        Ok(RunConfig {
            scenario: sc,
            link: self
                .link
                .as_deref()
                .map(parse_link)
                .transpose()?
                .unwrap_or(RateMode::Sic),
            arch: self
                .arch
                .as_deref()
                .map(parse_arch)
                .transpose()?
                .unwrap_or(Architecture::Dma),
        })
    }
}

/// Parses a file into a generic tree; `.json` is JSON, anything else TOML.
pub fn read_tree(path: &Path) -> Result<Value, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_tree(
        &text,
        path.extension().and_then(|e| e.to_str()) == Some("json"),
    )
}

pub fn parse_tree(text: &str, json: bool) -> Result<Value, SimError> {
    let value: Value = if json {
        serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?
    };
    if !value.is_object() {
        return Err(SimError::Parse("configuration must be a table".into()));
    }
    Ok(value)
}

/// Interprets an override string as a JSON scalar/array, falling back to a string.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn find_key<'a>(candidates: impl IntoIterator<Item = &'a str>, wanted: &str) -> Option<&'a str> {
    candidates
        .into_iter()
        .find(|k| k.eq_ignore_ascii_case(wanted))
}

/// Applies `DMASIM_*` overrides from `vars` onto the tree.
pub fn apply_env<I>(tree: &mut Value, vars: I) -> Result<(), SimError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    let root = tree.as_object_mut().expect("configuration tree is a table");
    for (name, raw) in vars {
        let rest = &name[ENV_PREFIX.len()..];
        let mut parts = rest.splitn(2, "__");
        let top = parts.next().unwrap_or_default();
        let key = find_key(KEYS.iter().copied(), top).ok_or_else(|| SimError::Config {
            key: name.clone(),
            reason: "unknown configuration key".into(),
        })?;
        match parts.next() {
            None => {
                root.insert(key.to_string(), override_value(&raw));
            }
            Some(sub) => {
                let table = root
                    .entry(key.to_string())
                    .or_insert_with(|| Value::Object(Map::new()));
                let table = table.as_object_mut().ok_or_else(|| SimError::Config {
                    key: name.clone(),
                    reason: format!("`{key}` is not a table"),
                })?;
                table.insert(sub.to_ascii_lowercase(), override_value(&raw));
            }
        }
    }
    Ok(())
}

pub fn from_tree(tree: Value) -> Result<ConfigFile, SimError> {
    serde_json::from_value(tree).map_err(|e| SimError::Parse(e.to_string()))
}

/// Loads, applies environment overrides and resolves a configuration file.
pub fn load(path: &Path) -> Result<RunConfig, SimError> {
    let mut tree = read_tree(path)?;
    apply_env(&mut tree, std::env::vars())?;
    from_tree(tree)?.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<RunConfig, SimError> {
        from_tree(parse_tree(text, false)?)?.resolve()
    }

    #[test]
    fn decibel_keys_become_linear() {
        let rc = resolve("alpha0_db = -30\nK0_db = 10\nPmax_dbm = 5\n").unwrap();
        assert!((rc.scenario.reference_loss - 1e-3).abs() < 1e-18);
        assert!((rc.scenario.rician_factor - 10.0).abs() < 1e-12);
        assert!((rc.scenario.max_power.unwrap() - 3.1622776601683795e-3).abs() < 1e-15);
    }

    #[test]
    fn uplink_config_without_power_budget() {
        let mut file = from_tree(parse_tree("L = 2\nS = 2\n", false).unwrap()).unwrap();
        file.pmax = None;
        let rc = file.resolve().unwrap();
        assert_eq!(rc.scenario.elements(), 4);
    }

    #[test]
    fn rejects_unknown_and_invalid_keys() {
        assert!(matches!(resolve("bogus = 1\n"), Err(SimError::Parse(_))));
        match resolve("r = 1.0\n") {
            Err(SimError::Core(dmasim_core::Error::InvalidParameter { key, .. })) => {
                assert_eq!(key, "r")
            }
            other => panic!("unexpected {other:?}"),
        }
        match resolve("K0 = 1\nK0_db = 0\n") {
            Err(SimError::Config { key, .. }) => assert_eq!(key, "K0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_and_toml_agree() {
        let a = resolve("L = 4\nK0_db = 5\nconstraint = \"AO\"\n").unwrap();
        let b = from_tree(parse_tree(r#"{"L": 4, "K0_db": 5, "constraint": "AO"}"#, true).unwrap())
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn environment_overrides() {
        let mut tree = parse_tree("K = 2\n", false).unwrap();
        let vars = vec![
            ("DMASIM_K".to_string(), "3".to_string()),
            ("DMASIM_TOLERANCES__EWR_TOL".to_string(), "1e-9".to_string()),
            ("DMASIM_LINK".to_string(), "nsic".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        apply_env(&mut tree, vars).unwrap();
        let rc = from_tree(tree).unwrap().resolve().unwrap();
        assert_eq!(rc.scenario.users, 3);
        assert_eq!(rc.scenario.tolerances.ewr_tol, 1e-9);
        assert_eq!(rc.link, RateMode::Nsic);

        let mut tree = parse_tree("", false).unwrap();
        let err = apply_env(
            &mut tree,
            vec![("DMASIM_NOPE".to_string(), "1".to_string())],
        )
        .unwrap_err();
        assert!(matches!(err, SimError::Config { .. }));
    }
}
