//! Parameter sweeps and their CSV export.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use dmasim_core::scenario::{db_to_linear, dbm_to_watts};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::SimError;
use crate::experiment::{run_experiment, ExperimentResult, Scheme};

pub const CSV_HEADER: [&str; 10] = [
    "scheme",
    "variable",
    "value",
    "surrogate_bits",
    "mc_mean",
    "mc_se",
    "ee",
    "iterations",
    "seed",
    "flags",
];

pub const TRACE_HEADER: [&str; 6] = [
    "scheme",
    "variable",
    "value",
    "iteration",
    "surrogate_bits",
    "violation",
];

/// Swept quantity. `K0` is given in dB and `Pmax` in dBm; `N` keeps `L`
/// fixed and sets `S = N/L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    N,
    L,
    S,
    K0,
    Pmax,
    K,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::N => "N",
            SweepVariable::L => "L",
            SweepVariable::S => "S",
            SweepVariable::K0 => "K0",
            SweepVariable::Pmax => "Pmax",
            SweepVariable::K => "K",
        }
    }

    /// Returns a copy of `base` with the variable set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig, SimError> {
        let mut rc = base.clone();
        let sc = &mut rc.scenario;
        let count = |v: f64| -> Result<usize, SimError> {
            if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(SimError::Config {
                    key: self.name().into(),
                    reason: format!("expected a positive integer, got {v}"),
                })
            }
        };
        match self {
            SweepVariable::N => {
                let n = count(value)?;
                if n % sc.microstrips != 0 {
                    return Err(SimError::Config {
                        key: "N".into(),
                        reason: format!("{n} is not a multiple of L = {}", sc.microstrips),
                    });
                }
                sc.elements_per_microstrip = n / sc.microstrips;
            }
            SweepVariable::L => sc.microstrips = count(value)?,
            SweepVariable::S => sc.elements_per_microstrip = count(value)?,
            SweepVariable::K => sc.users = count(value)?,
            SweepVariable::K0 => sc.rician_factor = db_to_linear(value),
            SweepVariable::Pmax => sc.max_power = Some(dbm_to_watts(value)),
        }
        sc.validate()?;
        Ok(rc)
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVariable {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "N" => Ok(SweepVariable::N),
            "L" => Ok(SweepVariable::L),
            "S" => Ok(SweepVariable::S),
            "K0" => Ok(SweepVariable::K0),
            "Pmax" => Ok(SweepVariable::Pmax),
            "K" => Ok(SweepVariable::K),
            other => Err(SimError::Config {
                key: "sweep".into(),
                reason: format!(
                    "unknown sweep variable `{other}`; expected N, L, S, K0, Pmax or K"
                ),
            }),
        }
    }
}

/// Parses `a,b,c`; an empty string gives an empty list.
pub fn parse_values(text: &str) -> Result<Vec<f64>, SimError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().map_err(|_| SimError::Config {
                key: "values".into(),
                reason: format!("`{s}` is not a number"),
            })
        })
        .collect()
}

/// One result per `(scheme, value)`, ordered by scheme then sweep index.
/// Invalid sweep points become flagged results instead of aborting the sweep.
pub fn sweep(
    base: &RunConfig,
    schemes: &[Scheme],
    variable: SweepVariable,
    values: &[f64],
) -> Vec<ExperimentResult> {
    let points: Vec<(Scheme, f64)> = schemes
        .iter()
        .flat_map(|&s| values.iter().map(move |&v| (s, v)))
        .collect();
    points
        .into_par_iter()
        .map(|(scheme, value)| {
            let mut r = match variable.apply(base, value) {
                Ok(rc) => run_experiment(&rc, scheme),
                Err(e) => {
                    let mut r = ExperimentResult::empty(base, scheme);
                    r.flags.push(format!(
                        "error:{}:{}",
                        e.kind(),
                        e.to_string().replace(';', ",")
                    ));
                    r
                }
            };
            r.variable = Some(variable.name().to_string());
            r.value = Some(value);
            r
        })
        .collect()
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_csv<W: Write>(out: W, results: &[ExperimentResult]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        let rep = r.report.as_ref();
        w.write_record([
            r.scheme.name().to_string(),
            r.variable.clone().unwrap_or_default(),
            fmt_opt(r.value),
            fmt_f64(rep.map_or(f64::NAN, |x| x.surrogate)),
            fmt_f64(rep.map_or(f64::NAN, |x| x.mc_mean)),
            fmt_f64(rep.map_or(f64::NAN, |x| x.mc_se)),
            fmt_f64(r.ee),
            r.iterations.to_string(),
            r.seed.to_string(),
            r.flags.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-iteration traces; `violation` is empty for schemes without one.
pub fn write_traces<W: Write>(out: W, results: &[ExperimentResult]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in results {
        for (i, s) in r.surrogate_trace.iter().enumerate() {
            // the rate trace starts at the initial point; the violation trace does not
            let violation = i
                .checked_sub(1)
                .and_then(|j| r.violation_trace.get(j))
                .copied();
            w.write_record([
                r.scheme.name().to_string(),
                r.variable.clone().unwrap_or_default(),
                fmt_opt(r.value),
                i.to_string(),
                fmt_f64(*s),
                fmt_opt(violation),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_parse() {
        assert_eq!(parse_values("0, 5,10").unwrap(), vec![0.0, 5.0, 10.0]);
        assert!(parse_values("").unwrap().is_empty());
        assert!(parse_values("1,x").is_err());
    }

    #[test]
    fn sweep_variables_apply() {
        let base = RunConfig::default();
        let rc = SweepVariable::N.apply(&base, 32.0).unwrap();
        assert_eq!(
            (rc.scenario.microstrips, rc.scenario.elements_per_microstrip),
            (8, 4)
        );
        assert!(SweepVariable::N.apply(&base, 30.0).is_err());
        let rc = SweepVariable::K0.apply(&base, 20.0).unwrap();
        assert!((rc.scenario.rician_factor - 100.0).abs() < 1e-12);
        let rc = SweepVariable::Pmax.apply(&base, 0.0).unwrap();
        assert!((rc.scenario.max_power.unwrap() - 1e-3).abs() < 1e-18);
        assert!(SweepVariable::K.apply(&base, 0.0).is_err());
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "scheme,variable,value,surrogate_bits,mc_mean,mc_se,ee,iterations,seed,flags\n"
        );
    }
}
