//! End-to-end runs of one scheme on one resolved scenario.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use dmasim_core::channel::{sample_channels, stat_matrices, ChannelFactors, UserStat};
use dmasim_core::dma::{microstrip_propagation, random_feasible, Constraint, DmaState};
use dmasim_core::downlink::{initial_precoder, pdd_run, relaxed_ao_run};
use dmasim_core::energy::energy_efficiency;
use dmasim_core::linalg::{real, CMat, CVec};
use dmasim_core::rates::{
    nats_to_bits, rate_nats, surrogate_rate, trial_rate, RateAccumulator, RateMode, RateReport,
};
use dmasim_core::rng::{rng_stream, stream, Purpose};
use dmasim_core::scenario::{place_users, Scenario};
use dmasim_core::uplink::{wmmse_run, Decoder};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    WmmseSic,
    WmmseNsic,
    Pdd,
    RelaxedAo,
    NoOpt,
    IcsiWmmse,
    IcsiPdd,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::WmmseSic,
        Scheme::WmmseNsic,
        Scheme::Pdd,
        Scheme::RelaxedAo,
        Scheme::NoOpt,
        Scheme::IcsiWmmse,
        Scheme::IcsiPdd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::WmmseSic => "wmmse-sic",
            Scheme::WmmseNsic => "wmmse-nsic",
            Scheme::Pdd => "pdd",
            Scheme::RelaxedAo => "relaxed-ao",
            Scheme::NoOpt => "no-opt",
            Scheme::IcsiWmmse => "icsi-wmmse",
            Scheme::IcsiPdd => "icsi-pdd",
        }
    }

    /// Rate evaluated for this scheme; `link` matters only for `no-opt` and `icsi-wmmse`.
    pub fn rate_mode(self, link: RateMode) -> RateMode {
        match self {
            Scheme::WmmseSic => RateMode::Sic,
            Scheme::WmmseNsic => RateMode::Nsic,
            Scheme::Pdd | Scheme::RelaxedAo | Scheme::IcsiPdd => RateMode::Downlink,
            Scheme::NoOpt | Scheme::IcsiWmmse => link,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .iter()
            .copied()
            .find(|x| x.name() == s)
            .ok_or_else(|| SimError::Config {
                key: "scheme".into(),
                reason: format!(
                    "unknown scheme `{s}`; expected one of {}",
                    Scheme::ALL.map(|x| x.name()).join(", ")
                ),
            })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// SHA-256 of the resolved configuration and scheme.
    pub fingerprint: String,
    pub scheme: Scheme,
    pub variable: Option<String>,
    pub value: Option<f64>,
    /// Missing when the run failed; the reason is in `flags`.
    pub report: Option<RateReport>,
    pub ee: f64,
    /// Surrogate rate (bits/s/Hz) per iteration.
    pub surrogate_trace: Vec<f64>,
    /// PDD constraint violation per outer iteration.
    pub violation_trace: Vec<f64>,
    pub iterations: usize,
    pub wall_clock: Duration,
    pub seed: u64,
    pub flags: Vec<String>,
}

impl ExperimentResult {
    /// A result with no report, to be filled in or flagged.
    pub fn empty(rc: &RunConfig, scheme: Scheme) -> Self {
        Self {
            fingerprint: fingerprint(rc, scheme),
            scheme,
            variable: None,
            value: None,
            report: None,
            ee: f64::NAN,
            surrogate_trace: Vec::new(),
            violation_trace: Vec::new(),
            iterations: 0,
            wall_clock: Duration::ZERO,
            seed: rc.scenario.seed,
            flags: Vec::new(),
        }
    }
}

/// Hex SHA-256 over the exact resolved configuration.
pub fn fingerprint(rc: &RunConfig, scheme: Scheme) -> String {
    let mut h = Sha256::new();
    h.update(
        format!(
            "{:?}|{:?}|{:?}|{}",
            rc.scenario,
            rc.link,
            rc.arch,
            scheme.name()
        )
        .as_bytes(),
    );
    format!("{:x}", h.finalize())
}

/// Monte-Carlo rate with trials evaluated in parallel and reduced in trial order.
pub fn mc_rate_parallel(
    mode: RateMode,
    dma: &DmaState,
    precoder: Option<&CMat>,
    stats: &[UserStat],
    sc: &Scenario,
) -> Result<RateReport, SimError> {
    let surrogate = surrogate_rate(mode, dma, precoder, stats, sc)?;
    let samples: Vec<_> = (0..sc.trials as u64)
        .into_par_iter()
        .map(|t| trial_rate(mode, dma, precoder, stats, sc, sc.seed, t))
        .collect();
    let mut acc = RateAccumulator::default();
    for s in samples {
        acc.push(s);
    }
    Ok(acc.finish(mode, surrogate))
}

/// Seeded feasible starting weights shared by every optimizing scheme.
pub fn initial_weights(sc: &Scenario) -> CVec {
    random_feasible(
        sc.elements(),
        sc.constraint,
        &mut stream(sc.seed, Purpose::Initialization, 0),
    )
}

struct Optimized {
    dma: DmaState,
    precoder: Option<CMat>,
    surrogate_trace: Vec<f64>,
    violation_trace: Vec<f64>,
    iterations: usize,
    flags: Vec<String>,
}

fn decoder_for(mode: RateMode) -> Result<Decoder, SimError> {
    match mode {
        RateMode::Sic => Ok(Decoder::Sic),
        RateMode::Nsic => Ok(Decoder::Nsic),
        RateMode::Downlink => Err(SimError::Config {
            key: "link".into(),
            reason: "icsi-wmmse needs an uplink decoder (sic or nsic)".into(),
        }),
    }
}

fn optimize(
    scheme: Scheme,
    factors: &ChannelFactors,
    rc: &RunConfig,
    start: &DmaState,
) -> Result<Optimized, SimError> {
    let sc = &rc.scenario;
    let mut flags = Vec::new();
    let out = match scheme {
        Scheme::WmmseSic | Scheme::WmmseNsic | Scheme::IcsiWmmse => {
            let decoder = match scheme {
                Scheme::WmmseSic => Decoder::Sic,
                Scheme::WmmseNsic => Decoder::Nsic,
                _ => decoder_for(rc.link)?,
            };
            let o = wmmse_run(decoder, factors, sc, start.clone())?;
            if !o.converged {
                flags.push("not_converged".into());
            }
            if o.ridged {
                flags.push("ridged".into());
            }
            if o.indefinite {
                flags.push("indefinite".into());
            }
            Optimized {
                dma: o.dma,
                precoder: None,
                surrogate_trace: o.surrogate_trace,
                violation_trace: Vec::new(),
                iterations: o.iterations,
                flags,
            }
        }
        Scheme::Pdd | Scheme::IcsiPdd => {
            let o = pdd_run(factors, sc, start.clone())?;
            if !o.converged {
                flags.push("not_converged".into());
            }
            if o.ridged {
                flags.push("ridged".into());
            }
            Optimized {
                dma: o.dma,
                precoder: Some(o.w),
                surrogate_trace: o.surrogate_trace,
                violation_trace: o.violation_trace,
                iterations: o.outer_iterations,
                flags,
            }
        }
        Scheme::RelaxedAo => {
            let o = relaxed_ao_run(factors, sc, start.clone())?;
            if !o.converged {
                flags.push("not_converged".into());
            }
            if o.ridged {
                flags.push("ridged".into());
            }
            Optimized {
                dma: o.dma,
                precoder: Some(o.w),
                surrogate_trace: o.surrogate_trace,
                violation_trace: Vec::new(),
                iterations: o.iterations,
                flags,
            }
        }
        Scheme::NoOpt => unreachable!("no-opt runs no solver"),
    };
    Ok(out)
}

fn no_opt(rc: &RunConfig, factors: &ChannelFactors) -> Result<Optimized, SimError> {
    let sc = &rc.scenario;
    let model = microstrip_propagation(sc);
    let ones = CVec::from_element(sc.elements(), real(1.0));
    let dma = DmaState::with_constraint(ones, &model, sc, Constraint::Unconstrained)?;
    let mut flags = Vec::new();
    let precoder = match rc.link {
        RateMode::Downlink => {
            let (w, ridged) = initial_precoder(&dma, factors, sc.max_power()?)?;
            if ridged {
                flags.push("ridged".into());
            }
            Some(w)
        }
        _ => None,
    };
    Ok(Optimized {
        dma,
        precoder,
        surrogate_trace: Vec::new(),
        violation_trace: Vec::new(),
        iterations: 0,
        flags,
    })
}

/// Per-trial rate, per-user rates, iterations and flags.
type TrialOutcome = (f64, Vec<f64>, usize, Vec<String>);

/// Per-realization re-optimization averaged over the Monte-Carlo trials.
fn icsi(
    scheme: Scheme,
    rc: &RunConfig,
    stats: &[UserStat],
    start: &DmaState,
) -> Result<(RateReport, usize, Vec<String>), SimError> {
    let sc = &rc.scenario;
    let mode = scheme.rate_mode(rc.link);
    if scheme == Scheme::IcsiWmmse {
        decoder_for(mode)?;
    }
    let runs: Vec<Result<TrialOutcome, SimError>> = (0..sc.trials as u64)
        .into_par_iter()
        .map(|t| {
            let channels = sample_channels(stats, &mut rng_stream(sc.seed, t));
            let factors = ChannelFactors::from_realization(&channels);
            let o = optimize(scheme, &factors, rc, start)?;
            let per_user: Vec<f64> = rate_nats(mode, &o.dma, o.precoder.as_ref(), &factors, sc)?
                .into_iter()
                .map(nats_to_bits)
                .collect();
            Ok((per_user.iter().sum(), per_user, o.iterations, o.flags))
        })
        .collect();
    let mut acc = RateAccumulator::default();
    let mut iterations = 0;
    let mut flags: Vec<String> = Vec::new();
    for r in runs {
        match r {
            Ok((total, per_user, it, f)) => {
                iterations = iterations.max(it);
                for x in f {
                    if !flags.contains(&x) {
                        flags.push(x);
                    }
                }
                acc.push(Ok((total, per_user)));
            }
            Err(SimError::Core(e)) => acc.push(Err(e)),
            Err(e) => return Err(e),
        }
    }
    let report = acc.finish(mode, f64::NAN);
    if report.dropped > 0 {
        flags.push(format!("dropped={}", report.dropped));
    }
    Ok((report, iterations, flags))
}

fn execute(scheme: Scheme, rc: &RunConfig) -> Result<(RateReport, Optimized), SimError> {
    let sc = &rc.scenario;
    let (stats, _) = stat_matrices(&place_users(sc), sc)?;
    let factors = ChannelFactors::from_stats(&stats);
    let model = microstrip_propagation(sc);
    let start = DmaState::assemble(initial_weights(sc), &model, sc)?;
    match scheme {
        Scheme::IcsiWmmse | Scheme::IcsiPdd => {
            let (report, iterations, flags) = icsi(scheme, rc, &stats, &start)?;
            let opt = Optimized {
                dma: start,
                precoder: None,
                surrogate_trace: Vec::new(),
                violation_trace: Vec::new(),
                iterations,
                flags,
            };
            Ok((report, opt))
        }
        _ => {
            let opt = if scheme == Scheme::NoOpt {
                no_opt(rc, &factors)?
            } else {
                optimize(scheme, &factors, rc, &start)?
            };
            let mode = scheme.rate_mode(rc.link);
            let report = mc_rate_parallel(mode, &opt.dma, opt.precoder.as_ref(), &stats, sc)?;
            let mut opt = opt;
            if report.dropped > 0 {
                opt.flags.push(format!("dropped={}", report.dropped));
            }
            Ok((report, opt))
        }
    }
}

/// Runs `scheme` end-to-end. Solver failures are recorded in `flags` rather
/// than returned, so sweeps continue past a bad point.
pub fn run_experiment(rc: &RunConfig, scheme: Scheme) -> ExperimentResult {
    let started = Instant::now();
    let sc = &rc.scenario;
    let mut result = ExperimentResult::empty(rc, scheme);
    match execute(scheme, rc) {
        Ok((report, opt)) => {
            if let Some(p) = sc.max_power {
                result.ee = energy_efficiency(
                    report.mc_mean,
                    rc.arch,
                    p,
                    sc.elements(),
                    sc.microstrips,
                    &sc.power_model,
                );
            }
            result.report = Some(report);
            result.surrogate_trace = opt.surrogate_trace;
            result.violation_trace = opt.violation_trace;
            result.iterations = opt.iterations;
            result.flags = opt.flags;
        }
        Err(e) => result.flags.push(format!(
            "error:{}:{}",
            e.kind(),
            e.to_string().replace(';', ",")
        )),
    }
    result.wall_clock = started.elapsed();
    result
}
