//! Sum-rate evaluation: closed-form surrogates and Monte-Carlo ergodic rates.
//!
//! Every rate expression is a function of per-user Gram matrices, so the same
//! code evaluates the surrogate (Grams `G̃_k G̃_kᴴ`) and a single channel
//! realization (Grams `g_k g_kᴴ`). Internally everything is in nats; reports
//! are in bits/s/Hz.

use alloc::vec::Vec;
use core::f64::consts::LN_2;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::channel::{sample_channels, ChannelFactors, UserStat};
use crate::dma::DmaState;
use crate::error::{Error, Result};
use crate::linalg::{self, real, CMat, RIDGE_SCALE};
use crate::rng::rng_stream;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateMode {
    /// Uplink MMSE receiver with successive interference cancellation.
    Sic,
    /// Uplink MMSE receiver without SIC.
    Nsic,
    Downlink,
}

impl RateMode {
    pub fn tag(self) -> &'static str {
        match self {
            RateMode::Sic => "SIC",
            RateMode::Nsic => "nSIC",
            RateMode::Downlink => "downlink",
        }
    }
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / LN_2
}

/// Uplink noise covariance `P = N0 Qᴴ Hᴴ H Q` (diagonal), ridged when a
/// microstrip carries (almost) no weight. Returns `(P, ridged)`.
pub fn noise_covariance(dma: &DmaState, n0: f64) -> Result<(CMat, bool)> {
    let gains = dma.chain_gains();
    let l = gains.len();
    let tr: f64 = gains.iter().map(|g| g * n0).sum();
    if !(tr > 0.0) {
        return Err(Error::NotPositiveDefinite(
            "uplink noise covariance is zero",
        ));
    }
    let eps = RIDGE_SCALE * tr / l as f64;
    let ridged = gains.iter().any(|g| g * n0 <= eps);
    let mut p = CMat::zeros(l, l);
    for i in 0..l {
        p[(i, i)] = real(gains[i] * n0 + if ridged { eps } else { 0.0 });
    }
    Ok((p, ridged))
}

/// `(HQ)ᴴ M (HQ)`.
pub(crate) fn project_gram(hq: &CMat, m: &CMat) -> CMat {
    linalg::hermitian_part(&(hq.adjoint() * m * hq))
}

/// Uplink SIC sum rate `log det(P + Σ_k (HQ)ᴴ F_kF_kᴴ (HQ)) − log det P`.
pub fn sic_rate_nats(dma: &DmaState, factors: &ChannelFactors, n0: f64) -> Result<f64> {
    let hq = dma.effective();
    let (p, _) = noise_covariance(dma, n0)?;
    let signal = project_gram(&hq, &factors.total_gram());
    Ok(linalg::logdet_hpd(&(&p + signal))? - linalg::logdet_hpd(&p)?)
}

/// Uplink nSIC per-user rates `log det A − log det(A − (HQ)ᴴ F_kF_kᴴ (HQ))`.
pub fn nsic_rates_nats(dma: &DmaState, factors: &ChannelFactors, n0: f64) -> Result<Vec<f64>> {
    let hq = dma.effective();
    let (p, _) = noise_covariance(dma, n0)?;
    let per_user: Vec<CMat> = factors.grams.iter().map(|g| project_gram(&hq, g)).collect();
    let a = per_user.iter().fold(p, |acc, m| acc + m);
    let logdet_a = linalg::logdet_hpd(&a)?;
    per_user
        .iter()
        .map(|m| Ok(logdet_a - linalg::logdet_hpd(&(&a - m))?))
        .collect()
}

/// Per-user downlink signal and interference powers for effective precoders
/// `V` (N×K): `S_k = v_kᴴ M_k v_k`, `I_k = Σ_{i≠k} v_iᴴ M_k v_i`.
pub fn downlink_powers(v: &CMat, factors: &ChannelFactors) -> (Vec<f64>, Vec<f64>) {
    let k = factors.users();
    let mut signal = Vec::with_capacity(k);
    let mut interference = Vec::with_capacity(k);
    for (user, gram) in factors.grams.iter().enumerate() {
        let mv = gram * v;
        let mut s = 0.0;
        let mut i_sum = 0.0;
        for col in 0..v.ncols() {
            let p = v.column(col).dotc(&mv.column(col)).re;
            if col == user {
                s = p;
            } else {
                i_sum += p;
            }
        }
        signal.push(s);
        interference.push(i_sum);
    }
    (signal, interference)
}

/// Downlink per-user rates `ln(1 + S_k/(I_k + N_k))` for effective precoders `V`.
pub fn downlink_rates_nats(v: &CMat, factors: &ChannelFactors, noise: f64) -> Vec<f64> {
    let (s, i) = downlink_powers(v, factors);
    s.iter()
        .zip(&i)
        .map(|(s, i)| (s / (i + noise)).ln_1p())
        .collect()
}

/// Sum rate in nats. Downlink requires the digital precoder `W` (L×K).
///
/// `factors` decides what is evaluated: statistical factors give the
/// closed-form surrogate, realized channels give the instantaneous rate.
pub fn rate_nats(
    mode: RateMode,
    dma: &DmaState,
    precoder: Option<&CMat>,
    factors: &ChannelFactors,
    sc: &Scenario,
) -> Result<Vec<f64>> {
    match mode {
        RateMode::Sic => Ok(alloc::vec![sic_rate_nats(dma, factors, sc.uplink_noise)?]),
        RateMode::Nsic => nsic_rates_nats(dma, factors, sc.uplink_noise),
        RateMode::Downlink => {
            let w = precoder.ok_or(Error::InvalidParameter {
                key: "W",
                reason: "downlink rate needs a digital precoder".into(),
            })?;
            if w.nrows() != dma.microstrips() || w.ncols() != factors.users() {
                return Err(Error::Dimension {
                    context: "digital precoder columns",
                    expected: factors.users(),
                    actual: w.ncols(),
                });
            }
            let v = dma.effective() * w;
            Ok(downlink_rates_nats(&v, factors, sc.downlink_noise))
        }
    }
}

/// Closed-form surrogate (SIC upper bound, nSIC / downlink approximations) in bits/s/Hz.
pub fn surrogate_rate(
    mode: RateMode,
    dma: &DmaState,
    precoder: Option<&CMat>,
    stats: &[UserStat],
    sc: &Scenario,
) -> Result<f64> {
    let factors = ChannelFactors::from_stats(stats);
    Ok(nats_to_bits(
        rate_nats(mode, dma, precoder, &factors, sc)?.iter().sum(),
    ))
}

/// Instantaneous sum rate (bits) and per-user rates for Monte-Carlo trial `trial`.
pub fn trial_rate(
    mode: RateMode,
    dma: &DmaState,
    precoder: Option<&CMat>,
    stats: &[UserStat],
    sc: &Scenario,
    seed: u64,
    trial: u64,
) -> Result<(f64, Vec<f64>)> {
    let mut rng = rng_stream(seed, trial);
    let channels = sample_channels(stats, &mut rng);
    let factors = ChannelFactors::from_realization(&channels);
    let per_user: Vec<f64> = rate_nats(mode, dma, precoder, &factors, sc)?
        .into_iter()
        .map(nats_to_bits)
        .collect();
    Ok((per_user.iter().sum(), per_user))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub mode: RateMode,
    /// Closed-form surrogate (bits/s/Hz).
    pub surrogate: f64,
    pub mc_mean: f64,
    /// Sample standard deviation over `√T`.
    pub mc_se: f64,
    /// Trials that contributed.
    pub trials: usize,
    /// Trials dropped because a matrix was singular beyond the ridge.
    pub dropped: usize,
    /// Mean per-user rate (downlink and nSIC; a single entry for SIC).
    pub per_user: Vec<f64>,
}

/// Fixed-order reduction of per-trial samples.
#[derive(Debug, Clone, Default)]
pub struct RateAccumulator {
    sums: Vec<f64>,
    samples: Vec<f64>,
    dropped: usize,
}

impl RateAccumulator {
    pub fn push(&mut self, sample: Result<(f64, Vec<f64>)>) {
        match sample {
            Ok((total, per_user)) => {
                if self.sums.is_empty() {
                    self.sums = alloc::vec![0.0; per_user.len()];
                }
                for (acc, v) in self.sums.iter_mut().zip(&per_user) {
                    *acc += v;
                }
                self.samples.push(total);
            }
            Err(_) => self.dropped += 1,
        }
    }

    pub fn finish(self, mode: RateMode, surrogate: f64) -> RateReport {
        let t = self.samples.len();
        let (mean, se) = mean_and_se(&self.samples);
        RateReport {
            mode,
            surrogate,
            mc_mean: mean,
            mc_se: se,
            trials: t,
            dropped: self.dropped,
            per_user: self.sums.iter().map(|s| s / t.max(1) as f64).collect(),
        }
    }
}

/// Mean and standard error (sample std / √T; zero for fewer than two samples).
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let t = samples.len();
    if t == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / t as f64;
    if t < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (t - 1) as f64;
    (mean, (var / t as f64).sqrt())
}

/// Averages the instantaneous rate over trials `0..trials` of `seed`, in order.
pub fn mc_rate(
    mode: RateMode,
    dma: &DmaState,
    precoder: Option<&CMat>,
    stats: &[UserStat],
    sc: &Scenario,
    trials: usize,
    seed: u64,
) -> Result<RateReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter {
            key: "trials",
            reason: "must be at least 1".into(),
        });
    }
    let surrogate = surrogate_rate(mode, dma, precoder, stats, sc)?;
    let mut acc = RateAccumulator::default();
    for t in 0..trials as u64 {
        acc.push(trial_rate(mode, dma, precoder, stats, sc, seed, t));
    }
    Ok(acc.finish(mode, surrogate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::stat_matrices;
    use crate::dma::{microstrip_propagation, random_lorentzian, DmaState};
    use crate::rng::{stream, Purpose};
    use crate::scenario::place_users;
    use approx::assert_relative_eq;

    fn setup(k0: f64, users: usize) -> (Scenario, Vec<UserStat>, DmaState) {
        let sc = Scenario {
            microstrips: 2,
            elements_per_microstrip: 4,
            users,
            rician_factor: k0,
            ..Scenario::default()
        };
        let (stats, _) = stat_matrices(&place_users(&sc), &sc).unwrap();
        let m = microstrip_propagation(&sc);
        let q = random_lorentzian(sc.elements(), &mut stream(3, Purpose::Initialization, 0));
        let dma = DmaState::assemble(q, &m, &sc).unwrap();
        (sc, stats, dma)
    }

    #[test]
    fn deterministic_channel_has_zero_spread() {
        let (sc, stats, dma) = setup(1e14, 1);
        let r = mc_rate(RateMode::Sic, &dma, None, &stats, &sc, 20, 1).unwrap();
        assert!(r.mc_se < 1e-6 * r.mc_mean);
        assert_relative_eq!(r.mc_mean, r.surrogate, max_relative = 1e-6);
    }

    #[test]
    fn zero_precoder_gives_zero_rate() {
        let (sc, stats, dma) = setup(10.0, 3);
        let w = CMat::zeros(2, 3);
        let r = mc_rate(RateMode::Downlink, &dma, Some(&w), &stats, &sc, 10, 0).unwrap();
        assert_eq!(r.mc_mean, 0.0);
        assert_eq!(r.surrogate, 0.0);
    }

    #[test]
    fn downlink_without_precoder_is_an_error() {
        let (sc, stats, dma) = setup(10.0, 2);
        assert!(surrogate_rate(RateMode::Downlink, &dma, None, &stats, &sc).is_err());
    }

    #[test]
    fn bits_and_nats_agree() {
        let (sc, stats, dma) = setup(10.0, 2);
        let f = ChannelFactors::from_stats(&stats);
        let nats = sic_rate_nats(&dma, &f, sc.uplink_noise).unwrap();
        // direct log2 evaluation through eigenvalues of P^{-1/2} A P^{-1/2}
        let hq = dma.effective();
        let (p, _) = noise_covariance(&dma, sc.uplink_noise).unwrap();
        let s = project_gram(&hq, &f.total_gram());
        let mut whitened = s.clone();
        for i in 0..2 {
            for j in 0..2 {
                whitened[(i, j)] /= (p[(i, i)].re * p[(j, j)].re).sqrt();
            }
        }
        let (vals, _) = linalg::hermitian_eigen(&whitened).unwrap();
        let log2: f64 = vals.iter().map(|v| (1.0 + v).log2()).sum();
        assert_relative_eq!(nats_to_bits(nats), log2, max_relative = 1e-12);
    }

    #[test]
    fn single_user_sic_equals_nsic() {
        let (sc, stats, dma) = setup(10.0, 1);
        let sic = surrogate_rate(RateMode::Sic, &dma, None, &stats, &sc).unwrap();
        let nsic = surrogate_rate(RateMode::Nsic, &dma, None, &stats, &sc).unwrap();
        assert_relative_eq!(sic, nsic, max_relative = 1e-10);
    }

    #[test]
    fn trial_order_does_not_matter_for_mean() {
        let (sc, stats, dma) = setup(10.0, 2);
        let forward = mc_rate(RateMode::Nsic, &dma, None, &stats, &sc, 16, 4).unwrap();
        let mut acc = RateAccumulator::default();
        for t in (0..16u64).rev() {
            acc.push(trial_rate(RateMode::Nsic, &dma, None, &stats, &sc, 4, t));
        }
        let backward = acc.finish(RateMode::Nsic, forward.surrogate);
        assert_relative_eq!(forward.mc_mean, backward.mc_mean, max_relative = 1e-14);
    }

    #[test]
    fn se_formula() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5);
        assert_relative_eq!(se, (5.0f64 / 3.0 / 4.0).sqrt());
        assert_eq!(mean_and_se(&[7.0]), (7.0, 0.0));
    }
}
