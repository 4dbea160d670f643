//! Uplink DMA weight design by weighted-MMSE block-coordinate descent.
//!
//! The surrogate rate is the capacity of an equivalent MIMO link
//! `y = (HQ)ᴴ (F s + z)`. With a linear receiver `U` and weight `W ⪰ 0` the
//! objective `tr(W E) − log det W` is minimized in turn over `U` (MMSE
//! receiver), `W = E⁻¹` and the DMA weights `q`, the last being a quadratic in
//! `q` solved by element-wise refinement.
//!
//! SIC decoding uses a single block with `F = G = [G̃_1, …, G̃_K]`; nSIC uses
//! one block per user with `F = G̃_k`, all sharing the same received
//! covariance `A = (HQ)ᴴ (G Gᴴ + N0 I) (HQ)`.

use alloc::vec::Vec;

use crate::channel::ChannelFactors;
use crate::dma::{Constraint, DmaState};
use crate::error::{Error, Result};
use crate::ewr::{ewr_solve, uc_solve, QuadraticProblem};
use crate::linalg::{self, real, CMat, CVec};
use crate::rates::{self, nats_to_bits, RateMode};
use crate::scenario::Scenario;

/// Allowed objective increase per block update, relative to `max(1, |f|)`.
pub const MONOTONE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decoder {
    Sic,
    Nsic,
}

impl Decoder {
    pub fn rate_mode(self) -> RateMode {
        match self {
            Decoder::Sic => RateMode::Sic,
            Decoder::Nsic => RateMode::Nsic,
        }
    }
}

/// Static data for one uplink problem.
#[derive(Debug, Clone)]
pub struct UplinkProblem {
    pub decoder: Decoder,
    /// Signal factor of each WMMSE block.
    pub blocks: Vec<CMat>,
    /// `A0 = G Gᴴ + N0 I` (N×N).
    pub a0: CMat,
    pub total_gram: CMat,
    pub noise: f64,
}

impl UplinkProblem {
    pub fn new(decoder: Decoder, factors: &ChannelFactors, noise: f64) -> Self {
        let total_gram = factors.total_gram();
        let n = total_gram.nrows();
        let mut a0 = total_gram.clone();
        for i in 0..n {
            a0[(i, i)] += real(noise);
        }
        let blocks = match decoder {
            Decoder::Sic => alloc::vec![factors.stacked()],
            Decoder::Nsic => factors.factors.clone(),
        };
        Self {
            decoder,
            blocks,
            a0,
            total_gram,
            noise,
        }
    }

    /// Received covariance `A = (HQ)ᴴ G Gᴴ (HQ) + P` and whether `P` was ridged.
    pub fn received_covariance(&self, dma: &DmaState) -> Result<(CMat, bool)> {
        let hq = dma.effective();
        let (p, ridged) = rates::noise_covariance(dma, self.noise)?;
        Ok((rates::project_gram(&hq, &self.total_gram) + p, ridged))
    }

    /// Surrogate sum rate in nats at the given weights.
    pub fn surrogate_nats(&self, dma: &DmaState) -> Result<f64> {
        let (a, _) = self.received_covariance(dma)?;
        let (p, _) = rates::noise_covariance(dma, self.noise)?;
        let hq = dma.effective();
        match self.decoder {
            Decoder::Sic => Ok(linalg::logdet_hpd(&a)? - linalg::logdet_hpd(&p)?),
            Decoder::Nsic => {
                let la = linalg::logdet_hpd(&a)?;
                let mut total = 0.0;
                for f in &self.blocks {
                    let b = hq.adjoint() * f;
                    total += la - linalg::logdet_hpd(&(&a - &b * b.adjoint()))?;
                }
                Ok(total)
            }
        }
    }
}

/// Receiver and MSE weight of one block.
#[derive(Debug, Clone)]
pub struct BlockState {
    /// Linear receiver `U` (L×M).
    pub receiver: CMat,
    /// `W = E⁻¹` (M×M).
    pub weight: CMat,
    /// MSE matrix `E` the weight was computed from.
    pub mse: CMat,
    pub logdet_weight: f64,
}

/// `E = Uᴴ A U − Uᴴ B − Bᴴ U + I`.
pub fn mse_matrix(u: &CMat, a: &CMat, b: &CMat) -> CMat {
    let uh = u.adjoint();
    let uhb = &uh * b;
    let mut e = &uh * a * u - &uhb - uhb.adjoint();
    for i in 0..e.nrows() {
        e[(i, i)] += real(1.0);
    }
    linalg::hermitian_part(&e)
}

/// Steps 1–2: MMSE receivers `U = A⁻¹ B` and weights `W = E⁻¹` for the
/// current weights. The boolean reports any ridge regularization.
pub fn update_receiver_and_weight(
    problem: &UplinkProblem,
    dma: &DmaState,
) -> Result<(Vec<BlockState>, bool)> {
    let hq = dma.effective();
    let (a, mut ridged) = problem.received_covariance(dma)?;
    let hqh = hq.adjoint();
    let mut states = Vec::with_capacity(problem.blocks.len());
    for f in &problem.blocks {
        let b = &hqh * f;
        let (u, r1) = linalg::solve_hpd(&a, &b)?;
        let e = mse_matrix(&u, &a, &b);
        let (w, logdet_e, r2) = linalg::inverse_logdet_hpd(&e)?;
        let logdet_weight = -logdet_e;
        ridged |= r1 || r2;
        states.push(BlockState {
            receiver: u,
            weight: w,
            mse: e,
            logdet_weight,
        });
    }
    Ok((states, ridged))
}

/// WMMSE objective `Σ_b tr(W_b E_b(q)) − log det W_b` at arbitrary weights.
pub fn wmmse_objective(
    problem: &UplinkProblem,
    dma: &DmaState,
    blocks: &[BlockState],
) -> Result<f64> {
    let hq = dma.effective();
    let (p, _) = rates::noise_covariance(dma, problem.noise)?;
    let a = rates::project_gram(&hq, &problem.total_gram) + p;
    let hqh = hq.adjoint();
    let mut total = 0.0;
    for (f, s) in problem.blocks.iter().zip(blocks) {
        let b = &hqh * f;
        let e = mse_matrix(&s.receiver, &a, &b);
        total += linalg::trace_product(&s.weight, &e).re - s.logdet_weight;
    }
    Ok(total)
}

/// Step 3 data: `f(q) = qᴴ D q − 2 Re(qᴴ c) + constant` equals the WMMSE
/// objective for fixed receivers and weights.
#[derive(Debug, Clone)]
pub struct UplinkQuadratic {
    pub problem: QuadraticProblem,
    pub constant: f64,
}

/// Index convention of the Hadamard factor and linear term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// `D = A0 ⊙ Bᵀ`, `c = diag(Cᴴ)` with `C = H̃ U W Fᴴ`.
    Transposed,
    /// `D = A0 ⊙ B`, `c = diag(C)`.
    Literal,
}

/// `D = A0 ⊙ Bᵀ` with `B = Σ_b H̃ U_b W_b U_bᴴ H̃ᴴ`, `c = diag(Σ_b F_b W_b U_bᴴ H̃ᴴ)`.
pub fn assemble_uplink_quadratic(
    problem: &UplinkProblem,
    dma: &DmaState,
    blocks: &[BlockState],
    constraint: Constraint,
) -> Result<UplinkQuadratic> {
    assemble_uplink_quadratic_with(problem, dma, blocks, constraint, Convention::Transposed)
}

pub fn assemble_uplink_quadratic_with(
    problem: &UplinkProblem,
    dma: &DmaState,
    blocks: &[BlockState],
    constraint: Constraint,
    convention: Convention,
) -> Result<UplinkQuadratic> {
    let n = dma.elements();
    let l = dma.microstrips();
    let h = dma.propagation();
    let mut y = CMat::zeros(l, l);
    // per element n: row n of Σ_b F_b W_b U_bᴴ, column l(n)
    let mut fwu = CMat::zeros(n, l);
    let mut constant = 0.0;
    for (f, s) in problem.blocks.iter().zip(blocks) {
        let wuh = &s.weight * s.receiver.adjoint();
        y += &s.receiver * &wuh;
        fwu += f * &wuh;
        constant += s.weight.trace().re - s.logdet_weight;
    }
    let y = linalg::hermitian_part(&y);
    // B[i, j] = h_i Y[l(i), l(j)] conj(h_j)
    let b =
        |i: usize, j: usize| h[i] * y[(dma.microstrip_of(i), dma.microstrip_of(j))] * h[j].conj();
    let c = CVec::from_fn(n, |i, _| fwu[(i, dma.microstrip_of(i))] * h[i].conj());
    let (d, c) = match convention {
        Convention::Transposed => (CMat::from_fn(n, n, |i, j| problem.a0[(i, j)] * b(j, i)), c),
        Convention::Literal => (
            CMat::from_fn(n, n, |i, j| problem.a0[(i, j)] * b(i, j)),
            c.map(|z| z.conj()),
        ),
    };
    Ok(UplinkQuadratic {
        problem: QuadraticProblem::new(linalg::hermitian_part(&d), c, constraint)?,
        constant,
    })
}

/// Variance over `samples` of `objective(q) − (quadratic(q) + constant)` with
/// receivers and weights held fixed; zero up to rounding iff the quadratic
/// reproduces the objective.
pub fn quadratic_oracle_variance(
    problem: &UplinkProblem,
    dma: &DmaState,
    blocks: &[BlockState],
    quad: &UplinkQuadratic,
    samples: &[CVec],
) -> Result<f64> {
    let mut diffs = Vec::with_capacity(samples.len());
    for q in samples {
        let state = dma.with_weights(q.clone())?;
        let exact = wmmse_objective(problem, &state, blocks)?;
        diffs.push(exact - quad.problem.objective(q) - quad.constant);
    }
    let m = diffs.len().max(1) as f64;
    let mean = diffs.iter().sum::<f64>() / m;
    Ok(diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / m)
}

/// Picks the convention that passes the equivalence oracle (variance below
/// `tol`), preferring [`Convention::Transposed`].
pub fn resolve_convention(
    problem: &UplinkProblem,
    dma: &DmaState,
    blocks: &[BlockState],
    samples: &[CVec],
    tol: f64,
) -> Result<(Convention, f64, f64)> {
    let constraint = dma.constraint();
    let vt = {
        let q = assemble_uplink_quadratic_with(
            problem,
            dma,
            blocks,
            constraint,
            Convention::Transposed,
        )?;
        quadratic_oracle_variance(problem, dma, blocks, &q, samples)?
    };
    let vl = {
        let q =
            assemble_uplink_quadratic_with(problem, dma, blocks, constraint, Convention::Literal)?;
        quadratic_oracle_variance(problem, dma, blocks, &q, samples)?
    };
    if vt < tol {
        Ok((Convention::Transposed, vt, vl))
    } else if vl < tol {
        Ok((Convention::Literal, vt, vl))
    } else {
        Err(Error::Equivalence(alloc::format!(
            "no convention reproduces the WMMSE objective: variances {vt:e} (transposed), {vl:e} (literal)"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct WmmseOutcome {
    pub dma: DmaState,
    /// Surrogate sum rate (bits/s/Hz) at the start and after every iteration.
    pub surrogate_trace: Vec<f64>,
    /// WMMSE objective after every block update (receivers+weights, then q).
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub ridged: bool,
    /// The unconstrained q-step met an indefinite quadratic.
    pub indefinite: bool,
}

/// Alternates the three WMMSE blocks until the relative objective change
/// between iterations falls below `sc.tolerances.wmmse_tol`.
pub fn wmmse_run(
    decoder: Decoder,
    factors: &ChannelFactors,
    sc: &Scenario,
    init: DmaState,
) -> Result<WmmseOutcome> {
    let problem = UplinkProblem::new(decoder, factors, sc.uplink_noise);
    let tol = &sc.tolerances;
    let constraint = init.constraint();
    let mut dma = init;
    let mut surrogate_trace = alloc::vec![nats_to_bits(problem.surrogate_nats(&dma)?)];
    let mut objective_trace = Vec::new();
    let mut ridged = false;
    let mut indefinite = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut previous: Option<f64> = None;

    let record = |trace: &mut Vec<f64>, value: f64, iteration: usize| -> Result<()> {
        if let Some(&last) = trace.last() {
            if value > last + MONOTONE_TOL * last.abs().max(1.0) {
                return Err(Error::NotMonotone {
                    algorithm: "WMMSE",
                    iteration,
                    amount: value - last,
                });
            }
        }
        trace.push(value);
        Ok(())
    };

    while iterations < tol.wmmse_max_iterations {
        iterations += 1;
        let (blocks, r) = update_receiver_and_weight(&problem, &dma)?;
        ridged |= r;
        let after_weights = wmmse_objective(&problem, &dma, &blocks)?;
        record(&mut objective_trace, after_weights, iterations)?;

        let quad = assemble_uplink_quadratic(&problem, &dma, &blocks, constraint)?;
        let q = match constraint {
            Constraint::Unconstrained => {
                let out = uc_solve(&quad.problem)?;
                indefinite |= out.indefinite;
                ridged |= out.ridged;
                out.q
            }
            _ => {
                ewr_solve(
                    &quad.problem,
                    dma.weights(),
                    tol.ewr_tol,
                    tol.ewr_max_sweeps,
                )?
                .q
            }
        };
        dma.set_weights(q);
        let after_q = wmmse_objective(&problem, &dma, &blocks)?;
        record(&mut objective_trace, after_q, iterations)?;
        surrogate_trace.push(nats_to_bits(problem.surrogate_nats(&dma)?));

        if let Some(prev) = previous {
            if (prev - after_q).abs() <= tol.wmmse_tol * after_q.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        previous = Some(after_q);
    }

    Ok(WmmseOutcome {
        dma,
        surrogate_trace,
        objective_trace,
        iterations,
        converged,
        ridged,
        indefinite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::stat_matrices;
    use crate::dma::{microstrip_propagation, random_lorentzian};
    use crate::rng::{stream, Purpose};
    use crate::scenario::place_users;
    use approx::assert_relative_eq;

    fn setup(l: usize, s: usize, k: usize, seed: u64) -> (Scenario, ChannelFactors, DmaState) {
        let sc = Scenario {
            microstrips: l,
            elements_per_microstrip: s,
            users: k,
            ..Scenario::default()
        };
        let (stats, _) = stat_matrices(&place_users(&sc), &sc).unwrap();
        let m = microstrip_propagation(&sc);
        let q = random_lorentzian(sc.elements(), &mut stream(seed, Purpose::Initialization, 0));
        let dma = DmaState::assemble(q, &m, &sc).unwrap();
        (sc, ChannelFactors::from_stats(&stats), dma)
    }

    #[test]
    fn mse_routes_agree_at_optimal_receiver() {
        let (sc, f, dma) = setup(2, 4, 3, 1);
        let pr = UplinkProblem::new(Decoder::Sic, &f, sc.uplink_noise);
        let (blocks, _) = update_receiver_and_weight(&pr, &dma).unwrap();
        let (a, _) = pr.received_covariance(&dma).unwrap();
        let b = dma.effective().adjoint() * &pr.blocks[0];
        let (ainv, _) = linalg::inverse_hpd(&a).unwrap();
        let m = b.ncols();
        let direct = CMat::identity(m, m) - b.adjoint() * ainv * &b;
        assert!((&blocks[0].mse - direct).norm() < 1e-9);
    }

    #[test]
    fn zero_channel_gives_identity() {
        let (sc, f, dma) = setup(2, 2, 2, 2);
        let zero = ChannelFactors {
            factors: f.factors.iter().map(|g| g.scale(0.0)).collect(),
            grams: f.grams.iter().map(|g| g.scale(0.0)).collect(),
        };
        let pr = UplinkProblem::new(Decoder::Sic, &zero, sc.uplink_noise);
        let (blocks, _) = update_receiver_and_weight(&pr, &dma).unwrap();
        let m = blocks[0].weight.nrows();
        assert!(blocks[0].receiver.norm() == 0.0);
        assert!((&blocks[0].mse - CMat::identity(m, m)).norm() < 1e-15);
        assert!((&blocks[0].weight - CMat::identity(m, m)).norm() < 1e-15);
    }

    #[test]
    fn objective_at_optimum_is_dim_minus_rate() {
        for decoder in [Decoder::Sic, Decoder::Nsic] {
            let (sc, f, dma) = setup(2, 4, 3, 5);
            let pr = UplinkProblem::new(decoder, &f, sc.uplink_noise);
            let (blocks, _) = update_receiver_and_weight(&pr, &dma).unwrap();
            let obj = wmmse_objective(&pr, &dma, &blocks).unwrap();
            let dims: usize = blocks.iter().map(|b| b.weight.nrows()).sum();
            let rate = pr.surrogate_nats(&dma).unwrap();
            assert_relative_eq!(obj, dims as f64 - rate, epsilon = 1e-8);
            for b in &blocks {
                let m = b.weight.nrows();
                let val = (&b.weight * &b.mse).trace().re - b.logdet_weight;
                assert_relative_eq!(
                    val,
                    m as f64 + linalg::logdet_hpd(&b.mse).unwrap(),
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn zero_receiver_gives_zero_quadratic_coupling() {
        let (sc, f, dma) = setup(2, 2, 2, 3);
        let pr = UplinkProblem::new(Decoder::Sic, &f, sc.uplink_noise);
        let m = pr.blocks[0].ncols();
        let blocks = alloc::vec![BlockState {
            receiver: CMat::zeros(2, m),
            weight: CMat::identity(m, m),
            mse: CMat::identity(m, m),
            logdet_weight: 0.0,
        }];
        let quad = assemble_uplink_quadratic(&pr, &dma, &blocks, Constraint::Lorentzian).unwrap();
        assert_eq!(quad.problem.d.norm(), 0.0);
        assert_eq!(quad.problem.c.norm(), 0.0);
    }

    fn lp_samples(n: usize, count: u64) -> Vec<CVec> {
        (0..count)
            .map(|s| random_lorentzian(n, &mut stream(s, Purpose::Initialization, 5)))
            .collect()
    }

    #[test]
    fn quadratic_reproduces_objective() {
        for decoder in [Decoder::Sic, Decoder::Nsic] {
            let (sc, f, dma) = setup(2, 4, 3, 21);
            let pr = UplinkProblem::new(decoder, &f, sc.uplink_noise);
            let (blocks, _) = update_receiver_and_weight(&pr, &dma).unwrap();
            let quad =
                assemble_uplink_quadratic(&pr, &dma, &blocks, Constraint::Lorentzian).unwrap();
            let var =
                quadratic_oracle_variance(&pr, &dma, &blocks, &quad, &lp_samples(8, 20)).unwrap();
            assert!(var < 1e-16, "{decoder:?}: {var:e}");
            assert!(quad.problem.d.diagonal().iter().all(|z| z.im == 0.0));
        }
    }

    #[test]
    fn nsic_needs_transposed_convention() {
        let (sc, f, dma) = setup(2, 4, 3, 22);
        let pr = UplinkProblem::new(Decoder::Nsic, &f, sc.uplink_noise);
        let (blocks, _) = update_receiver_and_weight(&pr, &dma).unwrap();
        let (conv, vt, vl) =
            resolve_convention(&pr, &dma, &blocks, &lp_samples(8, 20), 1e-16).unwrap();
        assert_eq!(conv, Convention::Transposed);
        assert!(vt < 1e-16);
        assert!(vl > 1e-12, "literal variance {vl:e}");
    }

    #[test]
    fn runs_are_deterministic_and_monotone() {
        let (sc, f, dma) = setup(2, 4, 2, 9);
        let a = wmmse_run(Decoder::Sic, &f, &sc, dma.clone()).unwrap();
        let b = wmmse_run(Decoder::Sic, &f, &sc, dma).unwrap();
        assert_eq!(a.surrogate_trace, b.surrogate_trace);
        for w in a.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0));
        }
        assert!(a
            .dma
            .weights()
            .iter()
            .all(|q| ((q - crate::linalg::J * 0.5).norm() - 0.5).abs() < 1e-12));
    }
}
