//! Downlink joint design of the digital precoder `W` and DMA weights `q`.
//!
//! The surrogate `Σ_k ln(1 + S_k/(I_k + N_k))` is recast by fractional
//! programming into `F1(ρ, Γ, V)`, which is concave-quadratic in the effective
//! precoder `V = HQW`. The coupling `V = HQW` is handled by penalty dual
//! decomposition (PDD): inner block ascent on the augmented Lagrangian
//! `F1 − (1/2β)‖HQW − V + βΞ‖²`, outer dual/penalty updates driven by the
//! violation `h = ‖HQW − V‖²`.
//!
//! The relaxed alternating baseline optimizes `W` directly under
//! `‖W‖² ≤ P_max` and rescales at the end.

use alloc::string::ToString;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::channel::ChannelFactors;
use crate::dma::{Constraint, DmaState};
use crate::error::{Error, Result};
use crate::ewr::{ewr_solve, uc_solve, QuadraticProblem};
use crate::linalg::{self, real, CMat, CVec};
use crate::rates::{downlink_rates_nats, nats_to_bits};
use crate::scenario::Scenario;

/// Allowed decrease of a maximized objective per block update, relative to `max(1, |f|)`.
pub const MONOTONE_TOL: f64 = 1e-8;
/// Bisection stops once `|g(λ)| < BISECTION_TOL · P_max`.
pub const BISECTION_TOL: f64 = 1e-9;
const BISECTION_MAX_STEPS: usize = 400;

/// Fractional-programming auxiliaries.
#[derive(Debug, Clone, PartialEq)]
pub struct FpAuxiliaries {
    pub rho: Vec<f64>,
    pub gamma: Vec<CVec>,
}

/// `T_k = Σ_i v_iᴴ M_k v_i + N_k`, the received power plus noise at user `k`.
fn received_power(v: &CMat, gram: &CMat, noise: f64) -> f64 {
    let mv = gram * v;
    let mut t = noise;
    for i in 0..v.ncols() {
        t += v.column(i).dotc(&mv.column(i)).re;
    }
    t
}

/// Optimal `ρ_k = S_k/(I_k + N_k)` and `γ_k = G̃_kᴴ v_k / T_k` for fixed `V`.
pub fn fp_auxiliaries(v: &CMat, factors: &ChannelFactors, noise: f64) -> FpAuxiliaries {
    let mut rho = Vec::with_capacity(factors.users());
    let mut gamma = Vec::with_capacity(factors.users());
    for (k, (g, gram)) in factors.factors.iter().zip(&factors.grams).enumerate() {
        let gv = g.adjoint() * v.column(k);
        let s = gv.norm_squared();
        let t = received_power(v, gram, noise);
        rho.push(s / (t - s).max(noise));
        gamma.push(gv / real(t));
    }
    FpAuxiliaries { rho, gamma }
}

/// `F1 = Σ_k ln(1+ρ_k) − ρ_k + (1+ρ_k)(2 Re(γ_kᴴ G̃_kᴴ v_k) − ‖γ_k‖² T_k)` in nats.
pub fn fp_objective(v: &CMat, aux: &FpAuxiliaries, factors: &ChannelFactors, noise: f64) -> f64 {
    let mut total = 0.0;
    for (k, (g, gram)) in factors.factors.iter().zip(&factors.grams).enumerate() {
        let rho = aux.rho[k];
        let gamma = &aux.gamma[k];
        let gv = g.adjoint() * v.column(k);
        let t = received_power(v, gram, noise);
        let quad = 2.0 * gamma.dotc(&gv).re - gamma.norm_squared() * t;
        total += rho.ln_1p() - rho + (1.0 + rho) * quad;
    }
    total
}

/// `Ω = Σ_i (1+ρ_i)‖γ_i‖² G̃_i G̃_iᴴ` (N×N).
pub fn omega(aux: &FpAuxiliaries, factors: &ChannelFactors) -> CMat {
    let n = factors.elements();
    let mut o = CMat::zeros(n, n);
    for (i, gram) in factors.grams.iter().enumerate() {
        o += gram * real((1.0 + aux.rho[i]) * aux.gamma[i].norm_squared());
    }
    linalg::hermitian_part(&o)
}

/// Linear FP terms `a_k = (1+ρ_k) G̃_k γ_k` as the columns of an N×K matrix.
pub fn fp_linear(aux: &FpAuxiliaries, factors: &ChannelFactors) -> CMat {
    let n = factors.elements();
    let mut a = CMat::zeros(n, factors.users());
    for (k, g) in factors.factors.iter().enumerate() {
        a.set_column(k, &(g * &aux.gamma[k] * real(1.0 + aux.rho[k])));
    }
    a
}

/// Solution of `min Σ_k v_kᴴ Ψ v_k − 2 Re(v_kᴴ φ_k)` s.t. `Σ_k ‖v_k‖² ≤ P`.
#[derive(Debug, Clone)]
pub struct PowerSolution {
    pub v: CMat,
    /// Shared multiplier of the sum-power constraint.
    pub lambda: f64,
    pub power: f64,
}

/// KKT solution `V = (Ψ + λI)⁻¹ Φ`. `λ = 0` when that is feasible, otherwise
/// the root of `g(λ) = Σ_i X_ii/(Λ_i + λ)² − P` by bisection, where
/// `Ψ = U Λ Uᴴ` and `X = Uᴴ Φ Φᴴ U`.
pub fn power_constrained_solve(psi: &CMat, phi: &CMat, max_power: f64) -> Result<PowerSolution> {
    if !(max_power > 0.0) {
        return Err(Error::InvalidParameter {
            key: "Pmax",
            reason: "power budget must be positive".to_string(),
        });
    }
    let (lambdas, u) = linalg::hermitian_eigen(psi)?;
    let x_full = u.adjoint() * phi;
    let n = lambdas.len();
    let x: Vec<f64> = (0..n).map(|i| x_full.row(i).norm_squared()).collect();
    let lam: Vec<f64> = lambdas.iter().map(|l| l.max(0.0)).collect();
    let g = |mu: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            if x[i] > 0.0 {
                s += x[i] / (lam[i] + mu).powi(2);
            }
        }
        s - max_power
    };
    let build = |mu: f64| -> CMat {
        let mut y = x_full.clone();
        for i in 0..n {
            let d = lam[i] + mu;
            let s = if d > 0.0 { 1.0 / d } else { 0.0 };
            for k in 0..y.ncols() {
                y[(i, k)] *= s;
            }
        }
        &u * y
    };
    let g0 = g(0.0);
    if g0.is_nan() {
        return Err(Error::Bisection("g(0) is not a number".to_string()));
    }
    let lambda = if g0 <= 0.0 {
        0.0
    } else {
        let total: f64 = x.iter().sum();
        let mut lo = 0.0;
        let mut hi = (total / max_power).sqrt();
        let mut ghi = g(hi);
        if !(ghi <= 0.0) {
            return Err(Error::Bisection(alloc::format!(
                "upper bracket {hi:e} has g = {ghi:e} > 0"
            )));
        }
        for _ in 0..BISECTION_MAX_STEPS {
            if ghi.abs() <= BISECTION_TOL * max_power || hi - lo <= f64::EPSILON * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm > 0.0 {
                lo = mid;
            } else {
                hi = mid;
                ghi = gm;
            }
        }
        hi
    };
    let v = build(lambda);
    let power = linalg::fro2(&v);
    Ok(PowerSolution { v, lambda, power })
}

/// Full PDD iterate.
#[derive(Debug, Clone)]
pub struct PddState {
    pub dma: DmaState,
    /// Digital precoder (L×K).
    pub w: CMat,
    /// Effective-precoder copy (N×K).
    pub v: CMat,
    pub aux: FpAuxiliaries,
    /// Dual variable (N×K).
    pub xi: CMat,
    pub beta: f64,
    pub violation: f64,
    pub threshold: f64,
    pub outer: usize,
}

impl PddState {
    /// `‖HQW − V + βΞ‖²`.
    pub fn penalty_term(&self) -> f64 {
        let r = self.dma.effective() * &self.w - &self.v + &self.xi * real(self.beta);
        linalg::fro2(&r)
    }

    /// `h = ‖HQW − V‖²`.
    pub fn constraint_violation(&self) -> f64 {
        linalg::fro2(&(self.dma.effective() * &self.w - &self.v))
    }
}

/// Augmented Lagrangian `F1 − (1/2β)‖HQW − V + βΞ‖²` (maximized).
pub fn al_objective(state: &PddState, factors: &ChannelFactors, noise: f64) -> f64 {
    fp_objective(&state.v, &state.aux, factors, noise) - state.penalty_term() / (2.0 * state.beta)
}

/// V-step: maximizes the augmented Lagrangian over `V` under `‖V‖² ≤ P_max`.
pub fn update_v(
    state: &PddState,
    factors: &ChannelFactors,
    max_power: f64,
) -> Result<PowerSolution> {
    let inv = 1.0 / (2.0 * state.beta);
    let mut psi = omega(&state.aux, factors);
    for i in 0..psi.nrows() {
        psi[(i, i)] += real(inv);
    }
    let target = state.dma.effective() * &state.w + &state.xi * real(state.beta);
    let phi = fp_linear(&state.aux, factors) + target * real(inv);
    power_constrained_solve(&psi, &phi, max_power)
}

/// Least-squares fit `W = (QᴴHᴴHQ)⁻¹ QᴴHᴴ T`; the normal matrix is diagonal.
/// The flag reports microstrips whose gain needed a ridge.
pub fn least_squares_precoder(dma: &DmaState, target: &CMat) -> (CMat, bool) {
    let gains = dma.chain_gains();
    let ridge = linalg::RIDGE_SCALE * gains.sum() / gains.len().max(1) as f64;
    let mut ridged = false;
    let mut w = dma.effective().adjoint() * target;
    for l in 0..w.nrows() {
        let mut g = gains[l];
        if !(g > ridge) {
            g += ridge.max(f64::MIN_POSITIVE);
            ridged = true;
        }
        for k in 0..w.ncols() {
            w[(l, k)] /= real(g);
        }
    }
    (w, ridged)
}

/// W-step: `W = (QᴴHᴴHQ)⁻¹ QᴴHᴴ (V − βΞ)`.
pub fn update_w(state: &PddState) -> (CMat, bool) {
    least_squares_precoder(&state.dma, &(&state.v - &state.xi * real(state.beta)))
}

/// Q-step data: `‖diag(q)H̃W − T‖² = qᴴ D q − 2 Re(qᴴ c) + ‖T‖²` with
/// `D = I ⊙ (H̃WWᴴH̃ᴴ)`, `c = diag(T Wᴴ H̃ᴴ)`, `T = V − βΞ`.
pub fn assemble_downlink_quadratic(
    state: &PddState,
    constraint: Constraint,
) -> Result<(QuadraticProblem, f64)> {
    let target = &state.v - &state.xi * real(state.beta);
    let hw = state.dma.block_propagation() * &state.w;
    let n = hw.nrows();
    let d = CMat::from_diagonal(&CVec::from_fn(n, |i, _| real(hw.row(i).norm_squared())));
    let c = CVec::from_fn(n, |i, _| hw.row(i).dotc(&target.row(i)));
    Ok((
        QuadraticProblem::new(d, c, constraint)?,
        linalg::fro2(&target),
    ))
}

fn solve_quadratic(p: &QuadraticProblem, q0: &CVec, sc: &Scenario) -> Result<(CVec, bool)> {
    match p.constraint {
        Constraint::Unconstrained => {
            let out = uc_solve(p)?;
            Ok((out.q, out.ridged))
        }
        _ => Ok((
            ewr_solve(p, q0, sc.tolerances.ewr_tol, sc.tolerances.ewr_max_sweeps)?.q,
            false,
        )),
    }
}

/// Scales `W` by `min(1, √(P_max/‖HQW‖²))`.
pub fn rescale_precoder(dma: &DmaState, w: &CMat, max_power: f64) -> CMat {
    let p = linalg::fro2(&(dma.effective() * w));
    if p > max_power {
        w * real((max_power / p).sqrt())
    } else {
        w.clone()
    }
}

/// Downlink surrogate sum rate (bits/s/Hz) at `(q, W)`.
pub fn surrogate_bits(dma: &DmaState, w: &CMat, factors: &ChannelFactors, noise: f64) -> f64 {
    let v = dma.effective() * w;
    nats_to_bits(downlink_rates_nats(&v, factors, noise).iter().sum())
}

/// Starting precoders: `V0` columns are the principal eigenvectors of each
/// user's Gram split evenly over `P_max`, `W0` their least-squares fit,
/// scaled so that `‖HQW0‖² = P_max`.
pub fn initial_precoder(
    dma: &DmaState,
    factors: &ChannelFactors,
    max_power: f64,
) -> Result<(CMat, bool)> {
    let n = dma.elements();
    let k = factors.users();
    let mut v0 = CMat::zeros(n, k);
    let per_user = (max_power / k as f64).sqrt();
    for (i, gram) in factors.grams.iter().enumerate() {
        let (_, vecs) = linalg::hermitian_eigen(gram)?;
        v0.set_column(i, &(vecs.column(n - 1) * real(per_user)));
    }
    let (w, ridged) = least_squares_precoder(dma, &v0);
    let p = linalg::fro2(&(dma.effective() * &w));
    let w = if p > 0.0 {
        w * real((max_power / p).sqrt())
    } else {
        w
    };
    Ok((w, ridged))
}

#[derive(Debug, Clone)]
pub struct PddOutcome {
    pub dma: DmaState,
    /// Final digital precoder, rescaled to meet the power budget.
    pub w: CMat,
    pub state: PddState,
    /// Surrogate rate (bits/s/Hz) at the start and after every outer iteration.
    pub surrogate_trace: Vec<f64>,
    /// Violation `h` after every outer iteration.
    pub violation_trace: Vec<f64>,
    /// Augmented Lagrangian after every block update, per outer iteration.
    pub al_trace: Vec<Vec<f64>>,
    /// Largest relative decrease of the augmented Lagrangian across a block update.
    pub worst_al_decrease: f64,
    /// Largest `|‖V‖² − P_max|/P_max` over V-updates with an active constraint.
    pub worst_slackness: f64,
    /// V-updates with `λ > 0`.
    pub active_updates: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub ridged: bool,
}

fn relative_drop(prev: f64, next: f64) -> f64 {
    (prev - next) / prev.abs().max(1.0)
}

/// Penalty dual decomposition from weights `init`.
pub fn pdd_run(factors: &ChannelFactors, sc: &Scenario, init: DmaState) -> Result<PddOutcome> {
    let max_power = sc.max_power()?;
    let noise = sc.downlink_noise;
    let tol = &sc.tolerances;
    let settings = &sc.pdd;
    let constraint = init.constraint();
    let (w0, mut ridged) = initial_precoder(&init, factors, max_power)?;
    let v0 = init.effective() * &w0;
    let aux = fp_auxiliaries(&v0, factors, noise);
    let mut state = PddState {
        xi: CMat::zeros(v0.nrows(), v0.ncols()),
        dma: init,
        w: w0,
        v: v0,
        aux,
        beta: settings.penalty,
        violation: settings.initial_threshold,
        threshold: settings.initial_threshold,
        outer: 0,
    };
    let mut surrogate_trace = alloc::vec![surrogate_bits(&state.dma, &state.w, factors, noise)];
    let mut violation_trace = Vec::new();
    let mut al_trace = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let mut inner_total = 0;
    let mut converged = false;
    let mut worst_slackness: f64 = 0.0;
    let mut active_updates = 0;

    while state.outer < tol.pdd_outer_max {
        state.outer += 1;
        let mut trace = alloc::vec![al_objective(&state, factors, noise)];
        let mut previous = trace[0];
        for _ in 0..tol.pdd_inner_max {
            inner_total += 1;
            let mut push = |trace: &mut Vec<f64>, value: f64| {
                worst = worst.max(relative_drop(*trace.last().unwrap(), value));
                trace.push(value);
            };
            state.aux = fp_auxiliaries(&state.v, factors, noise);
            push(&mut trace, al_objective(&state, factors, noise));

            let sol = update_v(&state, factors, max_power)?;
            if sol.lambda > 0.0 {
                active_updates += 1;
                worst_slackness = worst_slackness.max((sol.power - max_power).abs() / max_power);
            }
            state.v = sol.v;
            push(&mut trace, al_objective(&state, factors, noise));

            let (w, r) = update_w(&state);
            state.w = w;
            ridged |= r;
            push(&mut trace, al_objective(&state, factors, noise));

            let (quad, _) = assemble_downlink_quadratic(&state, constraint)?;
            let (q, r) = solve_quadratic(&quad, state.dma.weights(), sc)?;
            ridged |= r;
            state.dma.set_weights(q);
            let current = al_objective(&state, factors, noise);
            push(&mut trace, current);

            let change = (current - previous).abs() / current.abs().max(f64::MIN_POSITIVE);
            previous = current;
            if change < tol.pdd_inner_tol {
                break;
            }
        }
        al_trace.push(trace);

        let h = state.constraint_violation();
        state.violation = h;
        violation_trace.push(h);
        surrogate_trace.push(surrogate_bits(&state.dma, &state.w, factors, noise));
        if h < settings.violation_tol {
            converged = true;
            break;
        }
        if h < state.threshold {
            let residual = state.dma.effective() * &state.w - &state.v;
            state.xi += residual / real(state.beta);
        } else {
            state.beta *= settings.penalty_shrink;
        }
        state.threshold = settings.threshold_factor * h;
    }

    let w = rescale_precoder(&state.dma, &state.w, max_power);
    Ok(PddOutcome {
        dma: state.dma.clone(),
        w,
        outer_iterations: state.outer,
        state,
        surrogate_trace,
        violation_trace,
        al_trace,
        worst_al_decrease: worst.max(0.0),
        worst_slackness,
        active_updates,
        inner_iterations: inner_total,
        converged,
        ridged,
    })
}

#[derive(Debug, Clone)]
pub struct RelaxedOutcome {
    pub dma: DmaState,
    /// Final precoder, rescaled so that `‖HQW‖² ≤ P_max`.
    pub w: CMat,
    /// Surrogate rate of the unscaled iterate after every iteration.
    pub surrogate_trace: Vec<f64>,
    /// `F1` after every block update.
    pub objective_trace: Vec<f64>,
    pub worst_decrease: f64,
    pub iterations: usize,
    pub converged: bool,
    pub ridged: bool,
}

/// Relaxed alternating optimization: FP auxiliaries, `W` under `‖W‖² ≤ P_max`
/// with effective channels `G̃_kᴴ HQ`, `q` by EWR; `W` rescaled at the end.
pub fn relaxed_ao_run(
    factors: &ChannelFactors,
    sc: &Scenario,
    init: DmaState,
) -> Result<RelaxedOutcome> {
    let max_power = sc.max_power()?;
    let noise = sc.downlink_noise;
    let tol = &sc.tolerances;
    let constraint = init.constraint();
    let mut dma = init;
    let (w0, mut ridged) = initial_precoder(&dma, factors, max_power)?;
    let norm = linalg::fro2(&w0);
    let mut w = if norm > max_power {
        &w0 * real((max_power / norm).sqrt())
    } else {
        w0
    };
    let mut aux = fp_auxiliaries(&(dma.effective() * &w), factors, noise);
    let mut objective_trace =
        alloc::vec![fp_objective(&(dma.effective() * &w), &aux, factors, noise)];
    let mut surrogate_trace = alloc::vec![surrogate_bits(&dma, &w, factors, noise)];
    let mut worst = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut previous = objective_trace[0];

    while iterations < tol.pdd_inner_max {
        iterations += 1;
        let mut push = |trace: &mut Vec<f64>, value: f64| {
            worst = worst.max(relative_drop(*trace.last().unwrap(), value));
            trace.push(value);
        };
        let hq = dma.effective();
        aux = fp_auxiliaries(&(&hq * &w), factors, noise);
        push(
            &mut objective_trace,
            fp_objective(&(&hq * &w), &aux, factors, noise),
        );

        let om = omega(&aux, factors);
        let psi = hq.adjoint() * &om * &hq;
        let phi = hq.adjoint() * fp_linear(&aux, factors);
        w = power_constrained_solve(&psi, &phi, max_power)?.v;
        push(
            &mut objective_trace,
            fp_objective(&(&hq * &w), &aux, factors, noise),
        );

        let hw = dma.block_propagation() * &w;
        let outer = &hw * hw.adjoint();
        let n = hw.nrows();
        let d = CMat::from_fn(n, n, |i, j| om[(i, j)] * outer[(j, i)]);
        let a = fp_linear(&aux, factors);
        let c = CVec::from_fn(n, |i, _| hw.row(i).dotc(&a.row(i)));
        let quad = QuadraticProblem::new(linalg::hermitian_part(&d), c, constraint)?;
        let (q, r) = solve_quadratic(&quad, dma.weights(), sc)?;
        ridged |= r;
        dma.set_weights(q);
        let current = fp_objective(&(dma.effective() * &w), &aux, factors, noise);
        push(&mut objective_trace, current);
        surrogate_trace.push(surrogate_bits(&dma, &w, factors, noise));

        let change = (current - previous).abs() / current.abs().max(f64::MIN_POSITIVE);
        previous = current;
        if change < tol.pdd_inner_tol {
            converged = true;
            break;
        }
    }
    let w = rescale_precoder(&dma, &w, max_power);
    Ok(RelaxedOutcome {
        dma,
        w,
        surrogate_trace,
        objective_trace,
        worst_decrease: worst.max(0.0),
        iterations,
        converged,
        ridged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::stat_matrices;
    use crate::dma::{microstrip_propagation, random_lorentzian};
    use crate::linalg::c;
    use crate::rng::{stream, Purpose};
    use crate::scenario::place_users;
    use approx::assert_relative_eq;
    use rand::Rng;

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

    fn random_matrix(r: usize, cols: usize, scale: f64, seed: u64) -> CMat {
        let mut rng = stream(seed, Purpose::Initialization, 7);
        CMat::from_fn(r, cols, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale
        })
    }

    #[test]
    fn auxiliaries_vanish_for_zero_precoder() {
        let (sc, f, _) = setup(2, 2, 2, 1);
        let aux = fp_auxiliaries(&CMat::zeros(4, 2), &f, sc.downlink_noise);
        assert!(aux.rho.iter().all(|r| *r == 0.0));
        assert!(aux.gamma.iter().all(|g| g.norm() == 0.0));
    }

    #[test]
    fn fp_objective_recovers_rate() {
        let (sc, f, dma) = setup(2, 4, 3, 2);
        let v = dma.effective() * random_matrix(2, 3, 0.05, 3);
        let aux = fp_auxiliaries(&v, &f, sc.downlink_noise);
        let rate: f64 = downlink_rates_nats(&v, &f, sc.downlink_noise).iter().sum();
        assert_relative_eq!(
            fp_objective(&v, &aux, &f, sc.downlink_noise),
            rate,
            epsilon = 1e-9
        );
    }

    #[test]
    fn omega_matches_finite_difference_gradient() {
        let (sc, f, dma) = setup(2, 2, 2, 4);
        let v = dma.effective() * random_matrix(2, 2, 0.05, 5);
        let aux = fp_auxiliaries(&v, &f, sc.downlink_noise);
        let dir = random_matrix(4, 2, 0.05, 6);
        let om = omega(&aux, &f);
        let a = fp_linear(&aux, &f);
        let grad = &a - &om * &v;
        let analytic: f64 = 2.0
            * (0..2)
                .map(|k| dir.column(k).dotc(&grad.column(k)).re)
                .sum::<f64>();
        let t = 1e-6;
        let fp = fp_objective(&(&v + &dir * real(t)), &aux, &f, sc.downlink_noise);
        let fm = fp_objective(&(&v - &dir * real(t)), &aux, &f, sc.downlink_noise);
        let numeric = (fp - fm) / (2.0 * t);
        assert_relative_eq!(numeric, analytic, max_relative = 1e-6);
    }

    #[test]
    fn bisection_matches_identity_closed_form() {
        let phi = random_matrix(6, 3, 2.0, 8);
        let p = 0.5;
        let sol = power_constrained_solve(&CMat::identity(6, 6), &phi, p).unwrap();
        let expected = (linalg::fro2(&phi) / p).sqrt() - 1.0;
        assert!(expected > 0.0);
        assert_relative_eq!(sol.lambda, expected, max_relative = 1e-8);
        assert!((sol.power - p).abs() < 1e-6 * p);
        assert!(sol.power <= p + 1e-9);
    }

    #[test]
    fn inactive_constraint_gives_zero_multiplier() {
        let phi = random_matrix(4, 2, 0.01, 9);
        let sol = power_constrained_solve(&(CMat::identity(4, 4) * real(3.0)), &phi, 10.0).unwrap();
        assert_eq!(sol.lambda, 0.0);
        assert!((sol.v - phi / real(3.0)).norm() < 1e-14);
    }

    #[test]
    fn least_squares_residual_is_orthogonal() {
        let (_, _, dma) = setup(2, 4, 3, 10);
        let t = random_matrix(8, 3, 1.0, 11);
        let (w, ridged) = least_squares_precoder(&dma, &t);
        assert!(!ridged);
        let hq = dma.effective();
        let r = hq.adjoint() * (&hq * &w - &t);
        assert!(r.norm() < 1e-8 * t.norm());
    }

    #[test]
    fn downlink_quadratic_matches_penalty() {
        let (_, f, dma) = setup(2, 4, 3, 12);
        let mut state = PddState {
            w: random_matrix(2, 3, 1.0, 13),
            v: random_matrix(8, 3, 1.0, 14),
            aux: fp_auxiliaries(&CMat::zeros(8, 3), &f, 1.0),
            xi: random_matrix(8, 3, 1e-3, 15),
            beta: 10.0,
            violation: 1.0,
            threshold: 1.0,
            outer: 0,
            dma,
        };
        let (quad, constant) = assemble_downlink_quadratic(&state, Constraint::Lorentzian).unwrap();
        let mut diffs = Vec::new();
        for s in 0..20 {
            let q = random_lorentzian(8, &mut stream(s, Purpose::Initialization, 3));
            state.dma.set_weights(q.clone());
            diffs.push(state.penalty_term() - (quad.objective(&q) + constant));
        }
        let mean = diffs.iter().sum::<f64>() / 20.0;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 20.0;
        assert!(var < 1e-16, "variance {var:e}");
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn pdd_small_case_converges_feasibly() {
        let (sc, f, dma) = setup(2, 4, 2, 16);
        let out = pdd_run(&f, &sc, dma).unwrap();
        let p = linalg::fro2(&(out.dma.effective() * &out.w));
        assert!(p <= sc.max_power().unwrap() * (1.0 + 1e-12));
        assert!(out.worst_al_decrease <= 1e-8, "{}", out.worst_al_decrease);
        assert!(out.converged);
    }

    #[test]
    fn relaxed_result_is_feasible_after_rescale() {
        let (sc, f, dma) = setup(2, 4, 2, 17);
        let out = relaxed_ao_run(&f, &sc, dma).unwrap();
        let p = linalg::fro2(&(out.dma.effective() * &out.w));
        assert!(p <= sc.max_power().unwrap() * (1.0 + 1e-12));
        assert!(out.worst_decrease <= 1e-8);
    }
}
