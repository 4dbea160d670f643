//! Element-wise refinement (EWR) for `min_q qᴴ D q − 2 Re(qᴴ c)` with a
//! per-element feasible set.
//!
//! One coordinate at a time, the objective restricted to `q_n` is
//! `D_nn |q_n|² − 2 Re(q_n* η̃_n)` with `η̃_n = c_n − Σ_{m≠n} D_nm q_m`. On the
//! Lorentzian circle this reduces to `−Re(e^{−jθ} η_n)` with
//! `η_n = η̃_n − (j/2) D_nn`, minimized by `θ = arg η_n`.

use alloc::vec::Vec;

use crate::dma::{lorentzian, Constraint, AO_MAX, AO_MIN, BA_LEVELS, FEASIBILITY_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, real, CMat, CVec, C64, J};

/// Descent slack per coordinate step, absorbing rounding.
pub const STEP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub d: CMat,
    pub c: CVec,
    pub constraint: Constraint,
}

impl QuadraticProblem {
    /// Checks shape, Hermitian symmetry (relative 1e-10) and the diagonal.
    pub fn new(d: CMat, c: CVec, constraint: Constraint) -> Result<Self> {
        let n = d.nrows();
        if d.ncols() != n {
            return Err(Error::Dimension {
                context: "quadratic matrix must be square",
                expected: n,
                actual: d.ncols(),
            });
        }
        if c.len() != n {
            return Err(Error::Dimension {
                context: "linear term",
                expected: n,
                actual: c.len(),
            });
        }
        let asym = linalg::relative_asymmetry(&d);
        if asym > 1e-10 {
            return Err(Error::NotHermitian(asym));
        }
        let scale = d.norm().max(1.0);
        let mut d = d;
        for i in 0..n {
            let v = d[(i, i)];
            if v.re < -1e-12 * scale {
                return Err(Error::InvalidParameter {
                    key: "D",
                    reason: alloc::format!("diagonal entry {i} is negative ({})", v.re),
                });
            }
            d[(i, i)] = real(v.re);
        }
        Ok(Self { d, c, constraint })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Exact `qᴴ D q − 2 Re(qᴴ c)`.
    pub fn objective(&self, q: &CVec) -> f64 {
        let dq = &self.d * q;
        let quad = q.dotc(&dq);
        debug_assert!(
            quad.im.abs() <= 1e-9 * quad.re.abs().max(1.0),
            "imaginary residue {} in Hermitian form",
            quad.im
        );
        quad.re - 2.0 * q.dotc(&self.c).re
    }

    fn check_feasible(&self, q: &CVec) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::Dimension {
                context: "EWR start point",
                expected: self.dim(),
                actual: q.len(),
            });
        }
        let bad: Vec<usize> = q
            .iter()
            .enumerate()
            .filter(|(_, v)| !self.constraint.contains(**v, FEASIBILITY_TOL))
            .map(|(i, _)| i)
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Infeasible {
                constraint: self.constraint,
                indices: bad,
            })
        }
    }

    /// `η̃_n = c_n − Σ_{m≠n} D_nm q_m`, given `dq = D q`.
    #[inline]
    fn reduced_linear(&self, q: &CVec, dq: &CVec, n: usize) -> C64 {
        self.c[n] - (dq[n] - self.d[(n, n)] * q[n])
    }

    fn coordinate_minimizer(&self, current: C64, eta_tilde: C64, dnn: f64) -> C64 {
        match self.constraint {
            Constraint::Lorentzian => {
                let eta = eta_tilde - J * (0.5 * dnn);
                if eta.norm() == 0.0 {
                    current
                } else {
                    lorentzian(eta.arg())
                }
            }
            Constraint::AmplitudeOnly => {
                if dnn > 0.0 {
                    real((eta_tilde.re / dnn).clamp(AO_MIN, AO_MAX))
                } else if eta_tilde.re > 0.0 {
                    real(AO_MAX)
                } else {
                    real(AO_MIN)
                }
            }
            Constraint::BinaryAmplitude => {
                let f = |x: f64| dnn * x * x - 2.0 * x * eta_tilde.re;
                let (lo, hi) = (BA_LEVELS[0], BA_LEVELS[1]);
                if f(hi) < f(lo) {
                    real(hi)
                } else {
                    real(lo)
                }
            }
            Constraint::Unconstrained => {
                if dnn > 0.0 {
                    eta_tilde / dnn
                } else {
                    current
                }
            }
        }
    }
}

/// Exact minimizer over coordinate `n` with all other coordinates fixed.
pub fn ewr_step(p: &QuadraticProblem, q: &CVec, n: usize) -> C64 {
    let dq = &p.d * q;
    let eta_tilde = p.reduced_linear(q, &dq, n);
    p.coordinate_minimizer(q[n], eta_tilde, p.d[(n, n)].re)
}

#[derive(Debug, Clone)]
pub struct EwrOutcome {
    pub q: CVec,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each full sweep, starting with the initial value.
    pub trace: Vec<f64>,
}

/// Cyclic ascending sweeps until the relative decrease over one sweep drops
/// below `tol`, or `max_sweeps` is reached.
pub fn ewr_solve(
    p: &QuadraticProblem,
    q0: &CVec,
    tol: f64,
    max_sweeps: usize,
) -> Result<EwrOutcome> {
    p.check_feasible(q0)?;
    let n = p.dim();
    let mut q = q0.clone();
    let mut obj = p.objective(&q);
    let mut trace = alloc::vec![obj];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut dq = &p.d * &q;
        for i in 0..n {
            let eta_tilde = p.reduced_linear(&q, &dq, i);
            let new = p.coordinate_minimizer(q[i], eta_tilde, p.d[(i, i)].re);
            let delta = new - q[i];
            if delta != C64::new(0.0, 0.0) {
                dq.axpy(delta, &p.d.column(i), real(1.0));
                q[i] = new;
            }
        }
        let next = p.objective(&q);
        let slack = STEP_SLACK * obj.abs().max(1.0);
        if next > obj + slack {
            return Err(Error::NotMonotone {
                algorithm: "EWR",
                iteration: sweeps,
                amount: next - obj,
            });
        }
        let decrease = obj - next;
        obj = next.min(obj);
        trace.push(next);
        if decrease <= tol * obj.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(EwrOutcome {
        q,
        objective: obj,
        sweeps,
        converged,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct UcOutcome {
    pub q: CVec,
    pub objective: f64,
    /// `D` had a negative eigenvalue: `q` is only a stationary point.
    pub indefinite: bool,
    pub ridged: bool,
}

/// Unconstrained minimizer from `D q = c`.
pub fn uc_solve(p: &QuadraticProblem) -> Result<UcOutcome> {
    let n = p.dim();
    let b = CMat::from_column_slice(n, 1, p.c.as_slice());
    let (q, ridged, indefinite) = match linalg::solve_hpd(&p.d, &b) {
        Ok((x, ridged)) => (x, ridged, false),
        Err(_) => {
            let min = linalg::min_eigenvalue(&p.d)?;
            let lu = linalg::add_ridge(&p.d).lu();
            let x = lu
                .solve(&b)
                .ok_or(Error::NotPositiveDefinite("unconstrained solve"))?;
            (x, true, min < 0.0)
        }
    };
    let q = CVec::from_column_slice(q.as_slice());
    let objective = p.objective(&q);
    Ok(UcOutcome {
        q,
        objective,
        indefinite,
        ridged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dma::random_lorentzian;
    use crate::linalg::c;
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;
    use core::f64::consts::PI;
    use rand::Rng;

    fn random_problem(n: usize, seed: u64, constraint: Constraint) -> QuadraticProblem {
        let mut rng = stream(seed, Purpose::Initialization, 99);
        let a = CMat::from_fn(n, n, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let d = linalg::hermitian_part(&(&a * a.adjoint()));
        let cv = CVec::from_fn(n, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        QuadraticProblem::new(d, cv, constraint).unwrap()
    }

    #[test]
    fn objective_at_zero() {
        let p = random_problem(4, 1, Constraint::Lorentzian);
        assert_eq!(p.objective(&CVec::zeros(4)), 0.0);
    }

    #[test]
    fn identity_objective_is_sum_of_magnitudes() {
        let p = QuadraticProblem::new(CMat::identity(3, 3), CVec::zeros(3), Constraint::Lorentzian)
            .unwrap();
        let thetas = [0.2, 1.3, -2.0];
        let q = CVec::from_iterator(3, thetas.iter().map(|t| lorentzian(*t)));
        let expected: f64 = thetas.iter().map(|t| (1.0 + t.sin()) / 2.0).sum();
        assert_relative_eq!(p.objective(&q), expected, epsilon = 1e-14);
    }

    #[test]
    fn objective_matches_double_loop() {
        let p = random_problem(2, 5, Constraint::Lorentzian);
        let q = random_lorentzian(2, &mut stream(6, Purpose::Initialization, 0));
        let mut naive = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                naive += (q[i].conj() * p.d[(i, j)] * q[j]).re;
            }
            naive -= 2.0 * (q[i].conj() * p.c[i]).re;
        }
        assert_relative_eq!(p.objective(&q), naive, epsilon = 1e-12);
    }

    #[test]
    fn single_element_closed_form() {
        let p = QuadraticProblem::new(
            CMat::identity(1, 1),
            CVec::from_element(1, c(1.0, 0.5)),
            Constraint::Lorentzian,
        )
        .unwrap();
        let q = ewr_step(&p, &CVec::from_element(1, lorentzian(2.0)), 0);
        assert!((q - c(0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn binary_tie_break_and_choice() {
        let p = QuadraticProblem::new(
            CMat::identity(1, 1),
            CVec::zeros(1),
            Constraint::BinaryAmplitude,
        )
        .unwrap();
        assert_eq!(
            ewr_step(&p, &CVec::from_element(1, real(0.1)), 0),
            real(0.0)
        );
        let p = QuadraticProblem::new(
            CMat::identity(1, 1),
            CVec::from_element(1, real(1.0)),
            Constraint::BinaryAmplitude,
        )
        .unwrap();
        assert_eq!(
            ewr_step(&p, &CVec::from_element(1, real(0.0)), 0),
            real(0.1)
        );
    }

    #[test]
    fn amplitude_only_clips_and_degenerates() {
        let p = QuadraticProblem::new(
            CMat::identity(1, 1),
            CVec::from_element(1, real(10.0)),
            Constraint::AmplitudeOnly,
        )
        .unwrap();
        assert_eq!(
            ewr_step(&p, &CVec::from_element(1, real(1.0)), 0),
            real(AO_MAX)
        );
        let p = QuadraticProblem::new(
            CMat::identity(1, 1),
            CVec::from_element(1, real(0.3)),
            Constraint::AmplitudeOnly,
        )
        .unwrap();
        assert_relative_eq!(ewr_step(&p, &CVec::from_element(1, real(1.0)), 0).re, 0.3);
        // D_nn = 0: linear objective picks an endpoint
        let p = QuadraticProblem::new(
            CMat::zeros(1, 1),
            CVec::from_element(1, real(-1.0)),
            Constraint::AmplitudeOnly,
        )
        .unwrap();
        assert_eq!(
            ewr_step(&p, &CVec::from_element(1, real(1.0)), 0),
            real(AO_MIN)
        );
    }

    #[test]
    fn flat_lorentzian_keeps_current() {
        // η = c − (j/2) D = 0
        let p = QuadraticProblem::new(
            CMat::identity(1, 1),
            CVec::from_element(1, c(0.0, 0.5)),
            Constraint::Lorentzian,
        )
        .unwrap();
        let q0 = lorentzian(1.234);
        assert_eq!(ewr_step(&p, &CVec::from_element(1, q0), 0), q0);
    }

    #[test]
    fn identity_drives_weights_to_zero() {
        let p = QuadraticProblem::new(CMat::identity(5, 5), CVec::zeros(5), Constraint::Lorentzian)
            .unwrap();
        let q0 = random_lorentzian(5, &mut stream(2, Purpose::Initialization, 0));
        let out = ewr_solve(&p, &q0, 1e-12, 100).unwrap();
        assert!(out.objective.abs() < 1e-15);
        for z in out.q.iter() {
            assert!(z.norm() < 1e-8);
        }
    }

    #[test]
    fn closed_form_beats_grid() {
        for seed in 0..100 {
            let p = random_problem(4, seed, Constraint::Lorentzian);
            let q = random_lorentzian(4, &mut stream(seed, Purpose::Initialization, 1));
            let n = (seed % 4) as usize;
            let best = ewr_step(&p, &q, n);
            let mut qq = q.clone();
            qq[n] = best;
            let f_star = p.objective(&qq);
            let mut grid_min = f64::INFINITY;
            for g in 0..3600 {
                qq[n] = lorentzian(2.0 * PI * g as f64 / 3600.0);
                grid_min = grid_min.min(p.objective(&qq));
            }
            assert!(
                f_star <= grid_min + 1e-8,
                "seed {seed}: {f_star} vs {grid_min}"
            );
        }
    }

    #[test]
    fn lorentzian_argmax_identity() {
        for seed in 0..50 {
            let p = random_problem(3, seed, Constraint::Lorentzian);
            let q = random_lorentzian(3, &mut stream(seed, Purpose::Initialization, 2));
            let dq = &p.d * &q;
            let eta = p.reduced_linear(&q, &dq, 1) - J * (0.5 * p.d[(1, 1)].re);
            let theta = eta.arg();
            let lhs = (C64::from_polar(1.0, -theta) * eta).re;
            assert!((lhs - eta.norm()).abs() < 1e-12 * eta.norm().max(1.0));
        }
    }

    #[test]
    fn uc_identity_returns_c() {
        let cv = CVec::from_vec(alloc::vec![c(1.0, 2.0), c(-0.5, 0.1)]);
        let p = QuadraticProblem::new(CMat::identity(2, 2), cv.clone(), Constraint::Unconstrained)
            .unwrap();
        let out = uc_solve(&p).unwrap();
        assert!((out.q - cv).norm() < 1e-14);
        assert!(!out.indefinite);
    }

    #[test]
    fn uc_flags_indefinite() {
        let d = CMat::from_diagonal(&CVec::from_vec(alloc::vec![real(1.0), real(-2.0)]));
        let p = QuadraticProblem {
            d,
            c: CVec::from_element(2, real(1.0)),
            constraint: Constraint::Unconstrained,
        };
        let out = uc_solve(&p).unwrap();
        assert!(out.indefinite);
        let r = &p.d * &out.q - &p.c;
        assert!(r.norm() < 1e-8);
    }

    #[test]
    fn infeasible_start_rejected() {
        let p = random_problem(2, 3, Constraint::Lorentzian);
        let q0 = CVec::from_element(2, real(1.0));
        assert!(matches!(
            ewr_solve(&p, &q0, 1e-6, 10),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn non_hermitian_refused() {
        let d = CMat::from_row_slice(2, 2, &[real(1.0), real(1.0), real(0.0), real(1.0)]);
        assert!(matches!(
            QuadraticProblem::new(d, CVec::zeros(2), Constraint::Lorentzian),
            Err(Error::NotHermitian(_))
        ));
    }
}
