//! DMA physical layer: element weights, constraint sets and microstrip
//! propagation.
//!
//! Element `n` (0-based) sits on microstrip `n / S` at position `n % S`.
//! The weight matrix `Q` (N×L) has `q_n` at `(n, n / S)` and zeros elsewhere,
//! and `H = diag(h)` holds the in-guide propagation factors. The solvers work
//! with the factorization `H Q = Q̃ H̃`, `Q̃ = diag(q)`, `H̃[n, n/S] = h_n`.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::DVector;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{c, real, CMat, CVec, C64, J};
use crate::scenario::Scenario;

/// Amplitude-only interval.
pub const AO_MIN: f64 = 0.001;
pub const AO_MAX: f64 = 5.0;
/// Binary-amplitude levels.
pub const BA_LEVELS: [f64; 2] = [0.0, 0.1];

/// Tolerance used when checking an incoming weight vector for feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Per-element feasible set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Constraint {
    /// `q = (j + e^{jθ})/2`.
    #[default]
    Lorentzian,
    /// Real `q ∈ [AO_MIN, AO_MAX]`.
    AmplitudeOnly,
    /// `q ∈ {0, 0.1}`.
    BinaryAmplitude,
    /// `q ∈ ℂ`.
    Unconstrained,
}

impl Constraint {
    pub fn tag(self) -> &'static str {
        match self {
            Constraint::Lorentzian => "LP",
            Constraint::AmplitudeOnly => "AO",
            Constraint::BinaryAmplitude => "BA",
            Constraint::Unconstrained => "UC",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_uppercase().as_str() {
            "LP" => Some(Constraint::Lorentzian),
            "AO" => Some(Constraint::AmplitudeOnly),
            "BA" => Some(Constraint::BinaryAmplitude),
            "UC" => Some(Constraint::Unconstrained),
            _ => None,
        }
    }

    pub fn contains(self, q: C64, tol: f64) -> bool {
        if !(q.re.is_finite() && q.im.is_finite()) {
            return false;
        }
        match self {
            Constraint::Lorentzian => ((q - J * 0.5).norm() - 0.5).abs() <= tol,
            Constraint::AmplitudeOnly => {
                q.im.abs() <= tol && q.re >= AO_MIN - tol && q.re <= AO_MAX + tol
            }
            Constraint::BinaryAmplitude => {
                q.im.abs() <= tol && BA_LEVELS.iter().any(|l| (q.re - l).abs() <= tol)
            }
            Constraint::Unconstrained => true,
        }
    }

    /// Nearest feasible point.
    ///
    /// The Lorentzian projection of the circle centre `j/2` is resolved to
    /// `θ = 0`; binary ties go to `0`.
    pub fn project(self, value: C64) -> C64 {
        match self {
            Constraint::Lorentzian => {
                let offset = value - J * 0.5;
                let r = offset.norm();
                if r == 0.0 {
                    lorentzian(0.0)
                } else {
                    J * 0.5 + offset * (0.5 / r)
                }
            }
            Constraint::AmplitudeOnly => real(value.re.clamp(AO_MIN, AO_MAX)),
            Constraint::BinaryAmplitude => {
                let (lo, hi) = (BA_LEVELS[0], BA_LEVELS[1]);
                if (value.re - hi).abs() < (value.re - lo).abs() {
                    real(hi)
                } else {
                    real(lo)
                }
            }
            Constraint::Unconstrained => value,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Lorentzian weight `(j + e^{jθ})/2`.
pub fn lorentzian(theta: f64) -> C64 {
    let (s, co) = theta.sin_cos();
    c(co * 0.5, (1.0 + s) * 0.5)
}

/// In-guide propagation factors `h_{l,s} = e^{−ρ_{l,s}(α + jγ)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrostripModel {
    pub attenuation: f64,
    pub wavenumber: f64,
    /// Feed-to-element distance `ρ` per element (m).
    pub feed_distances: Vec<f64>,
    pub propagation: CVec,
}

/// Builds `h` with `ρ_{l,s} = s·d_x` (1-based `s`) unless the scenario
/// overrides the distances.
pub fn microstrip_propagation(sc: &Scenario) -> MicrostripModel {
    let s_count = sc.elements_per_microstrip;
    let n = sc.elements();
    let feed_distances: Vec<f64> = match &sc.feed_distances {
        Some(d) => d.clone(),
        None => (0..n)
            .map(|i| (i % s_count + 1) as f64 * sc.spacing_x)
            .collect(),
    };
    let alpha = sc.waveguide_attenuation;
    let gamma = sc.waveguide_wavenumber;
    let propagation = CVec::from_iterator(
        n,
        feed_distances
            .iter()
            .map(|&rho| (c(-rho * alpha, -rho * gamma)).exp()),
    );
    MicrostripModel {
        attenuation: alpha,
        wavenumber: gamma,
        feed_distances,
        propagation,
    }
}

/// DMA configuration: weights `q`, propagation `h` and the active constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct DmaState {
    weights: CVec,
    propagation: CVec,
    elements_per_microstrip: usize,
    microstrips: usize,
    constraint: Constraint,
}

impl DmaState {
    /// Validates `q` against the scenario's constraint and builds the state.
    pub fn assemble(q: CVec, model: &MicrostripModel, sc: &Scenario) -> Result<Self> {
        Self::with_constraint(q, model, sc, sc.constraint)
    }

    pub fn with_constraint(
        q: CVec,
        model: &MicrostripModel,
        sc: &Scenario,
        constraint: Constraint,
    ) -> Result<Self> {
        let n = sc.elements();
        if q.len() != n {
            return Err(Error::Dimension {
                context: "DMA weight vector",
                expected: n,
                actual: q.len(),
            });
        }
        if model.propagation.len() != n {
            return Err(Error::Dimension {
                context: "microstrip propagation",
                expected: n,
                actual: model.propagation.len(),
            });
        }
        let bad: Vec<usize> = q
            .iter()
            .enumerate()
            .filter(|(_, v)| !constraint.contains(**v, FEASIBILITY_TOL))
            .map(|(i, _)| i)
            .collect();
        if !bad.is_empty() {
            return Err(Error::Infeasible {
                constraint,
                indices: bad,
            });
        }
        Ok(Self {
            weights: q,
            propagation: model.propagation.clone(),
            elements_per_microstrip: sc.elements_per_microstrip,
            microstrips: sc.microstrips,
            constraint,
        })
    }

    /// Replaces the weights; the caller guarantees feasibility (solver output).
    pub(crate) fn set_weights(&mut self, q: CVec) {
        debug_assert_eq!(q.len(), self.weights.len());
        self.weights = q;
    }

    /// Same hardware with new weights, validated against the constraint.
    pub fn with_weights(&self, q: CVec) -> Result<Self> {
        if q.len() != self.weights.len() {
            return Err(Error::Dimension {
                context: "DMA weight vector",
                expected: self.weights.len(),
                actual: q.len(),
            });
        }
        let bad: Vec<usize> = q
            .iter()
            .enumerate()
            .filter(|(_, v)| !self.constraint.contains(**v, FEASIBILITY_TOL))
            .map(|(i, _)| i)
            .collect();
        if !bad.is_empty() {
            return Err(Error::Infeasible {
                constraint: self.constraint,
                indices: bad,
            });
        }
        Ok(Self {
            weights: q,
            ..self.clone()
        })
    }

    pub fn weights(&self) -> &CVec {
        &self.weights
    }

    pub fn propagation(&self) -> &CVec {
        &self.propagation
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    pub fn elements(&self) -> usize {
        self.weights.len()
    }

    pub fn microstrips(&self) -> usize {
        self.microstrips
    }

    pub fn elements_per_microstrip(&self) -> usize {
        self.elements_per_microstrip
    }

    /// Microstrip (RF chain) feeding element `n`.
    #[inline]
    pub fn microstrip_of(&self, n: usize) -> usize {
        n / self.elements_per_microstrip
    }

    /// Block-sparse weight matrix `Q` (N×L).
    pub fn weight_matrix(&self) -> CMat {
        let mut q = CMat::zeros(self.elements(), self.microstrips);
        for (n, w) in self.weights.iter().enumerate() {
            q[(n, self.microstrip_of(n))] = *w;
        }
        q
    }

    /// `Q̃ = diag(q)`.
    pub fn diag_weights(&self) -> CMat {
        CMat::from_diagonal(&self.weights)
    }

    /// `H = diag(h)`.
    pub fn propagation_matrix(&self) -> CMat {
        CMat::from_diagonal(&self.propagation)
    }

    /// `H̃` (N×L) with `h_n` at `(n, n/S)`.
    pub fn block_propagation(&self) -> CMat {
        let mut m = CMat::zeros(self.elements(), self.microstrips);
        for (n, h) in self.propagation.iter().enumerate() {
            m[(n, self.microstrip_of(n))] = *h;
        }
        m
    }

    /// `H Q` (N×L), built directly from the sparse structure.
    pub fn effective(&self) -> CMat {
        let mut m = CMat::zeros(self.elements(), self.microstrips);
        for n in 0..self.elements() {
            m[(n, self.microstrip_of(n))] = self.propagation[n] * self.weights[n];
        }
        m
    }

    /// Diagonal of `Qᴴ Hᴴ H Q` (the matrix itself is diagonal).
    pub fn chain_gains(&self) -> DVector<f64> {
        let mut g = DVector::zeros(self.microstrips);
        for n in 0..self.elements() {
            g[self.microstrip_of(n)] += (self.propagation[n] * self.weights[n]).norm_sqr();
        }
        g
    }
}

/// Builds a [`DmaState`] from raw weights.
pub fn assemble_views(q: CVec, model: &MicrostripModel, sc: &Scenario) -> Result<DmaState> {
    DmaState::assemble(q, model, sc)
}

/// Uniform-random Lorentzian start, `θ ~ U[0, 2π)`.
pub fn random_lorentzian<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    CVec::from_iterator(
        n,
        (0..n).map(|_| lorentzian(rng.random::<f64>() * 2.0 * core::f64::consts::PI)),
    )
}

/// A feasible starting point for any constraint: random phases for LP, the
/// projection of the LP draw otherwise.
pub fn random_feasible<R: rand::Rng + ?Sized>(
    n: usize,
    constraint: Constraint,
    rng: &mut R,
) -> CVec {
    let lp = random_lorentzian(n, rng);
    match constraint {
        Constraint::Lorentzian | Constraint::Unconstrained => lp,
        Constraint::AmplitudeOnly => lp.map(|z| constraint.project(real(z.norm()))),
        Constraint::BinaryAmplitude => lp.map(|z| {
            if z.norm() > 0.5 {
                real(BA_LEVELS[1])
            } else {
                real(BA_LEVELS[0])
            }
        }),
    }
}
