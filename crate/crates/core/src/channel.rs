//! Statistical CSI and Rician channel sampling.
//!
//! The channel of user `k` is
//! `g_k = √(α K0/(1+K0)) ḡ_k + √(α/(1+K0)) R^{1/2} ĝ_k` with `ĝ_k ~ CN(0, I)`.
//! Its second moment is carried by the composite factor
//! `G̃_k = [√(α K0/(1+K0)) ḡ_k, √(α/(1+K0)) R^{1/2}]` (N×(N+1)), which is all
//! the optimizers ever see.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::{self, c, real, CMat, CVec};
use crate::scenario::{Scenario, UserGeometry};

/// Eigenvalues below `-PSD_TOL` make a correlation matrix unusable.
pub const PSD_TOL: f64 = 1e-10;

/// UPA response: entry `n` has phase
/// `(2π/λ)(sin ω cos ψ · (n mod S) d_x + cos ω · ⌊n/S⌋ d_z)`.
pub fn upa_steering(azimuth: f64, elevation: f64, sc: &Scenario) -> CVec {
    let s = sc.elements_per_microstrip;
    let k = 2.0 * PI / sc.wavelength;
    let ux = elevation.sin() * azimuth.cos();
    let uz = elevation.cos();
    CVec::from_iterator(
        sc.elements(),
        (0..sc.elements()).map(|n| {
            let phase =
                k * (ux * (n % s) as f64 * sc.spacing_x + uz * (n / s) as f64 * sc.spacing_z);
            c(phase.cos(), phase.sin())
        }),
    )
}

/// Exponential correlation `[R]_{ij} = r^{|i−j|}`.
pub fn exponential_correlation(size: usize, r: f64) -> DMatrix<f64> {
    DMatrix::from_fn(size, size, |i, j| r.powi((i as i32 - j as i32).abs()))
}

/// Kronecker correlation `R_V (L×L) ⊗ R_H (S×S)`, matching `n = l·S + s`.
pub fn correlation(sc: &Scenario) -> CMat {
    let vertical = exponential_correlation(sc.microstrips, sc.correlation).map(real);
    let horizontal = exponential_correlation(sc.elements_per_microstrip, sc.correlation).map(real);
    linalg::kron(&vertical, &horizontal)
}

/// Statistical CSI of one user.
#[derive(Debug, Clone)]
pub struct UserStat {
    /// LoS steering vector `ḡ_k` (unit-modulus entries).
    pub los: CVec,
    pub correlation: CMat,
    pub correlation_sqrt: CMat,
    pub path_loss: f64,
    pub rician_factor: f64,
    /// `G̃_k`, N×(N+1).
    pub composite: CMat,
    /// `G̃_k G̃_kᴴ`.
    pub gram: CMat,
}

impl UserStat {
    pub fn los_weight(&self) -> f64 {
        (self.path_loss * self.rician_factor / (1.0 + self.rician_factor)).sqrt()
    }

    pub fn nlos_weight(&self) -> f64 {
        (self.path_loss / (1.0 + self.rician_factor)).sqrt()
    }

    /// `E{g gᴴ} = α K0/(1+K0) ḡḡᴴ + α/(1+K0) R`, written out directly.
    pub fn second_moment(&self) -> CMat {
        let a = self.path_loss * self.rician_factor / (1.0 + self.rician_factor);
        let b = self.path_loss / (1.0 + self.rician_factor);
        (&self.los * self.los.adjoint()).scale(a) + self.correlation.scale(b)
    }
}

/// Horizontal stack `G = [G̃_1, …, G̃_K]`.
#[derive(Debug, Clone)]
pub struct StackedStat {
    pub stacked: CMat,
}

fn composite(los: &CVec, sqrt_r: &CMat, path_loss: f64, k0: f64) -> CMat {
    let n = los.len();
    let mut g = CMat::zeros(n, n + 1);
    let a = (path_loss * k0 / (1.0 + k0)).sqrt();
    let b = (path_loss / (1.0 + k0)).sqrt();
    g.set_column(0, &los.scale(a));
    g.view_mut((0, 1), (n, n)).copy_from(&sqrt_r.scale(b));
    g
}

/// Builds per-user statistics and the stacked factor.
///
/// Fails with [`crate::Error::NotPsd`] when the correlation matrix has an
/// eigenvalue below `-PSD_TOL`.
pub fn stat_matrices(
    users: &[UserGeometry],
    sc: &Scenario,
) -> Result<(Vec<UserStat>, StackedStat)> {
    let r = correlation(sc);
    stat_matrices_with(users, sc, &r)
}

/// As [`stat_matrices`] with an explicit correlation matrix.
pub fn stat_matrices_with(
    users: &[UserGeometry],
    sc: &Scenario,
    r: &CMat,
) -> Result<(Vec<UserStat>, StackedStat)> {
    let sqrt_r = linalg::hermitian_sqrt(r, PSD_TOL)?;
    let stats: Vec<UserStat> = users
        .iter()
        .map(|u| {
            let los = upa_steering(u.azimuth, u.elevation, sc);
            let composite = composite(&los, &sqrt_r, u.path_loss, sc.rician_factor);
            let gram = linalg::hermitian_part(&(&composite * composite.adjoint()));
            UserStat {
                los,
                correlation: r.clone(),
                correlation_sqrt: sqrt_r.clone(),
                path_loss: u.path_loss,
                rician_factor: sc.rician_factor,
                composite,
                gram,
            }
        })
        .collect();
    let stacked = stack(stats.iter().map(|s| &s.composite));
    Ok((stats, StackedStat { stacked }))
}

fn stack<'a>(blocks: impl Iterator<Item = &'a CMat> + Clone) -> CMat {
    let rows = blocks.clone().next().map_or(0, |b| b.nrows());
    let cols: usize = blocks.clone().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Draws one realization of `g_k`.
pub fn sample_channel<R: Rng + ?Sized>(u: &UserStat, rng: &mut R) -> CVec {
    let n = u.los.len();
    let s = core::f64::consts::FRAC_1_SQRT_2;
    let white = CVec::from_iterator(
        n,
        (0..n).map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c(re * s, im * s)
        }),
    );
    u.los.scale(u.los_weight()) + (&u.correlation_sqrt * white).scale(u.nlos_weight())
}

/// Draws all users' channels for one trial, user order fixed.
pub fn sample_channels<R: Rng + ?Sized>(stats: &[UserStat], rng: &mut R) -> Vec<CVec> {
    stats.iter().map(|u| sample_channel(u, rng)).collect()
}

/// Per-user channel factors handed to the optimizers.
///
/// With statistical CSI each factor is `G̃_k`; with instantaneous CSI it is
/// the realized `g_k` as an N×1 matrix. Grams `F_k F_kᴴ` are cached.
#[derive(Debug, Clone)]
pub struct ChannelFactors {
    pub factors: Vec<CMat>,
    pub grams: Vec<CMat>,
}

impl ChannelFactors {
    pub fn from_stats(stats: &[UserStat]) -> Self {
        Self {
            factors: stats.iter().map(|s| s.composite.clone()).collect(),
            grams: stats.iter().map(|s| s.gram.clone()).collect(),
        }
    }

    pub fn from_realization(channels: &[CVec]) -> Self {
        let factors: Vec<CMat> = channels
            .iter()
            .map(|g| CMat::from_column_slice(g.len(), 1, g.as_slice()))
            .collect();
        let grams = factors.iter().map(|f| f * f.adjoint()).collect();
        Self { factors, grams }
    }

    pub fn users(&self) -> usize {
        self.factors.len()
    }

    pub fn elements(&self) -> usize {
        self.factors.first().map_or(0, |f| f.nrows())
    }

    /// `G = [F_1, …, F_K]`.
    pub fn stacked(&self) -> CMat {
        stack(self.factors.iter())
    }

    /// `Σ_k F_k F_kᴴ`.
    pub fn total_gram(&self) -> CMat {
        let n = self.elements();
        self.grams.iter().fold(CMat::zeros(n, n), |acc, g| acc + g)
    }
}
