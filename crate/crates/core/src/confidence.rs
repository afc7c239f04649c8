//! Likelihood-ratio confidence radius, the aggregated information matrix and
//! the ellipsoidal confidence set used by the stopping rule.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::estimation::{ActionStats, ObservationLog};
use crate::linalg;
use crate::problem::InstanceView;

/// Almost-sure bound on the Lipschitz modulus of the cumulative loss over
/// the ball: `Σ_s ρ_s (|z_s| + μ̄_s) / ζ_s`.
pub fn lipschitz_bound(log: &ObservationLog, view: &InstanceView) -> Result<f64> {
    Ok(lipschitz_bound_stats(&log.stats(view)?, view))
}

pub fn lipschitz_bound_stats(stats: &ActionStats, view: &InstanceView) -> f64 {
    let s = view.radius();
    view.actions()
        .iter()
        .enumerate()
        .filter(|&(a, _)| stats.counts()[a] > 0)
        .map(|(a, &act)| {
            let fam = view.family_of(act);
            let rho = act.rho();
            let mu_bar = fam.mean_abs_bound(rho * s);
            rho * (stats.sum_abs_z()[a] + stats.counts()[a] as f64 * mu_bar) / fam.dispersion_scale()
        })
        .sum()
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// `log(1/δ) + inf_{c ∈ (0,1]} { d log(1/c) + 2 S L c }`, in closed form.
pub fn beta_radius(lipschitz: f64, d: usize, s: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(lipschitz >= 0.0) {
        return Err(invalid(format!("Lipschitz bound must be non-negative, got {lipschitz}")));
    }
    let d = d as f64;
    let two_sl = 2.0 * s * lipschitz;
    let extra = if two_sl >= d {
        // stationary point c = d / (2SL) lies inside (0, 1]
        d * (1.0 + (two_sl / d).ln())
    } else {
        two_sl
    };
    Ok((1.0 / delta).ln() + extra)
}

/// The looser `log(1/δ) + d log(max(e, 2eSL/d))` form; an upper bound on [`beta_radius`].
pub fn beta_radius_relaxed(lipschitz: f64, d: usize, s: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let d = d as f64;
    let e = std::f64::consts::E;
    Ok((1.0 / delta).ln() + d * e.max(2.0 * e * s * lipschitz / d).ln())
}

/// `Σ_s μ'(x_sᵀθ̂) x_s x_sᵀ / (2 (1 + S ρ_s M) ζ_s)`.
pub fn info_matrix(log: &ObservationLog, view: &InstanceView, theta_hat: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(info_matrix_stats(&log.stats(view)?, view, theta_hat))
}

pub fn info_matrix_stats(stats: &ActionStats, view: &InstanceView, theta_hat: &DVector<f64>) -> DMatrix<f64> {
    let s = view.radius();
    stats.weighted_curvature(view, theta_hat, |a| {
        1.0 / (2.0 * (1.0 + s * a.rho() * view.family_of(a).sc_constant()))
    })
}

/// Snapshot `(θ̂, A, β)` defining `{θ : ‖θ - θ̂‖²_A ≤ β}`.
#[derive(Debug, Clone)]
pub struct ConfidenceState {
    theta_hat: DVector<f64>,
    info_matrix: DMatrix<f64>,
    beta: f64,
    lipschitz: f64,
    inverse: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceDump {
    pub theta_hat: Vec<f64>,
    pub beta: f64,
    pub lipschitz: f64,
    pub eigenvalues: Vec<f64>,
}

impl ConfidenceState {
    pub fn new(theta_hat: DVector<f64>, mut info_matrix: DMatrix<f64>, beta: f64, lipschitz: f64) -> Result<Self> {
        let d = theta_hat.len();
        if info_matrix.nrows() != d || info_matrix.ncols() != d {
            return Err(invalid("information matrix shape does not match theta_hat"));
        }
        if (&info_matrix - info_matrix.transpose()).amax() > 1e-12 * info_matrix.amax().max(1.0) {
            return Err(invalid("information matrix is not symmetric"));
        }
        linalg::symmetrize(&mut info_matrix);
        if !(beta >= 0.0) {
            return Err(invalid(format!("beta must be non-negative, got {beta}")));
        }
        let inverse = linalg::spd_inverse(&info_matrix);
        Ok(Self {
            theta_hat,
            info_matrix,
            beta,
            lipschitz,
            inverse,
        })
    }

    /// Builds the state after the observations summarised in `stats`, at the
    /// estimate `theta_hat`.
    pub fn from_stats(stats: &ActionStats, view: &InstanceView, theta_hat: DVector<f64>, delta: f64) -> Result<Self> {
        let lipschitz = lipschitz_bound_stats(stats, view);
        let beta = beta_radius(lipschitz, view.dim(), view.radius(), delta)?;
        let a = info_matrix_stats(stats, view, &theta_hat);
        Self::new(theta_hat, a, beta, lipschitz)
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn info_matrix(&self) -> &DMatrix<f64> {
        &self.info_matrix
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn is_identified(&self) -> bool {
        self.inverse.is_some()
    }

    /// `‖g‖²_{A⁻¹}`, or `None` if `A` is singular.
    pub fn width_sq(&self, g: &DVector<f64>) -> Option<f64> {
        self.inverse.as_ref().map(|inv| linalg::quad_form(inv, g))
    }

    /// `min_{θ ∈ E} gᵀθ = gᵀθ̂ - √β ‖g‖_{A⁻¹}`.
    pub fn min_linear_over_ellipsoid(&self, g: &DVector<f64>) -> Result<f64> {
        let w = self
            .width_sq(g)
            .ok_or_else(|| Error::NotIdentified("information matrix is singular".into()))?;
        Ok(g.dot(&self.theta_hat) - (self.beta * w.max(0.0)).sqrt())
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        let diff = theta - &self.theta_hat;
        linalg::quad_form(&self.info_matrix, &diff) <= self.beta
    }

    /// Smallest certificate value `min_{θ ∈ E} (x_c - x_j)ᵀθ` over competitors
    /// `j ≠ candidate`. `None` when `A` is singular.
    pub fn min_certificate_value(&self, view: &InstanceView, candidate: usize) -> Option<f64> {
        let xc = view.arm(candidate);
        let mut worst = f64::INFINITY;
        for (j, xj) in view.arms().iter().enumerate() {
            if j == candidate {
                continue;
            }
            let v = self.min_linear_over_ellipsoid(&(xc - xj)).ok()?;
            worst = worst.min(v);
        }
        Some(worst)
    }

    /// True iff every competitor is strictly beaten over the whole ellipsoid.
    pub fn certify_best(&self, view: &InstanceView, candidate: usize) -> bool {
        matches!(self.min_certificate_value(view, candidate), Some(v) if v > 0.0)
    }

    pub fn dump(&self) -> ConfidenceDump {
        ConfidenceDump {
            theta_hat: self.theta_hat.iter().copied().collect(),
            beta: self.beta,
            lipschitz: self.lipschitz,
            eigenvalues: linalg::eigenvalues(&self.info_matrix).iter().copied().collect(),
        }
    }
}
