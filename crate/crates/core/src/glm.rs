//! Canonical one-parameter exponential families for the two feedback channels.
//!
//! A family is described by its log-partition `b(η)`; the mean is `b'(η)` and
//! the curvature `b''(η)`. The observation density is proportional to
//! `exp((zη - b(η)) / ζ)` where `ζ` is the dispersion scale.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Gaussian,
    BernoulliLogistic,
}

impl FamilyKind {
    /// Canonical self-concordance constant `M` with `|μ''| ≤ M μ'`.
    pub fn canonical_sc_constant(self) -> f64 {
        match self {
            FamilyKind::Gaussian => 0.0,
            FamilyKind::BernoulliLogistic => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::BernoulliLogistic => "bernoulli_logistic",
        }
    }
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An observation model: family, dispersion `ζ`, and self-concordance constant `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr", into = "FamilyRepr")]
pub struct GlmFamily {
    kind: FamilyKind,
    dispersion_scale: f64,
    sc_constant: f64,
}

/// Serialized form: either the bare family name (unit dispersion, canonical
/// constant) or a full object.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FamilyRepr {
    Name(FamilyKind),
    Full {
        family: FamilyKind,
        #[serde(default = "one")]
        dispersion_scale: f64,
        #[serde(default)]
        sc_constant: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl TryFrom<FamilyRepr> for GlmFamily {
    type Error = crate::Error;

    fn try_from(repr: FamilyRepr) -> Result<Self> {
        match repr {
            FamilyRepr::Name(kind) => Ok(GlmFamily::canonical(kind)),
            FamilyRepr::Full {
                family,
                dispersion_scale,
                sc_constant,
            } => {
                let fam = GlmFamily::new(family, dispersion_scale)?;
                match sc_constant {
                    Some(m) => fam.with_sc_constant(m),
                    None => Ok(fam),
                }
            }
        }
    }
}

impl From<GlmFamily> for FamilyRepr {
    fn from(f: GlmFamily) -> Self {
        if f.dispersion_scale == 1.0 && f.sc_constant == f.kind.canonical_sc_constant() {
            FamilyRepr::Name(f.kind)
        } else {
            FamilyRepr::Full {
                family: f.kind,
                dispersion_scale: f.dispersion_scale,
                sc_constant: Some(f.sc_constant),
            }
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("natural parameter must be finite, got {eta}")))
    }
}

/// `log(1 + e^η)` without overflow.
pub(crate) fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `σ(η)(1 - σ(η))`, evaluated through `e^{-|η|}` so the tails keep precision.
pub(crate) fn sigmoid_prime(eta: f64) -> f64 {
    let e = (-eta.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

impl GlmFamily {
    /// Family with dispersion `ζ` and its canonical self-concordance constant.
    pub fn new(kind: FamilyKind, dispersion_scale: f64) -> Result<Self> {
        if !(dispersion_scale > 0.0 && dispersion_scale.is_finite()) {
            return Err(invalid(format!(
                "dispersion scale must be positive and finite, got {dispersion_scale}"
            )));
        }
        Ok(Self {
            kind,
            dispersion_scale,
            sc_constant: kind.canonical_sc_constant(),
        })
    }

    pub fn canonical(kind: FamilyKind) -> Self {
        Self {
            kind,
            dispersion_scale: 1.0,
            sc_constant: kind.canonical_sc_constant(),
        }
    }

    pub fn gaussian() -> Self {
        Self::canonical(FamilyKind::Gaussian)
    }

    pub fn logistic() -> Self {
        Self::canonical(FamilyKind::BernoulliLogistic)
    }

    /// Overrides `M`. Only non-negativity is enforced, so an invalid constant
    /// can be probed with [`GlmFamily::self_concordance_margin`].
    pub fn with_sc_constant(mut self, m: f64) -> Result<Self> {
        if !(m >= 0.0 && m.is_finite()) {
            return Err(invalid(format!(
                "self-concordance constant must be non-negative, got {m}"
            )));
        }
        self.sc_constant = m;
        Ok(self)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dispersion_scale(&self) -> f64 {
        self.dispersion_scale
    }

    pub fn sc_constant(&self) -> f64 {
        self.sc_constant
    }

    pub fn log_partition(&self, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(self.b(eta))
    }

    pub fn mean(&self, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(self.mu(eta))
    }

    pub fn mean_prime(&self, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(self.mu_prime(eta))
    }

    pub fn mean_second(&self, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        Ok(self.mu_second(eta))
    }

    /// Per-observation negative log-likelihood `(b(η) - zη)/ζ`, dropping the
    /// base-measure term which does not depend on `η`.
    pub fn neg_log_lik(&self, z: f64, eta: f64) -> Result<f64> {
        check_eta(eta)?;
        self.check_support(z)?;
        Ok((self.b(eta) - z * eta) / self.dispersion_scale)
    }

    pub fn check_support(&self, z: f64) -> Result<()> {
        let ok = match self.kind {
            FamilyKind::Gaussian => z.is_finite(),
            FamilyKind::BernoulliLogistic => z == 0.0 || z == 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!(
                "observation {z} outside the support of the {} family",
                self.kind
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => {
                let noise: f64 = rng.sample(StandardNormal);
                eta + self.dispersion_scale.sqrt() * noise
            }
            FamilyKind::BernoulliLogistic => {
                if rng.gen::<f64>() < sigmoid(eta) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Minimum of `M μ'(η) - |μ''(η)|` over an evenly spaced grid on
    /// `[-eta_bound, eta_bound]`. Non-negative iff self-concordance holds on the grid.
    pub fn self_concordance_margin(&self, eta_bound: f64, grid_size: usize) -> Result<f64> {
        if !(eta_bound > 0.0 && eta_bound.is_finite()) {
            return Err(invalid("eta_bound must be positive"));
        }
        if grid_size < 2 {
            return Err(invalid("grid_size must be at least 2"));
        }
        let step = 2.0 * eta_bound / (grid_size - 1) as f64;
        Ok((0..grid_size)
            .map(|i| {
                let eta = -eta_bound + step * i as f64;
                self.sc_constant * self.mu_prime(eta) - self.mu_second(eta).abs()
            })
            .fold(f64::INFINITY, f64::min))
    }

    /// `sup_{|η| ≤ radius} |μ(η)|`. The logistic mean is bounded by one
    /// everywhere, and that global bound is used.
    pub fn mean_abs_bound(&self, radius: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => radius.abs(),
            FamilyKind::BernoulliLogistic => 1.0,
        }
    }

    #[inline]
    pub(crate) fn b(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 0.5 * eta * eta,
            FamilyKind::BernoulliLogistic => softplus(eta),
        }
    }

    #[inline]
    pub(crate) fn mu(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => eta,
            FamilyKind::BernoulliLogistic => sigmoid(eta),
        }
    }

    #[inline]
    pub(crate) fn mu_prime(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::BernoulliLogistic => sigmoid_prime(eta),
        }
    }

    #[inline]
    pub(crate) fn mu_second(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 0.0,
            FamilyKind::BernoulliLogistic => sigmoid_prime(eta) * (1.0 - 2.0 * sigmoid(eta)),
        }
    }
}
