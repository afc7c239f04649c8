//! Cumulative negative log-likelihood over a hybrid observation log and the
//! ℓ2-ball constrained maximum-likelihood estimator.
//!
//! The loss only depends on the log through per-action sufficient statistics
//! (pull count, sum of observations), so every evaluation goes through
//! [`ActionStats`]: `Σ_s b(x_{a_s}ᵀθ) - z_s x_{a_s}ᵀθ` equals
//! `Σ_a n_a b(x_aᵀθ) - (Σ z)_a x_aᵀθ`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::problem::{Action, InstanceView, Modality};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub round: u64,
    pub action: Action,
    pub z: f64,
}

/// Time-ordered record of queries and their observations.
#[derive(Debug, Clone, Default)]
pub struct ObservationLog {
    records: Vec<Record>,
    count_reward: usize,
    count_dueling: usize,
}

impl ObservationLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record after checking round order and observation support.
    pub fn push(&mut self, view: &InstanceView, round: u64, action: Action, z: f64) -> Result<()> {
        if let Some(last) = self.records.last() {
            if round <= last.round {
                return Err(invalid(format!(
                    "rounds must increase strictly ({round} after {})",
                    last.round
                )));
            }
        }
        view.action_index(action)?;
        view.family_of(action).check_support(z)?;
        match action.modality() {
            Modality::Reward => self.count_reward += 1,
            Modality::Dueling => self.count_dueling += 1,
        }
        self.records.push(Record { round, action, z });
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count_reward(&self) -> usize {
        self.count_reward
    }

    pub fn count_dueling(&self) -> usize {
        self.count_dueling
    }

    pub fn stats(&self, view: &InstanceView) -> Result<ActionStats> {
        let mut st = ActionStats::new(view.num_actions());
        for r in &self.records {
            st.add(view.action_index(r.action)?, r.z);
        }
        Ok(st)
    }

    /// CSV with columns `round, action_kind, i, j, k, z`; `i` is filled for
    /// reward records, `j, k` for duels.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.records {
            let row = match r.action {
                Action::Reward(i) => LogRow {
                    round: r.round,
                    action_kind: Modality::Reward,
                    i: Some(i),
                    j: None,
                    k: None,
                    z: r.z,
                },
                Action::Duel(j, k) => LogRow {
                    round: r.round,
                    action_kind: Modality::Dueling,
                    i: None,
                    j: Some(j),
                    k: Some(k),
                    z: r.z,
                },
            };
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(view: &InstanceView, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut log = Self::new();
        for row in rdr.deserialize::<LogRow>() {
            let row = row?;
            let action = match (row.action_kind, row.i, row.j, row.k) {
                (Modality::Reward, Some(i), None, None) => Action::Reward(i),
                (Modality::Dueling, None, Some(j), Some(k)) => Action::duel(j, k)?,
                _ => return Err(invalid(format!("malformed log row at round {}", row.round))),
            };
            log.push(view, row.round, action, row.z)?;
        }
        Ok(log)
    }
}

#[derive(Serialize, Deserialize)]
struct LogRow {
    round: u64,
    action_kind: Modality,
    i: Option<usize>,
    j: Option<usize>,
    k: Option<usize>,
    z: f64,
}

/// Per-action pull counts and observation sums, indexed like
/// [`InstanceView::actions`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActionStats {
    counts: Vec<u64>,
    sum_z: Vec<f64>,
    sum_abs_z: Vec<f64>,
    total: u64,
}

impl ActionStats {
    pub fn new(num_actions: usize) -> Self {
        Self {
            counts: vec![0; num_actions],
            sum_z: vec![0.0; num_actions],
            sum_abs_z: vec![0.0; num_actions],
            total: 0,
        }
    }

    pub fn add(&mut self, action_idx: usize, z: f64) {
        self.counts[action_idx] += 1;
        self.sum_z[action_idx] += z;
        self.sum_abs_z[action_idx] += z.abs();
        self.total += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn sum_z(&self) -> &[f64] {
        &self.sum_z
    }

    pub fn sum_abs_z(&self) -> &[f64] {
        &self.sum_abs_z
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(i, _)| i)
    }

    pub fn loss(&self, view: &InstanceView, theta: &DVector<f64>) -> f64 {
        self.active()
            .map(|a| {
                let fam = view.family_of(view.actions()[a]);
                let eta = view.feature(a).dot(theta);
                (self.counts[a] as f64 * fam.b(eta) - self.sum_z[a] * eta) / fam.dispersion_scale()
            })
            .sum()
    }

    pub fn gradient(&self, view: &InstanceView, theta: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(view.dim());
        for a in self.active() {
            let fam = view.family_of(view.actions()[a]);
            let x = view.feature(a);
            let eta = x.dot(theta);
            let c = (self.counts[a] as f64 * fam.mu(eta) - self.sum_z[a]) / fam.dispersion_scale();
            g.axpy(c, x, 1.0);
        }
        g
    }

    pub fn loss_and_gradient(&self, view: &InstanceView, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut g = DVector::zeros(view.dim());
        let mut f = 0.0;
        for a in self.active() {
            let fam = view.family_of(view.actions()[a]);
            let x = view.feature(a);
            let eta = x.dot(theta);
            let n = self.counts[a] as f64;
            let zeta = fam.dispersion_scale();
            f += (n * fam.b(eta) - self.sum_z[a] * eta) / zeta;
            g.axpy((n * fam.mu(eta) - self.sum_z[a]) / zeta, x, 1.0);
        }
        (f, g)
    }

    pub fn hessian(&self, view: &InstanceView, theta: &DVector<f64>) -> DMatrix<f64> {
        self.weighted_curvature(view, theta, |_| 1.0)
    }

    /// `Σ_a n_a μ'(x_aᵀθ) scale(a) x_a x_aᵀ / ζ_a`.
    pub(crate) fn weighted_curvature(
        &self,
        view: &InstanceView,
        theta: &DVector<f64>,
        scale: impl Fn(Action) -> f64,
    ) -> DMatrix<f64> {
        let d = view.dim();
        let mut h = DMatrix::zeros(d, d);
        for a in self.active() {
            let act = view.actions()[a];
            let fam = view.family_of(act);
            let x = view.feature(a);
            let w = self.counts[a] as f64 * fam.mu_prime(x.dot(theta)) * scale(act)
                / fam.dispersion_scale();
            linalg::add_outer(&mut h, x, w);
        }
        linalg::symmetrize(&mut h);
        h
    }
}

pub fn cumulative_loss(log: &ObservationLog, view: &InstanceView, theta: &DVector<f64>) -> Result<f64> {
    Ok(log.stats(view)?.loss(view, theta))
}

pub fn loss_gradient(
    log: &ObservationLog,
    view: &InstanceView,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(log.stats(view)?.gradient(view, theta))
}

pub fn loss_hessian(
    log: &ObservationLog,
    view: &InstanceView,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    Ok(log.stats(view)?.hessian(view, theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MleConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    #[serde(skip)]
    pub initial_point: Option<DVector<f64>>,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            gradient_tolerance: 1e-8,
            initial_point: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MleOutcome {
    pub theta: DVector<f64>,
    pub loss: f64,
    /// `‖θ - Π(θ - ∇L(θ))‖` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

/// Euclidean projection onto the ball of the given radius.
pub fn project_ball(theta: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n = theta.norm();
    if n > radius {
        theta * (radius / n)
    } else {
        theta.clone()
    }
}

fn projected_residual(theta: &DVector<f64>, grad: &DVector<f64>, radius: f64) -> f64 {
    (theta - project_ball(&(theta - grad), radius)).norm()
}

pub fn constrained_mle(log: &ObservationLog, view: &InstanceView, config: &MleConfig) -> Result<MleOutcome> {
    if log.is_empty() {
        return Err(invalid("maximum likelihood needs at least one observation"));
    }
    constrained_mle_stats(&log.stats(view)?, view, config)
}

const ARMIJO: f64 = 1e-4;

/// Projected gradient descent with Armijo backtracking (halving) along the
/// projection arc. Trial steps use the Barzilai–Borwein spectral length.
/// Damped Newton step, kept only when it stays inside the ball and passes
/// the Armijo test.
fn newton_step(
    stats: &ActionStats,
    view: &InstanceView,
    theta: &DVector<f64>,
    f: f64,
    g: &DVector<f64>,
    slack: f64,
) -> Option<(DVector<f64>, f64)> {
    let h = stats.hessian(view, theta);
    let dir = -h.cholesky()?.solve(g);
    let slope = g.dot(&dir);
    if !(slope < 0.0) || !dir.iter().all(|x| x.is_finite()) {
        return None;
    }
    let mut t = 1.0;
    for _ in 0..20 {
        let cand = theta + &dir * t;
        if cand.norm() > view.radius() {
            return None;
        }
        let fc = stats.loss(view, &cand);
        if fc <= f + ARMIJO * t * slope + slack {
            return Some((cand, fc));
        }
        t *= 0.5;
    }
    None
}

pub fn constrained_mle_stats(
    stats: &ActionStats,
    view: &InstanceView,
    config: &MleConfig,
) -> Result<MleOutcome> {
    if stats.is_empty() {
        return Err(invalid("maximum likelihood needs at least one observation"));
    }
    if !(config.gradient_tolerance > 0.0) {
        return Err(invalid("gradient tolerance must be positive"));
    }
    let radius = view.radius();
    let mut theta = match &config.initial_point {
        Some(p) if p.len() == view.dim() => project_ball(p, radius),
        Some(_) => return Err(invalid("initial point has the wrong dimension")),
        None => DVector::zeros(view.dim()),
    };
    let (mut f, mut g) = stats.loss_and_gradient(view, &theta);

    // 1 / (bound on the Hessian's largest eigenvalue) as the first trial step
    let curvature_bound: f64 = stats
        .active()
        .map(|a| {
            let fam = view.family_of(view.actions()[a]);
            let top = match fam.kind() {
                crate::glm::FamilyKind::Gaussian => 1.0,
                crate::glm::FamilyKind::BernoulliLogistic => 0.25,
            };
            stats.counts[a] as f64 * top * view.feature(a).norm_squared() / fam.dispersion_scale()
        })
        .sum();
    let mut step = if curvature_bound > 0.0 { 1.0 / curvature_bound } else { 1.0 };

    let mut residual = projected_residual(&theta, &g, radius);
    for it in 0..config.max_iterations {
        if residual <= config.gradient_tolerance {
            return Ok(MleOutcome {
                theta,
                loss: f,
                residual,
                iterations: it,
            });
        }
        let slack = 4.0 * f64::EPSILON * f.abs().max(1.0);
        if let Some((cand, fc)) = newton_step(stats, view, &theta, f, &g, slack) {
            let gc = stats.gradient(view, &cand);
            theta = cand;
            f = fc;
            g = gc;
            residual = projected_residual(&theta, &g, radius);
            continue;
        }
        let mut eta = step;
        let (cand, fc) = loop {
            let cand = project_ball(&(&theta - &g * eta), radius);
            let fc = stats.loss(view, &cand);
            if fc <= f + ARMIJO * g.dot(&(&cand - &theta)) + slack {
                break (cand, fc);
            }
            eta *= 0.5;
            if eta < 1e-300 {
                return Err(Error::Convergence {
                    best: theta,
                    residual,
                    iterations: it,
                });
            }
        };
        let gc = stats.gradient(view, &cand);
        let s = &cand - &theta;
        let y = &gc - &g;
        let sy = s.dot(&y);
        step = if sy > 0.0 { s.norm_squared() / sy } else { eta * 2.0 };
        theta = cand;
        f = fc;
        g = gc;
        residual = projected_residual(&theta, &g, radius);
    }
    if residual <= config.gradient_tolerance {
        return Ok(MleOutcome {
            theta,
            loss: f,
            residual,
            iterations: config.max_iterations,
        });
    }
    Err(Error::Convergence {
        best: theta,
        residual,
        iterations: config.max_iterations,
    })
}
