//! The sequential sampler: warm-up, tracking with vanishing forced
//! exploration, the stopping check and the per-mode design refresh.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceState;
use crate::design::{intensities_from_q, unit_mean_costs, DesignProblem, FwConfig, WarmStart};
use crate::error::{invalid, Error, Result};
use crate::estimation::{constrained_mle_stats, ActionStats, MleConfig, ObservationLog};
use crate::linalg;
use crate::problem::{Action, HybridInstance, InstanceView, Modality};

/// Smallest eigenvalue the warm-up information matrix must exceed.
pub const WARMUP_EIGENVALUE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hybrid,
    RewardOnly,
    DuelingOnly,
    RandomHybrid,
    CostAware,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Hybrid,
        Mode::RewardOnly,
        Mode::DuelingOnly,
        Mode::RandomHybrid,
        Mode::CostAware,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::RewardOnly => "reward_only",
            Mode::DuelingOnly => "dueling_only",
            Mode::RandomHybrid => "random_hybrid",
            Mode::CostAware => "cost_aware",
        }
    }

    /// Indices of the actions this mode may query.
    pub fn actions(self, view: &InstanceView) -> Vec<usize> {
        let keep = |a: &Action| match self {
            Mode::RewardOnly => a.modality() == Modality::Reward,
            Mode::DuelingOnly => a.modality() == Modality::Dueling,
            _ => true,
        };
        view.actions()
            .iter()
            .enumerate()
            .filter(|(_, a)| keep(a))
            .map(|(i, _)| i)
            .collect()
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-round design budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefreshSchedule {
    /// Iteration cap of the warm-started solve run every round.
    pub warm_iterations: usize,
    /// A full solve runs every this many rounds, and whenever the empirical
    /// best arm changes.
    pub full_every: u64,
}

impl Default for RefreshSchedule {
    fn default() -> Self {
        Self {
            warm_iterations: 50,
            full_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    pub delta: f64,
    pub alpha: f64,
    pub refresh: RefreshSchedule,
    pub mle: MleConfig,
    pub fw: FwConfig,
    pub max_rounds: u64,
    pub mode: Mode,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            alpha: 0.5,
            refresh: RefreshSchedule::default(),
            mle: MleConfig::default(),
            fw: FwConfig::default(),
            max_rounds: 5_000_000,
            mode: Mode::Hybrid,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(invalid(format!("delta must lie in (0, 0.5), got {}", self.delta)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.max_rounds == 0 {
            return Err(invalid("max_rounds must be positive"));
        }
        if self.refresh.warm_iterations == 0 || self.refresh.full_every == 0 {
            return Err(invalid("refresh schedule entries must be positive"));
        }
        self.fw.validate()
    }
}

/// Source of observations for a run.
pub trait Observe {
    fn observe(&mut self, action: Action) -> f64;
}

/// Counters of the tracking rule.
#[derive(Debug, Clone)]
pub struct TrackingState {
    counts: Vec<u64>,
    target_mass: Vec<f64>,
    tracking_rounds: u64,
    exploration_support: Vec<usize>,
    alpha: f64,
}

impl TrackingState {
    pub fn new(num_actions: usize, exploration_support: Vec<usize>, alpha: f64) -> Result<Self> {
        if exploration_support.is_empty() || exploration_support.iter().any(|&a| a >= num_actions) {
            return Err(invalid("exploration support must be a non-empty set of valid actions"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self {
            counts: vec![0; num_actions],
            target_mass: vec![0.0; num_actions],
            tracking_rounds: 0,
            exploration_support,
            alpha,
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn target_mass(&self) -> &[f64] {
        &self.target_mass
    }

    pub fn tracking_rounds(&self) -> u64 {
        self.tracking_rounds
    }

    pub fn exploration_support(&self) -> &[usize] {
        &self.exploration_support
    }

    /// `ε_t = t^{-α}`.
    pub fn exploration_probability(&self, t: u64) -> f64 {
        (t as f64).powf(-self.alpha)
    }

    /// `argmin_a N_a - W_a`, smallest index on ties.
    pub fn most_undersampled(&self) -> usize {
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for (a, (&n, &w)) in self.counts.iter().zip(&self.target_mass).enumerate() {
            let v = n as f64 - w;
            if v < best_val {
                best = a;
                best_val = v;
            }
        }
        best
    }

    /// Draws the round-`t` action: uniform over the exploration support with
    /// probability `ε_t`, otherwise the most under-sampled action.
    pub fn select_action<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> (usize, bool) {
        let eps = self.exploration_probability(t);
        if rng.gen::<f64>() < eps {
            let i = rng.gen_range(0..self.exploration_support.len());
            (self.exploration_support[i], false)
        } else {
            (self.most_undersampled(), true)
        }
    }

    /// Books a tracking round that played `a` under target `w_star`.
    pub fn record_tracking(&mut self, a: usize, w_star: &[f64]) {
        for (m, w) in self.target_mass.iter_mut().zip(w_star) {
            *m += w;
        }
        self.counts[a] += 1;
        self.tracking_rounds += 1;
    }
}

/// Greedy spanning subset of `candidates`, visited in the given order.
fn spanning_subset(view: &InstanceView, candidates: &[usize]) -> Vec<usize> {
    let d = view.dim();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut chosen = Vec::with_capacity(d);
    for &a in candidates {
        if chosen.len() == d {
            break;
        }
        let mut r = view.feature(a).clone();
        let scale = r.norm();
        if scale == 0.0 {
            continue;
        }
        for b in &basis {
            let c = b.dot(&r);
            r -= b * c;
        }
        let n = r.norm();
        if n > 1e-9 * scale {
            basis.push(r / n);
            chosen.push(a);
        }
    }
    chosen
}

/// Spanning subset used for warm-up and forced exploration: the mode's
/// actions in index order, or cheapest first for the cost-aware mode.
pub fn exploration_support(view: &InstanceView, mode: Mode) -> Result<Vec<usize>> {
    let mut cands = mode.actions(view);
    if mode == Mode::CostAware {
        let costs = view.action_costs();
        cands.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    }
    let chosen = spanning_subset(view, &cands);
    if chosen.len() < view.dim() {
        return Err(Error::NotIdentifiable(format!(
            "{} actions span only {} of {} dimensions",
            mode,
            chosen.len(),
            view.dim()
        )));
    }
    Ok(chosen)
}

/// Round-robin order of the warm-up; repeated until the information matrix
/// is positive definite.
pub fn warmup_sequence(view: &InstanceView, mode: Mode) -> Result<Vec<Action>> {
    Ok(exploration_support(view, mode)?
        .into_iter()
        .map(|a| view.actions()[a])
        .collect())
}

/// `argmax_i x_iᵀθ̂`, smallest index on ties.
pub fn recommend(theta_hat: &DVector<f64>, view: &InstanceView) -> usize {
    view.argmax_arm(theta_hat)
}

/// `(reward, dueling, total)` spend of the logged queries, accumulated in
/// round order.
pub fn cost_breakdown(log: &ObservationLog, view: &InstanceView) -> Result<(f64, f64, f64)> {
    let costs = view.action_costs();
    let mut reward = 0.0;
    let mut dueling = 0.0;
    for r in log.records() {
        let c = costs[view.action_index(r.action)?];
        match r.action.modality() {
            Modality::Reward => reward += c,
            Modality::Dueling => dueling += c,
        }
    }
    Ok((reward, dueling, reward + dueling))
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub t: u64,
    pub action: String,
    pub z: f64,
    pub was_tracking: bool,
    pub beta: Option<f64>,
    pub min_certificate_value: Option<f64>,
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub mode: Mode,
    pub seed: u64,
    /// Number of queries made before stopping.
    pub stopping_round: u64,
    pub recommended: usize,
    pub correct: bool,
    pub converged: bool,
    pub total_cost: f64,
    pub reward_cost: f64,
    pub dueling_cost: f64,
    pub reward_queries: u64,
    pub dueling_queries: u64,
    pub warmup_rounds: u64,
    pub exploration_rounds: u64,
    pub beta: f64,
    pub min_certificate_value: Option<f64>,
    pub theta_hat: Vec<f64>,
    #[serde(skip)]
    pub log: ObservationLog,
}

struct Designer {
    subset: Vec<usize>,
    costs: Option<Vec<f64>>,
    warm: Option<WarmStart>,
    last_best: Option<usize>,
    since_full: u64,
}

impl Designer {
    fn new(view: &InstanceView, mode: Mode) -> Self {
        let costs = (mode == Mode::CostAware).then(|| unit_mean_costs(view.action_costs()));
        Self {
            subset: mode.actions(view),
            costs,
            warm: None,
            last_best: None,
            since_full: 0,
        }
    }

    /// Target proportions over all actions and the design objective.
    fn target(
        &mut self,
        view: &InstanceView,
        theta: &DVector<f64>,
        i_hat: usize,
        cfg: &AlgoConfig,
    ) -> Result<(Vec<f64>, f64)> {
        let problem = DesignProblem::hybrid(view, theta, i_hat, &self.subset, self.costs.as_deref())?;
        let full = self.warm.is_none()
            || self.last_best != Some(i_hat)
            || self.since_full + 1 >= cfg.refresh.full_every;
        let fw = if full {
            self.since_full = 0;
            cfg.fw
        } else {
            self.since_full += 1;
            FwConfig {
                max_iterations: cfg.refresh.warm_iterations,
                ..cfg.fw
            }
        };
        if self.last_best != Some(i_hat) {
            if let Some(w) = &mut self.warm {
                w.iteration = 0;
            }
        }
        self.last_best = Some(i_hat);
        let sol = problem.solve(&fw, self.warm.as_ref())?;
        let q = sol.weights.as_slice();
        let local = match &self.costs {
            Some(c) => {
                let sub: Vec<f64> = self.subset.iter().map(|&a| c[a]).collect();
                intensities_from_q(q, &sub)?.1.as_slice().to_vec()
            }
            None => q.to_vec(),
        };
        let mut w = vec![0.0; view.num_actions()];
        for (&a, &x) in self.subset.iter().zip(&local) {
            w[a] = x;
        }
        let phi = sol.objective;
        self.warm = Some(sol.warm);
        Ok((w, phi))
    }
}

fn mle(stats: &ActionStats, view: &InstanceView, cfg: &MleConfig, start: &DVector<f64>) -> Result<DVector<f64>> {
    let mut c = cfg.clone();
    c.initial_point = Some(start.clone());
    match constrained_mle_stats(stats, view, &c) {
        Ok(out) => Ok(out.theta),
        Err(Error::Convergence { best, .. }) => Ok(best),
        Err(e) => Err(e),
    }
}

/// One run of the sampler until the certificate holds or `max_rounds`
/// queries have been made. `trace`, when given, receives one CSV row per
/// query.
pub fn run<E: Observe, R: Rng + ?Sized>(
    instance: &HybridInstance,
    env: &mut E,
    config: &AlgoConfig,
    rng: &mut R,
    trace: Option<&mut dyn Write>,
) -> Result<RunResult> {
    config.validate()?;
    let view = instance.view();
    let mode = config.mode;
    let support = exploration_support(view, mode)?;
    let n = view.num_actions();
    let d = view.dim();
    let mut tracker = TrackingState::new(n, support.clone(), config.alpha)?;
    let mut designer = Designer::new(view, mode);
    let feasible = mode.actions(view);

    let mut writer = trace.map(csv::Writer::from_writer);
    let mut log = ObservationLog::new();
    let mut stats = ActionStats::new(n);
    let mut theta = DVector::zeros(d);
    let mut t: u64 = 0;
    let mut exploration_rounds = 0;

    let mut query = |a: usize,
                     t: u64,
                     log: &mut ObservationLog,
                     stats: &mut ActionStats,
                     row: TraceRow,
                     writer: &mut Option<csv::Writer<&mut dyn Write>>|
     -> Result<()> {
        let action = view.actions()[a];
        let z = env.observe(action);
        log.push(view, t, action, z)?;
        stats.add(a, z);
        if let Some(w) = writer {
            w.serialize(TraceRow { z, ..row })?;
        }
        Ok(())
    };

    // warm-up
    let mut warm_done = false;
    'warm: while !warm_done {
        for &a in &support {
            if t >= config.max_rounds {
                break 'warm;
            }
            t += 1;
            let row = TraceRow {
                t,
                action: view.actions()[a].to_string(),
                z: 0.0,
                was_tracking: false,
                beta: None,
                min_certificate_value: None,
                phi: None,
            };
            query(a, t, &mut log, &mut stats, row, &mut writer)?;
            theta = mle(&stats, view, &config.mle, &theta)?;
            let info = crate::confidence::info_matrix_stats(&stats, view, &theta);
            if linalg::min_eigenvalue(&info) > WARMUP_EIGENVALUE {
                warm_done = true;
                break;
            }
        }
    }
    let warmup_rounds = t;

    let mut converged = false;
    let mut state: Option<ConfidenceState> = None;
    let mut last_cert = None;
    if warm_done {
        loop {
            theta = mle(&stats, view, &config.mle, &theta)?;
            let st = ConfidenceState::from_stats(&stats, view, theta.clone(), config.delta)?;
            let i_hat = recommend(&theta, view);
            let cert = st.min_certificate_value(view, i_hat);
            last_cert = cert;
            state = Some(st);
            if matches!(cert, Some(v) if v > 0.0) {
                converged = true;
                break;
            }
            if t >= config.max_rounds {
                break;
            }
            t += 1;
            let (a, tracked, phi) = if mode == Mode::RandomHybrid {
                (feasible[rng.gen_range(0..feasible.len())], false, None)
            } else {
                let (w, phi) = designer.target(view, &theta, i_hat, config)?;
                let (a, tracked) = tracker.select_action(t, rng);
                if tracked {
                    tracker.record_tracking(a, &w);
                } else {
                    exploration_rounds += 1;
                }
                (a, tracked, Some(phi))
            };
            let row = TraceRow {
                t,
                action: view.actions()[a].to_string(),
                z: 0.0,
                was_tracking: tracked,
                beta: state.as_ref().map(|s| s.beta()),
                min_certificate_value: cert,
                phi,
            };
            query(a, t, &mut log, &mut stats, row, &mut writer)?;
        }
    }
    if let Some(w) = &mut writer {
        w.flush()?;
    }

    let recommended = recommend(&theta, view);
    let best = instance.best_arm_and_gaps()?.index;
    let (reward_cost, dueling_cost, total_cost) = cost_breakdown(&log, view)?;
    Ok(RunResult {
        mode,
        seed: 0,
        stopping_round: t,
        recommended,
        correct: recommended == best,
        converged,
        total_cost,
        reward_cost,
        dueling_cost,
        reward_queries: log.count_reward() as u64,
        dueling_queries: log.count_dueling() as u64,
        warmup_rounds,
        exploration_rounds,
        beta: state.as_ref().map_or(f64::NAN, |s| s.beta()),
        min_certificate_value: last_cert,
        theta_hat: theta.iter().copied().collect(),
        log,
    })
}

/// Re-derives the stopping certificate of a finished run from its log alone.
pub fn verify_certificate(instance: &HybridInstance, result: &RunResult, delta: f64) -> Result<bool> {
    let view = instance.view();
    let stats = result.log.stats(view)?;
    let theta = DVector::from_vec(result.theta_hat.clone());
    let st = ConfidenceState::from_stats(&stats, view, theta.clone(), delta)?;
    let i_hat = recommend(&theta, view);
    Ok(i_hat == result.recommended && st.certify_best(view, i_hat))
}
