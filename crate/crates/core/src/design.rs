//! Sampling designs: the information matrix `A(w, θ)`, the minimax width
//! objective, a Frank–Wolfe solver over the action simplex, and the
//! characteristic times built on top of it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::problem::{Action, HybridInstance, InstanceView, Modality};

/// Relative tolerance under which two competitor widths count as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// A point of the action simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignWeights {
    weights: Vec<f64>,
}

impl DesignWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("design weights must be non-empty"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("design weights must be finite and non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(invalid(format!("design weights sum to {sum}, expected 1")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn vertex(n: usize, i: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[i] = 1.0;
        Self { weights }
    }

    /// Normalises a non-negative vector with positive sum.
    pub(crate) fn normalized(v: &[f64]) -> Self {
        let sum: f64 = v.iter().sum();
        Self {
            weights: v.iter().map(|x| x / sum).collect(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Cost-normalised sampling intensities `p ≥ 0` with `⟨c, p⟩ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CostDesign {
    intensities: Vec<f64>,
}

impl CostDesign {
    pub fn new(intensities: Vec<f64>, costs: &[f64]) -> Result<Self> {
        if intensities.len() != costs.len() {
            return Err(invalid("intensities and costs differ in length"));
        }
        if intensities.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid("intensities must be finite and non-negative"));
        }
        let spend: f64 = intensities.iter().zip(costs).map(|(p, c)| p * c).sum();
        if (spend - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(invalid(format!("cost-weighted intensities sum to {spend}, expected 1")));
        }
        Ok(Self { intensities })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.intensities
    }

    /// `p / Σ p`, the proportions tracked by the cost-aware sampler.
    pub fn proportions(&self) -> DesignWeights {
        DesignWeights::normalized(&self.intensities)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FwConfig {
    pub max_iterations: usize,
    /// Stop once `(upper - lower) / upper` falls below this.
    pub relative_tolerance: f64,
    /// Ridge added to near-singular design matrices before inversion.
    pub ridge: f64,
}

impl Default for FwConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            relative_tolerance: 1e-3,
            ridge: linalg::RIDGE,
        }
    }
}

impl FwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be positive"));
        }
        if !(self.relative_tolerance > 0.0) {
            return Err(invalid("relative_tolerance must be positive"));
        }
        if !(0.0..=linalg::RIDGE_BAND).contains(&self.ridge) {
            return Err(invalid(format!("ridge must lie in [0, 1e-8], got {}", self.ridge)));
        }
        Ok(())
    }
}

/// How a singular design matrix is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularPolicy {
    /// `+∞` whenever the smallest eigenvalue is at or below the threshold.
    Strict,
    /// Pseudo-inverse widths; `+∞` only for directions outside the range.
    RangeRestricted,
}

/// State carried between successive solves of closely related problems.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub weights: Vec<f64>,
    /// Iterations already spent, so fallback steps keep shrinking.
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct DesignSolution {
    pub weights: DesignWeights,
    pub objective: f64,
    /// Certified lower bound on the optimal objective.
    pub lower_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warm: WarmStart,
}

/// `min_w max_i g_iᵀ (Σ_a w_a ω_a x_a x_aᵀ)⁻¹ g_i` over the simplex.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    features: Vec<DVector<f64>>,
    info_weights: Vec<f64>,
    directions: Vec<DVector<f64>>,
    policy: SingularPolicy,
}

struct Eval {
    a: DMatrix<f64>,
    h: Vec<DVector<f64>>,
    f: Vec<f64>,
    phi: f64,
    active: usize,
}

/// Widths along `w + γ δ`: with `A(w) = L Lᵀ` and
/// `L⁻¹ B(δ) L⁻ᵀ = Q Λ Qᵀ`, each width is `Σ_k r_k² / (1 + γ Λ_k)`.
struct Segment {
    lambda: Vec<f64>,
    r2: Vec<Vec<f64>>,
}

impl Segment {
    fn value(&self, gamma: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for r2 in &self.r2 {
            let mut s = 0.0;
            for (rk, lk) in r2.iter().zip(&self.lambda) {
                let den = 1.0 + gamma * lk;
                if den <= 0.0 {
                    if *rk > 0.0 {
                        return f64::INFINITY;
                    }
                    continue;
                }
                s += rk / den;
            }
            worst = worst.max(s);
        }
        if worst.is_nan() {
            f64::INFINITY
        } else {
            worst
        }
    }
}

impl DesignProblem {
    pub fn new(
        features: Vec<DVector<f64>>,
        info_weights: Vec<f64>,
        directions: Vec<DVector<f64>>,
        policy: SingularPolicy,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(invalid("design problem needs at least one action"));
        }
        if directions.is_empty() {
            return Err(invalid("design problem needs at least one direction"));
        }
        if features.len() != info_weights.len() {
            return Err(invalid("features and information weights differ in length"));
        }
        let d = features[0].len();
        if features.iter().chain(&directions).any(|x| x.len() != d) {
            return Err(invalid("features and directions must share one dimension"));
        }
        if info_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("information weights must be finite and non-negative"));
        }
        Ok(Self {
            features,
            info_weights,
            directions,
            policy,
        })
    }

    /// The hybrid design problem at `theta` against the empirical best arm
    /// `i_hat`, restricted to the action indices in `subset`. With `costs`,
    /// each information weight is divided by the action's cost so the
    /// solution lives in the `q = c ⊙ p` coordinates.
    pub fn hybrid(
        view: &InstanceView,
        theta: &DVector<f64>,
        i_hat: usize,
        subset: &[usize],
        costs: Option<&[f64]>,
    ) -> Result<Self> {
        check_theta(view, theta)?;
        check_arm(view, i_hat)?;
        let weights = conservative_weights(view, theta);
        let mut feats = Vec::with_capacity(subset.len());
        let mut ws = Vec::with_capacity(subset.len());
        for &a in subset {
            if a >= view.num_actions() {
                return Err(invalid(format!("action index {a} out of range")));
            }
            let scale = match costs {
                Some(c) => {
                    if !(c[a] > 0.0) {
                        return Err(invalid("costs must be positive"));
                    }
                    1.0 / c[a]
                }
                None => 1.0,
            };
            feats.push(view.feature(a).clone());
            ws.push(weights[a] * scale);
        }
        Self::new(feats, ws, competitor_directions(view, i_hat, None), SingularPolicy::Strict)
    }

    pub fn num_actions(&self) -> usize {
        self.features.len()
    }

    pub fn num_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn info_weights(&self) -> &[f64] {
        &self.info_weights
    }

    pub fn matrix(&self, w: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut a = DMatrix::zeros(d, d);
        for ((x, &om), &wa) in self.features.iter().zip(&self.info_weights).zip(w) {
            if wa > 0.0 {
                linalg::add_outer(&mut a, x, wa * om);
            }
        }
        a
    }

    /// `max_i ‖g_i‖²_{A(w)⁻¹}`, `+∞` when the policy declares `A(w)` singular.
    pub fn objective(&self, w: &[f64]) -> f64 {
        self.evaluate(w, linalg::RIDGE).map_or(f64::INFINITY, |e| e.phi)
    }

    /// Per-direction widths `‖g_i‖²_{A(w)⁻¹}`.
    pub fn widths(&self, w: &[f64]) -> Option<Vec<f64>> {
        self.evaluate(w, linalg::RIDGE).map(|e| e.f)
    }

    fn evaluate(&self, w: &[f64], ridge: f64) -> Option<Eval> {
        let a = self.matrix(w);
        let inv = match self.policy {
            SingularPolicy::Strict => linalg::spd_inverse_with_ridge(&a, ridge)?,
            SingularPolicy::RangeRestricted => {
                let (pinv, null) = linalg::pseudo_inverse(&a);
                for g in &self.directions {
                    if linalg::quad_form(&null, g) > 1e-18 * g.norm_squared().max(1e-300) {
                        return None;
                    }
                }
                pinv
            }
        };
        let h: Vec<DVector<f64>> = self.directions.iter().map(|g| &inv * g).collect();
        let f: Vec<f64> = self.directions.iter().zip(&h).map(|(g, hi)| g.dot(hi)).collect();
        let phi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !phi.is_finite() {
            return None;
        }
        let active = f
            .iter()
            .position(|&v| v >= phi - TIE_TOLERANCE * phi.abs())
            .unwrap_or(0);
        Some(Eval { a, h, f, phi, active })
    }

    /// `Σ_a δ_a ω_a x_a x_aᵀ` for a signed `δ`.
    fn signed_matrix(&self, delta: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut b = DMatrix::zeros(d, d);
        for ((x, &om), &da) in self.features.iter().zip(&self.info_weights).zip(delta) {
            if da != 0.0 {
                linalg::add_outer(&mut b, x, da * om);
            }
        }
        b
    }

    fn segment(&self, a_w: &DMatrix<f64>, delta: &[f64]) -> Option<Segment> {
        if self.policy != SingularPolicy::Strict {
            return None;
        }
        let chol = a_w.clone().cholesky()?;
        let l = chol.l();
        let b = self.signed_matrix(delta);
        let half = l.solve_lower_triangular(&b)?;
        let mut m = l.solve_lower_triangular(&half.transpose())?;
        linalg::symmetrize(&mut m);
        let eig = nalgebra::SymmetricEigen::new(m);
        let qt = eig.eigenvectors.transpose();
        let r2 = self
            .directions
            .iter()
            .map(|g| {
                let z = l.solve_lower_triangular(g).map(|y| &qt * y);
                z.map(|z| z.iter().map(|v| v * v).collect::<Vec<f64>>())
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Segment {
            lambda: eig.eigenvalues.iter().copied().collect(),
            r2,
        })
    }

    /// Exact line search of the objective on `w + γ δ`, `γ ∈ [0, hi]`.
    fn line_search(&self, w: &[f64], ev: &Eval, delta: &[f64], hi: f64) -> (f64, f64) {
        match self.segment(&ev.a, delta) {
            Some(seg) => golden_section(|g| seg.value(g), 0.0, hi),
            None => golden_section(|g| self.objective(&shift(w, delta, g)), 0.0, hi),
        }
    }

    /// Frank–Wolfe over the simplex for a max of convex widths. Each
    /// iteration linearises every width at the current point, minimises the
    /// max of those linearisations over the simplex (a small matrix game
    /// whose value is a lower bound on the optimum), and line-searches the
    /// true objective toward that target, toward the best vertex for the
    /// active direction, and away from the weakest supported action. When
    /// none of these improves, the open-loop `2 / (k + 2)` step is taken.
    /// The best iterate is returned.
    pub fn solve(&self, config: &FwConfig, warm: Option<&WarmStart>) -> Result<DesignSolution> {
        config.validate()?;
        let n = self.num_actions();
        let m = self.num_directions();
        let uniform = vec![1.0 / n as f64; n];

        let mut w = match warm {
            Some(ws) if ws.weights.len() == n && DesignWeights::new(ws.weights.clone()).is_ok() => {
                ws.weights.clone()
            }
            _ => uniform.clone(),
        };
        let mut ev = match self.evaluate(&w, config.ridge) {
            Some(e) => e,
            None => {
                w = mix(&w, &uniform, 0.5);
                self.evaluate(&w, config.ridge).ok_or_else(|| {
                    Error::NotIdentifiable("the action features do not span the competitor directions".into())
                })?
            }
        };
        let offset = warm.map_or(0, |ws| ws.iteration);

        let mut best_w = w.clone();
        let mut best_phi = ev.phi;
        let mut best_lb = f64::NEG_INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        // s[i * n + a] = ω_a (g_iᵀ A⁻¹ x_a)², the decrease rate of width i along e_a
        let mut s = vec![0.0; m * n];
        let mut payoff = vec![0.0; m * n];

        loop {
            if ev.phi < best_phi {
                best_phi = ev.phi;
                best_w.clone_from(&w);
            }
            for (i, hi) in ev.h.iter().enumerate() {
                for (a, x) in self.features.iter().enumerate() {
                    let p = hi.dot(x);
                    s[i * n + a] = self.info_weights[a] * p * p;
                    payoff[i * n + a] = 2.0 * ev.f[i] - s[i * n + a];
                }
            }
            let (lam, target) = solve_matrix_game(&payoff, m, n);
            let lam_scores: Vec<f64> = (0..n).map(|a| (0..m).map(|i| lam[i] * s[i * n + a]).sum()).collect();
            let lin: f64 = lam.iter().zip(&ev.f).map(|(l, f)| l * f).sum();
            best_lb = best_lb.max(2.0 * lin - max_of(&lam_scores));

            if best_phi - best_lb <= config.relative_tolerance * best_phi.abs() {
                converged = true;
                break;
            }
            if iterations >= config.max_iterations {
                break;
            }
            iterations += 1;
            let k = offset + iterations;

            let top = argmax(&s[ev.active * n..(ev.active + 1) * n]);
            let toward = |t: &[f64]| -> Vec<f64> { t.iter().zip(&w).map(|(a, b)| a - b).collect() };
            // (direction, largest step, action emptied at the largest step)
            let mut cands: Vec<(Vec<f64>, f64, Option<usize>)> = vec![(toward(&target), 1.0, None)];
            cands.push((toward(&unit(n, top)), 1.0, None));
            let away = (0..n)
                .filter(|&a| w[a] > 0.0 && w[a] < 1.0)
                .min_by(|&a, &b| lam_scores[a].total_cmp(&lam_scores[b]));
            if let Some(u) = away {
                let from_u: Vec<f64> = w.iter().enumerate().map(|(a, x)| x - if a == u { 1.0 } else { 0.0 }).collect();
                cands.push((from_u, w[u] / (1.0 - w[u]), Some(u)));
                let mut pair = target.clone();
                pair[u] -= 1.0;
                cands.push((pair, w[u], Some(u)));
            }
            let mut chosen: Option<(usize, f64, f64)> = None;
            for (c, (delta, hi, _)) in cands.iter().enumerate() {
                let (g, v) = self.line_search(&w, &ev, delta, *hi);
                if v < ev.phi * (1.0 - 1e-15) && chosen.is_none_or(|(_, _, bv)| v < bv) {
                    chosen = Some((c, g, v));
                }
            }
            let mut next = match chosen {
                Some((c, g, _)) => {
                    let (delta, hi, drop) = &cands[c];
                    let mut next = shift(&w, delta, g);
                    if let Some(u) = drop {
                        if g >= *hi * (1.0 - 1e-12) {
                            next[*u] = 0.0;
                        }
                    }
                    next
                }
                None => mix(&w, &target, 2.0 / (k as f64 + 2.0)),
            };
            normalize(&mut next);
            match self.evaluate(&next, config.ridge) {
                Some(e) => {
                    w = next;
                    ev = e;
                }
                None => break,
            }
        }
        Ok(DesignSolution {
            weights: DesignWeights::normalized(&best_w),
            objective: best_phi,
            lower_bound: best_lb,
            iterations,
            converged,
            warm: WarmStart {
                weights: best_w,
                iteration: offset + iterations,
            },
        })
    }
}

fn unit(m: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[i] = 1.0;
    v
}

/// `w + γ δ`, clipped at zero.
fn shift(w: &[f64], delta: &[f64], gamma: f64) -> Vec<f64> {
    w.iter().zip(delta).map(|(a, b)| (a + gamma * b).max(0.0)).collect()
}

/// `w + γ (t - w)`, clipped at zero.
fn mix(w: &[f64], t: &[f64], gamma: f64) -> Vec<f64> {
    w.iter()
        .zip(t)
        .map(|(a, b)| ((1.0 - gamma) * a + gamma * b).max(0.0))
        .collect()
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= s;
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the largest entry, smallest index on ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Optimal strategies of the zero-sum game with payoff `p[i * n + a]`,
/// row player maximising over `i`, column player minimising over `a`.
/// Solved as `max Σ y  s.t.  Q y ≤ 1, y ≥ 0` on the payoff shifted into
/// `[1, 2]`, by a dense tableau simplex with Bland's rule.
fn solve_matrix_game(p: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return (unit(m, 0), unit(n, 0));
    }
    let cols = n + m + 1;
    let rhs = n + m;
    let mut t = vec![0.0; (m + 1) * cols];
    for i in 0..m {
        for a in 0..n {
            t[i * cols + a] = 1.0 + (p[i * n + a] - lo) / span;
        }
        t[i * cols + n + i] = 1.0;
        t[i * cols + rhs] = 1.0;
    }
    for a in 0..n {
        t[m * cols + a] = -1.0;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    const EPS: f64 = 1e-12;
    for _ in 0..50 * (n + m) {
        let Some(enter) = (0..n + m).find(|&j| t[m * cols + j] < -EPS) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let c = t[i * cols + enter];
            if c > EPS {
                let ratio = t[i * cols + rhs] / c;
                let better = match leave {
                    None => true,
                    Some(l) => ratio < best_ratio - EPS || (ratio <= best_ratio + EPS && basis[i] < basis[l]),
                };
                if better {
                    leave = Some(i);
                    best_ratio = ratio;
                }
            }
        }
        let Some(r) = leave else { break };
        let piv = t[r * cols + enter];
        for j in 0..cols {
            t[r * cols + j] /= piv;
        }
        for i in 0..=m {
            if i == r {
                continue;
            }
            let f = t[i * cols + enter];
            if f != 0.0 {
                for j in 0..cols {
                    t[i * cols + j] -= f * t[r * cols + j];
                }
            }
        }
        basis[r] = enter;
    }
    let mut y = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            y[b] = t[i * cols + rhs].max(0.0);
        }
    }
    let u: Vec<f64> = (0..m).map(|i| t[m * cols + n + i].max(0.0)).collect();
    let sy: f64 = y.iter().sum();
    let su: f64 = u.iter().sum();
    let col = if sy > 0.0 { y.iter().map(|v| v / sy).collect() } else { unit(n, 0) };
    let row = if su > 0.0 { u.iter().map(|v| v / su).collect() } else { unit(m, 0) };
    (row, col)
}

fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let mut best = (lo, f(lo));
    let fh = f(hi);
    if fh < best.1 {
        best = (hi, fh);
    }
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..90 {
        if (b - a).abs() <= 1e-16 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

fn check_theta(view: &InstanceView, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != view.dim() {
        return Err(invalid(format!("theta has dimension {}, expected {}", theta.len(), view.dim())));
    }
    Ok(())
}

fn check_arm(view: &InstanceView, i: usize) -> Result<()> {
    if i >= view.num_arms() {
        return Err(invalid(format!("arm index {i} out of range")));
    }
    if view.num_arms() < 2 {
        return Err(invalid("design needs at least two arms"));
    }
    Ok(())
}

/// `μ'(x_aᵀθ) / (2 (1 + S ρ_a M) ζ)` per action.
pub fn conservative_weights(view: &InstanceView, theta: &DVector<f64>) -> Vec<f64> {
    view.actions()
        .iter()
        .enumerate()
        .map(|(idx, &a)| {
            let eta = view.feature(idx).dot(theta);
            view.family_of(a).mu_prime(eta) * view.information_discount(a)
        })
        .collect()
}

/// Undiscounted Fisher weights `μ'(x_aᵀθ) / ζ` per action.
pub fn fisher_weights(view: &InstanceView, theta: &DVector<f64>) -> Vec<f64> {
    view.actions()
        .iter()
        .enumerate()
        .map(|(idx, &a)| {
            let fam = view.family_of(a);
            fam.mu_prime(view.feature(idx).dot(theta)) / fam.dispersion_scale()
        })
        .collect()
}

/// `x_{i_hat} - x_i` for every `i ≠ i_hat`, divided by `gaps[i]` if given.
pub fn competitor_directions(view: &InstanceView, i_hat: usize, gaps: Option<&[f64]>) -> Vec<DVector<f64>> {
    let xc = view.arm(i_hat);
    (0..view.num_arms())
        .filter(|&i| i != i_hat)
        .map(|i| {
            let g = xc - view.arm(i);
            match gaps {
                Some(gp) => g / gp[i],
                None => g,
            }
        })
        .collect()
}

fn all_actions(view: &InstanceView) -> Vec<usize> {
    (0..view.num_actions()).collect()
}

fn check_weights(view: &InstanceView, w: &DesignWeights) -> Result<()> {
    if w.len() != view.num_actions() {
        return Err(invalid(format!(
            "design has {} weights, expected {}",
            w.len(),
            view.num_actions()
        )));
    }
    Ok(())
}

/// `A(w, θ) = Σ_a w_a μ'(x_aᵀθ) x_a x_aᵀ / (2 (1 + S ρ_a M) ζ)`.
pub fn design_matrix(w: &DesignWeights, theta: &DVector<f64>, view: &InstanceView) -> Result<DMatrix<f64>> {
    check_weights(view, w)?;
    check_theta(view, theta)?;
    let weights = conservative_weights(view, theta);
    let d = view.dim();
    let mut a = DMatrix::zeros(d, d);
    for (idx, (&wa, om)) in w.as_slice().iter().zip(weights).enumerate() {
        if wa > 0.0 {
            linalg::add_outer(&mut a, view.feature(idx), wa * om);
        }
    }
    Ok(a)
}

/// `max_{i ≠ i_hat} ‖x_{i_hat} - x_i‖²_{A(w,θ)⁻¹}`, `+∞` if `A(w, θ)` is singular.
pub fn minimax_objective(theta: &DVector<f64>, i_hat: usize, w: &DesignWeights, view: &InstanceView) -> Result<f64> {
    check_weights(view, w)?;
    let p = DesignProblem::hybrid(view, theta, i_hat, &all_actions(view), None)?;
    Ok(p.objective(w.as_slice()))
}

/// Minimax design over all actions, initialised at `warm_start` or uniform.
pub fn frank_wolfe_design(
    theta: &DVector<f64>,
    i_hat: usize,
    view: &InstanceView,
    config: &FwConfig,
    warm_start: Option<&DesignWeights>,
) -> Result<DesignSolution> {
    let p = DesignProblem::hybrid(view, theta, i_hat, &all_actions(view), None)?;
    let warm = warm_start.map(|w| WarmStart {
        weights: w.as_slice().to_vec(),
        iteration: 0,
    });
    p.solve(config, warm.as_ref())
}

#[derive(Debug, Clone)]
pub struct CostDesignSolution {
    pub intensities: CostDesign,
    pub proportions: DesignWeights,
    /// The solve in the `q = c ⊙ p` coordinates, objective in cost units.
    pub solution: DesignSolution,
}

fn check_costs(view: &InstanceView, costs: &[f64]) -> Result<()> {
    if costs.len() != view.num_actions() {
        return Err(invalid(format!("{} costs given, expected {}", costs.len(), view.num_actions())));
    }
    if costs.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(invalid("costs must be positive and finite"));
    }
    Ok(())
}

/// Costs divided by their mean, rounded to single precision so that
/// rescaled cost vectors lead to the same solve.
pub fn unit_mean_costs(costs: &[f64]) -> Vec<f64> {
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    costs.iter().map(|c| (c / mean) as f32 as f64).collect()
}

/// Maps a solution in `q` coordinates back to intensities and proportions.
pub fn intensities_from_q(q: &[f64], costs: &[f64]) -> Result<(CostDesign, DesignWeights)> {
    let p: Vec<f64> = q.iter().zip(costs).map(|(q, c)| q / c).collect();
    let proportions = if costs.iter().all(|&c| c == costs[0]) {
        DesignWeights { weights: q.to_vec() }
    } else {
        DesignWeights::normalized(&p)
    };
    let spend: f64 = p.iter().zip(costs).map(|(p, c)| p * c).sum();
    let p = p.into_iter().map(|x| x / spend).collect();
    Ok((CostDesign::new(p, costs)?, proportions))
}

/// Cost-normalised design, solved in `q = c ⊙ p` so the feasible set is the
/// simplex. Costs are rescaled to unit mean before solving, which makes the
/// proportions invariant to the currency; `warm_start` is given in `q`
/// coordinates.
pub fn cost_design(
    theta: &DVector<f64>,
    i_hat: usize,
    view: &InstanceView,
    costs: &[f64],
    config: &FwConfig,
    warm_start: Option<&DesignWeights>,
) -> Result<CostDesignSolution> {
    check_costs(view, costs)?;
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    let unit_costs = unit_mean_costs(costs);
    let p = DesignProblem::hybrid(view, theta, i_hat, &all_actions(view), Some(&unit_costs))?;
    let warm = warm_start.map(|w| WarmStart {
        weights: w.as_slice().to_vec(),
        iteration: 0,
    });
    let mut solution = p.solve(config, warm.as_ref())?;
    solution.objective *= mean;
    solution.lower_bound *= mean;
    let (intensities, proportions) = intensities_from_q(solution.weights.as_slice(), &unit_costs)?;
    let spend: f64 = intensities.as_slice().iter().zip(costs).map(|(p, c)| p * c).sum();
    let intensities = CostDesign::new(intensities.as_slice().iter().map(|p| p / spend).collect(), costs)?;
    Ok(CostDesignSolution {
        intensities,
        proportions,
        solution,
    })
}

/// A design-based time constant together with the design attaining it.
#[derive(Debug, Clone, Serialize)]
pub struct CharacteristicTime {
    pub value: f64,
    /// Optimal objective before normalisation.
    pub objective: f64,
    /// Design weights, or intensities for cost-normalised times.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `min_w max_{i ≠ i*} ‖x_{i*} - x_i‖²_{A(w,θ*)⁻¹} / Δ_min²`.
pub fn characteristic_time(instance: &HybridInstance, config: &FwConfig) -> Result<CharacteristicTime> {
    let best = instance.best_arm_and_gaps()?;
    let sol = frank_wolfe_design(instance.theta_star(), best.index, instance.view(), config, None)?;
    Ok(CharacteristicTime {
        value: sol.objective / (best.gap_min * best.gap_min),
        objective: sol.objective,
        weights: sol.weights.as_slice().to_vec(),
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// The cost-normalised analogue of [`characteristic_time`].
pub fn cost_characteristic_time(
    instance: &HybridInstance,
    costs: &[f64],
    config: &FwConfig,
) -> Result<CharacteristicTime> {
    let best = instance.best_arm_and_gaps()?;
    let sol = cost_design(instance.theta_star(), best.index, instance.view(), costs, config, None)?;
    Ok(CharacteristicTime {
        value: sol.solution.objective / (best.gap_min * best.gap_min),
        objective: sol.solution.objective,
        weights: sol.intensities.as_slice().to_vec(),
        iterations: sol.solution.iterations,
        converged: sol.solution.converged,
    })
}

/// `2 min_w max_{i ≠ i*} ‖x_{i*} - x_i‖²_{A_F(w,θ*)⁻¹} / Δ_i²` with the
/// undiscounted Fisher matrix `A_F`.
pub fn local_lb_time(instance: &HybridInstance, config: &FwConfig) -> Result<CharacteristicTime> {
    let view = instance.view();
    let best = instance.best_arm_and_gaps()?;
    let p = DesignProblem::new(
        (0..view.num_actions()).map(|a| view.feature(a).clone()).collect(),
        fisher_weights(view, instance.theta_star()),
        competitor_directions(view, best.index, Some(&best.gaps)),
        SingularPolicy::Strict,
    )?;
    let sol = p.solve(config, None)?;
    Ok(CharacteristicTime {
        value: 2.0 * sol.objective,
        objective: sol.objective,
        weights: sol.weights.as_slice().to_vec(),
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// `min_w max_{i ≠ i*} ‖x_{i*} - x_i‖²_{A(w,θ*)^+} / Δ_i²` over the actions
/// of one modality, with pseudo-inverse widths so rank-deficient designs
/// still score directions inside their range.
pub fn single_modality_time(
    instance: &HybridInstance,
    modality: Modality,
    config: &FwConfig,
) -> Result<CharacteristicTime> {
    let view = instance.view();
    let best = instance.best_arm_and_gaps()?;
    let weights = conservative_weights(view, instance.theta_star());
    let subset: Vec<usize> = (0..view.num_actions())
        .filter(|&a| view.actions()[a].modality() == modality)
        .collect();
    let p = DesignProblem::new(
        subset.iter().map(|&a| view.feature(a).clone()).collect(),
        subset.iter().map(|&a| weights[a]).collect(),
        competitor_directions(view, best.index, Some(&best.gaps)),
        SingularPolicy::RangeRestricted,
    )?;
    let sol = p.solve(config, None)?;
    let mut full = vec![0.0; view.num_actions()];
    for (&a, &w) in subset.iter().zip(sol.weights.as_slice()) {
        full[a] = w;
    }
    Ok(CharacteristicTime {
        value: sol.objective,
        objective: sol.objective,
        weights: full,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// `KL(p(·|x_aᵀθ) ‖ p(·|x_aᵀλ)) = (b(x_aᵀλ) - b(x_aᵀθ) - μ(x_aᵀθ) x_aᵀ(λ - θ)) / ζ`.
pub fn kl_action(a: Action, theta: &DVector<f64>, lambda: &DVector<f64>, view: &InstanceView) -> Result<f64> {
    check_theta(view, theta)?;
    check_theta(view, lambda)?;
    let x = view.action_feature(a)?;
    let fam = view.family_of(a);
    let et = x.dot(theta);
    let el = x.dot(lambda);
    let kl = (fam.b(el) - fam.b(et) - fam.mu(et) * (el - et)) / fam.dispersion_scale();
    Ok(kl.max(0.0))
}

/// Closed-form single-modality times `(T_R, T_D)` of the two comparison
/// instances, for the reward and dueling constants `b_c` and `b_d`.
pub fn appendix_d_closed_forms(case: u8, b_c: f64, b_d: f64) -> Result<(f64, f64)> {
    if !(b_c > 0.0 && b_d > 0.0) {
        return Err(invalid("B_c and B_d must be positive"));
    }
    let sp = crate::glm::sigmoid_prime;
    match case {
        1 => {
            let t_r = b_c * (sp(1.0).powf(-0.5) + sp(0.0).powf(-0.5)).powi(2);
            let t_d = b_d / sp(1.0);
            Ok((t_r, t_d))
        }
        2 => {
            let a = 1.0 - 0.1f64.cos();
            let s = 0.1f64.sin();
            let t_r = b_c * (a * sp(1.0).powf(-0.5) + s * sp(0.0).powf(-0.5)).powi(2) / (a * a);
            let t_d = b_d / (sp(a) * a * a);
            Ok((t_r, t_d))
        }
        _ => Err(invalid(format!("case must be 1 or 2, got {case}"))),
    }
}
