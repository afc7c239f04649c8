//! Hybrid bandit instances: arms, the joint reward/dueling action space, the
//! hidden parameter, and the instance generators used by the experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::glm::GlmFamily;

/// Tolerance for best-arm uniqueness and for the spanning check.
pub const DEGENERACY_TOL: f64 = 1e-10;
const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Reward,
    Dueling,
}

/// A query: an absolute reward on one arm or a duel between two arms.
///
/// The derived order puts every reward action before every duel, with
/// lexicographic order inside each group. Tie-breaking relies on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Reward(usize),
    Duel(usize, usize),
}

impl Action {
    pub fn modality(self) -> Modality {
        match self {
            Action::Reward(_) => Modality::Reward,
            Action::Duel(..) => Modality::Dueling,
        }
    }

    /// Bound on the feature norm: 1 for arms, 2 for arm differences.
    pub fn rho(self) -> f64 {
        match self {
            Action::Reward(_) => 1.0,
            Action::Duel(..) => 2.0,
        }
    }

    pub fn duel(j: usize, k: usize) -> Result<Self> {
        if j < k {
            Ok(Action::Duel(j, k))
        } else {
            Err(invalid(format!("duel indices must satisfy j < k, got ({j}, {k})")))
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Reward(i) => write!(f, "reward({i})"),
            Action::Duel(j, k) => write!(f, "duel({j},{k})"),
        }
    }
}

/// All `K` reward actions followed by the `K(K-1)/2` duels in lexicographic order.
pub fn enumerate_actions(k: usize) -> Result<Vec<Action>> {
    if k < 2 {
        return Err(invalid(format!("need at least two arms, got {k}")));
    }
    let mut out: Vec<Action> = (0..k).map(Action::Reward).collect();
    for j in 0..k {
        for l in (j + 1)..k {
            out.push(Action::Duel(j, l));
        }
    }
    Ok(out)
}

/// Per-action acquisition costs: one price per modality, optionally
/// overridden action by action (indexed like [`enumerate_actions`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub reward: f64,
    pub dueling: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_action: Option<Vec<f64>>,
}

impl Default for CostModel {
    fn default() -> Self {
        Self::uniform()
    }
}

impl CostModel {
    pub fn uniform() -> Self {
        Self::per_modality(1.0, 1.0)
    }

    pub fn per_modality(reward: f64, dueling: f64) -> Self {
        Self {
            reward,
            dueling,
            per_action: None,
        }
    }

    /// Cost pair with `reward + dueling = 2` and the given `reward / dueling` ratio.
    pub fn from_ratio(reward_over_dueling: f64) -> Self {
        let dueling = 2.0 / (1.0 + reward_over_dueling);
        Self::per_modality(2.0 - dueling, dueling)
    }

    pub fn costs_for(&self, actions: &[Action]) -> Vec<f64> {
        match &self.per_action {
            Some(v) => v.clone(),
            None => actions
                .iter()
                .map(|a| match a.modality() {
                    Modality::Reward => self.reward,
                    Modality::Dueling => self.dueling,
                })
                .collect(),
        }
    }
}

/// Everything an algorithm may see about an instance. The true parameter is
/// deliberately absent.
#[derive(Debug, Clone)]
pub struct InstanceView {
    arms: Vec<DVector<f64>>,
    radius: f64,
    family_reward: GlmFamily,
    family_dueling: GlmFamily,
    costs: CostModel,
    actions: Vec<Action>,
    features: Vec<DVector<f64>>,
    action_costs: Vec<f64>,
}

impl InstanceView {
    pub fn new(
        arms: Vec<DVector<f64>>,
        radius: f64,
        family_reward: GlmFamily,
        family_dueling: GlmFamily,
        costs: CostModel,
    ) -> Result<Self> {
        let k = arms.len();
        let actions = enumerate_actions(k)?;
        let d = arms[0].len();
        if d == 0 || arms.iter().any(|x| x.len() != d) {
            return Err(invalid("arm features must share a positive dimension"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid(format!("radius S must be positive, got {radius}")));
        }
        let action_costs = costs.costs_for(&actions);
        if action_costs.len() != actions.len() {
            return Err(invalid(format!(
                "per-action cost list has {} entries, expected {}",
                action_costs.len(),
                actions.len()
            )));
        }
        let features = actions.iter().map(|&a| feature_of(&arms, a)).collect();
        Ok(Self {
            arms,
            radius,
            family_reward,
            family_dueling,
            costs,
            actions,
            features,
            action_costs,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn dim(&self) -> usize {
        self.arms[0].len()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn arms(&self) -> &[DVector<f64>] {
        &self.arms
    }

    pub fn arm(&self, i: usize) -> &DVector<f64> {
        &self.arms[i]
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.costs
    }

    pub fn action_costs(&self) -> &[f64] {
        &self.action_costs
    }

    pub fn family_reward(&self) -> &GlmFamily {
        &self.family_reward
    }

    pub fn family_dueling(&self) -> &GlmFamily {
        &self.family_dueling
    }

    pub fn family(&self, m: Modality) -> &GlmFamily {
        match m {
            Modality::Reward => &self.family_reward,
            Modality::Dueling => &self.family_dueling,
        }
    }

    pub fn family_of(&self, a: Action) -> &GlmFamily {
        self.family(a.modality())
    }

    /// Position of `a` in [`InstanceView::actions`].
    pub fn action_index(&self, a: Action) -> Result<usize> {
        self.check_action(a)?;
        let k = self.num_arms();
        Ok(match a {
            Action::Reward(i) => i,
            // offset of row j in the upper triangle, then column
            Action::Duel(j, l) => k + j * (2 * k - j - 1) / 2 + (l - j - 1),
        })
    }

    fn check_action(&self, a: Action) -> Result<()> {
        let k = self.num_arms();
        match a {
            Action::Reward(i) if i < k => Ok(()),
            Action::Duel(j, l) if j < l && l < k => Ok(()),
            _ => Err(invalid(format!("action {a} invalid for {k} arms"))),
        }
    }

    /// `x_i` for a reward action, `x_j - x_k` for a duel.
    pub fn action_feature(&self, a: Action) -> Result<DVector<f64>> {
        self.check_action(a)?;
        Ok(feature_of(&self.arms, a))
    }

    /// Precomputed feature of the action at `idx`.
    pub fn feature(&self, idx: usize) -> &DVector<f64> {
        &self.features[idx]
    }

    /// The self-concordance discount `1 / (2 (1 + S ρ_a M) ζ)` applied to each
    /// action's curvature in the information matrices.
    pub fn information_discount(&self, a: Action) -> f64 {
        let fam = self.family_of(a);
        1.0 / (2.0 * (1.0 + self.radius * a.rho() * fam.sc_constant()) * fam.dispersion_scale())
    }

    pub fn arm_matrix(&self) -> DMatrix<f64> {
        let k = self.num_arms();
        let d = self.dim();
        DMatrix::from_fn(k, d, |i, j| self.arms[i][j])
    }

    /// Empirical best arm under `theta`, smallest index on ties.
    pub fn argmax_arm(&self, theta: &DVector<f64>) -> usize {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, x) in self.arms.iter().enumerate() {
            let v = x.dot(theta);
            if v > best_val {
                best = i;
                best_val = v;
            }
        }
        best
    }
}

fn feature_of(arms: &[DVector<f64>], a: Action) -> DVector<f64> {
    match a {
        Action::Reward(i) => arms[i].clone(),
        Action::Duel(j, k) => &arms[j] - &arms[k],
    }
}

/// A full instance: the algorithm-facing view plus the hidden `θ*`.
#[derive(Debug, Clone)]
pub struct HybridInstance {
    view: InstanceView,
    theta_star: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestArm {
    pub index: usize,
    /// `(x_{i*} - x_i)^T θ*`, zero at the best arm itself.
    pub gaps: Vec<f64>,
    pub gap_min: f64,
}

/// Outcome of the checkable instance assumptions.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub max_arm_norm: f64,
    pub norms_ok: bool,
    pub span_singular_value: f64,
    pub span_ok: bool,
    pub best_arm_gap: f64,
    pub unique_best_ok: bool,
    pub theta_norm: f64,
    pub theta_ok: bool,
    pub costs_ok: bool,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.norms_ok && self.span_ok && self.unique_best_ok && self.theta_ok && self.costs_ok
    }

    fn first_failure(&self) -> Option<Error> {
        if !self.norms_ok {
            return Some(invalid(format!(
                "arm norm {} exceeds 1",
                self.max_arm_norm
            )));
        }
        if !self.span_ok {
            return Some(Error::DegenerateInstance(format!(
                "arm features do not span R^d (smallest singular value {:.3e})",
                self.span_singular_value
            )));
        }
        if !self.theta_ok {
            return Some(invalid(format!(
                "theta_star norm {} exceeds the radius",
                self.theta_norm
            )));
        }
        if !self.costs_ok {
            return Some(invalid("all action costs must be positive"));
        }
        if !self.unique_best_ok {
            return Some(Error::DegenerateInstance(format!(
                "best arm not unique (top-two gap {:.3e})",
                self.best_arm_gap
            )));
        }
        None
    }
}

impl HybridInstance {
    /// Validated constructor.
    pub fn new(view: InstanceView, theta_star: DVector<f64>) -> Result<Self> {
        let inst = Self::new_unchecked(view, theta_star)?;
        match inst.validate().first_failure() {
            Some(e) => Err(e),
            None => Ok(inst),
        }
    }

    /// Only checks shapes; use [`HybridInstance::validate`] to inspect the rest.
    pub fn new_unchecked(view: InstanceView, theta_star: DVector<f64>) -> Result<Self> {
        if theta_star.len() != view.dim() {
            return Err(invalid("theta_star dimension does not match the arms"));
        }
        Ok(Self { view, theta_star })
    }

    pub fn view(&self) -> &InstanceView {
        &self.view
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn with_costs(&self, costs: CostModel) -> Result<Self> {
        let v = &self.view;
        let view = InstanceView::new(
            v.arms.clone(),
            v.radius,
            v.family_reward,
            v.family_dueling,
            costs,
        )?;
        Self::new(view, self.theta_star.clone())
    }

    pub fn validate(&self) -> ValidationReport {
        let v = &self.view;
        let max_arm_norm = v.arms.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let sv = v.arm_matrix().singular_values();
        let span_singular_value = if v.num_arms() < v.dim() { 0.0 } else { sv.min() };
        let mut scores: Vec<f64> = v.arms.iter().map(|x| x.dot(&self.theta_star)).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let best_arm_gap = scores[0] - scores[1];
        let theta_norm = self.theta_star.norm();
        ValidationReport {
            max_arm_norm,
            norms_ok: max_arm_norm <= 1.0 + NORM_SLACK,
            span_singular_value,
            span_ok: span_singular_value > DEGENERACY_TOL,
            best_arm_gap,
            unique_best_ok: best_arm_gap > DEGENERACY_TOL,
            theta_norm,
            theta_ok: theta_norm <= v.radius + NORM_SLACK,
            costs_ok: v.action_costs.iter().all(|&c| c > 0.0 && c.is_finite()),
        }
    }

    pub fn best_arm_and_gaps(&self) -> Result<BestArm> {
        let scores: Vec<f64> = self
            .view
            .arms
            .iter()
            .map(|x| x.dot(&self.theta_star))
            .collect();
        let index = self.view.argmax_arm(&self.theta_star);
        let gaps: Vec<f64> = scores.iter().map(|s| scores[index] - s).collect();
        let gap_min = gaps
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != index)
            .map(|(_, &g)| g)
            .fold(f64::INFINITY, f64::min);
        if !(gap_min > DEGENERACY_TOL) {
            return Err(Error::DegenerateInstance(format!(
                "best arm not unique (minimum gap {gap_min:.3e})"
            )));
        }
        Ok(BestArm {
            index,
            gaps,
            gap_min,
        })
    }

    /// Stable content hash used to check that modes share an instance.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |x: f64| {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for x in &self.view.arms {
            x.iter().for_each(|&v| eat(v));
        }
        self.theta_star.iter().for_each(|&v| eat(v));
        eat(self.view.radius);
        self.view.action_costs.iter().for_each(|&v| eat(v));
        h
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(s)?;
        doc.into_instance(true)
    }
}

/// On-disk form of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub arms: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
    #[serde(rename = "S")]
    pub radius: f64,
    pub family_reward: GlmFamily,
    pub family_dueling: GlmFamily,
    #[serde(default)]
    pub costs: CostModel,
}

impl InstanceDoc {
    pub fn into_instance(self, validate: bool) -> Result<HybridInstance> {
        if self.arms.is_empty() {
            return Err(invalid("instance has no arms"));
        }
        let arms = self.arms.into_iter().map(DVector::from_vec).collect();
        let view = InstanceView::new(
            arms,
            self.radius,
            self.family_reward,
            self.family_dueling,
            self.costs,
        )?;
        let theta = DVector::from_vec(self.theta_star);
        if validate {
            HybridInstance::new(view, theta)
        } else {
            HybridInstance::new_unchecked(view, theta)
        }
    }
}

impl From<&HybridInstance> for InstanceDoc {
    fn from(inst: &HybridInstance) -> Self {
        let v = &inst.view;
        Self {
            arms: v.arms.iter().map(|x| x.iter().copied().collect()).collect(),
            theta_star: inst.theta_star.iter().copied().collect(),
            radius: v.radius,
            family_reward: v.family_reward,
            family_dueling: v.family_dueling,
            costs: v.costs.clone(),
        }
    }
}

fn default_theta(d: usize, s: f64) -> DVector<f64> {
    DVector::from_element(d, (s - 1.0) / (d as f64).sqrt())
}

fn logistic_instance(
    arms: Vec<DVector<f64>>,
    theta: DVector<f64>,
    s: f64,
) -> Result<HybridInstance> {
    let view = InstanceView::new(
        arms,
        s,
        GlmFamily::logistic(),
        GlmFamily::logistic(),
        CostModel::uniform(),
    )?;
    HybridInstance::new(view, theta)
}

/// Random-arm construction: `θ* = (S-1)·1/√d`, the first arm aligned with
/// `θ*` at 0.9 of its norm, arm `i ≥ 2` (1-based) at `0.8(K-i)/(K-1)`.
/// The remaining mass of each unit-norm arm points in a uniformly random
/// direction orthogonal to `θ*`.
pub fn gen_main_instance<R: Rng + ?Sized>(
    k: usize,
    d: usize,
    s: f64,
    rng: &mut R,
) -> Result<HybridInstance> {
    if k < 2 || d == 0 {
        return Err(invalid("need K >= 2 and d >= 1"));
    }
    if !(s > 1.0) {
        return Err(invalid(format!("S must exceed 1, got {s}")));
    }
    let theta = default_theta(d, s);
    let u = theta.normalize();
    let mut arms = Vec::with_capacity(k);
    for i in 0..k {
        let align = if i == 0 {
            0.9
        } else {
            0.8 * (k - 1 - i) as f64 / (k - 1) as f64
        };
        if align.abs() > 1.0 {
            return Err(Error::ConstructionFailure(format!(
                "alignment {align} exceeds unit norm"
            )));
        }
        let mut x = &u * align;
        if d > 1 {
            let v = random_orthogonal_unit(&u, rng);
            x += v * (1.0 - align * align).sqrt();
        }
        arms.push(x);
    }
    logistic_instance(arms, theta, s)
}

fn random_orthogonal_unit<R: Rng + ?Sized>(u: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(u.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = &g - u * u.dot(&g);
        let n = r.norm();
        if n > 1e-8 {
            return r / n;
        }
    }
}

/// Basis arms `e_1..e_d` plus `cos(0.1) e_1 + sin(0.1) e_2`, with the same
/// `θ*` rule as [`gen_main_instance`].
pub fn gen_basis_rotated(d: usize, s: f64) -> Result<HybridInstance> {
    if d < 2 {
        return Err(invalid("basis-plus-rotated construction needs d >= 2"));
    }
    let mut arms: Vec<DVector<f64>> = (0..d)
        .map(|i| DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 }))
        .collect();
    let mut rot = DVector::zeros(d);
    rot[0] = 0.1f64.cos();
    rot[1] = 0.1f64.sin();
    arms.push(rot);
    logistic_instance(arms, default_theta(d, s), s)
}

/// The two closed-form comparison instances (`θ* = e_1`, logistic links, S = 5).
pub fn gen_appendix_d_case(case: u8) -> Result<HybridInstance> {
    let e = |a: f64, b: f64| DVector::from_vec(vec![a, b]);
    let arms = match case {
        1 => vec![e(1.0, 0.0), e(0.0, -1.0)],
        2 => vec![e(1.0, 0.0), e(0.0, 1.0), e(0.1f64.cos(), 0.1f64.sin())],
        _ => return Err(invalid(format!("case must be 1 or 2, got {case}"))),
    };
    logistic_instance(arms, e(1.0, 0.0), 5.0)
}

/// One-dimensional Gaussian toy: arms `+1` and `-1`, `θ* = 1`, unit
/// dispersion on both channels.
pub fn gen_gaussian_line(s: f64) -> Result<HybridInstance> {
    let view = InstanceView::new(
        vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])],
        s,
        GlmFamily::gaussian(),
        GlmFamily::gaussian(),
        CostModel::uniform(),
    )?;
    HybridInstance::new(view, DVector::from_vec(vec![1.0]))
}

/// Instance source for configs and sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Main {
        k: usize,
        d: usize,
        #[serde(rename = "S", default = "default_s")]
        s: f64,
    },
    BasisRotated {
        d: usize,
        #[serde(rename = "S", default = "default_s")]
        s: f64,
    },
    AppendixD {
        case: u8,
    },
    GaussianLine {
        #[serde(rename = "S", default = "default_s")]
        s: f64,
    },
    Explicit {
        instance: InstanceDoc,
    },
}

fn default_s() -> f64 {
    5.0
}

impl GeneratorSpec {
    pub fn id(&self) -> &'static str {
        match self {
            GeneratorSpec::Main { .. } => "main",
            GeneratorSpec::BasisRotated { .. } => "basis_rotated",
            GeneratorSpec::AppendixD { .. } => "appendix_d",
            GeneratorSpec::GaussianLine { .. } => "gaussian_line",
            GeneratorSpec::Explicit { .. } => "explicit",
        }
    }

    /// Builds the instance; `seed` only matters for random constructions.
    /// Explicit instances are not validated here so that `validate` can
    /// report on broken ones.
    pub fn build(&self, seed: u64) -> Result<HybridInstance> {
        use rand::SeedableRng;
        match self {
            GeneratorSpec::Main { k, d, s } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                gen_main_instance(*k, *d, *s, &mut rng)
            }
            GeneratorSpec::BasisRotated { d, s } => gen_basis_rotated(*d, *s),
            GeneratorSpec::AppendixD { case } => gen_appendix_d_case(*case),
            GeneratorSpec::GaussianLine { s } => gen_gaussian_line(*s),
            GeneratorSpec::Explicit { instance } => instance.clone().into_instance(false),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn features() {
        let view = InstanceView::new(
            vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])],
            5.0,
            GlmFamily::logistic(),
            GlmFamily::logistic(),
            CostModel::uniform(),
        )
        .unwrap();
        assert_eq!(view.action_feature(Action::Duel(0, 1)).unwrap(), v(&[1.0, -1.0]));
        assert_eq!(view.action_feature(Action::Reward(0)).unwrap(), v(&[1.0, 0.0]));
        assert!(view.action_feature(Action::Reward(2)).is_err());
        assert!(view.action_feature(Action::Duel(1, 0)).is_err());
        let c1 = gen_appendix_d_case(1).unwrap();
        assert_eq!(
            c1.view().action_feature(Action::Duel(0, 1)).unwrap(),
            v(&[1.0, 1.0])
        );
    }

    #[test]
    fn action_enumeration() {
        assert_eq!(
            enumerate_actions(2).unwrap(),
            vec![Action::Reward(0), Action::Reward(1), Action::Duel(0, 1)]
        );
        assert_eq!(enumerate_actions(3).unwrap().len(), 6);
        assert_eq!(enumerate_actions(11).unwrap().len(), 66);
        assert!(enumerate_actions(1).is_err());
        for k in 2..=20 {
            let acts = enumerate_actions(k).unwrap();
            assert_eq!(acts.len(), k + k * (k - 1) / 2);
            let uniq: HashSet<_> = acts.iter().collect();
            assert_eq!(uniq.len(), acts.len());
            let mut sorted = acts.clone();
            sorted.sort();
            assert_eq!(sorted, acts);
        }
    }

    #[test]
    fn action_index_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = gen_main_instance(6, 3, 5.0, &mut rng).unwrap();
        for (i, &a) in inst.view().actions().iter().enumerate() {
            assert_eq!(inst.view().action_index(a).unwrap(), i);
        }
    }

    #[test]
    fn duel_feature_is_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = gen_main_instance(5, 4, 5.0, &mut rng).unwrap();
        let view = inst.view();
        for &a in view.actions() {
            if let Action::Duel(j, k) = a {
                let d = view.action_feature(a).unwrap();
                let r = view.action_feature(Action::Reward(j)).unwrap()
                    - view.action_feature(Action::Reward(k)).unwrap();
                assert_eq!(d, r);
            }
        }
    }

    #[test]
    fn appendix_d_gaps() {
        let c1 = gen_appendix_d_case(1).unwrap().best_arm_and_gaps().unwrap();
        assert_eq!(c1.index, 0);
        assert_abs_diff_eq!(c1.gap_min, 1.0);
        let inst2 = gen_appendix_d_case(2).unwrap();
        let c2 = inst2.best_arm_and_gaps().unwrap();
        assert_eq!(c2.index, 0);
        assert_abs_diff_eq!(c2.gap_min, 0.00499583, epsilon = 1e-8);
        assert_abs_diff_eq!(c2.gaps[2], 1.0 - 0.1f64.cos(), epsilon = 1e-15);
        // the hard competitor is arm 3 (index 2)
        assert!(c2.gaps[1] > c2.gaps[2]);
        assert_abs_diff_eq!(c2.gaps[1], 1.0);
        assert!(gen_appendix_d_case(3).is_err());
    }

    #[test]
    fn duplicate_arms_are_degenerate() {
        let view = InstanceView::new(
            vec![v(&[1.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])],
            5.0,
            GlmFamily::logistic(),
            GlmFamily::logistic(),
            CostModel::uniform(),
        )
        .unwrap();
        let inst = HybridInstance::new_unchecked(view.clone(), v(&[1.0, 0.0])).unwrap();
        assert!(matches!(
            inst.best_arm_and_gaps(),
            Err(Error::DegenerateInstance(_))
        ));
        assert!(HybridInstance::new(view, v(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn main_instance_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = gen_main_instance(3, 2, 5.0, &mut rng).unwrap();
        let th = inst.theta_star();
        assert_abs_diff_eq!(th.norm(), 4.0, epsilon = 1e-12);
        let scores: Vec<f64> = inst.view().arms().iter().map(|x| x.dot(th)).collect();
        assert_abs_diff_eq!(scores[0], 3.6, epsilon = 1e-12);
        assert_abs_diff_eq!(scores[1], 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(scores[2], 0.0, epsilon = 1e-12);
        for x in inst.view().arms() {
            assert_abs_diff_eq!(x.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn main_instances_validate_independently() {
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 2 + (seed as usize % 6);
            let d = 1 + (seed as usize % k.min(5));
            let inst = gen_main_instance(k, d, 5.0, &mut rng).unwrap();
            let arms = inst.view().arm_matrix();
            for i in 0..k {
                assert!(arms.row(i).norm() <= 1.0 + 1e-12);
            }
            assert!(arms.clone().singular_values().min() > 1e-10);
            assert_eq!(inst.best_arm_and_gaps().unwrap().index, 0);
        }
    }

    #[test]
    fn main_instance_deterministic() {
        let a = gen_main_instance(5, 4, 5.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = gen_main_instance(5, 4, 5.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.view().arm_matrix(), b.view().arm_matrix());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn basis_rotated() {
        let inst = gen_basis_rotated(2, 5.0).unwrap();
        let arms = inst.view().arms();
        assert_eq!(arms[0], v(&[1.0, 0.0]));
        assert_eq!(arms[1], v(&[0.0, 1.0]));
        assert_eq!(arms[2], v(&[0.1f64.cos(), 0.1f64.sin()]));
        for d in 2..=8 {
            let inst = gen_basis_rotated(d, 5.0).unwrap();
            let th = inst.theta_star();
            let mut scores: Vec<f64> = inst.view().arms().iter().map(|x| x.dot(th)).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            assert!(scores[0] > scores[1]);
        }
        let d8 = gen_basis_rotated(8, 5.0).unwrap();
        assert_eq!(d8.view().num_arms(), 9);
        assert_eq!(d8.view().num_actions(), 45);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let inst = gen_main_instance(4, 3, 5.0, &mut rng).unwrap();
        let back = HybridInstance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back.fingerprint(), inst.fingerprint());
        for (a, b) in inst.view().arms().iter().zip(back.view().arms()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn cost_ratios() {
        let expect = [(0.5, 1.5), (2.0 / 3.0, 4.0 / 3.0), (1.0, 1.0), (4.0 / 3.0, 2.0 / 3.0), (1.5, 0.5)];
        for (r, (cr, cd)) in [1.0 / 3.0, 0.5, 1.0, 2.0, 3.0].iter().zip(expect) {
            let c = CostModel::from_ratio(*r);
            assert_abs_diff_eq!(c.reward, cr, epsilon = 1e-12);
            assert_abs_diff_eq!(c.dueling, cd, epsilon = 1e-12);
            assert_abs_diff_eq!(c.reward + c.dueling, 2.0, epsilon = 1e-12);
        }
    }
}
