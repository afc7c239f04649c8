//! Simulated environments, seeded runs, sweeps and result files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::explore::{run, AlgoConfig, Mode, Observe, RunResult};
use crate::problem::{Action, CostModel, GeneratorSpec, HybridInstance, InstanceDoc};

/// Draws observations from the true model of an instance.
#[derive(Debug, Clone)]
pub struct Environment {
    instance: HybridInstance,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(instance: HybridInstance, seed: u64) -> Self {
        Self {
            instance,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn instance(&self) -> &HybridInstance {
        &self.instance
    }

    /// One draw from `p_{m(a)}(· | x_aᵀθ*)`.
    pub fn observe(&mut self, a: Action) -> f64 {
        let view = self.instance.view();
        let idx = view.action_index(a).expect("action outside the instance");
        let eta = view.feature(idx).dot(self.instance.theta_star());
        view.family_of(a).sample(eta, &mut self.rng)
    }
}

impl Observe for Environment {
    fn observe(&mut self, action: Action) -> f64 {
        Environment::observe(self, action)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `parent` for the stream labelled `index`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index))
}

fn mode_id(mode: Mode) -> u64 {
    Mode::ALL.iter().position(|&m| m == mode).unwrap() as u64
}

/// Seeds of one run: `(environment, algorithm)`.
pub fn run_seeds(cell_seed: u64, run_index: u64, mode: Mode) -> (u64, u64) {
    let env = derive_seed(cell_seed, run_index);
    (env, derive_seed(env, mode_id(mode)))
}

/// A single run with its own environment and algorithm streams.
pub fn run_seeded(
    instance: &HybridInstance,
    config: &AlgoConfig,
    env_seed: u64,
    algo_seed: u64,
    trace: Option<&mut dyn Write>,
) -> Result<RunResult> {
    let mut env = Environment::new(instance.clone(), env_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(algo_seed);
    let mut out = run(instance, &mut env, config, &mut rng, trace)?;
    out.seed = env_seed;
    Ok(out)
}

/// Instance axes of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceGrid {
    Main {
        k: Vec<usize>,
        d: Vec<usize>,
        #[serde(rename = "S", default = "default_radii")]
        s: Vec<f64>,
    },
    BasisRotated {
        d: Vec<usize>,
        #[serde(rename = "S", default = "default_radii")]
        s: Vec<f64>,
    },
    AppendixD {
        case: Vec<u8>,
    },
    GaussianLine {
        #[serde(rename = "S", default = "default_radii")]
        s: Vec<f64>,
    },
    Explicit {
        instance: InstanceDoc,
    },
}

fn default_radii() -> Vec<f64> {
    vec![5.0]
}

impl InstanceGrid {
    pub fn generators(&self) -> Vec<GeneratorSpec> {
        match self {
            InstanceGrid::Main { k, d, s } => {
                let mut out = Vec::new();
                for &d in d {
                    for &k in k {
                        for &s in s {
                            out.push(GeneratorSpec::Main { k, d, s });
                        }
                    }
                }
                out
            }
            InstanceGrid::BasisRotated { d, s } => d
                .iter()
                .flat_map(|&d| s.iter().map(move |&s| GeneratorSpec::BasisRotated { d, s }))
                .collect(),
            InstanceGrid::AppendixD { case } => case.iter().map(|&case| GeneratorSpec::AppendixD { case }).collect(),
            InstanceGrid::GaussianLine { s } => s.iter().map(|&s| GeneratorSpec::GaussianLine { s }).collect(),
            InstanceGrid::Explicit { instance } => vec![GeneratorSpec::Explicit {
                instance: instance.clone(),
            }],
        }
    }
}

fn default_cost_ratios() -> Vec<[f64; 2]> {
    vec![[1.0, 1.0]]
}

fn default_runs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub instances: InstanceGrid,
    /// `[reward, dueling]` cost ratios, each rescaled so the pair sums to 2.
    #[serde(default = "default_cost_ratios")]
    pub cost_ratios: Vec<[f64; 2]>,
    pub modes: Vec<Mode>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Shared algorithm settings; the mode is overridden per row.
    #[serde(default)]
    pub algorithm: AlgoConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(invalid("runs must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(invalid("modes must be non-empty"));
        }
        if self.cost_ratios.is_empty() {
            return Err(invalid("cost_ratios must be non-empty"));
        }
        for [r, d] in &self.cost_ratios {
            if !(*r > 0.0 && *d > 0.0 && r.is_finite() && d.is_finite()) {
                return Err(invalid("cost ratio entries must be positive"));
            }
        }
        self.algorithm.validate()
    }

    pub fn cost_models(&self) -> Vec<CostModel> {
        self.cost_ratios.iter().map(|[r, d]| CostModel::from_ratio(r / d)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Worker threads; `0` uses every core.
    pub jobs: usize,
    /// Record wall-clock time per run. Off by default so reruns are
    /// byte-identical.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub generator: String,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "S")]
    pub s: f64,
    pub cost_reward: f64,
    pub cost_dueling: f64,
    pub mode: Mode,
    pub seed: u64,
    pub tau: u64,
    pub total_cost: f64,
    pub reward_cost: f64,
    pub dueling_cost: f64,
    pub recommended: Option<usize>,
    pub correct: bool,
    pub converged: bool,
    pub wallclock_ms: u64,
}

impl ResultRow {
    fn group_key(&self) -> (String, usize, usize, u64, u64, u64, Mode) {
        (
            self.generator.clone(),
            self.d,
            self.k,
            self.s.to_bits(),
            self.cost_reward.to_bits(),
            self.cost_dueling.to_bits(),
            self.mode,
        )
    }
}

struct Task {
    order: (usize, usize, usize, usize),
    instance: usize,
    cost: usize,
    mode: Mode,
    run: usize,
}

/// Runs every (instance, cost ratio, mode, run) combination. Modes and cost
/// ratios of one instance cell share the instance and the environment
/// seeds. Rows come back in canonical order whatever the scheduling.
pub fn execute_sweep(spec: &SweepSpec, options: &SweepOptions) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let costs = spec.cost_models();
    let gens = spec.instances.generators();
    let mut instances = Vec::with_capacity(gens.len());
    for (ci, g) in gens.iter().enumerate() {
        let seed = derive_seed(spec.base_seed, ci as u64);
        let base = g.build(seed)?;
        let per_cost = costs
            .iter()
            .map(|c| base.with_costs(c.clone()))
            .collect::<Result<Vec<_>>>()?;
        instances.push((g.id(), seed, per_cost));
    }

    let mut tasks = Vec::new();
    for ci in 0..instances.len() {
        for k in 0..costs.len() {
            for (mi, &mode) in spec.modes.iter().enumerate() {
                for r in 0..spec.runs {
                    tasks.push(Task {
                        order: (ci, k, mi, r),
                        instance: ci,
                        cost: k,
                        mode,
                        run: r,
                    });
                }
            }
        }
    }

    let exec = |task: &Task| -> ((usize, usize, usize, usize), ResultRow) {
        let (gen_id, cell_seed, per_cost) = &instances[task.instance];
        let inst = &per_cost[task.cost];
        let cost = &costs[task.cost];
        let (env_seed, algo_seed) = run_seeds(*cell_seed, task.run as u64, task.mode);
        let cfg = AlgoConfig {
            mode: task.mode,
            ..spec.algorithm.clone()
        };
        let start = Instant::now();
        let res = run_seeded(inst, &cfg, env_seed, algo_seed, None);
        let ms = if options.timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let view = inst.view();
        let mut row = ResultRow {
            generator: gen_id.to_string(),
            d: view.dim(),
            k: view.num_arms(),
            s: view.radius(),
            cost_reward: cost.reward,
            cost_dueling: cost.dueling,
            mode: task.mode,
            seed: env_seed,
            tau: 0,
            total_cost: 0.0,
            reward_cost: 0.0,
            dueling_cost: 0.0,
            recommended: None,
            correct: false,
            converged: false,
            wallclock_ms: ms,
        };
        match res {
            Ok(r) => {
                row.tau = r.stopping_round;
                row.total_cost = r.total_cost;
                row.reward_cost = r.reward_cost;
                row.dueling_cost = r.dueling_cost;
                row.recommended = Some(r.recommended);
                row.correct = r.correct;
                row.converged = r.converged;
                if !r.converged {
                    log::warn!("{} run {} on {} hit max_rounds", task.mode, task.run, gen_id);
                }
            }
            Err(e) => log::warn!("{} run {} on {} failed: {e}", task.mode, task.run, gen_id),
        }
        (task.order, row)
    };

    let mut rows: Vec<_> = if options.jobs == 1 {
        tasks.iter().map(exec).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(exec).collect())
    };
    rows.sort_by_key(|(order, _)| *order);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub generator: String,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "S")]
    pub s: f64,
    pub cost_reward: f64,
    pub cost_dueling: f64,
    pub mode: Mode,
    pub runs: usize,
    pub mean_tau: f64,
    pub std_tau: f64,
    pub min_tau: u64,
    pub max_tau: u64,
    pub mean_total_cost: f64,
    pub mean_reward_cost: f64,
    pub mean_dueling_cost: f64,
    /// Share of converged runs recommending a wrong arm.
    pub error_rate: Option<f64>,
    pub non_converged: usize,
}

/// Per (cell, mode) statistics. Rows are put in a canonical order inside
/// each group first, so the result does not depend on the input order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<_, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.group_key()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (_, mut g) in groups {
        g.sort_by(|a, b| {
            (a.seed, a.tau, a.total_cost.to_bits(), a.reward_cost.to_bits()).cmp(&(
                b.seed,
                b.tau,
                b.total_cost.to_bits(),
                b.reward_cost.to_bits(),
            ))
        });
        let n = g.len() as f64;
        let mean = |f: &dyn Fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
        let mean_tau = mean(&|r| r.tau as f64);
        let std_tau = if g.len() > 1 {
            (g.iter().map(|r| (r.tau as f64 - mean_tau).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let converged: Vec<_> = g.iter().filter(|r| r.converged).collect();
        let error_rate = (!converged.is_empty())
            .then(|| converged.iter().filter(|r| !r.correct).count() as f64 / converged.len() as f64);
        let first = g[0];
        out.push(SummaryRow {
            generator: first.generator.clone(),
            d: first.d,
            k: first.k,
            s: first.s,
            cost_reward: first.cost_reward,
            cost_dueling: first.cost_dueling,
            mode: first.mode,
            runs: g.len(),
            mean_tau,
            std_tau,
            min_tau: g.iter().map(|r| r.tau).min().unwrap(),
            max_tau: g.iter().map(|r| r.tau).max().unwrap(),
            mean_total_cost: mean(&|r| r.total_cost),
            mean_reward_cost: mean(&|r| r.reward_cost),
            mean_dueling_cost: mean(&|r| r.dueling_cost),
            error_rate,
            non_converged: g.len() - converged.len(),
        });
    }
    out
}

pub fn write_rows_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_results_csv<R: std::io::Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub version: &'static str,
    pub spec: &'a SweepSpec,
    pub cells: Vec<ManifestCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestCell {
    pub index: usize,
    pub generator: GeneratorSpec,
    pub seed: u64,
    pub fingerprint: String,
}

pub fn manifest(spec: &SweepSpec) -> Result<Manifest<'_>> {
    let mut cells = Vec::new();
    for (i, g) in spec.instances.generators().into_iter().enumerate() {
        let seed = derive_seed(spec.base_seed, i as u64);
        let inst = g.build(seed)?;
        cells.push(ManifestCell {
            index: i,
            generator: g,
            seed,
            fingerprint: format!("{:016x}", inst.fingerprint()),
        });
    }
    Ok(Manifest {
        version: env!("CARGO_PKG_VERSION"),
        spec,
        cells,
    })
}

/// Writes `results.csv`, `summary.csv` and `manifest.json` into `dir`.
pub fn write_sweep_outputs(dir: &Path, spec: &SweepSpec, rows: &[ResultRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows_csv(rows, std::fs::File::create(dir.join("results.csv"))?)?;
    write_rows_csv(&aggregate(rows), std::fs::File::create(dir.join("summary.csv"))?)?;
    let mut f = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest(spec)?)?;
    f.write_all(b"\n")?;
    Ok(())
}
