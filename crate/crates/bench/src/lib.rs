//! Fixtures shared by the benchmarks.

use hybrid_bai::harness::Environment;
use hybrid_bai::{ActionStats, GeneratorSpec, HybridInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn instance(k: usize, d: usize) -> HybridInstance {
    GeneratorSpec::Main { k, d, s: 5.0 }.build(1).unwrap()
}

/// Sufficient statistics of `n` uniformly drawn queries.
pub fn stats(inst: &HybridInstance, n: usize, seed: u64) -> ActionStats {
    let view = inst.view();
    let mut env = Environment::new(inst.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let mut st = ActionStats::new(view.num_actions());
    for _ in 0..n {
        let a = rng.gen_range(0..view.num_actions());
        st.add(a, env.observe(view.actions()[a]));
    }
    st
}
