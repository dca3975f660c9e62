//! Takeover-time oracle shared by the GA tests and the acceptance suite.
#![allow(dead_code)]

use pathnet::evolution::{init_population, tournament_step, FnEvaluator};
use pathnet::{Genotype, HyperParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generations allowed for a population of `p` to become uniform.
pub fn takeover_budget(p: usize) -> usize {
    (10.0 * p as f64 * (p as f64).ln()).ceil() as usize
}

/// Generations until uniform with a Hamming stub fitness and no mutation.
pub fn takeover_generations(seed: u64, p: usize) -> Option<usize> {
    let hp = HyperParams {
        population_size: p,
        generations: takeover_budget(p),
        mutation_prob: Some(0.0),
        ..Default::default()
    };
    let target = Genotype::random(&hp, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabcd));
    let genes = (hp.num_layers * hp.max_active_per_layer) as f64;
    let mut eval = FnEvaluator(|g: &Genotype| 1.0 - g.hamming(&target) as f64 / genes);
    let mut state = init_population(&hp, seed).unwrap();
    while !state.is_uniform() {
        if tournament_step(&mut state, &mut eval, &hp).is_err() {
            return None;
        }
    }
    Some(state.generation)
}
