use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shape, SGD settings and evolution budget.
///
/// Defaults reproduce the reference settings: a 3-layer network of 20 modules
/// with 20 ReLU units each, up to 4 active modules per layer, SGD at 0.02 with
/// mini-batches of 64, and 200 generations over a population of 20 pathways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub num_layers: usize,
    pub modules_per_layer: usize,
    pub module_width: usize,
    pub max_active_per_layer: usize,
    pub input_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub generations: usize,
    pub population_size: usize,
    /// Per-gene mutation probability. `None` means `1 / (N * L)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation_prob: Option<f64>,
    /// Mutation deltas are drawn uniformly from `-range..=range`.
    pub mutation_range: u32,
    pub rng_seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            num_layers: 3,
            modules_per_layer: 20,
            module_width: 20,
            max_active_per_layer: 4,
            input_dim: 64 * 64 * 3,
            learning_rate: 0.02,
            batch_size: 64,
            generations: 200,
            population_size: 20,
            mutation_prob: None,
            mutation_range: 2,
            rng_seed: 0,
        }
    }
}

impl HyperParams {
    pub fn mutation_prob(&self) -> f64 {
        self.mutation_prob
            .unwrap_or_else(|| 1.0 / (self.max_active_per_layer * self.num_layers) as f64)
    }

    /// Input width of the modules in `layer` (0-based).
    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.module_width
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperParams(msg));
        if self.num_layers < 1 {
            return bad("num_layers must be >= 1".into());
        }
        if self.max_active_per_layer < 1 || self.max_active_per_layer > self.modules_per_layer {
            return bad(format!(
                "max_active_per_layer must be in [1, {}], got {}",
                self.modules_per_layer, self.max_active_per_layer
            ));
        }
        if self.module_width < 1 || self.input_dim < 1 {
            return bad("module_width and input_dim must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.population_size < 2 {
            return bad("population_size must be >= 2 for a binary tournament".into());
        }
        let p = self.mutation_prob();
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("mutation_prob must be in [0, 1], got {p}"));
        }
        Ok(())
    }
}
