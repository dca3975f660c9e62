//! Microbial-GA pathway search.
//!
//! Each generation draws two distinct population members, trains both in draw
//! order on the shared bank, and overwrites the one with lower training
//! accuracy by a mutated copy of the other.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::genotype::Genotype;
use crate::hparams::HyperParams;
use crate::network::{argmax, Batch, ModuleBank};

/// Independent random streams derived from one seed.
pub mod stream {
    pub const POPULATION: u64 = 0;
    pub const BANK: u64 = 1;
    pub const HEAD: u64 = 2;
    pub const REINIT: u64 = 3;
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub genotype: Genotype,
    /// Fraction of training samples classified correctly before each batch's update.
    pub accuracy: f64,
    pub batches_seen: usize,
    pub samples_seen: usize,
}

/// Scores a genotype; may train shared parameters as a side effect.
pub trait PathwayEvaluator {
    fn evaluate(&mut self, g: &Genotype, rng: &mut ChaCha8Rng) -> Result<FitnessRecord>;
}

/// Evaluator backed by a plain function of the genotype, for GA experiments
/// without any training.
pub struct FnEvaluator<F>(pub F);

impl<F: FnMut(&Genotype) -> f64> PathwayEvaluator for FnEvaluator<F> {
    fn evaluate(&mut self, g: &Genotype, _rng: &mut ChaCha8Rng) -> Result<FitnessRecord> {
        Ok(FitnessRecord {
            genotype: g.clone(),
            accuracy: (self.0)(g),
            batches_seen: 0,
            samples_seen: 0,
        })
    }
}

/// Trains the pathway with one shuffled SGD pass over `train`.
pub struct SgdEvaluator<'a> {
    pub bank: &'a mut ModuleBank<f32>,
    pub pinned: Option<&'a Genotype>,
    pub train: &'a Dataset,
    pub task: &'a str,
    pub hp: &'a HyperParams,
}

impl PathwayEvaluator for SgdEvaluator<'_> {
    fn evaluate(&mut self, g: &Genotype, rng: &mut ChaCha8Rng) -> Result<FitnessRecord> {
        evaluate_pathway(
            self.bank,
            g,
            self.pinned,
            self.train,
            self.task,
            self.hp,
            rng,
        )
    }
}

/// Runs `ceil(|train| / B)` SGD steps over one shuffled pass of `train`.
///
/// Fitness is the running training accuracy, each batch scored before its
/// own update. The bank keeps the trained weights.
pub fn evaluate_pathway(
    bank: &mut ModuleBank<f32>,
    g: &Genotype,
    pinned: Option<&Genotype>,
    train: &Dataset,
    task: &str,
    hp: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<FitnessRecord> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut correct = 0usize;
    let mut batches = 0usize;
    for idx in order.chunks(hp.batch_size) {
        let (inputs, labels) = train.gather(idx);
        let out = bank.loss_and_grads(
            g,
            pinned,
            Batch {
                inputs: &inputs,
                labels: &labels,
            },
            task,
        )?;
        correct += out.correct(&labels);
        bank.sgd_step(&out.grads, hp.learning_rate)?;
        batches += 1;
    }
    Ok(FitnessRecord {
        genotype: g.clone(),
        accuracy: correct as f64 / train.len() as f64,
        batches_seen: batches,
        samples_seen: train.len(),
    })
}

/// Independently per gene, with probability `mutation_prob`, adds a uniform
/// delta from `-range..=range` and wraps modulo `M`.
pub fn mutate<R: Rng + ?Sized>(g: &Genotype, hp: &HyperParams, rng: &mut R) -> Genotype {
    mutate_counted(g, hp, rng).0
}

/// [`mutate`], also returning how many genes were selected for mutation.
/// A selected gene whose delta is 0 counts but keeps its value.
pub fn mutate_counted<R: Rng + ?Sized>(
    g: &Genotype,
    hp: &HyperParams,
    rng: &mut R,
) -> (Genotype, usize) {
    let p = hp.mutation_prob();
    let r = hp.mutation_range as i64;
    let m = hp.modules_per_layer as i64;
    let mut out = g.clone();
    let mut selected = 0;
    for gene in out.genes_mut().iter_mut().flatten() {
        if rng.random_bool(p) {
            selected += 1;
            let delta = rng.random_range(-r..=r);
            *gene = (*gene as i64 + delta).rem_euclid(m) as usize;
        }
    }
    (out, selected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// 1-based generation number.
    pub generation: usize,
    pub winner_index: usize,
    pub loser_index: usize,
    pub winner_fitness: f64,
    pub loser_fitness: f64,
    /// Winner accuracy on a held-out probe set, when one is configured.
    pub test_accuracy: Option<f64>,
}

pub const HISTORY_CSV_HEADER: &str =
    "generation,winner_index,winner_fitness,loser_fitness,test_accuracy";

pub fn history_csv(history: &[HistoryEntry]) -> String {
    let mut out = format!("{HISTORY_CSV_HEADER}\n");
    for h in history {
        let test = h.test_accuracy.map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.generation, h.winner_index, h.winner_fitness, h.loser_fitness, test
        ));
    }
    out
}

/// Population, last recorded fitness per member, and the run's RNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    pub population: Vec<Genotype>,
    /// `None` until the member (in its current form) has been evaluated.
    pub fitness: Vec<Option<f64>>,
    pub generation: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<HistoryEntry>,
}

/// `P` random genotypes drawn from the population stream of `seed`.
pub fn init_population(hp: &HyperParams, seed: u64) -> Result<EvolutionState> {
    hp.validate()?;
    let mut rng = rng_for(seed, stream::POPULATION);
    let population = (0..hp.population_size)
        .map(|_| Genotype::random(hp, &mut rng))
        .collect();
    Ok(EvolutionState {
        population,
        fitness: vec![None; hp.population_size],
        generation: 0,
        rng,
        history: Vec::new(),
    })
}

impl EvolutionState {
    /// Member with the highest recorded fitness; ties go to the lowest index.
    pub fn best(&self) -> Result<(usize, &Genotype, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in self.fitness.iter().enumerate() {
            if let Some(f) = *f {
                if best.is_none_or(|(_, b)| f > b) {
                    best = Some((i, f));
                }
            }
        }
        let (i, f) = best.ok_or(Error::NoFitnessRecorded)?;
        Ok((i, &self.population[i], f))
    }

    pub fn is_uniform(&self) -> bool {
        self.population.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TournamentOutcome {
    pub winner: usize,
    pub loser: usize,
    pub winner_fitness: f64,
    pub loser_fitness: f64,
}

/// One generation: draw, evaluate both in draw order, overwrite and mutate
/// the loser. On equal fitness the second draw loses.
pub fn tournament_step<E: PathwayEvaluator>(
    state: &mut EvolutionState,
    evaluator: &mut E,
    hp: &HyperParams,
) -> Result<TournamentOutcome> {
    if state.generation >= hp.generations {
        return Err(Error::InvalidHyperParams(format!(
            "generation budget of {} exhausted",
            hp.generations
        )));
    }
    let p = state.population.len();
    let first = state.rng.random_range(0..p);
    let mut second = state.rng.random_range(0..p - 1);
    if second >= first {
        second += 1;
    }
    let f1 = evaluator
        .evaluate(&state.population[first], &mut state.rng)?
        .accuracy;
    let f2 = evaluator
        .evaluate(&state.population[second], &mut state.rng)?
        .accuracy;
    state.fitness[first] = Some(f1);
    state.fitness[second] = Some(f2);

    let (winner, loser, wf, lf) = if f1 >= f2 {
        (first, second, f1, f2)
    } else {
        (second, first, f2, f1)
    };
    let child = mutate(&state.population[winner], hp, &mut state.rng);
    state.population[loser] = child;
    state.fitness[loser] = None;
    state.generation += 1;
    state.history.push(HistoryEntry {
        generation: state.generation,
        winner_index: winner,
        loser_index: loser,
        winner_fitness: wf,
        loser_fitness: lf,
        test_accuracy: None,
    });
    Ok(TournamentOutcome {
        winner,
        loser,
        winner_fitness: wf,
        loser_fitness: lf,
    })
}

/// Posteriors for every sample of `data` along `g` (plus `pinned`).
pub fn predict(
    bank: &ModuleBank<f32>,
    g: &Genotype,
    pinned: Option<&Genotype>,
    data: &Dataset,
    task: &str,
) -> Result<Vec<Vec<f64>>> {
    const CHUNK: usize = 512;
    let mut out = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let rows = &data.inputs[start * data.dim..end * data.dim];
        out.extend(bank.predict_batch(g, pinned, rows, task)?);
    }
    Ok(out)
}

pub fn accuracy(
    bank: &ModuleBank<f32>,
    g: &Genotype,
    pinned: Option<&Genotype>,
    data: &Dataset,
    task: &str,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Metrics("accuracy of an empty dataset".into()));
    }
    let post = predict(bank, g, pinned, data, task)?;
    let correct = post
        .iter()
        .zip(&data.labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// What to evolve on.
#[derive(Debug, Clone, Copy)]
pub struct EvolveJob<'a> {
    pub train: &'a Dataset,
    pub task: &'a str,
    /// Path forced into every forward pass (transfer destination phase).
    pub pinned: Option<&'a Genotype>,
    /// Held-out set scored with the winner after every generation.
    pub probe: Option<&'a Dataset>,
}

#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub best: Genotype,
    pub best_index: usize,
    pub best_fitness: f64,
    pub bank: ModuleBank<f32>,
    pub history: Vec<HistoryEntry>,
    pub state: EvolutionState,
    pub sgd_steps: usize,
}

/// Evolves on a fresh bank drawn from the bank stream of `seed`.
pub fn evolve(job: &EvolveJob<'_>, hp: &HyperParams, seed: u64) -> Result<EvolveOutcome> {
    let bank = ModuleBank::init(hp, &mut rng_for(seed, stream::BANK))?;
    evolve_with_bank(bank, job, hp, seed)
}

/// Runs `G` tournament steps on `bank`, adding a head for the task when missing.
pub fn evolve_with_bank(
    mut bank: ModuleBank<f32>,
    job: &EvolveJob<'_>,
    hp: &HyperParams,
    seed: u64,
) -> Result<EvolveOutcome> {
    hp.validate()?;
    if job.train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if job.train.dim != hp.input_dim {
        return Err(Error::Shape(format!(
            "training data has dim {}, network expects {}",
            job.train.dim, hp.input_dim
        )));
    }
    if bank.head(job.task).is_none() {
        bank.add_head(
            job.task,
            job.train.num_classes(),
            &mut rng_for(seed, stream::HEAD),
        );
    }
    let mut state = init_population(hp, seed)?;
    let mut sgd_steps = 0;
    for _ in 0..hp.generations {
        let mut counter = CountingEvaluator {
            inner: SgdEvaluator {
                bank: &mut bank,
                pinned: job.pinned,
                train: job.train,
                task: job.task,
                hp,
            },
            batches: 0,
        };
        let outcome = tournament_step(&mut state, &mut counter, hp)?;
        sgd_steps += counter.batches;
        if let Some(probe) = job.probe {
            let winner = &state.population[outcome.winner];
            let acc = accuracy(&bank, winner, job.pinned, probe, job.task)?;
            state
                .history
                .last_mut()
                .expect("step pushed history")
                .test_accuracy = Some(acc);
        }
    }
    let (best_index, best, best_fitness) = state.best()?;
    let best = best.clone();
    Ok(EvolveOutcome {
        best,
        best_index,
        best_fitness,
        bank,
        history: state.history.clone(),
        state,
        sgd_steps,
    })
}

struct CountingEvaluator<E> {
    inner: E,
    batches: usize,
}

impl<E: PathwayEvaluator> PathwayEvaluator for CountingEvaluator<E> {
    fn evaluate(&mut self, g: &Genotype, rng: &mut ChaCha8Rng) -> Result<FitnessRecord> {
        let rec = self.inner.evaluate(g, rng)?;
        self.batches += rec.batches_seen;
        Ok(rec)
    }
}
