//! Module bank and pathway-restricted forward/backward passes.
//!
//! Every layer holds `M` fully connected ReLU modules. A pathway activates a
//! subset of modules per layer; the layer output is the arithmetic mean of the
//! active modules' outputs. Each task owns a linear softmax head on top.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genotype::{effective_active, Genotype};
use crate::hparams::HyperParams;
use crate::par;

/// Floating-point type for parameters and activations.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
fn from_f64<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 converts to scalar")
}

#[inline]
fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().expect("scalar converts to f64")
}

/// Dense affine map `y = xW + b`, `W` stored row-major as `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Weights uniform in `±sqrt(6 / in_dim)`, zero biases.
    pub fn scaled_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| from_f64(rng.random_range(-limit..=limit)))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.bias);
        for (xi, row) in x.iter().zip(self.weights.chunks_exact(self.out_dim)) {
            if xi.is_zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + *xi * w;
            }
        }
    }

    /// `W * dy`, the gradient with respect to the input.
    fn back(&self, dy: &[T], dx: &mut [T]) {
        for (d, row) in dx.iter_mut().zip(self.weights.chunks_exact(self.out_dim)) {
            let mut acc = *d;
            for (&w, &g) in row.iter().zip(dy) {
                acc = acc + w * g;
            }
            *d = acc;
        }
    }

    fn same_shape(&self, other: &Linear<T>) -> bool {
        self.in_dim == other.in_dim
            && self.out_dim == other.out_dim
            && self.weights.len() == other.weights.len()
            && self.bias.len() == other.bias.len()
    }
}

/// Sizes that determine the bank's parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankShape {
    pub num_layers: usize,
    pub modules_per_layer: usize,
    pub module_width: usize,
    pub input_dim: usize,
}

impl BankShape {
    pub fn of(hp: &HyperParams) -> Self {
        Self {
            num_layers: hp.num_layers,
            modules_per_layer: hp.modules_per_layer,
            module_width: hp.module_width,
            input_dim: hp.input_dim,
        }
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.module_width
        }
    }
}

/// All learnable parameters: `L x M` modules, per-task heads and a freeze mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleBank<T> {
    shape: BankShape,
    layers: Vec<Vec<Linear<T>>>,
    heads: BTreeMap<String, Linear<T>>,
    frozen: Vec<Vec<bool>>,
}

/// A mini-batch: `labels.len()` rows of `input_dim` values.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    pub inputs: &'a [T],
    pub labels: &'a [usize],
}

/// Gradient of one module, addressed by `(layer, module)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleGrad<T> {
    pub layer: usize,
    pub module: usize,
    pub grad: Linear<T>,
}

/// Gradients for the trainable parameters touched by one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub modules: Vec<ModuleGrad<T>>,
    pub task: String,
    pub head: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct LossAndGrads<T> {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub grads: Gradients<T>,
    /// Argmax prediction per sample, computed before any update.
    pub predictions: Vec<usize>,
}

impl LossAndGrads<f32> {
    pub fn correct(&self, labels: &[usize]) -> usize {
        self.predictions
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count()
    }
}

struct Trace<T> {
    /// Inputs of layers `1..L` followed by the top hidden vector.
    hidden: Vec<Vec<T>>,
    /// Pre-activations per layer, per active module.
    pre: Vec<Vec<Vec<T>>>,
    logits: Vec<f64>,
    posterior: Vec<f64>,
}

struct SampleDeltas<T> {
    dlogits: Vec<T>,
    /// Per layer, per active module: gradient w.r.t. the pre-activation.
    dpre: Vec<Vec<Vec<T>>>,
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}

impl<T: Scalar> ModuleBank<T> {
    /// Fresh bank: scaled-uniform module weights, zero biases, no heads,
    /// nothing frozen. Draw order is layer-major, then module, then row.
    pub fn init<R: Rng + ?Sized>(hp: &HyperParams, rng: &mut R) -> Result<Self> {
        hp.validate()?;
        let shape = BankShape::of(hp);
        let layers = (0..shape.num_layers)
            .map(|l| {
                (0..shape.modules_per_layer)
                    .map(|_| {
                        Linear::scaled_uniform(shape.layer_input_dim(l), shape.module_width, rng)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            shape,
            layers,
            heads: BTreeMap::new(),
            frozen: vec![vec![false; shape.modules_per_layer]; shape.num_layers],
        })
    }

    /// Assembles a bank from raw parts, checking every shape.
    pub fn from_parts(
        shape: BankShape,
        layers: Vec<Vec<Linear<T>>>,
        heads: BTreeMap<String, Linear<T>>,
        frozen: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if layers.len() != shape.num_layers || frozen.len() != shape.num_layers {
            return Err(Error::Shape("layer count does not match shape".into()));
        }
        for (l, (mods, mask)) in layers.iter().zip(&frozen).enumerate() {
            if mods.len() != shape.modules_per_layer || mask.len() != shape.modules_per_layer {
                return Err(Error::Shape(format!("layer {l}: wrong module count")));
            }
            for m in mods {
                if m.in_dim != shape.layer_input_dim(l)
                    || m.out_dim != shape.module_width
                    || m.weights.len() != m.in_dim * m.out_dim
                    || m.bias.len() != m.out_dim
                {
                    return Err(Error::Shape(format!("layer {l}: wrong module dimensions")));
                }
            }
        }
        for (task, h) in &heads {
            if h.in_dim != shape.module_width
                || h.weights.len() != h.in_dim * h.out_dim
                || h.bias.len() != h.out_dim
            {
                return Err(Error::Shape(format!("head {task:?}: wrong dimensions")));
            }
        }
        Ok(Self {
            shape,
            layers,
            heads,
            frozen,
        })
    }

    pub fn shape(&self) -> BankShape {
        self.shape
    }

    pub fn module(&self, layer: usize, module: usize) -> &Linear<T> {
        &self.layers[layer][module]
    }

    pub fn module_mut(&mut self, layer: usize, module: usize) -> &mut Linear<T> {
        &mut self.layers[layer][module]
    }

    pub fn layers(&self) -> &[Vec<Linear<T>>] {
        &self.layers
    }

    pub fn heads(&self) -> &BTreeMap<String, Linear<T>> {
        &self.heads
    }

    pub fn head(&self, task: &str) -> Option<&Linear<T>> {
        self.heads.get(task)
    }

    pub fn head_mut(&mut self, task: &str) -> Option<&mut Linear<T>> {
        self.heads.get_mut(task)
    }

    /// Draws a new `module_width -> num_classes` head for `task`, replacing
    /// any existing one.
    pub fn add_head<R: Rng + ?Sized>(&mut self, task: &str, num_classes: usize, rng: &mut R) {
        let head = Linear::scaled_uniform(self.shape.module_width, num_classes, rng);
        self.heads.insert(task.to_string(), head);
    }

    pub fn is_frozen(&self, layer: usize, module: usize) -> bool {
        self.frozen[layer][module]
    }

    pub fn frozen_mask(&self) -> &[Vec<bool>] {
        &self.frozen
    }

    pub fn set_frozen(&mut self, layer: usize, module: usize, frozen: bool) {
        self.frozen[layer][module] = frozen;
    }

    pub fn num_frozen(&self) -> usize {
        self.frozen.iter().flatten().filter(|&&f| f).count()
    }

    /// Parameters in the module layers, excluding heads.
    pub fn num_module_params(&self) -> usize {
        self.layers.iter().flatten().map(Linear::num_params).sum()
    }

    /// Keeps (and freezes) the modules active in `keep`, redraws every other
    /// module as [`ModuleBank::init`] would, and drops all heads.
    pub fn reinit_except<R: Rng + ?Sized>(mut self, keep: &Genotype, rng: &mut R) -> Self {
        let kept = keep.active_modules();
        let shape = self.shape;
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (m, module) in layer.iter_mut().enumerate() {
                let is_kept = kept.get(l).is_some_and(|k| k.binary_search(&m).is_ok());
                self.frozen[l][m] = is_kept;
                if !is_kept {
                    *module =
                        Linear::scaled_uniform(shape.layer_input_dim(l), shape.module_width, rng);
                }
            }
        }
        self.heads.clear();
        self
    }

    fn check_input(&self, x: &[T], offset: usize) -> Result<()> {
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(offset + i));
        }
        Ok(())
    }

    fn active_for(&self, g: &Genotype, pinned: Option<&Genotype>) -> Result<Vec<Vec<usize>>> {
        let check = |g: &Genotype| {
            if g.num_layers() != self.shape.num_layers
                || g.genes()
                    .iter()
                    .flatten()
                    .any(|&m| m >= self.shape.modules_per_layer)
            {
                Err(Error::InvalidGenotype(format!("{g} does not fit the bank")))
            } else {
                Ok(())
            }
        };
        check(g)?;
        if let Some(p) = pinned {
            check(p)?;
        }
        Ok(effective_active(g, pinned))
    }

    fn trace(&self, active: &[Vec<usize>], head: &Linear<T>, x: &[T]) -> Trace<T> {
        let width = self.shape.module_width;
        let mut hidden: Vec<Vec<T>> = Vec::with_capacity(active.len());
        let mut pre = Vec::with_capacity(active.len());
        for (l, mods) in active.iter().enumerate() {
            let input: &[T] = if l == 0 { x } else { &hidden[l - 1] };
            let mut zs = Vec::with_capacity(mods.len());
            let mut acc = vec![0.0f64; width];
            for &m in mods {
                let mut z = vec![T::zero(); width];
                self.layers[l][m].apply(input, &mut z);
                for (a, &v) in acc.iter_mut().zip(&z) {
                    *a += to_f64(v.max(T::zero()));
                }
                zs.push(z);
            }
            let n = mods.len() as f64;
            hidden.push(acc.into_iter().map(|a| from_f64(a / n)).collect());
            pre.push(zs);
        }
        let mut out = vec![T::zero(); head.out_dim];
        head.apply(hidden.last().expect("at least one layer"), &mut out);
        let logits: Vec<f64> = out.into_iter().map(to_f64).collect();
        let posterior = softmax(&logits);
        Trace {
            hidden,
            pre,
            logits,
            posterior,
        }
    }

    fn backprop(
        &self,
        active: &[Vec<usize>],
        head: &Linear<T>,
        trace: &Trace<T>,
        label: usize,
        scale: f64,
    ) -> SampleDeltas<T> {
        let width = self.shape.module_width;
        let dlogits: Vec<T> = trace
            .posterior
            .iter()
            .enumerate()
            .map(|(k, &p)| from_f64((p - if k == label { 1.0 } else { 0.0 }) * scale))
            .collect();
        let mut dh = vec![T::zero(); width];
        head.back(&dlogits, &mut dh);

        let mut dpre = vec![Vec::new(); active.len()];
        for l in (0..active.len()).rev() {
            let mods = &active[l];
            let inv = from_f64::<T>(1.0 / mods.len() as f64);
            let dzs: Vec<Vec<T>> = trace.pre[l]
                .iter()
                .map(|z| {
                    z.iter()
                        .zip(&dh)
                        .map(|(&zj, &g)| if zj > T::zero() { g * inv } else { T::zero() })
                        .collect()
                })
                .collect();
            if l > 0 {
                let mut below = vec![T::zero(); width];
                for (&m, dz) in mods.iter().zip(&dzs) {
                    self.layers[l][m].back(dz, &mut below);
                }
                dh = below;
            }
            dpre[l] = dzs;
        }
        SampleDeltas { dlogits, dpre }
    }

    /// Class posterior for one input along the pathway `g` (plus `pinned`).
    pub fn forward(
        &self,
        g: &Genotype,
        pinned: Option<&Genotype>,
        x: &[T],
        task: &str,
    ) -> Result<Vec<f64>> {
        let head = self
            .head(task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))?;
        if x.len() != self.shape.input_dim {
            return Err(Error::Shape(format!(
                "input has {} values, expected {}",
                x.len(),
                self.shape.input_dim
            )));
        }
        self.check_input(x, 0)?;
        let active = self.active_for(g, pinned)?;
        Ok(self.trace(&active, head, x).posterior)
    }

    /// Posteriors for every row of `inputs`, in row order.
    pub fn predict_batch(
        &self,
        g: &Genotype,
        pinned: Option<&Genotype>,
        inputs: &[T],
        task: &str,
    ) -> Result<Vec<Vec<f64>>> {
        let head = self
            .head(task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))?;
        let dim = self.shape.input_dim;
        if !inputs.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} input values is not a multiple of {dim}",
                inputs.len()
            )));
        }
        self.check_input(inputs, 0)?;
        let active = self.active_for(g, pinned)?;
        let n = inputs.len() / dim;
        Ok(par::map_range(n, |i| {
            self.trace(&active, head, &inputs[i * dim..(i + 1) * dim])
                .posterior
        }))
    }

    /// Mean softmax cross-entropy over the batch and its gradients.
    ///
    /// Gradients cover the task head and every active module of `g ∪ pinned`
    /// that is not frozen. Frozen modules still pass gradient to the layers
    /// below them.
    pub fn loss_and_grads(
        &self,
        g: &Genotype,
        pinned: Option<&Genotype>,
        batch: Batch<'_, T>,
        task: &str,
    ) -> Result<LossAndGrads<T>> {
        let head = self
            .head(task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))?;
        let dim = self.shape.input_dim;
        let n = batch.labels.len();
        if n == 0 || batch.inputs.len() != n * dim {
            return Err(Error::Shape(format!(
                "batch of {n} labels has {} input values (dim {dim})",
                batch.inputs.len()
            )));
        }
        if let Some(&bad) = batch.labels.iter().find(|&&y| y >= head.out_dim) {
            return Err(Error::Shape(format!(
                "label {bad} out of range for {} classes",
                head.out_dim
            )));
        }
        self.check_input(batch.inputs, 0)?;
        let active = self.active_for(g, pinned)?;
        let scale = 1.0 / n as f64;

        let per_sample: Vec<(Trace<T>, SampleDeltas<T>, f64)> = par::map_range(n, |i| {
            let x = &batch.inputs[i * dim..(i + 1) * dim];
            let y = batch.labels[i];
            let trace = self.trace(&active, head, x);
            let logp = log_softmax_at(&trace.logits, y);
            let deltas = self.backprop(&active, head, &trace, y, scale);
            (trace, deltas, logp)
        });

        let loss = -per_sample.iter().map(|(_, _, lp)| lp).sum::<f64>() * scale;
        let predictions = per_sample
            .iter()
            .map(|(t, _, _)| argmax(&t.posterior))
            .collect();

        let width = self.shape.module_width;
        let mut head_grad = Linear::zeros(width, head.out_dim);
        for (trace, deltas, _) in &per_sample {
            let top = trace.hidden.last().expect("at least one layer");
            for (row, &h) in head_grad.weights.chunks_exact_mut(head.out_dim).zip(top) {
                for (w, &d) in row.iter_mut().zip(&deltas.dlogits) {
                    *w = *w + h * d;
                }
            }
            for (b, &d) in head_grad.bias.iter_mut().zip(&deltas.dlogits) {
                *b = *b + d;
            }
        }

        let mut modules = Vec::new();
        for (l, mods) in active.iter().enumerate() {
            let in_dim = self.shape.layer_input_dim(l);
            for (slot, &m) in mods.iter().enumerate() {
                if self.frozen[l][m] {
                    continue;
                }
                let mut grad = Linear::zeros(in_dim, width);
                let rows_per_chunk = (4096 / width).max(1);
                par::for_each_chunk_mut(&mut grad.weights, rows_per_chunk * width, |ci, chunk| {
                    let row0 = ci * rows_per_chunk;
                    for (b, (trace, deltas, _)) in per_sample.iter().enumerate() {
                        let input: &[T] = if l == 0 {
                            &batch.inputs[b * dim..(b + 1) * dim]
                        } else {
                            &trace.hidden[l - 1]
                        };
                        let dz = &deltas.dpre[l][slot];
                        for (r, row) in chunk.chunks_exact_mut(width).enumerate() {
                            let h = input[row0 + r];
                            if h.is_zero() {
                                continue;
                            }
                            for (w, &d) in row.iter_mut().zip(dz) {
                                *w = *w + h * d;
                            }
                        }
                    }
                });
                for (_, deltas, _) in &per_sample {
                    for (b, &d) in grad.bias.iter_mut().zip(&deltas.dpre[l][slot]) {
                        *b = *b + d;
                    }
                }
                modules.push(ModuleGrad {
                    layer: l,
                    module: m,
                    grad,
                });
            }
        }

        Ok(LossAndGrads {
            loss,
            grads: Gradients {
                modules,
                task: task.to_string(),
                head: head_grad,
            },
            predictions,
        })
    }

    /// `θ ← θ − lr·∇θ` for every parameter with a gradient entry.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let lr: T = from_f64(lr);
        for mg in &grads.modules {
            if mg.layer >= self.shape.num_layers || mg.module >= self.shape.modules_per_layer {
                return Err(Error::Shape(format!(
                    "gradient for nonexistent module ({}, {})",
                    mg.layer, mg.module
                )));
            }
            if self.frozen[mg.layer][mg.module] {
                return Err(Error::FrozenModule {
                    layer: mg.layer,
                    module: mg.module,
                });
            }
            if !self.layers[mg.layer][mg.module].same_shape(&mg.grad) {
                return Err(Error::Shape(format!(
                    "gradient shape differs for module ({}, {})",
                    mg.layer, mg.module
                )));
            }
        }
        let head = self
            .heads
            .get(&grads.task)
            .ok_or_else(|| Error::UnknownTask(grads.task.clone()))?;
        if !head.same_shape(&grads.head) {
            return Err(Error::Shape(format!(
                "gradient shape differs for head {:?}",
                grads.task
            )));
        }

        for mg in &grads.modules {
            descend(&mut self.layers[mg.layer][mg.module], &mg.grad, lr);
        }
        let head = self.heads.get_mut(&grads.task).expect("checked above");
        descend(head, &grads.head, lr);
        Ok(())
    }
}

fn descend<T: Scalar>(p: &mut Linear<T>, g: &Linear<T>, lr: T) {
    for (w, &d) in p.weights.iter_mut().zip(&g.weights) {
        *w = *w - lr * d;
    }
    for (b, &d) in p.bias.iter_mut().zip(&g.bias) {
        *b = *b - lr * d;
    }
}

/// Learnable parameters along one pathway, heads excluded.
pub fn count_pathway_params(hp: &HyperParams, g: &Genotype) -> u64 {
    g.active_modules()
        .iter()
        .enumerate()
        .map(|(l, mods)| {
            let per_module = hp.layer_input_dim(l) * hp.module_width + hp.module_width;
            (mods.len() * per_module) as u64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small_hp() -> HyperParams {
        HyperParams {
            num_layers: 3,
            modules_per_layer: 5,
            module_width: 4,
            max_active_per_layer: 2,
            input_dim: 6,
            ..Default::default()
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let hp = small_hp();
        let a = ModuleBank::<f32>::init(&hp, &mut rng(7)).unwrap();
        let b = ModuleBank::<f32>::init(&hp, &mut rng(7)).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 6.0).sqrt() as f32;
        assert!(a.module(0, 0).weights.iter().all(|w| w.abs() <= limit));
        assert!(a.module(1, 3).bias.iter().all(|b| *b == 0.0));
        assert_eq!(a.num_frozen(), 0);
    }

    #[test]
    fn default_bank_layout() {
        let hp = HyperParams::default();
        let bank = ModuleBank::<f32>::init(&hp, &mut rng(1)).unwrap();
        assert_eq!(bank.module(0, 0).weights.len(), 12_288 * 20);
        assert_eq!(bank.module(1, 0).weights.len(), 20 * 20);
        assert_eq!(bank.module(2, 19).weights.len(), 20 * 20);
        assert_eq!(bank.num_module_params(), 4_932_400);
    }

    #[test]
    fn zero_weights_give_uniform_posterior() {
        let hp = small_hp();
        let mut bank = ModuleBank::<f64>::init(&hp, &mut rng(2)).unwrap();
        bank.add_head("t", 3, &mut rng(3));
        for layer in bank.layers.iter_mut() {
            for m in layer.iter_mut() {
                m.weights.iter_mut().for_each(|w| *w = 0.0);
            }
        }
        let h = bank.head_mut("t").unwrap();
        h.weights.iter_mut().for_each(|w| *w = 0.0);
        let g = Genotype::random(&hp, &mut rng(4));
        let p = bank
            .forward(&g, None, &[0.3, -1.0, 2.0, 0.0, 5.0, 1.0], "t")
            .unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_two_class_posterior() {
        // One layer, width 1, input dim 2, one module active.
        let hp = HyperParams {
            num_layers: 1,
            modules_per_layer: 2,
            module_width: 1,
            max_active_per_layer: 1,
            input_dim: 2,
            ..Default::default()
        };
        let mut bank = ModuleBank::<f64>::init(&hp, &mut rng(0)).unwrap();
        *bank.module_mut(0, 1) = Linear {
            in_dim: 2,
            out_dim: 1,
            weights: vec![0.5, -1.0],
            bias: vec![0.25],
        };
        bank.heads.insert(
            "t".into(),
            Linear {
                in_dim: 1,
                out_dim: 2,
                weights: vec![2.0, -1.0],
                bias: vec![0.0, 0.5],
            },
        );
        let g = Genotype::new(vec![vec![1]], &hp).unwrap();
        // z = 0.5*2 - 1*0.5 + 0.25 = 0.75 -> relu 0.75
        // logits = [1.5, -0.25]; p0 = 1 / (1 + e^{-1.75})
        let p = bank.forward(&g, None, &[2.0, 0.5], "t").unwrap();
        let p0 = 1.0 / (1.0 + (-1.75f64).exp());
        assert!((p[0] - p0).abs() < 1e-12);
        assert!((p[1] - (1.0 - p0)).abs() < 1e-12);
    }

    #[test]
    fn unknown_task_and_nonfinite_input() {
        let hp = small_hp();
        let mut bank = ModuleBank::<f32>::init(&hp, &mut rng(2)).unwrap();
        let g = Genotype::random(&hp, &mut rng(4));
        let x = [0.0f32; 6];
        assert!(matches!(
            bank.forward(&g, None, &x, "t"),
            Err(Error::UnknownTask(_))
        ));
        bank.add_head("t", 2, &mut rng(3));
        let mut bad = x;
        bad[4] = f32::NAN;
        assert!(matches!(
            bank.forward(&g, None, &bad, "t"),
            Err(Error::NonFiniteInput(4))
        ));
    }

    #[test]
    fn uniform_posterior_loss_is_ln_c() {
        let hp = small_hp();
        let mut bank = ModuleBank::<f64>::init(&hp, &mut rng(2)).unwrap();
        bank.add_head("t", 5, &mut rng(3));
        let h = bank.head_mut("t").unwrap();
        h.weights.iter_mut().for_each(|w| *w = 0.0);
        let g = Genotype::random(&hp, &mut rng(4));
        let inputs = vec![0.5; 12];
        let out = bank
            .loss_and_grads(
                &g,
                None,
                Batch {
                    inputs: &inputs,
                    labels: &[0, 3],
                },
                "t",
            )
            .unwrap();
        assert!((out.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fully_frozen_bank_yields_head_gradient_only() {
        let hp = small_hp();
        let mut bank = ModuleBank::<f32>::init(&hp, &mut rng(2)).unwrap();
        bank.add_head("t", 2, &mut rng(3));
        for l in 0..3 {
            for m in 0..5 {
                bank.set_frozen(l, m, true);
            }
        }
        let g = Genotype::random(&hp, &mut rng(4));
        let inputs = vec![0.5f32; 6];
        let out = bank
            .loss_and_grads(
                &g,
                None,
                Batch {
                    inputs: &inputs,
                    labels: &[1],
                },
                "t",
            )
            .unwrap();
        assert!(out.grads.modules.is_empty());
        assert_eq!(out.grads.head.weights.len(), 4 * 2);
    }

    #[test]
    fn sgd_step_arithmetic() {
        let hp = small_hp();
        let mut bank = ModuleBank::<f64>::init(&hp, &mut rng(2)).unwrap();
        bank.add_head("t", 2, &mut rng(3));
        bank.module_mut(0, 0).weights[0] = 1.0;
        let mut grad = Linear::zeros(6, 4);
        grad.weights[0] = 2.0;
        let grads = Gradients {
            modules: vec![ModuleGrad {
                layer: 0,
                module: 0,
                grad,
            }],
            task: "t".into(),
            head: Linear::zeros(4, 2),
        };
        let before = bank.clone();
        bank.sgd_step(&grads, 0.02).unwrap();
        assert!((bank.module(0, 0).weights[0] - 0.96).abs() < 1e-15);
        assert_eq!(
            bank.module(0, 0).weights[1..],
            before.module(0, 0).weights[1..]
        );
        assert_eq!(bank.module(0, 1), before.module(0, 1));
    }

    #[test]
    fn sgd_step_rejects_bad_gradients() {
        let hp = small_hp();
        let mut bank = ModuleBank::<f32>::init(&hp, &mut rng(2)).unwrap();
        bank.add_head("t", 2, &mut rng(3));
        let grads = Gradients {
            modules: vec![ModuleGrad {
                layer: 0,
                module: 0,
                grad: Linear::zeros(5, 4),
            }],
            task: "t".into(),
            head: Linear::zeros(4, 2),
        };
        assert!(matches!(bank.sgd_step(&grads, 0.1), Err(Error::Shape(_))));
        bank.set_frozen(0, 0, true);
        let grads = Gradients {
            modules: vec![ModuleGrad {
                layer: 0,
                module: 0,
                grad: Linear::zeros(6, 4),
            }],
            ..grads
        };
        assert!(matches!(
            bank.sgd_step(&grads, 0.1),
            Err(Error::FrozenModule { .. })
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_bank_unchanged() {
        let hp = small_hp();
        let mut bank = ModuleBank::<f32>::init(&hp, &mut rng(2)).unwrap();
        bank.add_head("t", 2, &mut rng(3));
        let g = Genotype::random(&hp, &mut rng(4));
        let inputs: Vec<f32> = (0..12).map(|i| i as f32 * 0.1).collect();
        let out = bank
            .loss_and_grads(
                &g,
                None,
                Batch {
                    inputs: &inputs,
                    labels: &[0, 1],
                },
                "t",
            )
            .unwrap();
        let before = bank.clone();
        bank.sgd_step(&out.grads, 0.0).unwrap();
        assert_eq!(bank, before);
    }

    #[test]
    fn pathway_param_counts() {
        let hp = HyperParams::default();
        let four = Genotype::new(vec![vec![0, 1, 2, 3]; 3], &hp).unwrap();
        assert_eq!(count_pathway_params(&hp, &four), 986_480);
        let one = Genotype::new(vec![vec![7; 4]; 3], &hp).unwrap();
        assert_eq!(count_pathway_params(&hp, &one), 245_780 + 420 + 420);
        let dup = Genotype::new(
            vec![vec![5, 5, 5, 5], vec![1, 2, 3, 4], vec![1, 2, 3, 4]],
            &hp,
        )
        .unwrap();
        assert_eq!(count_pathway_params(&hp, &dup), 245_780 + 4 * 420 * 2);
    }

    #[test]
    fn reinit_keeps_and_freezes_pathway() {
        let hp = small_hp();
        let mut bank = ModuleBank::<f32>::init(&hp, &mut rng(2)).unwrap();
        bank.add_head("src", 2, &mut rng(3));
        let keep = Genotype::new(vec![vec![0, 0]; 3], &hp).unwrap();
        let out = bank.clone().reinit_except(&keep, &mut rng(9));
        let again = bank.clone().reinit_except(&keep, &mut rng(9));
        assert_eq!(out, again);
        assert!(out.heads().is_empty());
        for l in 0..3 {
            assert_eq!(out.module(l, 0), bank.module(l, 0));
            assert!(out.is_frozen(l, 0));
            for m in 1..5 {
                assert_ne!(out.module(l, m), bank.module(l, m));
                assert!(!out.is_frozen(l, m));
            }
        }
    }

    #[test]
    fn reinit_covering_everything_only_drops_heads() {
        let hp = HyperParams {
            modules_per_layer: 2,
            max_active_per_layer: 2,
            ..small_hp()
        };
        let mut bank = ModuleBank::<f32>::init(&hp, &mut rng(2)).unwrap();
        bank.add_head("src", 2, &mut rng(3));
        let keep = Genotype::new(vec![vec![0, 1]; 3], &hp).unwrap();
        let out = bank.clone().reinit_except(&keep, &mut rng(9));
        assert_eq!(out.layers(), bank.layers());
        assert_eq!(out.num_frozen(), 6);
    }

    #[test]
    fn parallel_and_sequential_paths_match_bitwise() {
        let hp = HyperParams {
            input_dim: 300,
            module_width: 8,
            modules_per_layer: 6,
            max_active_per_layer: 3,
            ..Default::default()
        };
        let mut bank = ModuleBank::<f32>::init(&hp, &mut rng(5)).unwrap();
        bank.add_head("t", 4, &mut rng(6));
        let g = Genotype::random(&hp, &mut rng(7));
        let mut r = rng(8);
        let inputs: Vec<f32> = (0..300 * 17).map(|_| r.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..17).map(|i| i % 4).collect();
        let batch = Batch {
            inputs: &inputs,
            labels: &labels,
        };
        let par_out = bank.loss_and_grads(&g, None, batch, "t").unwrap();
        par::set_sequential(true);
        let seq_out = bank.loss_and_grads(&g, None, batch, "t").unwrap();
        par::set_sequential(false);
        assert_eq!(par_out.loss.to_bits(), seq_out.loss.to_bits());
        assert_eq!(par_out.grads, seq_out.grads);
    }
}
