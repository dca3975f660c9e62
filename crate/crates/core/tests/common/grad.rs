//! Central-difference gradient oracle shared by the gradient tests and the
//! acceptance suite.
#![allow(dead_code)]

use pathnet::network::{Batch, Linear, ModuleBank};
use pathnet::{Genotype, HyperParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
/// Below this magnitude both derivatives count as zero and are compared absolutely.
const ZERO_FLOOR: f64 = 1e-7;

struct Case {
    hp: HyperParams,
    bank: ModuleBank<f64>,
    g: Genotype,
    pinned: Option<Genotype>,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let modules_per_layer = rng.random_range(2..=4);
        let hp = HyperParams {
            num_layers: rng.random_range(1..=3),
            modules_per_layer,
            module_width: rng.random_range(2..=4),
            max_active_per_layer: rng.random_range(1..=modules_per_layer),
            input_dim: rng.random_range(2..=5),
            ..Default::default()
        };
        let classes = rng.random_range(2..=4);
        let mut bank = ModuleBank::<f64>::init(&hp, &mut rng).unwrap();
        bank.add_head("t", classes, &mut rng);
        let total = bank.num_module_params() + bank.head("t").unwrap().num_params();
        if total > 200 {
            continue;
        }
        // nonzero biases so every code path carries signal
        for l in 0..hp.num_layers {
            for m in 0..hp.modules_per_layer {
                for b in &mut bank.module_mut(l, m).bias {
                    *b = rng.random_range(-0.3..0.3);
                }
                if rng.random_bool(0.2) {
                    bank.set_frozen(l, m, true);
                }
            }
        }
        let g = Genotype::random(&hp, &mut rng);
        let pinned = rng
            .random_bool(0.5)
            .then(|| Genotype::random(&hp, &mut rng));
        let n = rng.random_range(1..=5);
        let inputs = (0..n * hp.input_dim)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        return Case {
            hp,
            bank,
            g,
            pinned,
            inputs,
            labels,
        };
    }
}

fn loss(case: &Case, bank: &ModuleBank<f64>) -> f64 {
    bank.loss_and_grads(
        &case.g,
        case.pinned.as_ref(),
        Batch {
            inputs: &case.inputs,
            labels: &case.labels,
        },
        "t",
    )
    .unwrap()
    .loss
}

/// Central difference for every parameter of one linear map.
fn numeric(case: &Case, pick: impl Fn(&mut ModuleBank<f64>) -> &mut Linear<f64>) -> Linear<f64> {
    let mut bank = case.bank.clone();
    let (in_dim, out_dim) = {
        let p = pick(&mut bank);
        (p.in_dim, p.out_dim)
    };
    let mut out = Linear::zeros(in_dim, out_dim);
    for k in 0..in_dim * out_dim + out_dim {
        let slot = |b: &mut ModuleBank<f64>| -> *mut f64 {
            let p = pick(b);
            if k < in_dim * out_dim {
                &mut p.weights[k]
            } else {
                &mut p.bias[k - in_dim * out_dim]
            }
        };
        let orig = unsafe { *slot(&mut bank) };
        unsafe { *slot(&mut bank) = orig + EPS };
        let up = loss(case, &bank);
        unsafe { *slot(&mut bank) = orig - EPS };
        let down = loss(case, &bank);
        unsafe { *slot(&mut bank) = orig };
        let d = (up - down) / (2.0 * EPS);
        if k < in_dim * out_dim {
            out.weights[k] = d;
        } else {
            out.bias[k - in_dim * out_dim] = d;
        }
    }
    out
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ZERO_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn max_rel_err(analytic: &Linear<f64>, numeric: &Linear<f64>) -> f64 {
    analytic
        .weights
        .iter()
        .chain(&analytic.bias)
        .zip(numeric.weights.iter().chain(&numeric.bias))
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Returns the worst relative error across every gradient entry of the case.
pub fn check_case(seed: u64) -> f64 {
    let case = random_case(seed);
    let out = case
        .bank
        .loss_and_grads(
            &case.g,
            case.pinned.as_ref(),
            Batch {
                inputs: &case.inputs,
                labels: &case.labels,
            },
            "t",
        )
        .unwrap();
    let mut worst = max_rel_err(
        &out.grads.head,
        &numeric(&case, |b| b.head_mut("t").unwrap()),
    );
    let active = pathnet::genotype::effective_active(&case.g, case.pinned.as_ref());
    let mut expected = 0;
    for (l, mods) in active.iter().enumerate() {
        for &m in mods {
            if case.bank.is_frozen(l, m) {
                continue;
            }
            expected += 1;
            let analytic = out
                .grads
                .modules
                .iter()
                .find(|mg| mg.layer == l && mg.module == m)
                .expect("gradient for every active unfrozen module");
            let num = numeric(&case, |b| b.module_mut(l, m));
            worst = worst.max(max_rel_err(&analytic.grad, &num));
        }
    }
    assert_eq!(
        out.grads.modules.len(),
        expected,
        "no gradients for frozen or inactive modules"
    );
    // inactive modules do not influence the loss at all
    for (l, mods) in active.iter().enumerate() {
        for m in 0..case.hp.modules_per_layer {
            if !mods.contains(&m) {
                let num = numeric(&case, |b| b.module_mut(l, m));
                assert!(num.weights.iter().chain(&num.bias).all(|&d| d == 0.0));
            }
        }
    }
    worst
}
