//! Central finite-difference comparison against reverse-mode gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mode, Var};
use super::params::{Binding, ParamStore};
use super::tensor::Tensor;
use super::NnError;

/// Denominator floor for the relative error, so that two gradients that are
/// both numerically zero do not produce a spurious large ratio.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst: String,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `loss`'s backward gradients with central differences of step `eps`
/// on up to `samples` randomly chosen trainable values.
///
/// `loss` receives a fresh graph, the binding of `store`'s trainable tensors
/// and a private copy of the store (batch-norm layers update running stats).
pub fn check_gradients<L>(
    store: &ParamStore<f64>,
    samples: usize,
    seed: u64,
    eps: f64,
    loss: L,
) -> Result<GradCheckReport, NnError>
where
    L: Fn(&mut Graph<f64>, &Binding, &mut ParamStore<f64>) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let binding = store.bind(&mut g);
    let mut scratch = store.clone();
    let l = loss(&mut g, &binding, &mut scratch)?;
    let mut grads = g.backward(l)?;
    let analytic = binding.gradients(&mut grads);

    let slots: Vec<(usize, usize)> = store
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(i, p)| (0..p.value.len()).map(move |k| (i, k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<(usize, usize)> = if slots.len() <= samples {
        slots
    } else {
        let mut idx = sample(&mut rng, slots.len(), samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| slots[i]).collect()
    };

    let eval = |perturbed: &ParamStore<f64>| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let b = perturbed.bind(&mut g);
        let mut scratch = perturbed.clone();
        let l = loss(&mut g, &b, &mut scratch)?;
        Ok(g.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: String::new(),
    };
    for (pi, k) in chosen {
        let mut plus = store.clone();
        plus.value_mut(pi).data_mut()[k] += eps;
        let mut minus = store.clone();
        minus.value_mut(pi).data_mut()[k] -= eps;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let a = analytic[pi].as_ref().map(|t| t.data()[k]).unwrap_or(0.0);
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_empty() {
            report.max_relative_error = err.max(report.max_relative_error);
            if err >= report.max_relative_error {
                report.worst = format!(
                    "{}[{}]: analytic {:e}, numeric {:e}",
                    store.params()[pi].name,
                    k,
                    a,
                    numeric
                );
            }
        }
    }
    Ok(report)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

fn coeffs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Default finite-difference step for the 64-bit checks.
pub const CHECK_EPS: f64 = 1e-5;

/// Checks each differentiable op in isolation. Every input is a trainable
/// leaf, so gradients with respect to inputs are covered as well; the
/// scalar head is a random weighted sum of the op's output.
pub fn layer_suite(seed: u64, samples: usize) -> Result<Vec<(&'static str, GradCheckReport)>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // embedding
    let mut s = ParamStore::new();
    s.insert("table", random_tensor(&mut rng, vec![20, 6], -1.0, 1.0), true);
    let idx: Vec<u8> = (0..24).map(|_| rng.random_range(0..20u8)).collect();
    let c = coeffs(&mut rng, 24 * 6);
    out.push((
        "embedding",
        check_gradients(&s, samples, seed, CHECK_EPS, |g, b, _| {
            let e = g.embedding(b.var("table")?, &idx, 3, 8)?;
            g.weighted_sum(e, &c)
        })?,
    ));

    // conv1d
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(&mut rng, vec![2, 9, 4], -1.0, 1.0), true);
    s.insert("w", random_tensor(&mut rng, vec![3, 4, 5], -1.0, 1.0), true);
    s.insert("b", random_tensor(&mut rng, vec![5], -1.0, 1.0), true);
    let c = coeffs(&mut rng, 2 * 7 * 5);
    out.push((
        "conv1d",
        check_gradients(&s, samples, seed, CHECK_EPS, |g, b, _| {
            let y = g.conv1d(b.var("x")?, b.var("w")?, b.var("b")?)?;
            g.weighted_sum(y, &c)
        })?,
    ));

    // relu; inputs kept away from the kink
    let mut s = ParamStore::new();
    let mut x = random_tensor(&mut rng, vec![4, 30], 0.05, 1.0);
    x.data_mut().iter_mut().for_each(|v| {
        if rng.random_bool(0.5) {
            *v = -*v
        }
    });
    s.insert("x", x, true);
    let c = coeffs(&mut rng, 120);
    out.push((
        "relu",
        check_gradients(&s, samples, seed, CHECK_EPS, |g, b, _| {
            let y = g.relu(b.var("x")?)?;
            g.weighted_sum(y, &c)
        })?,
    ));

    // masked pooling
    let mask: Vec<bool> = (0..3 * 10).map(|i| i % 10 < [10, 6, 3][i / 10]).collect();
    for (name, mean) in [("masked_sum", false), ("masked_mean", true)] {
        let mut s = ParamStore::new();
        s.insert("x", random_tensor(&mut rng, vec![3, 10, 5], -1.0, 1.0), true);
        let c = coeffs(&mut rng, 15);
        let mask = mask.clone();
        out.push((
            name,
            check_gradients(&s, samples, seed, CHECK_EPS, move |g, b, _| {
                let x = b.var("x")?;
                let y = if mean {
                    g.masked_mean(x, &mask)?
                } else {
                    g.masked_sum(x, &mask)?
                };
                g.weighted_sum(y, &c)
            })?,
        ));
    }

    // concat
    let mut s = ParamStore::new();
    s.insert("a", random_tensor(&mut rng, vec![4, 13], -1.0, 1.0), true);
    s.insert("b", random_tensor(&mut rng, vec![4, 17], -1.0, 1.0), true);
    let c = coeffs(&mut rng, 4 * 30);
    out.push((
        "concat",
        check_gradients(&s, samples, seed, CHECK_EPS, |g, b, _| {
            let y = g.concat(&[b.var("a")?, b.var("b")?])?;
            g.weighted_sum(y, &c)
        })?,
    ));

    // dense
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(&mut rng, vec![4, 8], -1.0, 1.0), true);
    s.insert("w", random_tensor(&mut rng, vec![8, 9], -1.0, 1.0), true);
    s.insert("b", random_tensor(&mut rng, vec![9], -1.0, 1.0), true);
    let c = coeffs(&mut rng, 36);
    out.push((
        "dense",
        check_gradients(&s, samples, seed, CHECK_EPS, |g, b, _| {
            let y = g.dense(b.var("x")?, b.var("w")?, b.var("b")?)?;
            g.weighted_sum(y, &c)
        })?,
    ));

    // sparse dense
    let mut s = ParamStore::new();
    s.insert("w", random_tensor(&mut rng, vec![30, 4], -1.0, 1.0), true);
    s.insert("b", random_tensor(&mut rng, vec![4], -1.0, 1.0), true);
    let rows: Vec<Vec<(u32, f64)>> = (0..5)
        .map(|_| {
            let mut cols: Vec<u32> = sample(&mut rng, 30, 8).into_iter().map(|c| c as u32).collect();
            cols.sort_unstable();
            cols.into_iter()
                .map(|c| (c, rng.random_range(1.0..4.0f64).round()))
                .collect()
        })
        .collect();
    let c = coeffs(&mut rng, 20);
    out.push((
        "sparse_dense",
        check_gradients(&s, samples, seed, CHECK_EPS, |g, b, _| {
            let y = g.sparse_dense(rows.clone(), b.var("w")?, b.var("b")?)?;
            g.weighted_sum(y, &c)
        })?,
    ));

    // batch norm, both modes
    for (name, mode) in [("batch_norm_train", Mode::Train), ("batch_norm_infer", Mode::Infer)] {
        let mut s = ParamStore::new();
        s.insert("x", random_tensor(&mut rng, vec![8, 12], -2.0, 2.0), true);
        s.insert("bn.gamma", random_tensor(&mut rng, vec![12], 0.5, 1.5), true);
        s.insert("bn.beta", random_tensor(&mut rng, vec![12], -0.5, 0.5), true);
        s.insert("bn.running_mean", random_tensor(&mut rng, vec![12], -0.5, 0.5), false);
        s.insert("bn.running_var", random_tensor(&mut rng, vec![12], 0.5, 2.0), false);
        let c = coeffs(&mut rng, 96);
        out.push((
            name,
            check_gradients(&s, samples, seed, CHECK_EPS, move |g, b, store| {
                let mut stats = store.take_running("bn")?;
                let y = g.batch_norm(b.var("x")?, b.var("bn.gamma")?, b.var("bn.beta")?, &mut stats, mode);
                store.put_running("bn", stats)?;
                g.weighted_sum(y?, &c)
            })?,
        ));
    }

    // sigmoid
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(&mut rng, vec![5, 24], -4.0, 4.0), true);
    let c = coeffs(&mut rng, 120);
    out.push((
        "sigmoid",
        check_gradients(&s, samples, seed, CHECK_EPS, |g, b, _| {
            let y = g.sigmoid(b.var("x")?)?;
            g.weighted_sum(y, &c)
        })?,
    ));

    // binary cross-entropy on probabilities away from the clamp
    let mut s = ParamStore::new();
    s.insert("p", random_tensor(&mut rng, vec![5, 24], 0.05, 0.95), true);
    let target = Tensor::new(
        vec![5, 24],
        (0..120).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect(),
    )?;
    out.push((
        "bce",
        check_gradients(&s, samples, seed, CHECK_EPS, |g, b, _| g.bce(b.var("p")?, &target))?,
    ));

    // weighted sum
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(&mut rng, vec![110], -1.0, 1.0), true);
    let c = coeffs(&mut rng, 110);
    out.push((
        "weighted_sum",
        check_gradients(&s, samples, seed, CHECK_EPS, |g, b, _| g.weighted_sum(b.var("x")?, &c))?,
    ));

    Ok(out)
}
