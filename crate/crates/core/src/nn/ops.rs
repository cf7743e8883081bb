//! Single-sequence entry points for the layer ops. Each wraps the batched
//! graph op with a batch of one, so both paths share the same kernels.

use super::graph::{bce_value, Graph, Mode, RunningStats, PROB_EPS};
use super::kernels;
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Rows of `table: [rows, dim]` selected by `indices`, as `[len, dim]`.
pub fn embed_forward<F: Scalar>(indices: &[u8], table: &Tensor<F>) -> Result<Tensor<F>, NnError> {
    let mut g = Graph::new();
    let t = g.leaf(table.clone(), false);
    let out = g.embedding(t, indices, 1, indices.len())?;
    let v = g.value(out);
    Tensor::new(vec![indices.len(), table.dim(1)], v.data().to_vec())
}

/// Valid cross-correlation of `x: [len, c_in]` with `w: [width, c_in, c_out]`.
pub fn conv1d_forward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>, NnError> {
    if x.shape().len() != 2 || w.shape().len() != 3 || x.dim(1) != w.dim(1) || b.shape() != [w.dim(2)] {
        return Err(NnError::Shape(format!(
            "conv1d: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (len, c_in, width, c_out) = (x.dim(0), x.dim(1), w.dim(0), w.dim(2));
    if len < width {
        return Err(NnError::TooShort { len, width });
    }
    let mut out = vec![F::zero(); (len + 1 - width) * c_out];
    kernels::conv1d_sequence(x.data(), len, c_in, w.data(), width, c_out, b.data(), &mut out);
    Tensor::new(vec![len + 1 - width, c_out], out)
}

/// Column sums of `x: [time, channels]` over rows where `mask` is set.
pub fn sum_over_time<F: Scalar>(x: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>, NnError> {
    if x.shape().len() != 2 || mask.len() != x.dim(0) {
        return Err(NnError::Shape(format!(
            "sum_over_time: x {:?}, mask {}",
            x.shape(),
            mask.len()
        )));
    }
    if !mask.iter().any(|m| *m) {
        return Err(NnError::EmptyPoolingWindow);
    }
    let ch = x.dim(1);
    let mut out = vec![F::zero(); ch];
    kernels::masked_column_sum(x.data(), ch, mask, &mut out);
    Tensor::new(vec![ch], out)
}

pub fn batchnorm_forward<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    stats: &mut RunningStats<F>,
    mode: Mode,
) -> Result<Tensor<F>, NnError> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), false);
    let gv = g.leaf(gamma.clone(), false);
    let bv = g.leaf(beta.clone(), false);
    let out = g.batch_norm(xv, gv, bv, stats, mode)?;
    Ok(g.value(out).clone())
}

/// `x · w + b` for `x: [rows, d_in]`.
pub fn dense_forward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>, NnError> {
    let mut g = Graph::new();
    let (xv, wv, bv) = (
        g.leaf(x.clone(), false),
        g.leaf(w.clone(), false),
        g.leaf(b.clone(), false),
    );
    let out = g.dense(xv, wv, bv)?;
    Ok(g.value(out).clone())
}

pub fn relu<F: Scalar>(x: F) -> F {
    x.max(F::zero())
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    kernels::sigmoid(x, F::from_f64_lossy(PROB_EPS))
}

/// Mean binary cross-entropy over `q` outputs.
pub fn bce_loss<F: Scalar>(p: &[F], y: &[F]) -> Result<F, NnError> {
    if p.len() != y.len() {
        return Err(NnError::Shape(format!(
            "bce: {} probabilities, {} targets",
            p.len(),
            y.len()
        )));
    }
    let eps = F::from_f64_lossy(PROB_EPS);
    let clamped: Vec<F> = p.iter().map(|v| v.max(eps).min(F::one() - eps)).collect();
    Ok(bce_value(&clamped, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn embedding_rows() {
        let table = t(vec![3, 2], vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1]);
        let out = embed_forward(&[2, 0, 2], &table).unwrap();
        assert_eq!(out.shape(), &[3, 2]);
        assert_eq!(out.data(), &[2.0, 2.1, 0.0, 0.1, 2.0, 2.1]);
        assert!(matches!(
            embed_forward(&[3], &table),
            Err(NnError::IndexOutOfRange { index: 3, rows: 3 })
        ));
    }

    #[test]
    fn conv_examples() {
        let x = t(vec![3, 1], vec![1.0, 2.0, 3.0]);
        let w = t(vec![2, 1, 1], vec![1.0, 1.0]);
        let out = conv1d_forward(&x, &w, &t(vec![1], vec![0.0])).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);

        let zero = t(vec![2, 1, 1], vec![0.0, 0.0]);
        let out = conv1d_forward(&x, &zero, &t(vec![1], vec![0.5])).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);

        let short = t(vec![1, 1], vec![1.0]);
        assert!(matches!(
            conv1d_forward(&short, &w, &t(vec![1], vec![0.0])),
            Err(NnError::TooShort { .. })
        ));
    }

    #[test]
    fn conv_matches_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (len, c_in, width, c_out) = (11, 3, 4, 5);
        let mut r = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let x = t(vec![len, c_in], r(len * c_in));
        let w = t(vec![width, c_in, c_out], r(width * c_in * c_out));
        let b = t(vec![c_out], r(c_out));
        let out = conv1d_forward(&x, &w, &b).unwrap();
        for s in 0..len - width + 1 {
            for o in 0..c_out {
                let mut acc = b.data()[o];
                for k in 0..width {
                    for i in 0..c_in {
                        acc += x.data()[(s + k) * c_in + i] * w.data()[(k * c_in + i) * c_out + o];
                    }
                }
                assert!((out.data()[s * c_out + o] - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pooling_examples() {
        let x = t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(sum_over_time(&x, &[true, true]).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(sum_over_time(&x, &[true, false]).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(sum_over_time(&x, &[false, false]), Err(NnError::EmptyPoolingWindow));

        let longer = t(vec![4, 2], vec![1.0, 2.0, 3.0, 4.0, 9.0, 9.0, 7.0, 7.0]);
        assert_eq!(
            sum_over_time(&longer, &[true, true, false, false]).unwrap(),
            sum_over_time(&x, &[true, true]).unwrap()
        );
    }

    #[test]
    fn batchnorm_examples() {
        let gamma = t(vec![1], vec![1.0]);
        let beta = t(vec![1], vec![0.0]);
        let mut stats = RunningStats {
            mean: t(vec![1], vec![0.0]),
            var: t(vec![1], vec![1.0]),
        };
        let x = t(vec![2, 1], vec![-1.0, 1.0]);
        let out = batchnorm_forward(&x, &gamma, &beta, &mut stats, Mode::Train).unwrap();
        // batch variance 1: outputs are ±1/sqrt(1 + 1e-5)
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((out.data()[0] + expect).abs() < 1e-12);
        assert!((out.data()[1] - expect).abs() < 1e-12);
        assert!((out.data()[1] - 1.0).abs() < 1e-5);

        let mut identity = RunningStats {
            mean: t(vec![1], vec![0.0]),
            var: t(vec![1], vec![1.0]),
        };
        let x = t(vec![3, 1], vec![0.3, -2.0, 5.0]);
        let out = batchnorm_forward(&x, &gamma, &beta, &mut identity, Mode::Infer).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
            assert!((a - b).abs() < 1e-4);
        }

        let single = t(vec![1, 1], vec![2.0]);
        assert_eq!(
            batchnorm_forward(&single, &gamma, &beta, &mut stats, Mode::Train),
            Err(NnError::BatchTooSmall)
        );
    }

    #[test]
    fn batchnorm_output_mean_equals_shift() {
        let gamma = t(vec![2], vec![1.7, 0.4]);
        let beta = t(vec![2], vec![0.25, -3.0]);
        let mut stats = RunningStats {
            mean: t(vec![2], vec![0.0, 0.0]),
            var: t(vec![2], vec![1.0, 1.0]),
        };
        let x = t(vec![4, 2], vec![1.0, 8.0, -3.0, 2.0, 0.5, 0.0, 7.0, -1.0]);
        let out = batchnorm_forward(&x, &gamma, &beta, &mut stats, Mode::Train).unwrap();
        for j in 0..2 {
            let m: f64 = (0..4).map(|r| out.data()[r * 2 + j]).sum::<f64>() / 4.0;
            assert!((m - beta.data()[j]).abs() < 1e-5);
        }
        // running stats moved towards batch statistics
        assert!(stats.mean.data()[0] > 0.0);
    }

    #[test]
    fn scalar_activations_and_dense() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(relu(-3.0f64), 0.0);
        assert!(sigmoid(100.0f64) < 1.0);
        assert!(sigmoid(-100.0f64) > 0.0);

        let x = t(vec![2, 2], vec![1.0, -2.0, 3.5, 4.0]);
        let eye = t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let out = dense_forward(&x, &eye, &t(vec![2], vec![0.0, 0.0])).unwrap();
        assert_eq!(out.data(), x.data());
        assert!(dense_forward(&x, &t(vec![3, 2], vec![0.0; 6]), &t(vec![2], vec![0.0; 2])).is_err());
    }

    #[test]
    fn bce_examples() {
        let l = bce_loss(&[0.5f64], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6);
        assert!(bce_loss(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap() < 1e-6);
        let l = bce_loss(&[0.9f64, 0.1], &[1.0, 0.0]).unwrap();
        let oracle = -0.5 * (0.9f64.ln() + 0.9f64.ln());
        assert!((l - oracle).abs() < 1e-12);
        assert!((l - 0.105361).abs() < 1e-6);
    }
}
