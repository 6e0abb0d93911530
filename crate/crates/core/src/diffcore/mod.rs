//! Minimal dense-tensor numerics with reverse-mode differentiation.
//!
//! Values are 64-bit, row-major, with no implicit broadcasting: the only
//! mixed-shape operations are the explicit scalar forms
//! ([`Var::add_scalar`], [`Var::mul_scalar`]) and [`Var::repeat_rows`].

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use tape::{concat, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_forward;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0; 4]));
        let y = x.softmax(0).unwrap().value();
        assert_eq!(y.data(), &[0.25; 4]);
    }

    #[test]
    fn derivative_of_square_at_three_is_six() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![3.0]));
        let y = x.dot(&x).unwrap();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matmul_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 4]));
        assert_eq!(a.matmul(&b).unwrap().shape(), vec![2, 4]);
        let err = b.matmul(&b).unwrap_err();
        assert!(err.to_string().contains("[3, 4]"), "{err}");
    }

    #[test]
    fn shape_mismatch_names_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
        assert!(a.softmax(1).is_err());
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap());
        let y = x.sum();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0; 6]);
        assert_eq!(grads.get(&x).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn gradient_of_squared_distance() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 4.0, -2.0]));
        let y = tape.constant(Tensor::vector(vec![0.5, 1.0, 1.0]));
        let root = x.sub(&y).unwrap().l2_norm_sq();
        let grads = tape.backward(&root).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0, 6.0, -6.0]);
        assert!(grads.get(&y).is_none());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(&x), Err(crate::MufiError::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let z = tape.param(Tensor::vector(vec![5.0]));
        let root = x.sum();
        let grads = tape.backward(&root).unwrap();
        assert_eq!(grads.get(&z).unwrap().data(), &[0.0]);
    }

    #[test]
    fn backward_leaves_forward_values_unchanged() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.3, -1.2, 2.0]));
        let y = x.exp().softmax(0).unwrap().log().sum();
        let before = y.value();
        let x_before = x.value();
        tape.backward(&y).unwrap();
        assert_eq!(y.value(), before);
        assert_eq!(x.value(), x_before);
    }

    #[test]
    fn forward_is_bit_identical_across_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, &[5, 4]);
        let b = random(&mut rng, &[4, 3]);
        let run = || {
            let tape = Tape::new();
            let (a, b) = (tape.constant(a.clone()), tape.constant(b.clone()));
            a.matmul(&b).unwrap().softmax(1).unwrap().value()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn softmax_cross_entropy_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random(&mut rng, &[4, 5]);
            let x = random(&mut rng, &[1, 4]);
            let label = (seed % 5) as usize;
            let report = grad_check(
                |_, v| {
                    let logits = v[1].matmul(&v[0])?.reshape(&[5])?;
                    Ok(logits.log_softmax(0)?.index_select(&[label])?.sum().neg())
                },
                &[w, x],
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, &[7]);
        let r = grad_check(|_, v| Ok(v[0].mul(&v[0])?.sum()), &[x], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.coordinates, 7);
    }

    #[test]
    fn grad_check_constant_function_is_exact() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let r = grad_check(|t, _| Ok(t.constant(Tensor::scalar(4.0)).sum()), &[x], 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn grad_check_exp_of_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, &[4]).reshaped(&[4]).unwrap();
        let small = Tensor::vector(x.data().iter().map(|v| v * 0.1).collect());
        let r = grad_check(|_, v| Ok(v[0].sum().exp()), &[small], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn grad_check_reports_non_finite_coordinate() {
        let x = Tensor::vector(vec![1.0, 1e-5]);
        let err = grad_check(|_, v| Ok(v[0].index_select(&[1])?.log().sum()), &[x], 1e-5).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn composite_op_gradients() {
        // Exercises every pullback in one graph.
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let a = random(&mut rng, &[3, 4]);
            let b = random(&mut rng, &[4, 2]);
            let c = random(&mut rng, &[2]);
            let s = random(&mut rng, &[1]);
            let r = grad_check(
                |_, v| {
                    let m = v[0].matmul(&v[1])?; // 3x2
                    let bias = v[2].repeat_rows(3)?;
                    let h = m.add(&bias)?.relu().add_scalar(&v[3])?;
                    let sm = h.softmax(0)?;
                    let ls = h.transpose()?.log_softmax(1)?;
                    let cat = concat(&[sm.reshape(&[6])?, ls.reshape(&[6])?], 0)?;
                    let picked = cat.index_select(&[0, 3, 3, 7, 11])?;
                    let e = picked.scale(0.3).exp().offset(1.0).log();
                    let d = e.dot(&e)?;
                    let prod = sm.mul(&sm)?.sub(&h)?.mean();
                    let tail = v[2].mul_scalar(&v[3])?.l2_norm_sq();
                    d.add(&prod)?.add(&tail)
                },
                &[a, b, c, s],
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
        }
    }
}
