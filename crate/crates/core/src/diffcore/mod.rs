//! Reverse-mode differentiation over a small fixed set of primitives, plus
//! the Adam optimizer used for every trainable model in the crate.

mod adam;
mod gemm;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use tape::{sigmoid, Activation, Gradients, NodeId, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn square_has_derivative_two_x() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn silu_slope_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.silu(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.5]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.tanh(x);
        assert!(matches!(tape.backward(y), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn nan_in_backward_reports_node() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.0));
        let k = tape.constant(Tensor::scalar(f64::NAN));
        let y = tape.mul(x, k).unwrap();
        let err = tape.backward(y).unwrap_err();
        assert!(matches!(err, crate::Error::Numeric { .. }), "{err}");
    }

    #[test]
    fn duplicated_subexpressions_accumulate() {
        let build = |tape: &mut Tape, x: NodeId, twice: bool| {
            let g1 = tape.tanh(x);
            let s1 = tape.sum_sq(g1);
            if twice {
                let g2 = tape.tanh(x);
                let s2 = tape.sum_sq(g2);
                tape.add(s1, s2).unwrap()
            } else {
                s1
            }
        };
        let value = Tensor::vector(vec![0.3, -0.7, 1.1]);
        let mut t1 = Tape::new();
        let x1 = t1.param(value.clone());
        let once = build(&mut t1, x1, false);
        let g_once = t1.backward(once).unwrap();

        let mut t2 = Tape::new();
        let x2 = t2.param(value);
        let twice = build(&mut t2, x2, true);
        let g_twice = t2.backward(twice).unwrap();
        for (a, b) in g_once
            .get(x1)
            .unwrap()
            .data()
            .iter()
            .zip(g_twice.get(x2).unwrap().data())
        {
            assert!((2.0 * a - b).abs() < 1e-15);
        }

        // Reusing one node twice must give the same accumulation.
        let mut t3 = Tape::new();
        let x3 = t3.param(Tensor::vector(vec![0.3, -0.7, 1.1]));
        let g = t3.tanh(x3);
        let s = t3.sum_sq(g);
        let total = t3.add(s, s).unwrap();
        let g3 = t3.backward(total).unwrap();
        assert_eq!(g3.get(x3).unwrap(), g_twice.get(x2).unwrap());
    }

    #[test]
    fn random_linear_tanh_chain_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let params = vec![
                random_tensor(&mut rng, vec![4, 5]),
                random_tensor(&mut rng, vec![5, 6]),
                random_tensor(&mut rng, vec![6]),
                random_tensor(&mut rng, vec![6, 3]),
                random_tensor(&mut rng, vec![3, 2]),
            ];
            let err = grad_check(
                |tape, ids| {
                    let h1 = tape.linear(ids[0], ids[1], Some(ids[2]))?;
                    let a1 = tape.tanh(h1);
                    let h2 = tape.linear(a1, ids[3], None)?;
                    let a2 = tape.tanh(h2);
                    let h3 = tape.linear(a2, ids[4], None)?;
                    let a3 = tape.tanh(h3);
                    Ok(tape.sum_sq(a3))
                },
                &params,
                1e-5,
            );
            assert!(err < 1e-5, "relative error {err}");
        }
    }

    #[test]
    fn grad_check_is_tight_for_linear_and_quadratic() {
        let params = vec![Tensor::vector(vec![0.5, -2.0, 3.0])];
        let lin = grad_check(|tape, ids| Ok(tape.mean(ids[0])), &params, 1e-5);
        assert!(lin < 1e-9, "{lin}");
        let quad = grad_check(|tape, ids| Ok(tape.sum_sq(ids[0])), &params, 1e-5);
        assert!(quad < 1e-7, "{quad}");
    }

    #[test]
    fn broadcast_scalar_gradients() {
        let params = vec![
            Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap(),
            Tensor::scalar(0.7),
        ];
        let err = grad_check(
            |tape, ids| {
                let p = tape.mul(ids[0], ids[1])?;
                let q = tape.add(p, ids[1])?;
                let s = tape.sigmoid(q);
                Ok(tape.sum_sq(s))
            },
            &params,
            1e-5,
        );
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let params = vec![
            Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            Tensor::matrix(2, 3, vec![-0.1, 0.5, 0.9, 1.0, -1.0, 0.25]).unwrap(),
        ];
        let err = grad_check(
            |tape, ids| {
                let c = tape.concat(&[ids[0], ids[1], ids[0]])?;
                let s = tape.slice(c, 1, 4)?;
                let t = tape.silu(s);
                Ok(tape.sum_sq(t))
            },
            &params,
            1e-5,
        );
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn linearized_composites_have_exact_first_derivatives() {
        let params = vec![Tensor::vector(vec![0.3, -1.2, 2.0])];
        let err = grad_check(
            |tape, ids| {
                let e = tape.exp(ids[0])?;
                let r = tape.recip(e)?;
                let s = tape.add(e, r)?;
                Ok(tape.sum(s))
            },
            &params,
            1e-6,
        );
        assert!(err < 1e-8, "{err}");
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.0, 1.0]));
        let e = tape.exp(x).unwrap();
        assert_eq!(tape.value(e).data(), &[1.0, std::f64::consts::E]);
        let z = tape.constant(Tensor::scalar(0.0));
        assert!(tape.recip(z).is_err());
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(vec![2, 3]));
        let b = tape.param(Tensor::zeros(vec![3, 2]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.linear(a, a, None).is_err());
        assert!(tape.slice(a, 2, 2).is_err());
    }
}
