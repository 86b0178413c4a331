//! Layers, residual blocks and the optimizer, built on [`crate::tensor`].
//!
//! Parameters live in a [`ParamStore`]; a [`Session`] wraps one forward
//! graph and hands layers the graph handles of their parameters.

mod block;
mod layers;
mod optim;
mod params;

pub use block::Bottleneck;
pub use layers::{BatchNorm2d, Conv2d, Linear, PreActConv};
pub use optim::{sgd_step, OptimizerState};
pub use params::{Gradients, Mode, ParamEntry, ParamId, ParamKind, ParamStore, Session};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn pointwise_unit_kernel_is_identity() {
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 1, 1, 1, 1, true, &mut rng()).unwrap();
        store.get_mut(conv.weight).data_mut()[0] = 1.0;
        let x = Tensor::from_fn(&[2, 1, 3, 4], |i| (i as f64).sin());
        let mut s = Session::new(&mut store, Mode::Eval);
        let xv = s.graph.constant(x.clone());
        let y = conv.forward(&mut s, xv).unwrap();
        assert_eq!(s.graph.value(y), &x);
    }

    #[test]
    fn ones_kernel_on_ones_input_sums_to_nine() {
        let mut g = crate::tensor::Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 3, 2, 3, 1, false, &mut rng()).unwrap();
        let mut s = Session::new(&mut store, Mode::Eval);
        let x = s.graph.constant(Tensor::zeros(&[1, 2, 5, 5]));
        assert!(matches!(conv.forward(&mut s, x), Err(Error::Dimension(_))));
    }

    #[test]
    fn even_kernel_rejected() {
        let mut store = ParamStore::new();
        assert!(Conv2d::new(&mut store, "c", 1, 1, 2, 1, false, &mut rng()).is_err());
    }

    #[test]
    fn batchnorm_fixpoint_on_standardized_channel() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1).unwrap();
        // zero mean, unit (biased) variance
        let x = Tensor::new(&[2, 1, 1, 2], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let mut s = Session::new(&mut store, Mode::Train);
        let xv = s.graph.constant(x.clone());
        let y = bn.forward(&mut s, xv).unwrap();
        for (a, b) in s.graph.value(y).data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn batchnorm_constant_channel_maps_to_zero() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        let x = Tensor::full(&[3, 2, 4, 4], 5.5);
        let mut s = Session::new(&mut store, Mode::Train);
        let xv = s.graph.constant(x);
        let y = bn.forward(&mut s, xv).unwrap();
        assert!(s.graph.value(y).data().iter().all(|v| v.abs() <= 1e-6));
    }

    #[test]
    fn batchnorm_updates_running_stats_in_train_mode_only() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1).unwrap();
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        {
            let mut s = Session::new(&mut store, Mode::Train);
            let xv = s.graph.constant(x.clone());
            bn.forward(&mut s, xv).unwrap();
        }
        // mean 2.5, unbiased var 5/3
        let rm = store.get(bn.running_mean).data()[0];
        let rv = store.get(bn.running_var).data()[0];
        assert!((rm - 0.25).abs() < 1e-12);
        assert!((rv - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        {
            let mut s = Session::new(&mut store, Mode::Eval);
            let xv = s.graph.constant(x);
            bn.forward(&mut s, xv).unwrap();
        }
        assert_eq!(store.get(bn.running_mean).data()[0], rm);
    }

    #[test]
    fn batchnorm_eval_is_channel_affine() {
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        store.get_mut(bn.gamma).data_mut().copy_from_slice(&[1.5, -0.5]);
        store.get_mut(bn.beta).data_mut().copy_from_slice(&[0.25, 2.0]);
        store.get_mut(bn.running_mean).data_mut().copy_from_slice(&[0.3, -1.0]);
        store.get_mut(bn.running_var).data_mut().copy_from_slice(&[2.0, 0.5]);
        let x = Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f64 * 0.7).cos() * 3.0);
        let mut s = Session::new(&mut store, Mode::Eval);
        let xv = s.graph.constant(x.clone());
        let y = bn.forward(&mut s, xv).unwrap();
        let y = s.graph.value(y);
        let (gamma, beta, mean, var) = ([1.5, -0.5], [0.25, 2.0], [0.3, -1.0], [2.0, 0.5]);
        for n in 0..2 {
            for c in 0..2 {
                for h in 0..3 {
                    for w in 0..3 {
                        let xi = x.get(&[n, c, h, w]).unwrap();
                        let want = gamma[c] * (xi - mean[c]) / (var[c] + 1e-6f64).sqrt() + beta[c];
                        assert!((y.get(&[n, c, h, w]).unwrap() - want).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn residual_with_zeroed_branch_equals_skip() {
        let mut store = ParamStore::new();
        let block = Bottleneck::new(&mut store, "b", 4, 8, 2, 4, &mut rng()).unwrap();
        store.get_mut(block.restore.conv.weight).data_mut().fill(0.0);
        let x = Tensor::from_fn(&[2, 4, 6, 6], |i| ((i * 7) % 13) as f64 - 6.0);
        let mut s = Session::new(&mut store, Mode::Train);
        let xv = s.graph.constant(x.clone());
        let y = block.forward(&mut s, xv).unwrap();
        let proj = block.projection.as_ref().unwrap().forward(&mut s, xv).unwrap();
        assert_eq!(s.graph.value(y), s.graph.value(proj));

        let mut store = ParamStore::new();
        let block = Bottleneck::new(&mut store, "b", 4, 4, 1, 4, &mut rng()).unwrap();
        assert!(block.projection.is_none());
        store.get_mut(block.restore.conv.weight).data_mut().fill(0.0);
        let mut s = Session::new(&mut store, Mode::Train);
        let xv = s.graph.constant(x.clone());
        let y = block.forward(&mut s, xv).unwrap();
        assert_eq!(s.graph.value(y), &x);
    }

    #[test]
    fn downsampling_block_shape() {
        let mut store = ParamStore::new();
        let block = Bottleneck::new(&mut store, "b", 64, 128, 2, 4, &mut rng()).unwrap();
        let mut s = Session::new(&mut store, Mode::Eval);
        let x = s.graph.constant(Tensor::zeros(&[2, 64, 24, 24]));
        let y = block.forward(&mut s, x).unwrap();
        assert_eq!(s.graph.value(y).shape(), &[2, 128, 12, 12]);
        let bad = s.graph.constant(Tensor::zeros(&[2, 32, 24, 24]));
        assert!(matches!(block.forward(&mut s, bad), Err(Error::Dimension(_))));
    }

    fn scalar_store(p: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store
            .add("p", Tensor::new(&[1], vec![p]).unwrap(), ParamKind::Trainable)
            .unwrap();
        (store, id)
    }

    fn grads(g: f64) -> Gradients {
        Gradients(vec![Some(Tensor::new(&[1], vec![g]).unwrap())])
    }

    #[test]
    fn sgd_without_momentum_is_gradient_descent() {
        let (mut store, id) = scalar_store(1.0);
        let mut opt = OptimizerState::new(&store, 0.1, 0.0, 0.0);
        sgd_step(&mut store, &grads(3.0), &mut opt).unwrap();
        assert!((store.get(id).data()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_is_fixpoint() {
        let (mut store, id) = scalar_store(-2.5);
        let mut opt = OptimizerState::new(&store, 0.1, 0.9, 0.0);
        sgd_step(&mut store, &grads(0.0), &mut opt).unwrap();
        assert_eq!(store.get(id).data()[0], -2.5);
    }

    #[test]
    fn sgd_momentum_two_steps_follow_recurrence() {
        // Oracle: v1 = g1, p1 = p0 - lr·v1; v2 = μ·v1 + g2, p2 = p1 - lr·v2.
        let (p0, lr, mu, g1, g2) = (1.0f64, 0.1, 0.9, 0.5, -0.25);
        let v1 = g1;
        let p1 = p0 - lr * v1;
        let v2 = mu * v1 + g2;
        let p2 = p1 - lr * v2;
        let (mut store, id) = scalar_store(p0);
        let mut opt = OptimizerState::new(&store, lr, mu, 0.0);
        sgd_step(&mut store, &grads(g1), &mut opt).unwrap();
        assert_eq!(store.get(id).data()[0], p1);
        sgd_step(&mut store, &grads(g2), &mut opt).unwrap();
        assert_eq!(store.get(id).data()[0], p2);
        assert_eq!(opt.velocity(0).unwrap().data()[0], v2);
    }

    #[test]
    fn sgd_missing_gradient_is_contract_error() {
        let (mut store, id) = scalar_store(1.0);
        let mut opt = OptimizerState::new(&store, 0.1, 0.9, 0.0);
        let err = sgd_step(&mut store, &Gradients(vec![None]), &mut opt);
        assert!(matches!(err, Err(Error::Contract(_))));
        assert_eq!(store.get(id).data()[0], 1.0);
    }

    #[test]
    fn duplicate_parameter_names_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[1]), ParamKind::Trainable).unwrap();
        assert!(store.add("w", Tensor::zeros(&[1]), ParamKind::Buffer).is_err());
    }
}
