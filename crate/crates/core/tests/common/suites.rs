use fusionnet::model::FusionNet;
use fusionnet::nn::{Mode, ParamKind, ParamStore, Session};
use fusionnet::select::{select_features, BoostData};
use fusionnet::tensor::{Tensor, Var};

use super::{central_difference, probe, rel_err, smooth_batch, tiny_config};

pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    c
}

pub fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, kh, kw] = w.shape().try_into().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for s in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xo * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.get(&[oc, ic, i, j]).unwrap()
                                    * x.get(&[s, ic, iy as usize, ix as usize]).unwrap();
                            }
                        }
                    }
                    out[((s * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (vec![n, o, oh, ow], out)
}

/// Gradient check over every trainable scalar of a layer, plus its input.
pub fn layer_gradcheck(
    store: &mut ParamStore,
    x: &Tensor,
    forward: impl Fn(&mut Session, Var) -> Var,
) -> f64 {
    let eval = |store: &mut ParamStore, x: &Tensor| {
        let mut s = Session::new(store, Mode::Train);
        let xv = s.graph.constant(x.clone());
        let y = forward(&mut s, xv);
        let l = probe(&mut s.graph, y);
        s.graph.value(l).item().unwrap()
    };
    let snapshot = store.clone();
    let (grads, gx) = {
        let mut s = Session::new(store, Mode::Train);
        let xv = s.graph.variable(x.clone());
        let y = forward(&mut s, xv);
        let l = probe(&mut s.graph, y);
        s.graph.backward(l).unwrap();
        (s.gradients(), s.graph.grad(xv).unwrap())
    };
    *store = snapshot;
    let mut worst = 0.0f64;
    let idx: Vec<usize> = (0..x.numel()).collect();
    let num = central_difference(x, &idx, 1e-5, |xp| eval(&mut store.clone(), xp));
    for (a, n) in gx.data().iter().zip(&num) {
        worst = worst.max(rel_err(*a, *n, 1e-5));
    }
    for id in store.ids().collect::<Vec<_>>() {
        if store.entries()[id.index()].kind != ParamKind::Trainable {
            continue;
        }
        let value = store.get(id).clone();
        let idx: Vec<usize> = (0..value.numel()).collect();
        let num = central_difference(&value, &idx, 1e-5, |vp| {
            let mut st = store.clone();
            *st.get_mut(id) = vp.clone();
            eval(&mut st, x)
        });
        let analytic = grads.get(id).unwrap();
        for (a, n) in analytic.data().iter().zip(&num) {
            worst = worst.max(rel_err(*a, *n, 1e-5));
        }
    }
    worst
}

/// Whole-network check on two samples: a spread of entries from every
/// trainable tensor against central differences. Returns the number of
/// entries checked and the worst relative error.
pub fn fusion_gradcheck(seed: u64) -> (usize, f64) {
    let net = FusionNet::build(&tiny_config(true), seed).unwrap();
    let faces = smooth_batch(2, 32, 0.25);
    let patches: Vec<Tensor> = (0..5).map(|i| smooth_batch(2, 8, 1.5 * i as f64)).collect();
    let targets = [0usize, 2];
    let loss = |store: &mut ParamStore| {
        let mut s = Session::new(store, Mode::Train);
        let f = s.graph.constant(faces.clone());
        let p: Vec<Var> = patches.iter().map(|t| s.graph.constant(t.clone())).collect();
        let y = net.arch.forward(&net.config, &mut s, f, &p).unwrap();
        let l = s.graph.softmax_cross_entropy(y, &targets).unwrap();
        (s.graph.value(l).item().unwrap(), {
            s.graph.backward(l).unwrap();
            s.gradients()
        })
    };
    let base = net.params.clone();
    let (_, grads) = loss(&mut net.params.clone());
    let mut worst = 0.0f64;
    let mut checked = 0;
    for id in base.ids() {
        if base.entries()[id.index()].kind != ParamKind::Trainable {
            continue;
        }
        let value = base.get(id).clone();
        // a spread of entries from every tensor keeps the check affordable
        let step = (value.numel() / 4).max(1);
        let idx: Vec<usize> = (0..value.numel()).step_by(step).collect();
        // train-mode batch norm over two samples makes the loss sharply
        // curved at init, so a 1e-5 step carries visible truncation error
        let num = central_difference(&value, &idx, 1e-6, |vp| {
            let mut st = base.clone();
            *st.get_mut(id) = vp.clone();
            loss(&mut st).0
        });
        let analytic = grads.get(id).unwrap();
        for (&i, n) in idx.iter().zip(&num) {
            let e = rel_err(analytic.data()[i], *n, 1e-5);
            worst = worst.max(e);
            checked += 1;
        }
    }
    (checked, worst)
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "{a:?} vs {b:?}");
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

/// Two boosting rounds on eight samples, checked against values frozen from
/// an exact rational enumeration of all stumps.
pub fn check_eight_sample_trace() {
    let cols = [
        [0.3, 0.3, 0.5, 0.6, 0.4, 0.9, 0.4, 0.3],
        [0.4, 0.7, 0.5, 0.1, 0.6, 0.7, 0.3, 0.3],
        [0.5, 0.2, 0.6, 0.5, 0.1, 0.6, 0.2, 0.5],
        [0.6, 0.5, 0.8, 0.6, 0.3, 0.8, 0.8, 0.3],
    ];
    let y = [0, 2, 1, 0, 2, 1, 2, 0];
    let rows: Vec<Vec<f64>> = (0..8).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    let data = BoostData::from_rows(&rows).unwrap();
    let sel = select_features(&data, &y, 3, 2, 1).unwrap();
    // frozen from an exact rational enumeration of all stumps
    assert_eq!(sel.selected(), vec![2, 0]);
    let r0 = &sel.rounds[0];
    assert_close(&r0.classifier.thresholds, &[0.35], 1e-15);
    assert_eq!(r0.classifier.leaves, vec![2, 0]);
    assert!((r0.error - 0.25).abs() < 1e-15);
    assert!((r0.alpha - 6f64.ln()).abs() < 1e-12);
    let w1 = [1.0 / 18.0, 1.0 / 18.0, 1.0 / 3.0, 1.0 / 18.0, 1.0 / 18.0, 1.0 / 3.0, 1.0 / 18.0, 1.0 / 18.0];
    assert_close(&r0.weights_after, &w1, 1e-12);
    let r1 = &sel.rounds[1];
    assert_close(&r1.classifier.thresholds, &[0.45], 1e-15);
    assert_eq!(r1.classifier.leaves, vec![2, 1]);
    assert!((r1.error - 1.0 / 6.0).abs() < 1e-12);
    assert!((r1.alpha - 10f64.ln()).abs() < 1e-12);
    let w2 = [2.0 / 9.0, 1.0 / 45.0, 2.0 / 15.0, 2.0 / 9.0, 1.0 / 45.0, 2.0 / 15.0, 1.0 / 45.0, 2.0 / 9.0];
    assert_close(&r1.weights_after, &w2, 1e-12);
}

