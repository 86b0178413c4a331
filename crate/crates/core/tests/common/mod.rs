#![allow(dead_code)]

use fusionnet::model::FusionConfig;
use fusionnet::tensor::Tensor;

/// Central-difference derivative of `f` with respect to every entry of `x`
/// listed in `indices`.
pub fn central_difference(
    x: &Tensor,
    indices: &[usize],
    h: f64,
    mut f: impl FnMut(&Tensor) -> f64,
) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// A five-stage network small enough for finite differences.
pub fn tiny_config(use_patches: bool) -> FusionConfig {
    let mut c = FusionConfig::with_labels(vec![10, 20, 30]);
    c.face_size = 32;
    c.stem_channels = 4;
    c.down_channels = 4;
    for (s, w) in c.stages.iter_mut().zip([4, 4, 6, 6, 8]) {
        s.width = w;
    }
    c.bottleneck_ratio = 2;
    c.patch_size = 8;
    c.patch_channels = 2;
    c.use_patches = use_patches;
    c
}

pub fn smooth_batch(n: usize, size: usize, phase: f64) -> Tensor {
    Tensor::from_fn(&[n, 1, size, size], |i| {
        let t = i as f64 + phase;
        0.5 + 0.3 * (0.37 * t).sin() * (0.11 * t + phase).cos()
    })
}

use fusionnet::tensor::{Graph, Var};

/// Deterministic pseudo-random values in `[-1, 1)`.
pub fn wiggle(shape: &[usize], seed: u64) -> Tensor {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Scalar probe `Σ out ⊙ r` with a fixed random `r`, so every output entry
/// contributes a distinct weight to the gradient.
pub fn probe(g: &mut Graph, out: Var) -> Var {
    let r = wiggle(g.value(out).shape(), 99);
    let r = g.constant(r);
    let p = g.mul(out, r).unwrap();
    g.sum(p)
}

/// Compare reverse-mode gradients of `probe(build(inputs))` against central
/// differences for every input entry. Returns the worst relative error.
pub fn gradcheck(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = build(&mut g, &vs);
        let l = probe(&mut g, out);
        g.value(l).item().unwrap()
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let out = build(&mut g, &vs);
    let l = probe(&mut g, out);
    g.backward(l).unwrap();
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = g.grad(vs[k]).unwrap();
        let idx: Vec<usize> = (0..x.numel()).collect();
        let numeric = central_difference(x, &idx, 1e-5, |xp| {
            let mut xs = inputs.to_vec();
            xs[k] = xp.clone();
            eval(&xs)
        });
        for (a, n) in analytic.data().iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n, 1e-5));
        }
    }
    worst
}

pub mod suites;
