//! Central finite-difference checks of every differentiable NN kernel, run
//! in f64 on randomised small shapes.

use emb2img::nn::ops::{self, ConvGeom};
use emb2img::nn::Tensor4;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

/// Worst `|a − n| / max(|a|, |n|, 1e-6)` over all entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Central differences of scalar `f` around `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + H;
            let up = f(&probe);
            probe[i] = orig - H;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn normal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn t(dims: [usize; 4], data: Vec<f64>) -> Tensor4<f64> {
    Tensor4::new(dims, data).unwrap()
}

/// Outcome of one operator over many random shapes.
#[derive(Debug)]
pub struct OpReport {
    pub op: &'static str,
    pub shapes: usize,
    pub max_rel_err: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.shapes >= 10 && self.max_rel_err < TOL
    }
}

fn worst(errs: impl IntoIterator<Item = f64>) -> f64 {
    errs.into_iter().fold(0.0, f64::max)
}

pub fn conv(cases: usize) -> OpReport {
    let mut errs = Vec::new();
    for seed in 0..cases as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let groups = [1, 1, 2][rng.random_range(0..3)];
        let cin = groups * rng.random_range(1..=3);
        let cout = groups * rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let padding = rng.random_range(0..k);
        let (n, h, w) = (rng.random_range(1..=2), rng.random_range(k..k + 4), rng.random_range(k..k + 4));
        let g = ConvGeom { stride, padding, groups };
        let xd = [n, cin, h, w];
        let wd = [cout, cin / groups, k, k];
        let x = normal(&mut rng, xd.iter().product());
        let wv = normal(&mut rng, wd.iter().product());
        let b = normal(&mut rng, cout);
        let y = ops::conv2d_forward(&t(xd, x.clone()), &t(wd, wv.clone()), Some(&b), g).unwrap();
        let r = normal(&mut rng, y.data().len());
        let grads = ops::conv2d_backward(&t(xd, x.clone()), &t(wd, wv.clone()), &t(y.dims(), r.clone()), g, true)
            .unwrap();
        let loss = |x: &[f64], wv: &[f64], b: &[f64]| {
            let y = ops::conv2d_forward(&t(xd, x.to_vec()), &t(wd, wv.to_vec()), Some(b), g).unwrap();
            dot(y.data(), &r)
        };
        errs.push(max_rel_err(grads.dx.unwrap().data(), &numeric_grad(&x, |p| loss(p, &wv, &b))));
        errs.push(max_rel_err(grads.dw.data(), &numeric_grad(&wv, |p| loss(&x, p, &b))));
        errs.push(max_rel_err(&grads.db, &numeric_grad(&b, |p| loss(&x, &wv, p))));
    }
    OpReport {
        op: "conv2d",
        shapes: cases,
        max_rel_err: worst(errs),
    }
}

pub fn batchnorm(cases: usize) -> OpReport {
    let eps = 1e-5;
    let mut errs = Vec::new();
    for seed in 0..cases as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let dims = [
            rng.random_range(2..=4),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        ];
        let c = dims[1];
        let x = normal(&mut rng, dims.iter().product());
        let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta = normal(&mut rng, c);
        let r = normal(&mut rng, x.len());

        // training mode
        let (_, cache) = ops::batchnorm_forward_train(&t(dims, x.clone()), &gamma, &beta, eps).unwrap();
        let (dx, dg, db) = ops::batchnorm_backward_train(&t(dims, r.clone()), &cache, &gamma).unwrap();
        let loss = |x: &[f64], g: &[f64], b: &[f64]| {
            let (y, _) = ops::batchnorm_forward_train(&t(dims, x.to_vec()), g, b, eps).unwrap();
            dot(y.data(), &r)
        };
        errs.push(max_rel_err(dx.data(), &numeric_grad(&x, |p| loss(p, &gamma, &beta))));
        errs.push(max_rel_err(&dg, &numeric_grad(&gamma, |p| loss(&x, p, &beta))));
        errs.push(max_rel_err(&db, &numeric_grad(&beta, |p| loss(&x, &gamma, p))));

        // eval mode
        let mean = normal(&mut rng, c);
        let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        let dx = ops::batchnorm_backward_eval(&t(dims, r.clone()), &gamma, &var, eps);
        let num = numeric_grad(&x, |p| {
            let y = ops::batchnorm_forward_eval(&t(dims, p.to_vec()), &gamma, &beta, &mean, &var, eps).unwrap();
            dot(y.data(), &r)
        });
        errs.push(max_rel_err(dx.data(), &num));
    }
    OpReport {
        op: "batchnorm",
        shapes: cases,
        max_rel_err: worst(errs),
    }
}

pub fn linear(cases: usize) -> OpReport {
    let mut errs = Vec::new();
    for seed in 0..cases as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (n, i, o) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=5));
        let x = normal(&mut rng, n * i);
        let w = normal(&mut rng, o * i);
        let b = normal(&mut rng, o);
        let r = normal(&mut rng, n * o);
        let (dx, dw, db) = ops::linear_backward(&x, n, &w, &r, i, o, true).unwrap();
        let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(&ops::linear_forward(x, n, w, b, i, o).unwrap(), &r);
        errs.push(max_rel_err(&dx.unwrap(), &numeric_grad(&x, |p| loss(p, &w, &b))));
        errs.push(max_rel_err(&dw, &numeric_grad(&w, |p| loss(&x, p, &b))));
        errs.push(max_rel_err(&db, &numeric_grad(&b, |p| loss(&x, &w, p))));
    }
    OpReport {
        op: "linear",
        shapes: cases,
        max_rel_err: worst(errs),
    }
}

/// Inputs are a shuffled grid of values spaced well beyond `H`, so no two
/// entries of a pooling window tie under perturbation.
pub fn maxpool(cases: usize) -> OpReport {
    let mut errs = Vec::new();
    for seed in 0..cases as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let k = rng.random_range(2..=3);
        let stride = rng.random_range(1..=2);
        let padding = rng.random_range(0..k);
        let dims = [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(k..k + 4), rng.random_range(k..k + 4)];
        let len: usize = dims.iter().product();
        let mut x: Vec<f64> = (0..len).map(|v| v as f64 * 0.05 - 1.0).collect();
        x.shuffle(&mut rng);
        let (y, arg) = ops::maxpool_forward(&t(dims, x.clone()), k, stride, padding).unwrap();
        let r = normal(&mut rng, y.data().len());
        let dx = ops::maxpool_backward(&t(y.dims(), r.clone()), &arg, dims);
        let num = numeric_grad(&x, |p| {
            let (y, _) = ops::maxpool_forward(&t(dims, p.to_vec()), k, stride, padding).unwrap();
            dot(y.data(), &r)
        });
        errs.push(max_rel_err(dx.data(), &num));
    }
    OpReport {
        op: "maxpool",
        shapes: cases,
        max_rel_err: worst(errs),
    }
}

pub fn cross_entropy(cases: usize) -> OpReport {
    let mut errs = Vec::new();
    for seed in 0..cases as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (n, classes) = (rng.random_range(1..=6), rng.random_range(2..=4));
        let logits: Vec<f64> = (0..n * classes).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes) as u8).collect();
        let (_, grad) = ops::cross_entropy(&logits, n, classes, &labels).unwrap();
        let num = numeric_grad(&logits, |p| ops::cross_entropy(p, n, classes, &labels).unwrap().0);
        errs.push(max_rel_err(&grad, &num));
    }
    OpReport {
        op: "cross_entropy",
        shapes: cases,
        max_rel_err: worst(errs),
    }
}

/// Inputs kept at least `0.05` from zero, away from the kink.
pub fn relu(cases: usize) -> OpReport {
    let mut errs = Vec::new();
    for seed in 0..cases as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let dims = [rng.random_range(1..=3), rng.random_range(1..=3), 3, 2];
        let x: Vec<f64> = (0..dims.iter().product())
            .map(|_| {
                let m: f64 = rng.random_range(0.05..1.0);
                if rng.random() { m } else { -m }
            })
            .collect();
        let r = normal(&mut rng, x.len());
        let y = ops::relu_forward(&t(dims, x.clone()));
        let dx = ops::relu_backward(&y, &t(dims, r.clone()));
        let num = numeric_grad(&x, |p| dot(ops::relu_forward(&t(dims, p.to_vec())).data(), &r));
        errs.push(max_rel_err(dx.data(), &num));
    }
    OpReport {
        op: "relu",
        shapes: cases,
        max_rel_err: worst(errs),
    }
}

pub fn upsample(cases: usize) -> OpReport {
    let mut errs = Vec::new();
    for seed in 0..cases as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let factor = rng.random_range(1..=3);
        let dims = [rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
        let x = normal(&mut rng, dims.iter().product());
        let y = ops::upsample_forward(&t(dims, x.clone()), factor);
        let r = normal(&mut rng, y.data().len());
        let dx = ops::upsample_backward(&t(y.dims(), r.clone()), factor);
        let num = numeric_grad(&x, |p| dot(ops::upsample_forward(&t(dims, p.to_vec()), factor).data(), &r));
        errs.push(max_rel_err(dx.data(), &num));
    }
    OpReport {
        op: "upsample",
        shapes: cases,
        max_rel_err: worst(errs),
    }
}

pub fn all(cases: usize) -> Vec<OpReport> {
    vec![
        conv(cases),
        batchnorm(cases),
        linear(cases),
        maxpool(cases),
        cross_entropy(cases),
        relu(cases),
        upsample(cases),
    ]
}
