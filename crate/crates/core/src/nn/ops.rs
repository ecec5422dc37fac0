//! Forward and backward kernels, generic over the element type.

use serde::{Deserialize, Serialize};

use super::tensor::{matmul, Scalar, Tensor4};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

/// `floor((input + 2·padding − kernel) / stride) + 1`, or `None` if the
/// kernel does not fit.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

struct ConvShape {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    oh: usize,
    ow: usize,
    cg: usize,
    og: usize,
}

impl ConvShape {
    fn col_rows(&self) -> usize {
        self.cg * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }
}

fn conv_shape<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, g: ConvGeom) -> Result<ConvShape, NnError> {
    let [n, cin, h, wd] = x.dims();
    let [cout, cg, kh, kw] = w.dims();
    let bad = |m: String| Err(NnError::ShapeMismatch(m));
    if g.groups == 0 || cin % g.groups != 0 || cout % g.groups != 0 {
        return bad(format!(
            "channels in={cin} out={cout} not divisible by groups={}",
            g.groups
        ));
    }
    if cg != cin / g.groups {
        return bad(format!(
            "weight expects {cg} input channels per group, input has {} per group",
            cin / g.groups
        ));
    }
    if kh != kw {
        return bad(format!("kernel must be square, got {kh}x{kw}"));
    }
    let (Some(oh), Some(ow)) = (
        conv_out_size(h, kh, g.stride, g.padding),
        conv_out_size(wd, kw, g.stride, g.padding),
    ) else {
        return bad(format!("kernel {kh} does not fit input {h}x{wd}"));
    };
    Ok(ConvShape {
        n,
        cin,
        h,
        w: wd,
        cout,
        k: kh,
        oh,
        ow,
        cg,
        og: cout / g.groups,
    })
}

/// Unfold `channels × h × w` into a `(channels·k·k) × (oh·ow)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], s: &ConvShape, g: ConvGeom, col: &mut [T]) {
    let (k, oh, ow, h, w) = (s.k, s.oh, s.ow, s.h, s.w);
    let pad = g.padding as isize;
    for c in 0..s.cg {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column matrix back, accumulating into `dx`.
fn col2im<T: Scalar>(col: &[T], s: &ConvShape, g: ConvGeom, dx: &mut [T]) {
    let (k, oh, ow, h, w) = (s.k, s.oh, s.ow, s.h, s.w);
    let pad = g.padding as isize;
    for c in 0..s.cg {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Grouped 2D convolution. `w` is `(out, in/groups, k, k)`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    b: Option<&[T]>,
    g: ConvGeom,
) -> Result<Tensor4<T>, NnError> {
    let s = conv_shape(x, w, g)?;
    if let Some(b) = b {
        if b.len() != s.cout {
            return Err(NnError::ShapeMismatch(format!(
                "bias has {} entries for {} output channels",
                b.len(),
                s.cout
            )));
        }
    }
    let mut out = Tensor4::zeros([s.n, s.cout, s.oh, s.ow]);
    let (kdim, pix) = (s.col_rows(), s.out_pixels());
    let mut col = vec![T::zero(); kdim * pix];
    let wsz = s.og * kdim;
    for n in 0..s.n {
        let xn = x.item(n);
        let on = &mut out.data_mut()[n * s.cout * pix..(n + 1) * s.cout * pix];
        for grp in 0..g.groups {
            let xg = &xn[grp * s.cg * s.h * s.w..(grp + 1) * s.cg * s.h * s.w];
            im2col(xg, &s, g, &mut col);
            let wg = &w.data()[grp * wsz..(grp + 1) * wsz];
            let og = &mut on[grp * s.og * pix..(grp + 1) * s.og * pix];
            matmul(s.og, kdim, pix, wg, false, &col, false, og, false);
        }
        if let Some(b) = b {
            for (c, plane) in on.chunks_mut(pix).enumerate() {
                plane.iter_mut().for_each(|v| *v += b[c]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Option<Tensor4<T>>,
    pub dw: Tensor4<T>,
    pub db: Vec<T>,
}

/// Gradients of a grouped convolution. `dx` is skipped unless `need_dx`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    dy: &Tensor4<T>,
    g: ConvGeom,
    need_dx: bool,
) -> Result<ConvGrads<T>, NnError> {
    let s = conv_shape(x, w, g)?;
    if dy.dims() != [s.n, s.cout, s.oh, s.ow] {
        return Err(NnError::ShapeMismatch(format!(
            "output gradient {:?} does not match conv output {:?}",
            dy.dims(),
            [s.n, s.cout, s.oh, s.ow]
        )));
    }
    let (kdim, pix) = (s.col_rows(), s.out_pixels());
    let wsz = s.og * kdim;
    let mut dw = Tensor4::zeros(w.dims());
    let mut db = vec![T::zero(); s.cout];
    let mut dx = need_dx.then(|| Tensor4::zeros(x.dims()));
    let mut col = vec![T::zero(); kdim * pix];
    let mut dcol = vec![T::zero(); kdim * pix];
    let item = s.cin * s.h * s.w;
    for n in 0..s.n {
        let xn = x.item(n);
        let dyn_ = dy.item(n);
        for grp in 0..g.groups {
            let gsz = s.cg * s.h * s.w;
            im2col(&xn[grp * gsz..(grp + 1) * gsz], &s, g, &mut col);
            let dyg = &dyn_[grp * s.og * pix..(grp + 1) * s.og * pix];
            let dwg = &mut dw.data_mut()[grp * wsz..(grp + 1) * wsz];
            matmul(s.og, pix, kdim, dyg, false, &col, true, dwg, true);
            if let Some(dx) = dx.as_mut() {
                let wg = &w.data()[grp * wsz..(grp + 1) * wsz];
                matmul(kdim, s.og, pix, wg, true, dyg, false, &mut dcol, false);
                let dxn = &mut dx.data_mut()[n * item..(n + 1) * item];
                col2im(&dcol, &s, g, &mut dxn[grp * gsz..(grp + 1) * gsz]);
            }
        }
        for (c, plane) in dyn_.chunks(pix).enumerate() {
            db[c] += plane.iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// Cached intermediates of a training-mode batch norm forward.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
    pub dims: [usize; 4],
}

fn channel_count<T: Scalar>(x: &Tensor4<T>, gamma: &[T], beta: &[T]) -> Result<usize, NnError> {
    let c = x.c();
    if gamma.len() != c || beta.len() != c {
        return Err(NnError::ShapeMismatch(format!(
            "batch norm over {c} channels got {} scales and {} shifts",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(c)
}

/// Normalize each channel over `(batch, h, w)` with the batch statistics.
pub fn batchnorm_forward_train<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor4<T>, BnCache<T>), NnError> {
    let c = channel_count(x, gamma, beta)?;
    let [n, _, h, w] = x.dims();
    if n < 2 {
        return Err(NnError::BatchTooSmall { batch: n });
    }
    let pix = h * w;
    let count = (n * pix) as f64;
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for b in 0..n {
            s += x.item(b)[ch * pix..(ch + 1) * pix].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = s / count;
        let mut ss = 0.0f64;
        for b in 0..n {
            ss += x.item(b)[ch * pix..(ch + 1) * pix]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        let v = ss / count;
        mean[ch] = T::of(mu);
        var[ch] = T::of(v);
        inv_std[ch] = T::of(1.0 / (v + eps.as_f64()).sqrt());
    }
    let mut xhat = vec![T::zero(); x.data().len()];
    let mut y = Tensor4::zeros(x.dims());
    let item = c * pix;
    for b in 0..n {
        for ch in 0..c {
            let r = b * item + ch * pix..b * item + (ch + 1) * pix;
            for ((xh, yv), &xv) in xhat[r.clone()]
                .iter_mut()
                .zip(&mut y.data_mut()[r.clone()])
                .zip(&x.data()[r])
            {
                *xh = (xv - mean[ch]) * inv_std[ch];
                *yv = gamma[ch] * *xh + beta[ch];
            }
        }
    }
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
            dims: x.dims(),
        },
    ))
}

/// Batch norm with fixed statistics.
pub fn batchnorm_forward_eval<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Tensor4<T>, NnError> {
    let c = channel_count(x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(NnError::ShapeMismatch("running statistics length".into()));
    }
    let pix = x.h() * x.w();
    let scale: Vec<T> = (0..c).map(|ch| gamma[ch] / (var[ch] + eps).sqrt()).collect();
    let mut y = x.clone();
    for (i, plane) in y.data_mut().chunks_mut(pix).enumerate() {
        let ch = i % c;
        plane
            .iter_mut()
            .for_each(|v| *v = (*v - mean[ch]) * scale[ch] + beta[ch]);
    }
    Ok(y)
}

/// `(dx, dgamma, dbeta)`.
pub type BnGrads<T> = (Tensor4<T>, Vec<T>, Vec<T>);

/// Gradients of a training-mode batch norm.
pub fn batchnorm_backward_train<T: Scalar>(
    dy: &Tensor4<T>,
    cache: &BnCache<T>,
    gamma: &[T],
) -> Result<BnGrads<T>, NnError> {
    if dy.dims() != cache.dims {
        return Err(NnError::ShapeMismatch("batch norm gradient shape".into()));
    }
    let [n, c, h, w] = cache.dims;
    let pix = h * w;
    let item = c * pix;
    let m = T::of((n * pix) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let r = b * item + ch * pix..b * item + (ch + 1) * pix;
            for (&g, &xh) in dy.data()[r.clone()].iter().zip(&cache.xhat[r]) {
                dbeta[ch] += g;
                dgamma[ch] += g * xh;
            }
        }
    }
    let mut dx = Tensor4::zeros(cache.dims);
    for b in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / m;
            let r = b * item + ch * pix..b * item + (ch + 1) * pix;
            for ((d, &g), &xh) in dx.data_mut()[r.clone()]
                .iter_mut()
                .zip(&dy.data()[r.clone()])
                .zip(&cache.xhat[r])
            {
                *d = k * (m * g - dbeta[ch] - xh * dgamma[ch]);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Input gradient of an eval-mode batch norm.
pub fn batchnorm_backward_eval<T: Scalar>(
    dy: &Tensor4<T>,
    gamma: &[T],
    var: &[T],
    eps: T,
) -> Tensor4<T> {
    let c = dy.c();
    let pix = dy.h() * dy.w();
    let mut dx = dy.clone();
    for (i, plane) in dx.data_mut().chunks_mut(pix).enumerate() {
        let ch = i % c;
        let s = gamma[ch] / (var[ch] + eps).sqrt();
        plane.iter_mut().for_each(|v| *v = *v * s);
    }
    dx
}

pub fn relu_forward<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

/// `dy` masked where the forward output `y` was not positive.
pub fn relu_backward<T: Scalar>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Max pooling; also returns, per output, the flat input index it came from.
pub fn maxpool_forward<T: Scalar>(
    x: &Tensor4<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor4<T>, Vec<usize>), NnError> {
    let [n, c, h, w] = x.dims();
    if padding >= kernel.max(1) {
        return Err(NnError::ShapeMismatch("pool padding must be smaller than kernel".into()));
    }
    let (Some(oh), Some(ow)) = (
        conv_out_size(h, kernel, stride, padding),
        conv_out_size(w, kernel, stride, padding),
    ) else {
        return Err(NnError::ShapeMismatch(format!(
            "pool kernel {kernel} does not fit {h}x{w}"
        )));
    };
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = usize::MAX;
                for ki in 0..kernel {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..kernel {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        let v = x.data()[idx];
                        if best_i == usize::MAX || v > best {
                            best = v;
                            best_i = idx;
                        }
                    }
                }
                let o = plane * oh * ow + oy * ow + ox;
                y.data_mut()[o] = best;
                arg[o] = best_i;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool_backward<T: Scalar>(dy: &Tensor4<T>, argmax: &[usize], x_dims: [usize; 4]) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(x_dims);
    for (&g, &i) in dy.data().iter().zip(argmax) {
        dx.data_mut()[i] += g;
    }
    dx
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_forward<T: Scalar>(x: &Tensor4<T>, factor: usize) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (h * factor, w * factor);
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut y.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = src[(oy / factor) * w + ox / factor];
            }
        }
    }
    y
}

pub fn upsample_backward<T: Scalar>(dy: &Tensor4<T>, factor: usize) -> Tensor4<T> {
    let [n, c, oh, ow] = dy.dims();
    let (h, w) = (oh / factor, ow / factor);
    let mut dx = Tensor4::zeros([n, c, h, w]);
    for plane in 0..n * c {
        let src = &dy.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[(oy / factor) * w + ox / factor] += src[oy * ow + ox];
            }
        }
    }
    dx
}

/// `y (n×out) = x (n×in) · wᵀ + b` with `w` stored `out×in`.
pub fn linear_forward<T: Scalar>(
    x: &[T],
    n: usize,
    w: &[T],
    b: &[T],
    in_f: usize,
    out_f: usize,
) -> Result<Vec<T>, NnError> {
    if x.len() != n * in_f || w.len() != out_f * in_f || b.len() != out_f {
        return Err(NnError::ShapeMismatch(format!(
            "linear {in_f}->{out_f}: input {} weight {} bias {}",
            x.len(),
            w.len(),
            b.len()
        )));
    }
    let mut y = vec![T::zero(); n * out_f];
    matmul(n, in_f, out_f, x, false, w, true, &mut y, false);
    for row in y.chunks_mut(out_f) {
        row.iter_mut().zip(b).for_each(|(v, &bb)| *v += bb);
    }
    Ok(y)
}

/// Returns `(dx, dw, db)`; `dx` only if `need_dx`.
#[allow(clippy::type_complexity)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    n: usize,
    w: &[T],
    dy: &[T],
    in_f: usize,
    out_f: usize,
    need_dx: bool,
) -> Result<(Option<Vec<T>>, Vec<T>, Vec<T>), NnError> {
    if x.len() != n * in_f || w.len() != out_f * in_f || dy.len() != n * out_f {
        return Err(NnError::ShapeMismatch("linear backward shapes".into()));
    }
    let mut dw = vec![T::zero(); out_f * in_f];
    matmul(out_f, n, in_f, dy, true, x, false, &mut dw, false);
    let mut db = vec![T::zero(); out_f];
    for row in dy.chunks(out_f) {
        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); n * in_f];
        matmul(n, out_f, in_f, dy, false, w, false, &mut dx, false);
        dx
    });
    Ok((dx, dw, db))
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits.
pub fn cross_entropy<T: Scalar>(
    logits: &[T],
    n: usize,
    classes: usize,
    labels: &[u8],
) -> Result<(T, Vec<T>), NnError> {
    if logits.len() != n * classes || labels.len() != n || n == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "cross entropy: {} logits, {} labels, {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(NnError::ShapeMismatch(format!("label {l} >= {classes} classes")));
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = 0.0f64;
    for (i, row) in logits.chunks(classes).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let label = labels[i] as usize;
        loss += (lse - row[label]).as_f64();
        for (j, (&v, g)) in row.iter().zip(&mut grad[i * classes..(i + 1) * classes]).enumerate() {
            let p = (v - lse).exp();
            let target = if j == label { T::one() } else { T::zero() };
            *g = (p - target) * inv_n;
        }
    }
    Ok((T::of(loss / n as f64), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: [usize; 4], data: Vec<f32>) -> Tensor4<f32> {
        Tensor4::new(dims, data).unwrap()
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = t([1, 1, 3, 3], vec![1.0; 9]);
        let w = t([1, 1, 3, 3], vec![1.0; 9]);
        let y = conv2d_forward(&x, &w, Some(&[0.0]), ConvGeom::default()).unwrap();
        assert_eq!(y.dims(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel() {
        let x = t([2, 1, 4, 5], (0..40).map(|v| v as f32 * 0.25 - 3.0).collect());
        let w = t([1, 1, 1, 1], vec![1.0]);
        let y = conv2d_forward(&x, &w, None, ConvGeom::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_output_size_formula() {
        let x: Tensor4<f32> = Tensor4::zeros([1, 3, 50, 50]);
        let w = Tensor4::zeros([64, 3, 11, 11]);
        let g = ConvGeom { stride: 4, padding: 2, groups: 1 };
        assert_eq!(conv2d_forward(&x, &w, None, g).unwrap().dims(), [1, 64, 11, 11]);
        let bad = Tensor4::zeros([64, 2, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &bad, None, ConvGeom::default()),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn depthwise_conv_keeps_channels_apart() {
        let x = t([1, 2, 2, 2], vec![1., 1., 1., 1., 2., 2., 2., 2.]);
        let w = t([2, 1, 1, 1], vec![10.0, 100.0]);
        let g = ConvGeom { stride: 1, padding: 0, groups: 2 };
        let y = conv2d_forward(&x, &w, None, g).unwrap();
        assert_eq!(y.data(), &[10., 10., 10., 10., 200., 200., 200., 200.]);
    }

    #[test]
    fn relu_values() {
        let y = relu_forward(&t([1, 1, 1, 2], vec![-1.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let (loss, grad) = cross_entropy(&[0.3f64, 0.3, -1.0, -1.0], 2, 2, &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] + 0.25).abs() < 1e-12 && (grad[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_constant_channel_is_zero() {
        let x = t([2, 1, 2, 2], vec![3.0; 8]);
        let (y, _) = batchnorm_forward_train(&x, &[1.0], &[0.0], 1e-5).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-6));
        let single = t([1, 1, 2, 2], vec![3.0; 4]);
        assert!(matches!(
            batchnorm_forward_train(&single, &[1.0], &[0.0], 1e-5),
            Err(NnError::BatchTooSmall { batch: 1 })
        ));
    }

    #[test]
    fn maxpool_with_padding() {
        let x = t([1, 1, 3, 3], (1..=9).map(|v| v as f32).collect());
        let (y, arg) = maxpool_forward(&x, 3, 2, 1).unwrap();
        assert_eq!(y.dims(), [1, 1, 2, 2]);
        assert_eq!(y.data(), &[5., 6., 8., 9.]);
        assert_eq!(arg, vec![4, 5, 7, 8]);
    }

    #[test]
    fn upsample_roundtrip_shapes() {
        let x = t([1, 1, 2, 2], vec![1., 2., 3., 4.]);
        let y = upsample_forward(&x, 2);
        assert_eq!(y.data()[..4], [1., 1., 2., 2.]);
        let dx = upsample_backward(&y, 2);
        assert_eq!(dx.data(), &[4., 8., 12., 16.]);
    }
}
