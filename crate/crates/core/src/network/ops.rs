//! Dense layer primitives: conv, fully connected, RoI max pooling, softmax.
//! All f64, all with hand-written backward passes over a fixed evaluation
//! order, so results are bit-reproducible.

use crate::geometry::BBox;

/// Channel-major feature map: `data[(c * h + y) * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_hw(&self, in_h: usize, in_w: usize) -> (usize, usize) {
        let oh = (in_h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (in_w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.kernel * self.kernel
    }
}

/// Weights laid out `[out_c][in_c][ky][kx]`, zero padding outside the input.
pub fn conv2d_forward(x: &Tensor3, w: &[f64], b: &[f64], shape: &ConvShape) -> Tensor3 {
    debug_assert_eq!(x.c, shape.in_c);
    debug_assert_eq!(w.len(), shape.weight_len());
    debug_assert_eq!(b.len(), shape.out_c);
    let (oh, ow) = shape.out_hw(x.h, x.w);
    let mut y = Tensor3::zeros(shape.out_c, oh, ow);
    let k = shape.kernel;
    for oc in 0..shape.out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[oc];
                for ic in 0..shape.in_c {
                    for ky in 0..k {
                        let iy = (oy * shape.stride + ky) as isize - shape.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * shape.stride + kx) as isize - shape.pad as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let wv = w[((oc * shape.in_c + ic) * k + ky) * k + kx];
                            acc += wv * x.at(ic, iy as usize, ix as usize);
                        }
                    }
                }
                y.data[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    y
}

/// Gradients of a conv layer. `grad_input` is skipped when the caller does
/// not need to propagate further down (e.g. below the first layer).
pub fn conv2d_backward(
    x: &Tensor3,
    w: &[f64],
    shape: &ConvShape,
    grad_y: &Tensor3,
    want_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Option<Tensor3>) {
    let k = shape.kernel;
    let (oh, ow) = shape.out_hw(x.h, x.w);
    debug_assert_eq!((grad_y.h, grad_y.w), (oh, ow));
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; shape.out_c];
    let mut gx = want_input_grad.then(|| Tensor3::zeros(x.c, x.h, x.w));
    for oc in 0..shape.out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_y.at(oc, oy, ox);
                if g == 0.0 {
                    continue;
                }
                gb[oc] += g;
                for ic in 0..shape.in_c {
                    for ky in 0..k {
                        let iy = (oy * shape.stride + ky) as isize - shape.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * shape.stride + kx) as isize - shape.pad as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let wi = ((oc * shape.in_c + ic) * k + ky) * k + kx;
                            gw[wi] += g * x.at(ic, iy as usize, ix as usize);
                            if let Some(gx) = gx.as_mut() {
                                let xi = gx.idx(ic, iy as usize, ix as usize);
                                gx.data[xi] += g * w[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (gw, gb, gx)
}

pub fn relu_forward(t: &mut Tensor3) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Mask `grad` by the post-activation output: gradient flows only where the
/// unit fired.
pub fn relu_backward(out: &Tensor3, grad: &mut Tensor3) {
    for (g, o) in grad.data.iter_mut().zip(&out.data) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn relu_vec_forward(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

pub fn relu_vec_backward(out: &[f64], grad: &mut [f64]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Max pooling of an image-space box to `p x p` cells per channel.
///
/// The box is scaled into feature coordinates, snapped outward to whole
/// cells (never smaller than one cell), and each output cell takes the max
/// over its sub-window of the crop, per the standard RoI-pool partition.
/// Returns the pooled vector (`[c][py][px]` order) and the argmax source
/// index of every output, for the backward scatter.
pub fn roi_max_pool(
    fm: &Tensor3,
    bbox: &BBox,
    spatial_scale: f64,
    p: usize,
) -> (Vec<f64>, Vec<usize>) {
    let x1 = ((bbox.x1() * spatial_scale).floor() as isize).clamp(0, fm.w as isize - 1) as usize;
    let y1 = ((bbox.y1() * spatial_scale).floor() as isize).clamp(0, fm.h as isize - 1) as usize;
    let x2 = ((bbox.x2() * spatial_scale).ceil() as isize).clamp(x1 as isize + 1, fm.w as isize)
        as usize;
    let y2 = ((bbox.y2() * spatial_scale).ceil() as isize).clamp(y1 as isize + 1, fm.h as isize)
        as usize;
    let cw = x2 - x1;
    let ch = y2 - y1;
    let mut pooled = vec![0.0; fm.c * p * p];
    let mut argmax = vec![0usize; fm.c * p * p];
    for c in 0..fm.c {
        for py in 0..p {
            let wy1 = y1 + py * ch / p;
            let wy2 = y1 + ((py + 1) * ch).div_ceil(p);
            for px in 0..p {
                let wx1 = x1 + px * cw / p;
                let wx2 = x1 + ((px + 1) * cw).div_ceil(p);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for y in wy1..wy2 {
                    for x in wx1..wx2 {
                        let v = fm.at(c, y, x);
                        if v > best {
                            best = v;
                            best_idx = fm.idx(c, y, x);
                        }
                    }
                }
                let out = (c * p + py) * p + px;
                pooled[out] = best;
                argmax[out] = best_idx;
            }
        }
    }
    (pooled, argmax)
}

pub fn roi_max_pool_backward(argmax: &[usize], grad_pooled: &[f64], grad_fm: &mut Tensor3) {
    for (src, g) in argmax.iter().zip(grad_pooled) {
        grad_fm.data[*src] += g;
    }
}

/// `y = W x + b` with `W` laid out `[out][in]`.
pub fn fc_forward(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out_dim = b.len();
    let in_dim = x.len();
    debug_assert_eq!(w.len(), out_dim * in_dim);
    let mut y = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        y.push(acc);
    }
    y
}

pub fn fc_backward(x: &[f64], w: &[f64], grad_y: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let out_dim = grad_y.len();
    let in_dim = x.len();
    let mut gw = vec![0.0; w.len()];
    let mut gx = vec![0.0; in_dim];
    for o in 0..out_dim {
        let g = grad_y[o];
        if g == 0.0 {
            continue;
        }
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grow[i] += g * x[i];
            gx[i] += g * row[i];
        }
    }
    (gw, grad_y.to_vec(), gx)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
