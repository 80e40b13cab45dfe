use super::Tensor;
use crate::error::{Error, Result};

/// `c = alpha * a·b + beta * c` for row-major operands given by explicit
/// strides, so transposed views cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + k.saturating_sub(1) * csa + 1 || k == 0);
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index the kernel touches lies inside the slices; the
    // strides and extents are checked by the debug assertions above and by
    // the callers' shape validation.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output extent of a convolution or pooling window sweep.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::config("kernel and stride must be positive"));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::config(format!(
            "kernel {kernel} larger than padded extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let ncols = self.col_cols();
        let k = self.kernel;
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.height as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.width as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let ncols = self.col_cols();
        let k = self.kernel;
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst_row =
                            &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst_row[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_geometry(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, ConvGeometry)> {
    let (n, c, h, w) = input.dims4()?;
    let (o, wc, kh, kw) = weight.dims4()?;
    if wc != c {
        return Err(Error::config(format!(
            "conv expects {wc} input channels, got {c}"
        )));
    }
    if kh != kw {
        return Err(Error::config("only square kernels are supported"));
    }
    let out_h = conv_output_extent(h, kh, stride, pad)?;
    let out_w = conv_output_extent(w, kw, stride, pad)?;
    Ok((
        n,
        o,
        ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel: kh,
            stride,
            pad,
            out_h,
            out_w,
        },
    ))
}

/// 2-d cross-correlation of `input` (N×C×H×W) with `weight` (O×C×K×K).
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (n, o, geo) = conv_geometry(input, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != o {
            return Err(Error::config(format!("bias length {} != {o}", b.len())));
        }
    }
    let (rows, ncols) = (geo.col_rows(), geo.col_cols());
    let mut out = Tensor::zeros(&[n, o, geo.out_h, geo.out_w]);
    let mut cols = vec![0.0; rows * ncols];
    for i in 0..n {
        geo.im2col(input.item(i), &mut cols);
        let dst = out.item_mut(i);
        if let Some(b) = bias {
            for (oc, chunk) in dst.chunks_mut(ncols).enumerate() {
                chunk.fill(b.data()[oc]);
            }
        }
        gemm(
            o,
            rows,
            ncols,
            1.0,
            weight.data(),
            (rows, 1),
            &cols,
            (ncols, 1),
            if bias.is_some() { 1.0 } else { 0.0 },
            dst,
        );
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads {
    /// Absent when the caller did not ask for it (first layer of a network).
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<Conv2dGrads> {
    let (n, o, geo) = conv_geometry(input, weight, stride, pad)?;
    if grad_out.shape() != [n, o, geo.out_h, geo.out_w] {
        return Err(Error::config(format!(
            "conv grad shape {:?} does not match forward output",
            grad_out.shape()
        )));
    }
    let (rows, ncols) = (geo.col_rows(), geo.col_cols());
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = Tensor::zeros(&[o]);
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let mut cols = vec![0.0; rows * ncols];
    let mut grad_cols = vec![0.0; rows * ncols];
    for i in 0..n {
        let g = grad_out.item(i);
        for (oc, chunk) in g.chunks(ncols).enumerate() {
            grad_b.data_mut()[oc] += chunk.iter().sum::<f64>();
        }
        geo.im2col(input.item(i), &mut cols);
        // dW += dY · colsᵀ
        gemm(
            o,
            ncols,
            rows,
            1.0,
            g,
            (ncols, 1),
            &cols,
            (1, ncols),
            1.0,
            grad_w.data_mut(),
        );
        if let Some(gi) = grad_in.as_mut() {
            // dcols = Wᵀ · dY
            gemm(
                rows,
                o,
                ncols,
                1.0,
                weight.data(),
                (1, rows),
                g,
                (ncols, 1),
                0.0,
                &mut grad_cols,
            );
            geo.col2im(&grad_cols, gi.item_mut(i));
        }
    }
    Ok(Conv2dGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::config("relu grad shape mismatch"));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn pool_extents(input: &Tensor, kernel: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    if kernel == 0 || stride == 0 {
        return Err(Error::config("pool kernel and stride must be positive"));
    }
    if h < kernel || w < kernel || (h - kernel) % stride != 0 || (w - kernel) % stride != 0 {
        return Err(Error::config(format!(
            "pool kernel {kernel} stride {stride} does not tile {h}×{w}"
        )));
    }
    Ok((n, c, h, w, (h - kernel) / stride + 1, (w - kernel) / stride + 1))
}

#[derive(Clone, Debug)]
pub struct MaxPoolOutput {
    pub output: Tensor,
    /// Flat index into the input of the winning element of every window.
    pub argmax: Vec<usize>,
}

/// Max pooling; ties go to the first element in row-major window order.
pub fn maxpool2d(input: &Tensor, kernel: usize, stride: usize) -> Result<MaxPoolOutput> {
    let (n, c, h, w, oh, ow) = pool_extents(input, kernel, stride)?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base;
                for ki in 0..kernel {
                    let row = base + (oy * stride + ki) * w + ox * stride;
                    for kj in 0..kernel {
                        let v = x[row + kj];
                        if v > best {
                            best = v;
                            best_idx = row + kj;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::new(vec![n, c, oh, ow], out)?,
        argmax,
    })
}

/// Routes each pooled gradient to its forward argmax; every other input
/// position receives zero.
pub fn maxpool2d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::config("maxpool grad does not match recorded argmax"));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad_in)
}

/// Mean over each `kernel × kernel` window. Extents must tile exactly.
pub fn avgpool2d(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (n, c, h, w, oh, ow) = pool_extents(input, kernel, stride)?;
    let area = (kernel * kernel) as f64;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ki in 0..kernel {
                    let row = base + (oy * stride + ki) * w + ox * stride;
                    acc += x[row..row + kernel].iter().sum::<f64>();
                }
                out.push(acc / area);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avgpool2d_backward(
    grad_out: &Tensor,
    input_shape: &[usize],
    kernel: usize,
    stride: usize,
) -> Result<Tensor> {
    let probe = Tensor::zeros(input_shape);
    let (n, c, h, w, oh, ow) = pool_extents(&probe, kernel, stride)?;
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::config("avgpool grad shape mismatch"));
    }
    let area = (kernel * kernel) as f64;
    let mut grad_in = probe;
    let gi = grad_in.data_mut();
    let g = grad_out.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let share = g[(plane * oh + oy) * ow + ox] / area;
                for ki in 0..kernel {
                    let row = base + (oy * stride + ki) * w + ox * stride;
                    for v in &mut gi[row..row + kernel] {
                        *v += share;
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// Replicates every value into a `factor × factor` block.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if factor == 0 {
        return Err(Error::config("upsample factor must be ≥ 1"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        for oy in 0..oh {
            let row = &x[(plane * h + oy / factor) * w..(plane * h + oy / factor + 1) * w];
            out.extend((0..ow).map(|ox| row[ox / factor]));
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Source coordinate and blend weight for half-pixel-centre resampling.
fn bilinear_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centres (align-corners off).
pub fn upsample_bilinear(input: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if target_h < h || target_w < w || h == 0 || w == 0 {
        return Err(Error::config(format!(
            "bilinear target {target_h}×{target_w} smaller than source {h}×{w}"
        )));
    }
    let ys = bilinear_taps(target_h, h);
    let xs = bilinear_taps(target_w, w);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * target_h * target_w);
    for plane in 0..n * c {
        let p = &x[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, ly) in &ys {
            for &(x0, x1, lx) in &xs {
                let top = p[y0 * w + x0] * (1.0 - lx) + p[y0 * w + x1] * lx;
                let bottom = p[y1 * w + x0] * (1.0 - lx) + p[y1 * w + x1] * lx;
                out.push(top * (1.0 - ly) + bottom * ly);
            }
        }
    }
    Tensor::new(vec![n, c, target_h, target_w], out)
}

/// `input` (N×F) times `weightᵀ` (F×O) plus bias.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f) = input.dims2()?;
    let (o, wf) = weight.dims2()?;
    if wf != f || bias.len() != o {
        return Err(Error::config(format!(
            "linear expects {wf} features / {o} biases, got {f} / {}",
            bias.len()
        )));
    }
    let mut out = Tensor::zeros(&[n, o]);
    for row in out.data_mut().chunks_mut(o) {
        row.copy_from_slice(bias.data());
    }
    gemm(n, f, o, 1.0, input.data(), (f, 1), weight.data(), (1, f), 1.0, out.data_mut());
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    let (n, f) = input.dims2()?;
    let (o, _) = weight.dims2()?;
    if grad_out.shape() != [n, o] {
        return Err(Error::config("linear grad shape mismatch"));
    }
    let mut gi = Tensor::zeros(&[n, f]);
    gemm(n, o, f, 1.0, grad_out.data(), (o, 1), weight.data(), (f, 1), 0.0, gi.data_mut());
    let mut gw = Tensor::zeros(&[o, f]);
    gemm(o, n, f, 1.0, grad_out.data(), (1, o), input.data(), (f, 1), 0.0, gw.data_mut());
    let mut gb = Tensor::zeros(&[o]);
    for row in grad_out.data().chunks(o) {
        for (b, g) in gb.data_mut().iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(LinearGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

/// Row-wise softmax of an N×C score matrix.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, c) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the raw
/// (pre-softmax) scores.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::config(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::data(format!("label {bad} out of range for {c} classes")));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    for (row, &label) in grad.data_mut().chunks_mut(c).zip(labels) {
        loss -= row[label].max(f64::MIN_POSITIVE).ln();
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}
