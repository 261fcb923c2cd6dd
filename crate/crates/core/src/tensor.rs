//! Dense row-major `f64` tensors and the forward/backward kernels behind the
//! tape primitives.

use std::fmt;

use crate::error::{Error, Result};

/// An n-dimensional array of `f64` stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Slice `i` along the leading axis, e.g. one image of an `(n, c, h, w)` batch.
    pub fn index_axis0(&self, i: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        }
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or(Error::Empty("stack"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

pub(crate) fn zip_map(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    same_shape(op, a, b)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

/// Dot product with four independent accumulators.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got {:?}", s))),
    }
}

/// `a (m,k) · b (k,n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims("matmul", a)?;
    let (k2, n) = matrix_dims("matmul", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape, b.shape),
        ));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b.data[p * n..(p + 1) * n], row);
            }
        }
    }
    Tensor::new([m, n], out)
}

/// `g (m,n) · bᵀ` where `b` is `(k,n)`; gradient of matmul w.r.t. its left input.
pub(crate) fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (g.shape[0], g.shape[1]);
    let k = b.shape[0];
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let gi = &g.data[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = dot(gi, &b.data[p * n..(p + 1) * n]);
        }
    }
    Tensor {
        shape: vec![m, k],
        data: out,
    }
}

/// `aᵀ · g` where `a` is `(m,k)` and `g` is `(m,n)`; gradient w.r.t. the right input.
pub(crate) fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = g.shape[1];
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let gi = &g.data[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip != 0.0 {
                axpy(aip, gi, &mut out[p * n..(p + 1) * n]);
            }
        }
    }
    Tensor {
        shape: vec![k, n],
        data: out,
    }
}

/// Adds a per-feature bias. For rank 2 `(n, f)` the bias has `f` entries; for
/// rank 4 `(n, c, h, w)` it has `c` entries and is broadcast over pixels.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (outer, channels, inner) = bias_dims(x)?;
    if bias.len() != channels || bias.rank() != 1 {
        return Err(Error::shape(
            "add_bias",
            format!("{:?} + bias {:?}", x.shape, bias.shape),
        ));
    }
    let mut out = x.data.clone();
    for o in 0..outer {
        for c in 0..channels {
            let b = bias.data[c];
            let base = (o * channels + c) * inner;
            for v in &mut out[base..base + inner] {
                *v += b;
            }
        }
    }
    Tensor::new(x.shape.clone(), out)
}

pub(crate) fn bias_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [n, f] => Ok((*n, *f, 1)),
        [n, c, h, w] => Ok((*n, *c, h * w)),
        s => Err(Error::shape(
            "add_bias",
            format!("expected rank 2 or 4, got {:?}", s),
        )),
    }
}

pub(crate) fn bias_grad(g: &Tensor) -> Tensor {
    let (outer, channels, inner) = bias_dims(g).expect("validated in forward");
    let mut out = vec![0.0; channels];
    for o in 0..outer {
        for (c, acc) in out.iter_mut().enumerate() {
            let base = (o * channels + c) * inner;
            *acc += g.data[base..base + inner].iter().sum::<f64>();
        }
    }
    Tensor::from_vec(out)
}

fn image_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        s => Err(Error::shape(
            op,
            format!("expected (n, c, h, w), got {:?}", s),
        )),
    }
}

/// Stride-1 convolution with zero padding that preserves spatial size.
/// `x` is `(n, cin, h, w)`, `weight` is `(cout, cin, k, k)` with odd `k`.
pub fn conv2d(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (n, cin, h, w) = image_dims("conv2d", x)?;
    let (cout, cin2, kh, kw) = image_dims("conv2d", weight)?;
    if cin != cin2 || kh != kw || kh % 2 == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("input {:?} with kernel {:?}", x.shape, weight.shape),
        ));
    }
    let pad = (kh / 2) as isize;
    let mut out = vec![0.0; n * cout * h * w];
    for b in 0..n {
        for co in 0..cout {
            let out_plane = &mut out[(b * cout + co) * h * w..(b * cout + co + 1) * h * w];
            for ci in 0..cin {
                let in_plane = &x.data[(b * cin + ci) * h * w..(b * cin + ci + 1) * h * w];
                for dy in 0..kh {
                    for dx in 0..kw {
                        let wv = weight.data[((co * cin + ci) * kh + dy) * kw + dx];
                        let oy = dy as isize - pad;
                        let ox = dx as isize - pad;
                        let (x0, x1) = valid_range(w, ox);
                        for y in valid_rows(h, oy) {
                            let iy = (y as isize + oy) as usize;
                            let src = &in_plane[iy * w..(iy + 1) * w];
                            let dst = &mut out_plane[y * w..(y + 1) * w];
                            for xx in x0..x1 {
                                dst[xx] += wv * src[(xx as isize + ox) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, cout, h, w], out)
}

fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).min(len as isize).max(0) as usize;
    (lo.min(hi), hi)
}

fn valid_rows(len: usize, offset: isize) -> std::ops::Range<usize> {
    let (lo, hi) = valid_range(len, offset);
    lo..hi
}

/// Gradients of `conv2d` w.r.t. input and weight.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    g: &Tensor,
    need_input: bool,
    need_weight: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (n, cin, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (cout, kh, kw) = (weight.shape[0], weight.shape[2], weight.shape[3]);
    let pad = (kh / 2) as isize;
    let mut dx_buf = if need_input {
        Some(vec![0.0; x.len()])
    } else {
        None
    };
    let mut dw_buf = if need_weight {
        Some(vec![0.0; weight.len()])
    } else {
        None
    };
    for b in 0..n {
        for co in 0..cout {
            let g_plane = &g.data[(b * cout + co) * h * w..(b * cout + co + 1) * h * w];
            for ci in 0..cin {
                let in_off = (b * cin + ci) * h * w;
                for dy in 0..kh {
                    for dx in 0..kw {
                        let widx = ((co * cin + ci) * kh + dy) * kw + dx;
                        let oy = dy as isize - pad;
                        let ox = dx as isize - pad;
                        let (x0, x1) = valid_range(w, ox);
                        if x0 >= x1 {
                            continue;
                        }
                        let sx0 = (x0 as isize + ox) as usize;
                        let sx1 = (x1 as isize + ox) as usize;
                        if let Some(dw) = dw_buf.as_mut() {
                            let mut acc = 0.0;
                            for y in valid_rows(h, oy) {
                                let iy = (y as isize + oy) as usize;
                                let src = &x.data[in_off + iy * w + sx0..in_off + iy * w + sx1];
                                acc += dot(&g_plane[y * w + x0..y * w + x1], src);
                            }
                            dw[widx] += acc;
                        }
                        if let Some(dxb) = dx_buf.as_mut() {
                            let wv = weight.data[widx];
                            for y in valid_rows(h, oy) {
                                let iy = (y as isize + oy) as usize;
                                let dst = &mut dxb[in_off + iy * w + sx0..in_off + iy * w + sx1];
                                axpy(wv, &g_plane[y * w + x0..y * w + x1], dst);
                            }
                        }
                    }
                }
            }
        }
    }
    (
        dx_buf.map(|d| Tensor {
            shape: x.shape.clone(),
            data: d,
        }),
        dw_buf.map(|d| Tensor {
            shape: weight.shape.clone(),
            data: d,
        }),
    )
}

/// Nearest-neighbour upsampling by a factor of two in both spatial axes.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = image_dims("upsample2x", x)?;
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * h2 * w2];
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new([n, c, h2, w2], out)
}

pub(crate) fn upsample2x_backward(g: &Tensor) -> Tensor {
    let (n, c, h2, w2) = (g.shape[0], g.shape[1], g.shape[2], g.shape[3]);
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        let src = &g.data[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[(y / 2) * w + xx / 2] += src[y * w2 + xx];
            }
        }
    }
    Tensor {
        shape: vec![n, c, h, w],
        data: out,
    }
}

/// Average pooling over non-overlapping `k × k` blocks; `k` must divide both sides.
pub fn avgpool(x: &Tensor, k: usize) -> Result<Tensor> {
    let (n, c, h, w) = image_dims("avgpool", x)?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::shape(
            "avgpool",
            format!("factor {} does not divide {}x{}", k, h, w),
        ));
    }
    let (ho, wo) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; n * c * ho * wo];
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..h {
            for xx in 0..w {
                dst[(y / k) * wo + xx / k] += src[y * w + xx];
            }
        }
        for v in dst.iter_mut() {
            *v *= scale;
        }
    }
    Tensor::new([n, c, ho, wo], out)
}

pub(crate) fn avgpool_backward(g: &Tensor, k: usize, input_shape: &[usize]) -> Tensor {
    let (n, c, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (ho, wo) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        let src = &g.data[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / k) * wo + xx / k] * scale;
            }
        }
    }
    Tensor {
        shape: input_shape.to_vec(),
        data: out,
    }
}

/// Extracts a spatial rectangle from every plane of an `(n, c, h, w)` tensor.
pub fn crop(x: &Tensor, rect: Rect) -> Result<Tensor> {
    let (n, c, h, w) = image_dims("crop", x)?;
    if rect.height == 0
        || rect.width == 0
        || rect.top + rect.height > h
        || rect.left + rect.width > w
    {
        return Err(Error::shape(
            "crop",
            format!("{:?} outside {}x{}", rect, h, w),
        ));
    }
    let mut out = Vec::with_capacity(n * c * rect.height * rect.width);
    for p in 0..n * c {
        for y in rect.top..rect.top + rect.height {
            let row = p * h * w + y * w;
            out.extend_from_slice(&x.data[row + rect.left..row + rect.left + rect.width]);
        }
    }
    Tensor::new([n, c, rect.height, rect.width], out)
}

pub(crate) fn crop_backward(g: &Tensor, rect: Rect, input_shape: &[usize]) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let planes = input_shape[0] * input_shape[1];
    let mut out = vec![0.0; planes * h * w];
    let mut src = g.data.chunks_exact(rect.width);
    for p in 0..planes {
        for y in rect.top..rect.top + rect.height {
            let row = p * h * w + y * w;
            let s = src.next().expect("crop gradient size");
            out[row + rect.left..row + rect.left + rect.width].copy_from_slice(s);
        }
    }
    Tensor {
        shape: input_shape.to_vec(),
        data: out,
    }
}

/// Elementwise product with a mask whose shape is a suffix of `x`'s shape;
/// the mask is repeated over the leading axes.
pub fn mask_mul(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let suffix_ok = mask.rank() <= x.rank() && x.shape.ends_with(&mask.shape);
    if !suffix_ok || mask.is_empty() {
        return Err(Error::shape(
            "mask_mul",
            format!("{:?} masked by {:?}", x.shape, mask.shape),
        ));
    }
    let data = x
        .data
        .chunks_exact(mask.len())
        .flat_map(|chunk| chunk.iter().zip(&mask.data).map(|(a, m)| a * m))
        .collect();
    Tensor::new(x.shape.clone(), data)
}
