//! Convolution (im2col + GEMM) and fully connected layers.

use super::{Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.ho * g.wo;
    for c in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((c * g.k + ki) * g.k + kj) * p;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.ho * g.wo;
    for c in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((c * g.k + ki) * g.k + kj) * p;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] = dx[base + ix as usize] + cols[row + oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<(usize, usize, ConvGeom)> {
    let (b, cin, h, wd) = x.dims4()?;
    let (cout, wcin, kh, kw) = w.dims4()?;
    if kh != kw || kh == 0 {
        return Err(shape_err(format!("conv2d needs a square non-empty kernel, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(shape_err("conv2d stride must be at least 1"));
    }
    if wcin != cin {
        return Err(shape_err(format!("conv2d weight expects {wcin} input channels, input has {cin}")));
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(shape_err(format!("conv2d kernel {kh} too large for {h}x{wd} with padding {pad}")));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    Ok((b, cout, ConvGeom { cin, h, w: wd, k: kh, stride, pad, ho, wo }))
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (b, cout, g) = geometry(x, w, stride, pad)?;
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(shape_err(format!("conv2d bias shape {:?}, expected [{cout}]", bias.shape())));
        }
    }
    let ckk = g.cin * g.k * g.k;
    let p = g.ho * g.wo;
    let in_sz = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); b * cout * p];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); ckk * p] };
    for bi in 0..b {
        let xb = &x.data()[bi * in_sz..(bi + 1) * in_sz];
        let ob = &mut out[bi * cout * p..(bi + 1) * cout * p];
        if let Some(bias) = bias {
            for (c, row) in ob.chunks_mut(p).enumerate() {
                row.fill(bias.data()[c]);
            }
        }
        let src: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        T::gemm(cout, ckk, p, T::one(), w.data(), ckk, 1, src, p, 1, T::one(), ob, p, 1);
    }
    Tensor::new(vec![b, cout, g.ho, g.wo], out)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
    need_dx: bool,
) -> ConvGrads<T> {
    let (b, cout, g) = geometry(x, w, stride, pad).expect("validated in forward");
    let ckk = g.cin * g.k * g.k;
    let p = g.ho * g.wo;
    let in_sz = g.cin * g.h * g.w;
    let mut dw = Tensor::zeros(w.shape().to_vec());
    let mut db = vec![T::zero(); cout];
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); ckk * p] };
    let mut dcols = vec![T::zero(); ckk * p];
    for bi in 0..b {
        let xb = &x.data()[bi * in_sz..(bi + 1) * in_sz];
        let gb = &dy.data()[bi * cout * p..(bi + 1) * cout * p];
        for (c, row) in gb.chunks(p).enumerate() {
            db[c] = db[c] + row.iter().copied().sum();
        }
        let src: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        T::gemm(cout, p, ckk, T::one(), gb, p, 1, src, 1, p, T::one(), dw.data_mut(), ckk, 1);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[bi * in_sz..(bi + 1) * in_sz];
            if g.is_pointwise() {
                T::gemm(ckk, cout, p, T::one(), w.data(), 1, ckk, gb, p, 1, T::one(), dxb, p, 1);
            } else {
                T::gemm(ckk, cout, p, T::one(), w.data(), 1, ckk, gb, p, 1, T::zero(), &mut dcols, p, 1);
                col2im(&dcols, &g, dxb);
            }
        }
    }
    ConvGrads { dx, dw, db: Tensor::new(vec![cout], db).unwrap() }
}

pub(crate) fn linear_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (&[b, din], &[dout, wdin]) = (x.shape(), w.shape()) else {
        return Err(shape_err(format!(
            "fully_connected expects [B, D_in] input and [D_out, D_in] weight, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    };
    if din != wdin {
        return Err(shape_err(format!("fully_connected weight expects {wdin} inputs, got {din}")));
    }
    let mut out = vec![T::zero(); b * dout];
    if let Some(bias) = bias {
        if bias.shape() != [dout] {
            return Err(shape_err(format!("fully_connected bias shape {:?}, expected [{dout}]", bias.shape())));
        }
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(bias.data());
        }
    }
    T::gemm(b, din, dout, T::one(), x.data(), din, 1, w.data(), 1, din, T::one(), &mut out, dout, 1);
    Tensor::new(vec![b, dout], out)
}

pub(crate) fn linear_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    let mut dx = Tensor::zeros(vec![b, din]);
    T::gemm(b, dout, din, T::one(), dy.data(), dout, 1, w.data(), din, 1, T::zero(), dx.data_mut(), din, 1);
    let mut dw = Tensor::zeros(vec![dout, din]);
    T::gemm(dout, b, din, T::one(), dy.data(), 1, dout, x.data(), din, 1, T::zero(), dw.data_mut(), din, 1);
    let mut db = vec![T::zero(); dout];
    for row in dy.data().chunks(dout) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    (dx, dw, Tensor::new(vec![dout], db).unwrap())
}

impl<T: Real> Tape<T> {
    /// Cross-correlation. `x` is `[B, C_in, H, W]` or `[C_in, H, W]`,
    /// `w` is `[C_out, C_in, k, k]`, `b` is `[C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        if self.shape(x).len() == 3 {
            let s = self.shape(x).to_vec();
            let x4 = self.reshape(x, &[1, s[0], s[1], s[2]])?;
            let y = self.conv2d(x4, w, b, stride, pad)?;
            let ys = self.shape(y).to_vec();
            return self.reshape(y, &ys[1..]);
        }
        let value = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.derive(value, Op::Conv2d { x, w, b, stride, pad }, &parents))
    }

    /// Affine map `x W^T + b`; `x` is `[B, D_in]` or `[D_in]`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        if self.shape(x).len() == 1 {
            let d = self.shape(x)[0];
            let x2 = self.reshape(x, &[1, d])?;
            let y = self.fully_connected(x2, w, b)?;
            let dout = self.shape(y)[1];
            return self.reshape(y, &[dout]);
        }
        let value = linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.derive(value, Op::Linear { x, w, b }, &parents))
    }
}
