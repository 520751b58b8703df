//! 2-D cross-correlation via im2col + GEMM.

use super::{shape_err, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent along one axis, or `None` if no kernel placement fits.
    pub fn out_extent(&self, size: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = size + 2 * self.padding;
        (padded >= span && self.stride > 0).then(|| (padded - span) / self.stride + 1)
    }

    fn is_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// `c = beta * c + op(a) * op(b)` with `op(a)` m×k and `op(b)` k×n, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices cover the index ranges implied by the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn new(input: &Tensor, weight: &Tensor, spec: Conv2dSpec) -> Result<Self> {
        let (n, c, h, w) = input.dims4()?;
        let (out_c, wc, kh, kw) = weight.dims4()?;
        if wc != c {
            return Err(shape_err(
                "conv2d",
                format!(
                    "input {:?} has {c} channels but weight {:?} expects {wc}",
                    input.shape(),
                    weight.shape()
                ),
            ));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                detail: "stride and dilation must be positive".into(),
            });
        }
        let (ho, wo) = match (spec.out_extent(h, kh), spec.out_extent(w, kw)) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(shape_err(
                    "conv2d",
                    format!("input {h}x{w} with padding {} admits no {kh}x{kw} kernel placement at dilation {}", spec.padding, spec.dilation),
                ))
            }
        };
        Ok(Self {
            n,
            c,
            h,
            w,
            out_c,
            kh,
            kw,
            ho,
            wo,
            spec,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let Conv2dSpec {
            stride,
            padding,
            dilation,
        } = self.spec;
        let ol = self.out_len();
        for ch in 0..self.c {
            let plane = &x[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut col[((ch * self.kh + i) * self.kw + j) * ol..][..ol];
                    for oy in 0..self.ho {
                        let iy = (oy * stride + i * dilation) as isize - padding as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + j * dilation) as isize - padding as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
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

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let Conv2dSpec {
            stride,
            padding,
            dilation,
        } = self.spec;
        let ol = self.out_len();
        for ch in 0..self.c {
            let plane = &mut dx[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &col[((ch * self.kh + i) * self.kw + j) * ol..][..ol];
                    for oy in 0..self.ho {
                        let iy = (oy * stride + i * dilation) as isize - padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &g) in row[oy * self.wo..(oy + 1) * self.wo].iter().enumerate() {
                            let ix = (ox * stride + j * dilation) as isize - padding as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input [N,C,H,W]` with `weight [O,C,kh,kw]` plus an
/// optional per-output-channel `bias [O]`.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: Conv2dSpec,
) -> Result<Tensor> {
    let geo = Geometry::new(input, weight, spec)?;
    if let Some(b) = bias {
        if b.shape() != [geo.out_c] {
            return Err(shape_err(
                "conv2d",
                format!("bias {:?} for {} output channels", b.shape(), geo.out_c),
            ));
        }
    }
    let (pl, ol) = (geo.patch_len(), geo.out_len());
    let in_len = geo.c * geo.h * geo.w;
    let mut out = Tensor::zeros(&[geo.n, geo.out_c, geo.ho, geo.wo]);
    let pointwise = spec.is_pointwise(geo.kh, geo.kw);
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![0.0; pl * ol]
    };
    for s in 0..geo.n {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let y = out.sample_mut(s);
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                y[o * ol..(o + 1) * ol].fill(bv);
            }
        }
        let cols: &[f64] = if pointwise {
            x
        } else {
            geo.im2col(x, &mut col);
            &col
        };
        gemm(geo.out_c, pl, ol, weight.data(), false, cols, false, y, 1.0);
    }
    Ok(out)
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: Conv2dSpec,
    grad_out: &Tensor,
    need_input: bool,
    need_weight: bool,
) -> Result<(Option<Tensor>, Option<Tensor>, Tensor)> {
    let geo = Geometry::new(input, weight, spec)?;
    let (pl, ol) = (geo.patch_len(), geo.out_len());
    let in_len = geo.c * geo.h * geo.w;
    let pointwise = spec.is_pointwise(geo.kh, geo.kw);
    let mut dx = need_input.then(|| Tensor::zeros(input.shape()));
    let mut dw = need_weight.then(|| Tensor::zeros(weight.shape()));
    let mut db = Tensor::zeros(&[geo.out_c]);
    let mut col = vec![0.0; pl * ol];
    for s in 0..geo.n {
        let gy = grad_out.sample(s);
        for (o, acc) in db.data_mut().iter_mut().enumerate() {
            *acc += gy[o * ol..(o + 1) * ol].iter().sum::<f64>();
        }
        if let Some(dw) = dw.as_mut() {
            let x = &input.data()[s * in_len..(s + 1) * in_len];
            let cols: &[f64] = if pointwise {
                x
            } else {
                geo.im2col(x, &mut col);
                &col
            };
            gemm(geo.out_c, ol, pl, gy, false, cols, true, dw.data_mut(), 1.0);
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.data_mut()[s * in_len..(s + 1) * in_len];
            if pointwise {
                gemm(pl, geo.out_c, ol, weight.data(), true, gy, false, dxs, 1.0);
            } else {
                gemm(
                    pl,
                    geo.out_c,
                    ol,
                    weight.data(),
                    true,
                    gy,
                    false,
                    &mut col,
                    0.0,
                );
                geo.col2im(&col, dxs);
            }
        }
    }
    Ok((dx, dw, db))
}
