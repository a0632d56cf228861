use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::{NnError, Param};

/// Samples per parallel work unit. Fixed so reductions do not depend on the
/// thread count.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Output extent and leading pad along one axis.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    dilation: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize), NnError> {
    let effective = 1 + (kernel - 1) * dilation;
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + effective).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if effective > input {
                return Err(NnError::Shape(format!(
                    "effective kernel {effective} exceeds input extent {input}"
                )));
            }
            Ok(((input - effective) / stride + 1, 0))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

/// 2-D cross-correlation with dilation, stride and same/valid padding.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
    /// Skip the input gradient when the input is data.
    pub need_input_grad: bool,
    cache: Option<(Vec<T>, [usize; 4], Geometry)>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: Padding,
    ) -> Result<Self, NnError> {
        let ws = weight.shape();
        if ws.len() != 4 || bias.shape() != [ws[0]] {
            return Err(NnError::Shape(format!(
                "conv weight {:?} / bias {:?}",
                ws,
                bias.shape()
            )));
        }
        if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 || ws[2] == 0 || ws[3] == 0 {
            return Err(NnError::Config("kernel, stride and dilation must be positive".into()));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            stride,
            dilation,
            padding,
            need_input_grad: true,
            cache: None,
        })
    }

    pub fn filters(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let g = self.geometry(input)?;
        Ok(vec![input[0], g.f, g.oh, g.ow])
    }

    fn geometry(&self, input: &[usize]) -> Result<Geometry, NnError> {
        let [_, c, h, w] = <[usize; 4]>::try_from(input)
            .map_err(|_| NnError::Shape(format!("conv expects rank-4 input, got {input:?}")))?;
        let ws = self.weight.value.shape();
        if ws[1] != c {
            return Err(NnError::Shape(format!(
                "conv weight {ws:?} expects {} input channels, got {c}",
                ws[1]
            )));
        }
        let (oh, pad_top) = conv_output_extent(h, ws[2], self.dilation.0, self.stride.0, self.padding)?;
        let (ow, pad_left) = conv_output_extent(w, ws[3], self.dilation.1, self.stride.1, self.padding)?;
        Ok(Geometry {
            c,
            h,
            w,
            f: ws[0],
            kh: ws[2],
            kw: ws[3],
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    /// Weights regrouped as `[tap][channel][filter]`.
    fn tap_major(&self, g: &Geometry) -> Vec<T> {
        let w = self.weight.value.data();
        let mut out = vec![T::zero(); w.len()];
        for f in 0..g.f {
            for c in 0..g.c {
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        let t = i * g.kw + j;
                        out[(t * g.c + c) * g.f + f] = w[((f * g.c + c) * g.kh + i) * g.kw + j];
                    }
                }
            }
        }
        out
    }

    /// Output indices along one axis whose tap `i` lands inside the input.
    fn valid_range(out: usize, input: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
        // input index = o * stride + offset - pad
        let lo = pad.saturating_sub(offset).div_ceil(stride);
        if input + pad <= offset {
            return (0, 0);
        }
        let hi = ((input - 1 + pad - offset) / stride + 1).min(out);
        (lo.min(hi), hi)
    }

    /// Calls `f(t, first_input_pos, first_output_pos, rows)` for every tap
    /// and output column with a non-empty run of valid output rows.
    fn for_each_run(&self, g: &Geometry, mut f: impl FnMut(usize, usize, usize, usize)) {
        for i in 0..g.kh {
            let (h_lo, h_hi) = Self::valid_range(g.oh, g.h, self.stride.0, i * self.dilation.0, g.pad_top);
            if h_lo >= h_hi {
                continue;
            }
            for j in 0..g.kw {
                let (w_lo, w_hi) = Self::valid_range(g.ow, g.w, self.stride.1, j * self.dilation.1, g.pad_left);
                for ow in w_lo..w_hi {
                    let ih = h_lo * self.stride.0 + i * self.dilation.0 - g.pad_top;
                    let iw = ow * self.stride.1 + j * self.dilation.1 - g.pad_left;
                    f(i * g.kw + j, ih * g.w + iw, h_lo * g.ow + ow, h_hi - h_lo);
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>, NnError> {
        let dims = x.dims4("conv")?;
        let g = self.geometry(x.shape())?;
        let b = dims[0];
        let hw = g.h * g.w;
        let p_out = g.oh * g.ow;
        // channels-last copy so every tap is a strided matrix product
        let mut hwc = vec![T::zero(); x.len()];
        for s in 0..b {
            let src = &x.data()[s * g.c * hw..(s + 1) * g.c * hw];
            let dst = &mut hwc[s * g.c * hw..(s + 1) * g.c * hw];
            for c in 0..g.c {
                for p in 0..hw {
                    dst[p * g.c + c] = src[c * hw + p];
                }
            }
        }
        let wt = self.tap_major(&g);
        let bias = self.bias.value.data();
        let x_row = (self.stride.0 * g.w * g.c) as isize;
        let y_row = (g.ow * g.f) as isize;
        let mut out = vec![T::zero(); b * g.f * p_out];
        out.par_chunks_mut(g.f * p_out)
            .zip(hwc.par_chunks(g.c * hw))
            .for_each(|(o, xs)| {
                let mut acc = Vec::with_capacity(p_out * g.f);
                for _ in 0..p_out {
                    acc.extend_from_slice(bias);
                }
                self.for_each_run(&g, |t, pos, p, rows| {
                    // SAFETY: `for_each_run` only yields runs inside both
                    // buffers; `acc` is a distinct allocation.
                    unsafe {
                        T::gemm_acc(
                            rows,
                            g.c,
                            g.f,
                            xs.as_ptr().add(pos * g.c),
                            x_row,
                            1,
                            wt.as_ptr().add(t * g.c * g.f),
                            g.f as isize,
                            1,
                            acc.as_mut_ptr().add(p * g.f),
                            y_row,
                            1,
                        );
                    }
                });
                for p in 0..p_out {
                    for f in 0..g.f {
                        o[f * p_out + p] = acc[p * g.f + f];
                    }
                }
            });
        self.cache = train.then_some((hwc, dims, g));
        Tensor::from_vec(&[b, g.f, g.oh, g.ow], out)
    }

    /// Accumulates parameter gradients; returns the input gradient (zeros if
    /// `need_input_grad` is off).
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (hwc, dims, g) = self
            .cache
            .take()
            .ok_or_else(|| NnError::Shape("conv backward without cached forward".into()))?;
        let b = dims[0];
        if dy.shape() != [b, g.f, g.oh, g.ow] {
            return Err(NnError::Shape(format!(
                "conv upstream gradient {:?}, expected {:?}",
                dy.shape(),
                [b, g.f, g.oh, g.ow]
            )));
        }
        let hw = g.h * g.w;
        let p_out = g.oh * g.ow;
        let taps = g.kh * g.kw;
        let wt = self.tap_major(&g);
        let need_dx = self.need_input_grad;
        let x_row = (self.stride.0 * g.w * g.c) as isize;
        let y_row = (g.ow * g.f) as isize;

        let partials: Vec<(Vec<T>, Vec<T>, Vec<T>)> = hwc
            .par_chunks(CHUNK * g.c * hw)
            .zip(dy.data().par_chunks(CHUNK * g.f * p_out))
            .map(|(xs_chunk, dy_chunk)| {
                let mut dwt = vec![T::zero(); taps * g.c * g.f];
                let mut db = vec![T::zero(); g.f];
                let n = xs_chunk.len() / (g.c * hw);
                let mut dx = if need_dx {
                    vec![T::zero(); xs_chunk.len()]
                } else {
                    Vec::new()
                };
                let mut dyt = vec![T::zero(); p_out * g.f];
                for s in 0..n {
                    let xs = &xs_chunk[s * g.c * hw..(s + 1) * g.c * hw];
                    let dys = &dy_chunk[s * g.f * p_out..(s + 1) * g.f * p_out];
                    for f in 0..g.f {
                        for p in 0..p_out {
                            let v = dys[f * p_out + p];
                            dyt[p * g.f + f] = v;
                            db[f] += v;
                        }
                    }
                    let dxs = if need_dx {
                        dx[s * g.c * hw..(s + 1) * g.c * hw].as_mut_ptr()
                    } else {
                        std::ptr::null_mut()
                    };
                    self.for_each_run(&g, |t, pos, p, rows| {
                        // SAFETY: runs stay inside `xs`, `dyt` and the sample's
                        // slice of `dx`; outputs never alias inputs.
                        unsafe {
                            T::gemm_acc(
                                g.c,
                                rows,
                                g.f,
                                xs.as_ptr().add(pos * g.c),
                                1,
                                x_row,
                                dyt.as_ptr().add(p * g.f),
                                y_row,
                                1,
                                dwt.as_mut_ptr().add(t * g.c * g.f),
                                g.f as isize,
                                1,
                            );
                            if need_dx {
                                T::gemm_acc(
                                    rows,
                                    g.f,
                                    g.c,
                                    dyt.as_ptr().add(p * g.f),
                                    y_row,
                                    1,
                                    wt.as_ptr().add(t * g.c * g.f),
                                    1,
                                    g.f as isize,
                                    dxs.add(pos * g.c),
                                    x_row,
                                    1,
                                );
                            }
                        }
                    });
                }
                (dwt, db, dx)
            })
            .collect();

        let mut dwt = vec![T::zero(); taps * g.c * g.f];
        let mut dx_hwc = Vec::with_capacity(if need_dx { hwc.len() } else { 0 });
        {
            let db = self.bias.grad.data_mut();
            for (pw, pb, pdx) in partials {
                for (a, v) in dwt.iter_mut().zip(pw) {
                    *a += v;
                }
                for (a, v) in db.iter_mut().zip(pb) {
                    *a += v;
                }
                dx_hwc.extend(pdx);
            }
        }
        let gw = self.weight.grad.data_mut();
        for f in 0..g.f {
            for c in 0..g.c {
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        let t = i * g.kw + j;
                        gw[((f * g.c + c) * g.kh + i) * g.kw + j] += dwt[(t * g.c + c) * g.f + f];
                    }
                }
            }
        }
        let mut dx = vec![T::zero(); b * g.c * hw];
        if need_dx {
            for s in 0..b {
                let src = &dx_hwc[s * g.c * hw..(s + 1) * g.c * hw];
                let dst = &mut dx[s * g.c * hw..(s + 1) * g.c * hw];
                for c in 0..g.c {
                    for p in 0..hw {
                        dst[c * hw + p] = src[p * g.c + c];
                    }
                }
            }
        }
        Tensor::from_vec(&dims, dx)
    }
}
