//! Direct-loop 2-D convolution kernels on `[c, h, w]` maps.
//!
//! Convolution kernels are laid out `[c_out, c_in, kh, kw]`; transposed
//! convolution kernels are laid out `[c_in, c_out, kh, kw]`.

use crate::error::{Error, Result};

pub fn conv2d_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::dim("stride must be positive"));
    }
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(Error::dim(format!(
            "kernel extent {kernel} does not fit padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn deconv2d_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::dim("stride must be positive"));
    }
    if output_padding >= stride {
        return Err(Error::dim(format!(
            "output padding {output_padding} must be smaller than stride {stride}"
        )));
    }
    let full = (input - 1) * stride + kernel + output_padding;
    if kernel == 0 || full <= 2 * padding {
        return Err(Error::dim("transposed convolution yields non-positive extent"));
    }
    Ok(full - 2 * padding)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn conv(x: &[usize], k: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if x.len() != 3 || k.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects [c,h,w] input and [o,c,kh,kw] kernel, got {x:?} and {k:?}"
            )));
        }
        if x[0] != k[1] {
            return Err(Error::dim(format!(
                "conv2d channel mismatch: input {} vs kernel {}",
                x[0], k[1]
            )));
        }
        Ok(ConvGeom {
            c_in: x[0],
            h: x[1],
            w: x[2],
            c_out: k[0],
            kh: k[2],
            kw: k[3],
            stride,
            padding,
            ho: conv2d_output_extent(x[1], k[2], stride, padding)?,
            wo: conv2d_output_extent(x[2], k[3], stride, padding)?,
        })
    }

    pub fn deconv(
        x: &[usize],
        k: &[usize],
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        if x.len() != 3 || k.len() != 4 {
            return Err(Error::dim(format!(
                "deconv2d expects [c,h,w] input and [c,o,kh,kw] kernel, got {x:?} and {k:?}"
            )));
        }
        if x[0] != k[0] {
            return Err(Error::dim(format!(
                "deconv2d channel mismatch: input {} vs kernel {}",
                x[0], k[0]
            )));
        }
        Ok(ConvGeom {
            c_in: x[0],
            h: x[1],
            w: x[2],
            c_out: k[1],
            kh: k[2],
            kw: k[3],
            stride,
            padding,
            ho: deconv2d_output_extent(x[1], k[2], stride, padding, output_padding)?,
            wo: deconv2d_output_extent(x[2], k[3], stride, padding, output_padding)?,
        })
    }

    /// Visits `(sy, sx, i, j, py, px)` for every strided-side position
    /// `(sy, sx)` and kernel tap `(i, j)` whose padded-side position
    /// `(py, px) = (sy*s + i - p, sx*s + j - p)` is in bounds.
    #[inline]
    fn for_each_tap(
        &self,
        big_h: usize,
        big_w: usize,
        small_h: usize,
        small_w: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
    ) {
        for oy in 0..small_h {
            for i in 0..self.kh {
                let iy = (oy * self.stride + i) as isize - self.padding as isize;
                if iy < 0 || iy as usize >= big_h {
                    continue;
                }
                for ox in 0..small_w {
                    for j in 0..self.kw {
                        let ix = (ox * self.stride + j) as isize - self.padding as isize;
                        if ix < 0 || ix as usize >= big_w {
                            continue;
                        }
                        f(oy, ox, i, j, iy as usize, ix as usize);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.c_out * g.ho * g.wo];
    for o in 0..g.c_out {
        for c in 0..g.c_in {
            let kbase = (o * g.c_in + c) * g.kh * g.kw;
            let xbase = c * g.h * g.w;
            let obase = o * g.ho * g.wo;
            g.for_each_tap(g.h, g.w, g.ho, g.wo, |oy, ox, i, j, iy, ix| {
                out[obase + oy * g.wo + ox] += k[kbase + i * g.kw + j] * x[xbase + iy * g.w + ix];
            });
        }
    }
    out
}

/// Returns (grad wrt x, grad wrt kernel).
pub(crate) fn conv2d_backward(g: &ConvGeom, x: &[f64], k: &[f64], gy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for o in 0..g.c_out {
        for c in 0..g.c_in {
            let kbase = (o * g.c_in + c) * g.kh * g.kw;
            let xbase = c * g.h * g.w;
            let obase = o * g.ho * g.wo;
            g.for_each_tap(g.h, g.w, g.ho, g.wo, |oy, ox, i, j, iy, ix| {
                let go = gy[obase + oy * g.wo + ox];
                gx[xbase + iy * g.w + ix] += go * k[kbase + i * g.kw + j];
                gk[kbase + i * g.kw + j] += go * x[xbase + iy * g.w + ix];
            });
        }
    }
    (gx, gk)
}

pub(crate) fn deconv2d_forward(g: &ConvGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.c_out * g.ho * g.wo];
    for c in 0..g.c_in {
        for o in 0..g.c_out {
            let kbase = (c * g.c_out + o) * g.kh * g.kw;
            let xbase = c * g.h * g.w;
            let obase = o * g.ho * g.wo;
            // input pixel (y, x) scatters to output (y*s + i - p, x*s + j - p)
            g.for_each_tap(g.ho, g.wo, g.h, g.w, |y, xx, i, j, oy, ox| {
                out[obase + oy * g.wo + ox] += x[xbase + y * g.w + xx] * k[kbase + i * g.kw + j];
            });
        }
    }
    out
}

pub(crate) fn deconv2d_backward(g: &ConvGeom, x: &[f64], k: &[f64], gy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for c in 0..g.c_in {
        for o in 0..g.c_out {
            let kbase = (c * g.c_out + o) * g.kh * g.kw;
            let xbase = c * g.h * g.w;
            let obase = o * g.ho * g.wo;
            g.for_each_tap(g.ho, g.wo, g.h, g.w, |y, xx, i, j, oy, ox| {
                let go = gy[obase + oy * g.wo + ox];
                gx[xbase + y * g.w + xx] += go * k[kbase + i * g.kw + j];
                gk[kbase + i * g.kw + j] += go * x[xbase + y * g.w + xx];
            });
        }
    }
    (gx, gk)
}
