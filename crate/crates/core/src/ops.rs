//! Forward kernels and their adjoints.
//!
//! Every function here is a pure function of its inputs. The tape in
//! [`crate::autodiff`] records calls and replays the adjoints.

use crate::error::{Error, Result};
use crate::grid::{center_index, BinaryGrid};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Resolved shapes of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn resolve<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (in_c, h, w) = input.chw("conv2d")?;
        let [out_c, w_in_c, kh, kw] = weight.shape()[..] else {
            return Err(Error::dim(
                "conv2d",
                format!("weights must be OutC x InC x K x K, got {:?}", weight.shape()),
            ));
        };
        if w_in_c != in_c {
            return Err(Error::dim(
                "conv2d",
                format!("channel axis: input has {in_c} channels, weights expect {w_in_c}"),
            ));
        }
        if bias.shape() != [out_c] {
            return Err(Error::dim(
                "conv2d",
                format!("bias axis: expected [{out_c}], got {:?}", bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::arg("stride", "must be positive"));
        }
        if h + 2 * padding < kh {
            return Err(Error::dim(
                "conv2d",
                format!("height axis: padded height {} smaller than kernel {kh}", h + 2 * padding),
            ));
        }
        if w + 2 * padding < kw {
            return Err(Error::dim(
                "conv2d",
                format!("width axis: padded width {} smaller than kernel {kw}", w + 2 * padding),
            ));
        }
        Ok(ConvGeometry {
            in_channels: in_c,
            height: h,
            width: w,
            out_channels: out_c,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    /// Output indices `o` whose input index `o*stride + k - padding` lies in `0..extent`.
    #[inline]
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> std::ops::Range<usize> {
        let s = self.stride;
        let lo = if self.padding > k {
            (self.padding - k).div_ceil(s)
        } else {
            0
        };
        if extent + self.padding <= k {
            return 0..0;
        }
        let hi = ((extent - 1 + self.padding - k) / s + 1).min(out);
        lo..hi.max(lo)
    }
}

/// Strided 2D cross-correlation with zero padding.
///
/// Output extent per axis is `floor((H + 2p - K) / s) + 1`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::resolve(input, weight, bias, stride, padding)?;
    let plane = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.out_channels * plane];
    let x = input.data();
    let wt = weight.data();
    for oc in 0..g.out_channels {
        let dst = &mut out[oc * plane..(oc + 1) * plane];
        dst.fill(bias.data()[oc]);
        for ic in 0..g.in_channels {
            let src = &x[ic * g.height * g.width..(ic + 1) * g.height * g.width];
            for ky in 0..g.kernel_h {
                let rows = g.valid_range(ky, g.height, g.out_h);
                for kx in 0..g.kernel_w {
                    let wv = wt[((oc * g.in_channels + ic) * g.kernel_h + ky) * g.kernel_w + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let cols = g.valid_range(kx, g.width, g.out_w);
                    for oy in rows.clone() {
                        let iy = oy * g.stride + ky - g.padding;
                        let src_row = &src[iy * g.width..(iy + 1) * g.width];
                        let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        for ox in cols.clone() {
                            dst_row[ox] += wv * src_row[ox * g.stride + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[g.out_channels, g.out_h, g.out_w], out)
}

/// Adjoint of [`conv2d`]: gradients w.r.t. input, weights and bias.
/// The input gradient is skipped (`None`) unless `input_grad` is set.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &ConvGeometry,
    input_grad: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let plane = g.out_h * g.out_w;
    let in_plane = g.height * g.width;
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let mut gin = vec![T::zero(); if input_grad { g.in_channels * in_plane } else { 0 }];
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); g.out_channels];
    for oc in 0..g.out_channels {
        let gplane = &go[oc * plane..(oc + 1) * plane];
        gb[oc] = gplane.iter().copied().sum();
        for ic in 0..g.in_channels {
            let src = &x[ic * in_plane..(ic + 1) * in_plane];
            for ky in 0..g.kernel_h {
                let rows = g.valid_range(ky, g.height, g.out_h);
                for kx in 0..g.kernel_w {
                    let widx = ((oc * g.in_channels + ic) * g.kernel_h + ky) * g.kernel_w + kx;
                    let wv = wt[widx];
                    let cols = g.valid_range(kx, g.width, g.out_w);
                    let mut acc = T::zero();
                    for oy in rows.clone() {
                        let iy = oy * g.stride + ky - g.padding;
                        let grow = &gplane[oy * g.out_w..(oy + 1) * g.out_w];
                        let row = iy * g.width;
                        for ox in cols.clone() {
                            acc += grow[ox] * src[row + ox * g.stride + kx - g.padding];
                        }
                        if input_grad {
                            let gsrc = &mut gin[ic * in_plane..(ic + 1) * in_plane];
                            for ox in cols.clone() {
                                gsrc[row + ox * g.stride + kx - g.padding] += wv * grow[ox];
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (
        input_grad.then(|| Tensor::from_vec(input.shape(), gin).expect("input shape")),
        Tensor::from_vec(weight.shape(), gw).expect("weight shape"),
        Tensor::from_vec(&[g.out_channels], gb).expect("bias shape"),
    )
}

fn check_merge_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, mask: &BinaryGrid) -> Result<()> {
    let (_, h, w) = a.chw("masked_merge")?;
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "masked_merge",
            format!("operands differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if mask.dims() != (h, w) {
        return Err(Error::dim(
            "masked_merge",
            format!(
                "spatial axes: mask is {}x{}, tensors are {h}x{w}",
                mask.height(),
                mask.width()
            ),
        ));
    }
    Ok(())
}

/// Spatial selection: `a` where `mask` is set, `b` elsewhere, every channel.
pub fn masked_merge<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, mask: &BinaryGrid) -> Result<Tensor<T>> {
    check_merge_dims(a, b, mask)?;
    let plane = mask.len();
    let m = mask.cells();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (&av, &bv))| if m[i % plane] { av } else { bv })
        .collect();
    Tensor::from_vec(a.shape(), data)
}

/// Adjoint of [`masked_merge`]: routes `grad_out` to `a` inside the mask, to `b` outside.
pub fn masked_merge_backward<T: Scalar>(grad_out: &Tensor<T>, mask: &BinaryGrid) -> (Tensor<T>, Tensor<T>) {
    let plane = mask.len();
    let m = mask.cells();
    let mut ga = grad_out.clone();
    let mut gb = grad_out.clone();
    for (i, (a, b)) in ga.data_mut().iter_mut().zip(gb.data_mut()).enumerate() {
        if m[i % plane] {
            *b = T::zero();
        } else {
            *a = T::zero();
        }
    }
    (ga, gb)
}

/// Channel-wise nearest-neighbour resize of a CxHxW tensor (center sampling).
pub fn resize_nearest<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw("resize_nearest")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg("out_dims", format!("got {out_h}x{out_w}")));
    }
    let cols: Vec<usize> = (0..out_w).map(|x| center_index(x, w, out_w)).collect();
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for oy in 0..out_h {
            let row = &x[(ch * h + center_index(oy, h, out_h)) * w..][..w];
            out.extend(cols.iter().map(|&ix| row[ix]));
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Adjoint of [`resize_nearest`]: scatter-add into the sampled source cells.
pub fn resize_nearest_backward<T: Scalar>(grad_out: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let [c, h, w] = in_shape[..] else {
        unreachable!("resize input is CxHxW")
    };
    let [_, out_h, out_w] = grad_out.shape()[..] else {
        unreachable!("resize output is CxHxW")
    };
    let cols: Vec<usize> = (0..out_w).map(|x| center_index(x, w, out_w)).collect();
    let mut gin = vec![T::zero(); c * h * w];
    let go = grad_out.data();
    for ch in 0..c {
        for oy in 0..out_h {
            let iy = center_index(oy, h, out_h);
            let grow = &go[(ch * out_h + oy) * out_w..][..out_w];
            let dst = &mut gin[(ch * h + iy) * w..][..w];
            for (ox, &ix) in cols.iter().enumerate() {
                dst[ix] += grow[ox];
            }
        }
    }
    Tensor::from_vec(in_shape, gin).expect("input shape")
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Binary focal loss parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    /// Weight of the positive (noise) class; negatives get `1 - alpha`.
    pub alpha: f64,
    /// Focusing exponent.
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Focal loss of one cell and its derivative w.r.t. the logit.
///
/// Uses `ln p = -softplus(-z)` and `ln(1-p) = -softplus(z)` so saturated
/// logits stay finite.
#[inline]
pub fn focal_cell<T: Scalar>(logit: T, target: bool, params: FocalParams) -> (T, T) {
    let gamma: T = lit(params.gamma);
    // Mirror the logit so that `p` is always the probability of the true class.
    let (z, alpha_t, sign) = if target {
        (logit, lit::<T>(params.alpha), T::one())
    } else {
        (-logit, lit::<T>(1.0 - params.alpha), -T::one())
    };
    let p = sigmoid(z);
    let q = sigmoid(-z);
    let log_p = -softplus(-z);
    let weight = if params.gamma == 0.0 { T::one() } else { q.powf(gamma) };
    let loss = -alpha_t * weight * log_p;
    let dz = alpha_t * weight * (gamma * p * log_p - q);
    (loss, sign * dz)
}

/// Mean focal loss over all cells plus the per-logit gradient of that mean.
pub fn focal_loss<T: Scalar>(
    logits: &Tensor<T>,
    target: &BinaryGrid,
    params: FocalParams,
) -> Result<(T, Tensor<T>)> {
    if logits.len() != target.len() {
        return Err(Error::dim(
            "focal_loss",
            format!(
                "logits {:?} vs target {}x{}",
                logits.shape(),
                target.height(),
                target.width()
            ),
        ));
    }
    let n: T = lit(logits.len() as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.data().iter().zip(target.cells()) {
        let (l, d) = focal_cell(z, t, params);
        total += l;
        grad.push(d / n);
    }
    Ok((total / n, Tensor::from_vec(logits.shape(), grad)?))
}
