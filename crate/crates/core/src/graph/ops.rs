//! Layer kernels over planar `(channels, height, width)` tensors.
//!
//! Accumulation order is fixed so that outputs are bit-reproducible: for conv2d
//! each output pixel sums its taps with channels outermost, then kernel rows,
//! then kernel columns, starting from `+0.0`, and adds the bias last. Taps that
//! fall in the zero padding contribute nothing.

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OpError {
    #[error("expected {expected} input channels, got {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("kernel {0} must be odd")]
    EvenKernel(usize),
    #[error("kernel shape {0:?} is not valid here")]
    KernelShape(Vec<usize>),
    #[error("bias has {found} entries for {expected} output channels")]
    BiasShape { expected: usize, found: usize },
    #[error("2x pooling needs even extents, got {height}x{width}")]
    OddExtent { height: usize, width: usize },
    #[error("spatial extents differ: {a:?} vs {b:?}")]
    SpatialMismatch { a: (usize, usize), b: (usize, usize) },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn relu(x: f32) -> f32 {
    // NaN fails the comparison and passes through.
    if x < 0.0 {
        0.0
    } else {
        x
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(relu),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

fn bias_len(bias: &Tensor, expected: usize) -> Result<(), OpError> {
    if bias.shape() != [expected] {
        return Err(OpError::BiasShape {
            expected,
            found: bias.len(),
        });
    }
    Ok(())
}

/// Stride-1 convolution with "same" zero padding of `(k - 1) / 2`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, OpError> {
    let (c, h, w) = input.chw()?;
    let (o, k) = match *weight.shape() {
        [o, wc, kh, kw] if kh == kw => {
            if wc != c {
                return Err(OpError::ChannelMismatch {
                    expected: wc,
                    found: c,
                });
            }
            (o, kh)
        }
        _ => return Err(OpError::KernelShape(weight.shape().to_vec())),
    };
    if k % 2 == 0 {
        return Err(OpError::EvenKernel(k));
    }
    bias_len(bias, o)?;

    let pad = (k - 1) / 2;
    let plane = h * w;
    let src = input.data();
    let kern = weight.data();
    let mut out = vec![0.0f32; o * plane];

    for (oc, acc) in out.chunks_exact_mut(plane).enumerate() {
        for ic in 0..c {
            let in_plane = &src[ic * plane..(ic + 1) * plane];
            let taps = &kern[(oc * c + ic) * k * k..(oc * c + ic + 1) * k * k];
            for dy in 0..k {
                // Output rows whose source row y + dy - pad is inside the image.
                let y_lo = pad.saturating_sub(dy);
                let y_hi = (h + pad).saturating_sub(dy).min(h);
                for dx in 0..k {
                    let tap = taps[dy * k + dx];
                    let x_lo = pad.saturating_sub(dx);
                    let x_hi = (w + pad).saturating_sub(dx).min(w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let sy = y + dy - pad;
                        let dst = &mut acc[y * w + x_lo..y * w + x_hi];
                        let s = &in_plane[sy * w + x_lo + dx - pad..sy * w + x_hi + dx - pad];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += v * tap;
                        }
                    }
                }
            }
        }
        let b = bias.data()[oc];
        for v in acc.iter_mut() {
            // Operand order picks which NaN payload survives when both are NaN.
            #[allow(clippy::assign_op_pattern)]
            {
                *v = b + *v;
            }
        }
    }
    Ok(Tensor::new(vec![o, h, w], out)?)
}

/// Non-overlapping 2x2, stride-2 transposed convolution; weight is `(in_ch, out_ch, 2, 2)`.
pub fn conv_transpose2x(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, OpError> {
    let (c, h, w) = input.chw()?;
    let o = match *weight.shape() {
        [wc, o, 2, 2] => {
            if wc != c {
                return Err(OpError::ChannelMismatch {
                    expected: wc,
                    found: c,
                });
            }
            o
        }
        _ => return Err(OpError::KernelShape(weight.shape().to_vec())),
    };
    bias_len(bias, o)?;

    let plane = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let src = input.data();
    let kern = weight.data();
    let mut out = vec![0.0f32; o * oh * ow];
    let mut acc = vec![0.0f32; plane];

    for oc in 0..o {
        let b = bias.data()[oc];
        for dy in 0..2 {
            for dx in 0..2 {
                acc.fill(0.0);
                for ic in 0..c {
                    let tap = kern[((ic * o + oc) * 2 + dy) * 2 + dx];
                    for (a, &v) in acc.iter_mut().zip(&src[ic * plane..(ic + 1) * plane]) {
                        *a += v * tap;
                    }
                }
                let dst = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
                for y in 0..h {
                    for x in 0..w {
                        dst[(2 * y + dy) * ow + 2 * x + dx] = b + acc[y * w + x];
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![o, oh, ow], out)?)
}

/// 2x2 max pooling; a NaN anywhere in the window yields NaN.
pub fn maxpool2x(input: &Tensor) -> Result<Tensor, OpError> {
    let (c, h, w) = input.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(OpError::OddExtent {
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let window = [
                    p[2 * y * w + 2 * x],
                    p[2 * y * w + 2 * x + 1],
                    p[(2 * y + 1) * w + 2 * x],
                    p[(2 * y + 1) * w + 2 * x + 1],
                ];
                let m = window.iter().copied().fold(f32::NEG_INFINITY, |m, v| {
                    if m.is_nan() || v.is_nan() {
                        f32::NAN
                    } else if v > m {
                        v
                    } else {
                        m
                    }
                });
                out.push(m);
            }
        }
    }
    Ok(Tensor::new(vec![c, oh, ow], out)?)
}

pub fn upsample_nearest2x(input: &Tensor) -> Result<Tensor, OpError> {
    let (c, h, w) = input.chw()?;
    let (oh, ow) = (2 * h, 2 * w);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            let row = &src[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    Ok(Tensor::new(vec![c, oh, ow], out)?)
}

/// Stacks `a`'s channels followed by `b`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor, OpError> {
    let (ca, ha, wa) = a.chw()?;
    let (cb, hb, wb) = b.chw()?;
    if (ha, wa) != (hb, wb) {
        return Err(OpError::SpatialMismatch {
            a: (ha, wa),
            b: (hb, wb),
        });
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::new(vec![ca + cb, ha, wa], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut RngState) -> Tensor {
        let n = shape.iter().product();
        t(shape, &(0..n).map(|_| rng.unit() * 2.0 - 1.0).collect::<Vec<_>>())
    }

    /// Direct per-pixel summation over in-bounds taps, returning the f32
    /// result (same channel, row, column order) and the exact f64 sum together
    /// with the sum of term magnitudes.
    fn conv_oracle(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Vec<(f32, f64, f64)> {
        let (c, h, w) = input.chw().unwrap();
        let (o, k) = (weight.shape()[0], weight.shape()[2]);
        let p = (k as isize - 1) / 2;
        let mut out = Vec::with_capacity(o * h * w);
        for oc in 0..o {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let (mut acc, mut exact, mut mag) = (0.0f32, 0.0f64, 0.0f64);
                    for ic in 0..c {
                        for dy in 0..k as isize {
                            for dx in 0..k as isize {
                                let (sy, sx) = (y + dy - p, x + dx - p);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let iv = input.data()[(ic * h + sy as usize) * w + sx as usize];
                                let wv = weight.data()
                                    [((oc * c + ic) * k + dy as usize) * k + dx as usize];
                                acc += iv * wv;
                                exact += iv as f64 * wv as f64;
                                mag += (iv as f64 * wv as f64).abs();
                            }
                        }
                    }
                    let b = bias.data()[oc];
                    out.push((b + acc, b as f64 + exact, mag + (b as f64).abs()));
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut rng = RngState::new(1);
        let x = random(&[1, 4, 5], &mut rng);
        let y = conv2d(&x, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0])).unwrap();
        assert!(y.same_bits(&x));
    }

    #[test]
    fn all_ones_kernel_counts_in_bounds_taps() {
        let x = Tensor::filled(vec![1, 4, 4], 1.0).unwrap();
        let k = Tensor::filled(vec![1, 1, 3, 3], 1.0).unwrap();
        let y = conv2d(&x, &k, &t(&[1], &[0.0])).unwrap();
        assert_eq!(y.get(&[0, 1, 1]).unwrap(), 9.0);
        assert_eq!(y.get(&[0, 2, 2]).unwrap(), 9.0);
        assert_eq!(y.get(&[0, 0, 0]).unwrap(), 4.0);
        assert_eq!(y.get(&[0, 3, 3]).unwrap(), 4.0);
        assert_eq!(y.get(&[0, 0, 1]).unwrap(), 6.0);
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = RngState::new(2024);
        for case in 0..100 {
            let c = 1 + rng.index(3).unwrap();
            let o = 1 + rng.index(3).unwrap();
            let k = [1, 3, 5][rng.index(3).unwrap()];
            let (h, w) = (1 + rng.index(7).unwrap(), 1 + rng.index(7).unwrap());
            let x = random(&[c, h, w], &mut rng);
            let wt = random(&[o, c, k, k], &mut rng);
            let b = random(&[o], &mut rng);
            let got = conv2d(&x, &wt, &b).unwrap();
            for (&g, (direct, exact, mag)) in got.data().iter().zip(conv_oracle(&x, &wt, &b)) {
                let rel = (g - direct).abs() as f64 / (direct.abs() as f64).max(f64::MIN_POSITIVE);
                assert!(g == direct || rel <= 1e-6, "case {case}: {g} vs {direct}");
                // Standard forward error bound of recursive f32 summation.
                let terms = (c * k * k + 1) as f64;
                assert!((g as f64 - exact).abs() <= terms * f32::EPSILON as f64 * mag, "case {case}");
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(vec![2, 3, 3]).unwrap();
        let wt = Tensor::zeros(vec![1, 3, 3, 3]).unwrap();
        assert_eq!(
            conv2d(&x, &wt, &Tensor::zeros(vec![1]).unwrap()),
            Err(OpError::ChannelMismatch {
                expected: 3,
                found: 2
            })
        );
    }

    #[test]
    fn conv_with_negative_zero_weight_is_unchanged() {
        let mut rng = RngState::new(5);
        let x = random(&[2, 4, 4], &mut rng);
        let mut wt = random(&[2, 2, 3, 3], &mut rng);
        wt.data_mut()[7] = 0.0;
        let b = random(&[2], &mut rng);
        let base = conv2d(&x, &wt, &b).unwrap();
        wt.data_mut()[7] = -0.0;
        assert!(conv2d(&x, &wt, &b).unwrap().same_bits(&base));
    }

    fn transpose_oracle(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Vec<f32> {
        let (c, h, w) = input.chw().unwrap();
        let o = weight.shape()[1];
        let mut out = vec![0.0f32; o * 4 * h * w];
        for oc in 0..o {
            for y in 0..h {
                for x in 0..w {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let mut s = 0.0f32;
                            for ic in 0..c {
                                s += input.get(&[ic, y, x]).unwrap()
                                    * weight.get(&[ic, oc, dy, dx]).unwrap();
                            }
                            out[(oc * 2 * h + 2 * y + dy) * 2 * w + 2 * x + dx] =
                                bias.data()[oc] + s;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn transpose_examples() {
        let y = conv_transpose2x(
            &t(&[1, 1, 1], &[1.0]),
            &Tensor::filled(vec![1, 1, 2, 2], 1.0).unwrap(),
            &t(&[1], &[0.0]),
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1.0; 4]);

        let mut rng = RngState::new(8);
        let wt = random(&[2, 3, 2, 2], &mut rng);
        let b = t(&[3], &[0.5, -1.0, 2.0]);
        let y = conv_transpose2x(&Tensor::zeros(vec![2, 2, 3]).unwrap(), &wt, &b).unwrap();
        for oc in 0..3 {
            assert!(y.data()[oc * 24..(oc + 1) * 24].iter().all(|&v| v == b.data()[oc]));
        }
    }

    #[test]
    fn transpose_matches_placement_oracle_exactly() {
        let mut rng = RngState::new(9);
        for _ in 0..50 {
            let c = 1 + rng.index(4).unwrap();
            let o = 1 + rng.index(4).unwrap();
            let (h, w) = (1 + rng.index(5).unwrap(), 1 + rng.index(5).unwrap());
            let x = random(&[c, h, w], &mut rng);
            let wt = random(&[c, o, 2, 2], &mut rng);
            let b = random(&[o], &mut rng);
            let y = conv_transpose2x(&x, &wt, &b).unwrap();
            let bits: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            let oracle: Vec<u32> = transpose_oracle(&x, &wt, &b)
                .iter()
                .map(|v| v.to_bits())
                .collect();
            assert_eq!(bits, oracle);
        }
    }

    #[test]
    fn pooling() {
        let y = maxpool2x(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let c = maxpool2x(&Tensor::filled(vec![2, 4, 6], 0.3).unwrap()).unwrap();
        assert_eq!(c.shape(), &[2, 2, 3]);
        assert!(c.data().iter().all(|&v| v == 0.3));
        let n = maxpool2x(&t(&[1, 2, 2], &[1.0, f32::NAN, 3.0, 4.0])).unwrap();
        assert!(n.data()[0].is_nan());
        let n = maxpool2x(&t(&[1, 2, 2], &[5.0, 1.0, 3.0, f32::NAN])).unwrap();
        assert!(n.data()[0].is_nan());
        assert!(matches!(
            maxpool2x(&Tensor::zeros(vec![1, 3, 2]).unwrap()),
            Err(OpError::OddExtent { .. })
        ));
    }

    #[test]
    fn upsampling() {
        assert_eq!(
            upsample_nearest2x(&t(&[1, 1, 1], &[1.0])).unwrap().data(),
            &[1.0; 4]
        );
        let y = upsample_nearest2x(&t(&[1, 1, 2], &[1.0, 2.0])).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4]);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn pool_inverts_upsample_exhaustively() {
        // Every 1x2x2 tensor over a small value alphabet, NaN included.
        let alphabet = [-1.0f32, 0.0, 2.5, f32::INFINITY, f32::NAN];
        for code in 0..alphabet.len().pow(4) {
            let mut c = code;
            let data: Vec<f32> = (0..4)
                .map(|_| {
                    let v = alphabet[c % alphabet.len()];
                    c /= alphabet.len();
                    v
                })
                .collect();
            let x = t(&[1, 2, 2], &data);
            let back = maxpool2x(&upsample_nearest2x(&x).unwrap()).unwrap();
            assert!(back.same_bits(&x));
        }
    }

    #[test]
    fn concatenation() {
        let a = Tensor::filled(vec![2, 4, 4], 1.0).unwrap();
        let b = Tensor::filled(vec![3, 4, 4], 2.0).unwrap();
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape(), &[5, 4, 4]);
        assert!(y.data()[..16].iter().all(|&v| v == 1.0));
        assert!(matches!(
            concat_channels(&a, &Tensor::zeros(vec![1, 2, 4]).unwrap()),
            Err(OpError::SpatialMismatch { .. })
        ));
        // Zero-channel operands cannot even be constructed.
        assert!(Tensor::zeros(vec![0, 4, 4]).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(relu(-3.5), 0.0);
        assert!(relu(f32::NAN).is_nan());
        assert_eq!(sigmoid(f32::INFINITY), 1.0);
        assert_eq!(sigmoid(f32::NEG_INFINITY), 0.0);
        assert!(sigmoid(f32::NAN).is_nan());
    }

    proptest! {
        #[test]
        fn pool_of_upsample_is_identity(c in 1usize..3, h in 1usize..5, w in 1usize..5, seed: u64) {
            let mut rng = RngState::new(seed);
            let x = random(&[c, h, w], &mut rng);
            let back = maxpool2x(&upsample_nearest2x(&x).unwrap()).unwrap();
            prop_assert!(back.same_bits(&x));
        }
    }
}
