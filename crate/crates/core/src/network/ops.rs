//! Convolution, pooling, and resampling kernels with their adjoints.

use crate::raster::Raster;

/// Row-major `c = a·b + beta·c` with optional transposition of either operand.
///
/// `a` is `m×k` (or its transpose is stored when `a_t`), `b` is `k×n`
/// (or its transpose is stored when `b_t`).
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
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover exactly the m×k, k×n and m×n extents described
    // by the strides above (checked by the debug assertions).
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

/// Unfolds 3×3 zero-padded neighbourhoods into a `(cin·9) × (h·w)` matrix.
fn im2col3(x: &Raster) -> Vec<f64> {
    let (c, h, w) = x.shape();
    let hw = h * w;
    let mut col = vec![0.0; c * 9 * hw];
    let src = x.data();
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            row[y * w + xx] = plane[sy * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im3(col: &[f64], c: usize, h: usize, w: usize) -> Raster {
    let hw = h * w;
    let mut out = Raster::zeros(c, h, w);
    let dst = out.data_mut();
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[ci * hw + sy * w + sx as usize] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Saved input of a convolution, in the unfolded form its backward pass needs.
pub(crate) struct ConvCache {
    col: Vec<f64>,
    cin: usize,
    kernel: usize,
    h: usize,
    w: usize,
}

/// Same-padded stride-1 convolution with kernel 1 or 3.
pub(crate) fn conv_forward(
    x: &Raster,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
    kernel: usize,
) -> (Raster, ConvCache) {
    let (cin, h, w) = x.shape();
    let hw = h * w;
    let col = match kernel {
        1 => x.data().to_vec(),
        3 => im2col3(x),
        _ => unreachable!("unsupported kernel size"),
    };
    let kdim = cin * kernel * kernel;
    let mut out = Raster::zeros(cout, h, w);
    {
        let o = out.data_mut();
        for co in 0..cout {
            o[co * hw..(co + 1) * hw].fill(bias[co]);
        }
        gemm(cout, kdim, hw, weight, false, &col, false, o, 1.0);
    }
    (
        out,
        ConvCache {
            col,
            cin,
            kernel,
            h,
            w,
        },
    )
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub(crate) fn conv_backward(
    dout: &Raster,
    cache: &ConvCache,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_dx: bool,
) -> Option<Raster> {
    let cout = dout.channels();
    let hw = cache.h * cache.w;
    let kdim = cache.cin * cache.kernel * cache.kernel;
    let d = dout.data();
    for co in 0..cout {
        dbias[co] += d[co * hw..(co + 1) * hw].iter().sum::<f64>();
    }
    gemm(cout, hw, kdim, d, false, &cache.col, true, dweight, 1.0);
    if !need_dx {
        return None;
    }
    let mut dcol = vec![0.0; kdim * hw];
    gemm(kdim, cout, hw, weight, true, d, false, &mut dcol, 0.0);
    Some(match cache.kernel {
        1 => Raster::from_vec(cache.cin, cache.h, cache.w, dcol).expect("shape"),
        _ => col2im3(&dcol, cache.cin, cache.h, cache.w),
    })
}

pub(crate) fn relu_inplace(x: &mut Raster) {
    for v in x.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the post-activation value was not positive.
pub(crate) fn relu_backward_inplace(grad: &mut Raster, activated: &Raster) {
    for (g, &a) in grad.data_mut().iter_mut().zip(activated.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 max pooling; returns the flat argmax index of every output cell.
pub(crate) fn maxpool2(x: &Raster) -> (Raster, Vec<u32>) {
    let (c, h, w) = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Raster::zeros(c, oh, ow);
    let mut arg = vec![0u32; c * oh * ow];
    let src = x.data();
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (ci * h + 2 * y + dy) * w + 2 * xx + dx;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                let o = (ci * oh + y) * ow + xx;
                out.data_mut()[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward(dout: &Raster, arg: &[u32], input_shape: (usize, usize, usize)) -> Raster {
    let (c, h, w) = input_shape;
    let mut dx = Raster::zeros(c, h, w);
    let d = dx.data_mut();
    for (&g, &i) in dout.data().iter().zip(arg) {
        d[i as usize] += g;
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub(crate) fn upsample2(x: &Raster) -> Raster {
    let (c, h, w) = x.shape();
    let mut out = Raster::zeros(c, 2 * h, 2 * w);
    for ci in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.set(ci, y, xx, x.get(ci, y / 2, xx / 2));
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(dout: &Raster) -> Raster {
    let (c, h, w) = dout.shape();
    let mut dx = Raster::zeros(c, h / 2, w / 2);
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v = dx.get(ci, y / 2, xx / 2) + dout.get(ci, y, xx);
                dx.set(ci, y / 2, xx / 2, v);
            }
        }
    }
    dx
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
