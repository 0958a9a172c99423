//! 3x3, stride 1, zero-padded convolution kernels on channel-major planes.

use super::Scalar;

#[inline]
fn ranges(len: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { len - d as usize } else { len };
    (lo, hi.max(lo))
}

/// `out[o] = bias[o] + sum_i w[o,i] * x[i]`.
pub(crate) fn forward<T: Scalar>(
    x: &[T],
    cin: usize,
    w: &[T],
    b: &[T],
    cout: usize,
    h: usize,
    wd: usize,
    out: &mut [T],
) {
    let hw = h * wd;
    for o in 0..cout {
        let oplane = &mut out[o * hw..(o + 1) * hw];
        oplane.fill(b[o]);
        for i in 0..cin {
            let iplane = &x[i * hw..(i + 1) * hw];
            let kernel = &w[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = ranges(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = ranges(wd, dx);
                    let wv = kernel[ky * 3 + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let src = &iplane[sy * wd + sx0..sy * wd + sx0 + (x1 - x0)];
                        let dst = &mut oplane[y * wd + x0..y * wd + x1];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight, bias and (optionally) input gradients for one layer,
/// given the gradient `g` of the loss with respect to the layer output.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    x: &[T],
    cin: usize,
    w: &[T],
    g: &[T],
    cout: usize,
    h: usize,
    wd: usize,
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let hw = h * wd;
    for o in 0..cout {
        let gplane = &g[o * hw..(o + 1) * hw];
        db[o] = db[o] + sum(gplane);
        for i in 0..cin {
            let iplane = &x[i * hw..(i + 1) * hw];
            let base = (o * cin + i) * 9;
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = ranges(h, dy);
                for kx in 0..3 {
                    let dx_ = kx as isize - 1;
                    let (x0, x1) = ranges(wd, dx_);
                    let n = x1 - x0;
                    let sx0 = (x0 as isize + dx_) as usize;
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        acc = acc
                            + dot(
                                &gplane[y * wd + x0..y * wd + x1],
                                &iplane[sy * wd + sx0..sy * wd + sx0 + n],
                            );
                    }
                    dw[base + ky * 3 + kx] = dw[base + ky * 3 + kx] + acc;
                    if let Some(dxs) = dx.as_deref_mut() {
                        let wv = w[base + ky * 3 + kx];
                        let dplane = &mut dxs[i * hw..(i + 1) * hw];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let dst = &mut dplane[sy * wd + sx0..sy * wd + sx0 + n];
                            let src = &gplane[y * wd + x0..y * wd + x1];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with eight interleaved accumulators and a fixed summation
/// order, so results are reproducible while still vectorizing.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (ac, bc) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] = acc[k] + ac[k] * bc[k];
        }
    }
    let mut tail = T::zero();
    for k in chunks * 8..a.len() {
        tail = tail + a[k] * b[k];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for k in 0..8 {
            acc[k] = acc[k] + a[c * 8 + k];
        }
    }
    let mut tail = T::zero();
    for &v in &a[chunks * 8..] {
        tail = tail + v;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_convolution_on_4x4() {
        // x = 1..16 row-major, kernel with distinct taps, bias 0.5
        let x: Vec<f64> = (1..=16).map(|v| v as f64).collect();
        let k = [1.0, 0.0, -1.0, 2.0, 0.5, 0.0, 0.0, 1.0, -2.0];
        let mut out = vec![0.0; 16];
        forward(&x, 1, &k, &[0.5], 1, 4, 4, &mut out);
        // Pencil-and-paper reference with zero padding.
        let at = |r: isize, c: isize| -> f64 {
            if (0..4).contains(&r) && (0..4).contains(&c) {
                x[(r * 4 + c) as usize]
            } else {
                0.0
            }
        };
        for r in 0..4isize {
            for c in 0..4isize {
                let mut s = 0.5;
                for ky in 0..3isize {
                    for kx in 0..3isize {
                        s += k[(ky * 3 + kx) as usize] * at(r + ky - 1, c + kx - 1);
                    }
                }
                assert_eq!(out[(r * 4 + c) as usize], s);
            }
        }
        // Spot-check two cells by hand.
        // (1,1): 1*1 - 1*3 + 2*5 + 0.5*6 + 1*10 - 2*11 + 0.5 = -0.5
        assert_eq!(out[5], -0.5);
        // (0,0): 0.5*1 + 0*2 + 1*5 - 2*6 + 0.5 = -6
        assert_eq!(out[0], -6.0);
    }

    #[test]
    fn dot_and_sum_match_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
        assert!((sum(&a) - a.iter().sum::<f64>()).abs() < 1e-12);
    }
}
