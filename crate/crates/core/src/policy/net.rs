//! Dense, 3x3 convolution and 2x2 max-pool layers with hand-written backward
//! passes. Weights are row-major slices into the flat parameter vector.

use matrixmultiply::dgemm;

/// `y = W x + b` with `W` of shape `(out, in)`.
pub(crate) fn dense_forward(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let n_in = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *yo = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates parameter gradients and, when asked, the input gradient.
pub(crate) fn dense_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        if g == 0.0 {
            continue;
        }
        for (d, xi) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *d += g * xi;
        }
    }
    if let Some(dx) = dx {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, wi) in dx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *d += g * wi;
            }
        }
    }
}

pub(crate) fn tanh_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// Gradient through `y = tanh(a)` given `y`.
pub(crate) fn tanh_backward(y: &[f64], dy: &mut [f64]) {
    for (d, y) in dy.iter_mut().zip(y) {
        *d *= 1.0 - y * y;
    }
}

/// Unfolds a zero-padded `c x h x w` image into a `(c*9) x (h*w)` matrix.
pub(crate) fn im2col(input: &[f64], c: usize, h: usize, w: usize, col: &mut Vec<f64>) {
    col.clear();
    col.resize(c * 9 * h * w, 0.0);
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * h * w..][..h * w];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Adds the columns back into a `c x h x w` image gradient.
pub(crate) fn col2im(dcol: &[f64], c: usize, h: usize, w: usize, dinput: &mut [f64]) {
    for ci in 0..c {
        let plane = &mut dinput[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcol[((ci * 9) + ky * 3 + kx) * h * w..][..h * w];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

/// `out (k x n) = W (k x m) * col (m x n) + b`.
pub(crate) fn conv_forward(weights: &[f64], bias: &[f64], col: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    for (o, chunk) in out.chunks_mut(n).enumerate() {
        chunk.fill(bias[o]);
    }
    // SAFETY: slice lengths match the declared matrix shapes and strides.
    unsafe {
        dgemm(
            k, m, n, 1.0,
            weights.as_ptr(), m as isize, 1,
            col.as_ptr(), n as isize, 1,
            1.0,
            out.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Weight and bias gradients, plus the column gradient when `dcol` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    weights: &[f64],
    col: &[f64],
    dout: &[f64],
    k: usize,
    m: usize,
    n: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dcol: Option<&mut Vec<f64>>,
) {
    for (o, chunk) in dout.chunks(n).enumerate() {
        db[o] += chunk.iter().sum::<f64>();
    }
    assert!(weights.len() == k * m && col.len() == m * n && dout.len() == k * n && dw.len() == k * m);
    // SAFETY: shapes checked above; transposes are expressed through strides.
    unsafe {
        dgemm(
            k, n, m, 1.0,
            dout.as_ptr(), n as isize, 1,
            col.as_ptr(), 1, n as isize,
            1.0,
            dw.as_mut_ptr(), m as isize, 1,
        );
    }
    if let Some(dcol) = dcol {
        dcol.clear();
        dcol.resize(m * n, 0.0);
        unsafe {
            dgemm(
                m, k, n, 1.0,
                weights.as_ptr(), 1, m as isize,
                dout.as_ptr(), n as isize, 1,
                0.0,
                dcol.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

/// 2x2 max pool with stride 2; records the flat index of each winner.
pub(crate) fn maxpool_forward(input: &[f64], c: usize, h: usize, w: usize, out: &mut [f64], arg: &mut [u32]) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (f64::NEG_INFINITY, 0usize);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = ci * h * w + (2 * y + dy) * w + 2 * x + dx;
                    if input[idx] > best.0 {
                        best = (input[idx], idx);
                    }
                }
                let o = ci * oh * ow + y * ow + x;
                out[o] = best.0;
                arg[o] = best.1 as u32;
            }
        }
    }
}

pub(crate) fn maxpool_backward(dout: &[f64], arg: &[u32], dinput: &mut [f64]) {
    for (g, &i) in dout.iter().zip(arg) {
        dinput[i as usize] += g;
    }
}
