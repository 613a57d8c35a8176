//! Row-level numeric kernels shared by the batched forward pass and the
//! incremental decoder, so both produce bit-identical activations.

use super::Scalar;

pub(crate) const LN_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut lanes = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail
}

#[inline]
pub(crate) fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Output columns held in registers by the matrix kernels.
const TILE: usize = 8;
/// Input rows processed together by the matrix kernels.
const ROWS: usize = 4;

// Every output element is accumulated as `b[j] + x[0] w[0][j] + x[1] w[1][j] + ...`
// in that order, whichever kernel computes it. This is what keeps the batched
// forward pass and the single-row decoder bit-identical.

#[inline(always)]
fn tile_of<F: Scalar>(s: &[F]) -> &[F; TILE] {
    s[..TILE].try_into().expect("tile")
}

/// `out = x W + b` for one row; `w` is `din x dout`, row-major.
#[inline]
pub(crate) fn linear_row<F: Scalar>(x: &[F], w: &[F], b: &[F], out: &mut [F]) {
    let dout = b.len();
    let mut j = 0;
    while j + TILE <= dout {
        let mut acc = *tile_of(&b[j..]);
        for (k, &xk) in x.iter().enumerate() {
            let wk = tile_of(&w[k * dout + j..]);
            for t in 0..TILE {
                acc[t] += xk * wk[t];
            }
        }
        out[j..j + TILE].copy_from_slice(&acc);
        j += TILE;
    }
    for jj in j..dout {
        let mut acc = b[jj];
        for (k, &xk) in x.iter().enumerate() {
            acc += xk * w[k * dout + jj];
        }
        out[jj] = acc;
    }
}

/// Row-wise `out = x W + b` over a row-major batch of `din`-wide rows.
pub(crate) fn linear<F: Scalar>(x: &[F], din: usize, w: &[F], b: &[F], out: &mut [F]) {
    let dout = b.len();
    let n = x.len() / din;
    let mut r = 0;
    while r + ROWS <= n {
        let xs = &x[r * din..(r + ROWS) * din];
        let os = &mut out[r * dout..(r + ROWS) * dout];
        let mut j = 0;
        while j + TILE <= dout {
            let mut acc = [*tile_of(&b[j..]); ROWS];
            for k in 0..din {
                let wk = tile_of(&w[k * dout + j..]);
                for (i, a) in acc.iter_mut().enumerate() {
                    let xv = xs[i * din + k];
                    for t in 0..TILE {
                        a[t] += xv * wk[t];
                    }
                }
            }
            for (i, a) in acc.iter().enumerate() {
                os[i * dout + j..i * dout + j + TILE].copy_from_slice(a);
            }
            j += TILE;
        }
        for i in 0..ROWS {
            for jj in j..dout {
                let mut acc = b[jj];
                for k in 0..din {
                    acc += xs[i * din + k] * w[k * dout + jj];
                }
                os[i * dout + jj] = acc;
            }
        }
        r += ROWS;
    }
    for (xr, or) in x[r * din..].chunks_exact(din).zip(out[r * dout..].chunks_exact_mut(dout)) {
        linear_row(xr, w, b, or);
    }
}

/// Backward of [`linear`]: accumulates into `dw`, `db` and overwrites `dx`.
pub(crate) fn linear_backward<F: Scalar>(
    x: &[F],
    din: usize,
    w: &[F],
    dout_rows: &[F],
    dx: Option<&mut [F]>,
    dw: &mut [F],
    db: &mut [F],
) {
    let dout = db.len();
    let n = x.len() / din;
    for gr in dout_rows.chunks_exact(dout) {
        axpy(F::one(), gr, db);
    }
    // dw[k][j] += sum_r x[r][k] g[r][j], in register tiles of ROWS x TILE
    let mut k = 0;
    while k + ROWS <= din {
        let mut j = 0;
        while j + TILE <= dout {
            let mut acc = [[F::zero(); TILE]; ROWS];
            for r in 0..n {
                let g = tile_of(&dout_rows[r * dout + j..]);
                for (i, a) in acc.iter_mut().enumerate() {
                    let xv = x[r * din + k + i];
                    for t in 0..TILE {
                        a[t] += xv * g[t];
                    }
                }
            }
            for (i, a) in acc.iter().enumerate() {
                let row = &mut dw[(k + i) * dout + j..(k + i) * dout + j + TILE];
                for t in 0..TILE {
                    row[t] += a[t];
                }
            }
            j += TILE;
        }
        for i in 0..ROWS {
            for jj in j..dout {
                let mut acc = F::zero();
                for r in 0..n {
                    acc += x[r * din + k + i] * dout_rows[r * dout + jj];
                }
                dw[(k + i) * dout + jj] += acc;
            }
        }
        k += ROWS;
    }
    for kk in k..din {
        for r in 0..n {
            let xv = x[r * din + kk];
            axpy(xv, &dout_rows[r * dout..(r + 1) * dout], &mut dw[kk * dout..(kk + 1) * dout]);
        }
    }
    if let Some(dx) = dx {
        for (dxr, gr) in dx.chunks_exact_mut(din).zip(dout_rows.chunks_exact(dout)) {
            for (k, v) in dxr.iter_mut().enumerate() {
                *v = dot(gr, &w[k * dout..(k + 1) * dout]);
            }
        }
    }
}

/// LayerNorm of one row. Writes the normalized row into `xhat` and returns
/// the reciprocal standard deviation.
#[inline]
pub(crate) fn layernorm_row<F: Scalar>(x: &[F], g: &[F], b: &[F], xhat: &mut [F], out: &mut [F]) -> F {
    let n = F::from_f64(x.len() as f64);
    let mean = x.iter().copied().sum::<F>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let rstd = F::one() / (var + F::from_f64(LN_EPS)).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = xhat[i] * g[i] + b[i];
    }
    rstd
}

/// Backward of LayerNorm for one row; `dx` is overwritten.
#[inline]
pub(crate) fn layernorm_row_backward<F: Scalar>(
    dy: &[F],
    xhat: &[F],
    rstd: F,
    g: &[F],
    dx: &mut [F],
    dg: &mut [F],
    db: &mut [F],
) {
    let n = F::from_f64(dy.len() as f64);
    let mut mean_dxhat = F::zero();
    let mut mean_dxhat_xhat = F::zero();
    for i in 0..dy.len() {
        let dxh = dy[i] * g[i];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat[i];
        dg[i] += dy[i] * xhat[i];
        db[i] += dy[i];
    }
    mean_dxhat /= n;
    mean_dxhat_xhat /= n;
    for i in 0..dy.len() {
        let dxh = dy[i] * g[i];
        dx[i] = rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * a * x * x)
}

/// Causal attention for one query row of one head.
///
/// Key/value `j` lives at `kv[j * stride ..]` (key) and `kv[j * stride +
/// v_off ..]` (value). Softmax weights over keys `0..n_keys` are written to
/// `probs` and the weighted sum of values to `out`.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend_row<F: Scalar>(
    q: &[F],
    kv: &[F],
    stride: usize,
    v_off: usize,
    n_keys: usize,
    scale: F,
    probs: &mut [F],
    out: &mut [F],
) {
    let hd = q.len();
    let mut max = F::neg_infinity();
    for j in 0..n_keys {
        let s = dot(q, &kv[j * stride..j * stride + hd]) * scale;
        probs[j] = s;
        if s > max {
            max = s;
        }
    }
    let mut sum = F::zero();
    for p in probs[..n_keys].iter_mut() {
        *p = (*p - max).exp();
        sum += *p;
    }
    let inv = F::one() / sum;
    out.fill(F::zero());
    for j in 0..n_keys {
        probs[j] *= inv;
        let v = &kv[j * stride + v_off..j * stride + v_off + hd];
        axpy(probs[j], v, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..19).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }
}
