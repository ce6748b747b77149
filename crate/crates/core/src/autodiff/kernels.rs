//! Slice-level numeric kernels shared by the eager and recording backends.
//!
//! Both backends call exactly these functions, so a value computed with or
//! without a graph is bit-identical.

pub const LAYERNORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm(a, b, &mut out, m, k, n, (k, 1), (n, 1), 0.0);
    out
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    gemm(a, b, out, m, n, k, (n, 1), (1, n), 1.0);
}

/// `out[k×n] += a[m×k]ᵀ · c[m×n]`
pub fn matmul_tn_acc(a: &[f64], c: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    gemm(a, c, out, k, m, n, (1, k), (n, 1), 1.0);
}

/// `out[rows×cols] = beta·out + lhs[rows×inner] · rhs[inner×cols]` with
/// arbitrary (row, col) strides on the operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    lhs: &[f64],
    rhs: &[f64],
    out: &mut [f64],
    rows: usize,
    inner: usize,
    cols: usize,
    lhs_strides: (usize, usize),
    rhs_strides: (usize, usize),
    beta: f64,
) {
    assert!(lhs.len() >= rows * inner && rhs.len() >= inner * cols && out.len() >= rows * cols);
    if rows == 0 || cols == 0 {
        return;
    }
    // SAFETY: the assert above bounds every index the strided views touch.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            inner,
            cols,
            1.0,
            lhs.as_ptr(),
            lhs_strides.0 as isize,
            lhs_strides.1 as isize,
            rhs.as_ptr(),
            rhs_strides.0 as isize,
            rhs_strides.1 as isize,
            beta,
            out.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
}

pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax over contiguous rows of length `d`.
pub fn softmax_rows(x: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (xr, or) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - max).exp();
            sum += *o;
        }
        or.iter_mut().for_each(|o| *o /= sum);
    }
    out
}

pub fn softmax_rows_backward(y: &[f64], dy: &[f64], d: usize, dx: &mut [f64]) {
    for ((yr, gr), dr) in y
        .chunks_exact(d)
        .zip(dy.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *o += yv * (gv - dot);
        }
    }
}

/// Normalized values and per-row reciprocal std for a last-axis layer norm.
pub struct LayerNormStats {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layernorm_rows(x: &[f64], gamma: &[f64], beta: &[f64], d: usize) -> (Vec<f64>, LayerNormStats) {
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LAYERNORM_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = gamma[j] * h + beta[j];
        }
    }
    (out, LayerNormStats { xhat, rstd })
}

/// Accumulates gradients of a last-axis layer norm into `dx`, `dgamma`, `dbeta` (any may be `None`).
pub fn layernorm_rows_backward(
    stats: &LayerNormStats,
    gamma: &[f64],
    dy: &[f64],
    d: usize,
    dx: Option<&mut [f64]>,
    dgamma: Option<&mut [f64]>,
    dbeta: Option<&mut [f64]>,
) {
    let rows = dy.len() / d;
    if let Some(dg) = dgamma {
        for r in 0..rows {
            for j in 0..d {
                dg[j] += dy[r * d + j] * stats.xhat[r * d + j];
            }
        }
    }
    if let Some(db) = dbeta {
        for r in 0..rows {
            for j in 0..d {
                db[j] += dy[r * d + j];
            }
        }
    }
    if let Some(dx) = dx {
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let xh = &stats.xhat[r * d..(r + 1) * d];
            for j in 0..d {
                dxhat[j] = dy[r * d + j] * gamma[j];
            }
            let mean_g = dxhat.iter().sum::<f64>() / d as f64;
            let mean_gx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for j in 0..d {
                dx[r * d + j] += stats.rstd[r] * (dxhat[j] - mean_g - xh[j] * mean_gx);
            }
        }
    }
}

pub fn frobenius_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [-30.0, -3.0, 0.7, 12.0] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0);
            assert!((s + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = [1.0, -2.0, 0.5, 3.0, 10.0, -10.0];
        let y = softmax_rows(&x, 3);
        for row in y.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.5, -1.0, 2.0, 0.0, 1.0, 3.0];
        let c = matmul(&a, &b, 2, 3, 2);
        // bᵀ stored row-major as 2x3
        let bt = [0.5, 2.0, 1.0, -1.0, 0.0, 3.0];
        let mut c2 = vec![0.0; 4];
        matmul_nt_acc(&a, &bt, 2, 3, 2, &mut c2);
        assert_eq!(c, c2);
        // aᵀ stored as 3x2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c3 = vec![0.0; 4];
        matmul_tn_acc(&at, &b, 3, 2, 2, &mut c3);
        assert_eq!(c, c3);
    }
}
