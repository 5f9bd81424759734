//! Orthonormal 8×8 type-II DCT, floating point.
//!
//! With this normalization the coefficients coincide with the ones the JPEG
//! baseline FDCT produces, so quantization tables apply directly.

use std::sync::OnceLock;

pub const N: usize = 8;

/// `basis[u][x] = c(u) · cos((2x + 1) u π / 16)` with `c(0) = √(1/8)`, else `√(2/8)`.
fn basis() -> &'static [[f64; N]; N] {
    static BASIS: OnceLock<[[f64; N]; N]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; N]; N];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { (1.0 / N as f64).sqrt() } else { (2.0 / N as f64).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = cu * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        b
    })
}

/// Forward 2-D DCT of a row-major 8×8 block; output indexed `[v * 8 + u]`
/// (row = vertical frequency).
pub fn forward(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    // rows
    for y in 0..N {
        for u in 0..N {
            let mut s = 0.0;
            for x in 0..N {
                s += b[u][x] * block[y * N + x];
            }
            tmp[y * N + u] = s;
        }
    }
    let mut out = [0.0; 64];
    // columns
    for u in 0..N {
        for v in 0..N {
            let mut s = 0.0;
            for y in 0..N {
                s += b[v][y] * tmp[y * N + u];
            }
            out[v * N + u] = s;
        }
    }
    out
}

pub fn inverse(coef: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut tmp = [0.0; 64];
    for u in 0..N {
        for y in 0..N {
            let mut s = 0.0;
            for v in 0..N {
                s += b[v][y] * coef[v * N + u];
            }
            tmp[y * N + u] = s;
        }
    }
    let mut out = [0.0; 64];
    for y in 0..N {
        for x in 0..N {
            let mut s = 0.0;
            for u in 0..N {
                s += b[u][x] * tmp[y * N + u];
            }
            out[y * N + x] = s;
        }
    }
    out
}
