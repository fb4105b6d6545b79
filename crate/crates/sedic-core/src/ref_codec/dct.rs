//! Orthonormal 8x8 DCT-II/III and the zigzag scan order.

pub const BLOCK: usize = 8;

/// Zigzag index for each raster position within an 8x8 block.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 5, 6, 14, 15, 27, 28, //
    2, 4, 7, 13, 16, 26, 29, 42, //
    3, 8, 12, 17, 25, 30, 41, 43, //
    9, 11, 18, 24, 31, 40, 44, 53, //
    10, 19, 23, 32, 39, 45, 52, 54, //
    20, 22, 33, 38, 46, 51, 55, 60, //
    21, 34, 37, 47, 50, 56, 59, 61, //
    35, 36, 48, 49, 57, 58, 62, 63,
];

fn basis() -> &'static [[f64; BLOCK]; BLOCK] {
    use std::sync::OnceLock;
    static COS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    COS.get_or_init(|| {
        let mut table = [[0.0; BLOCK]; BLOCK];
        for (u, row) in table.iter_mut().enumerate() {
            let cu = if u == 0 {
                (1.0f64 / BLOCK as f64).sqrt()
            } else {
                (2.0f64 / BLOCK as f64).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = cu
                    * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI
                        / (2.0 * BLOCK as f64))
                        .cos();
            }
        }
        table
    })
}

/// Forward 2D DCT of an 8x8 block (row-major input and output).
pub fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let cos = basis();
    let mut tmp = [0.0f64; 64];
    // Rows.
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            let mut acc = 0.0;
            for x in 0..BLOCK {
                acc += block[y * BLOCK + x] * cos[u][x];
            }
            tmp[y * BLOCK + u] = acc;
        }
    }
    // Columns.
    let mut out = [0.0f64; 64];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            let mut acc = 0.0;
            for y in 0..BLOCK {
                acc += tmp[y * BLOCK + u] * cos[v][y];
            }
            out[v * BLOCK + u] = acc;
        }
    }
    out
}

/// Inverse of [`fdct`].
pub fn idct(coeffs: &[f64; 64]) -> [f64; 64] {
    let cos = basis();
    let mut tmp = [0.0f64; 64];
    for u in 0..BLOCK {
        for y in 0..BLOCK {
            let mut acc = 0.0;
            for v in 0..BLOCK {
                acc += coeffs[v * BLOCK + u] * cos[v][y];
            }
            tmp[y * BLOCK + u] = acc;
        }
    }
    let mut out = [0.0f64; 64];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            let mut acc = 0.0;
            for u in 0..BLOCK {
                acc += tmp[y * BLOCK + u] * cos[u][x];
            }
            out[y * BLOCK + x] = acc;
        }
    }
    out
}
