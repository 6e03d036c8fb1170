//! Dense matrix exponential via scaling-and-squaring with the order-13
//! Pade approximant. Fixed order: the state spaces here are tiny (<= 32)
//! and the generators are non-normal, which this handles robustly.

use nalgebra::DMatrix;

const THETA_13: f64 = 5.371920351148152;

#[rustfmt::skip]
const B: [f64; 14] = [
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
];

/// exp(A) for a square real matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");

    // 1-norm (max column sum) drives the scaling step count.
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let squarings = if norm1 > THETA_13 {
        (norm1 / THETA_13).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let a = a * (0.5f64).powi(squarings as i32);

    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * (B[13] * &a6 + B[11] * &a4 + B[9] * &a2)
        + B[7] * &a6
        + B[5] * &a4
        + B[3] * &a2
        + B[1] * &ident;
    let u = &a * u_inner;
    let v = &a6 * (B[12] * &a6 + B[10] * &a4 + B[8] * &a2)
        + B[6] * &a6
        + B[4] * &a4
        + B[2] * &a2
        + B[0] * &ident;

    // Pade approximant r = (V - U)^{-1} (V + U).
    let num = &v + &u;
    let den = &v - &u;
    let mut r = den
        .lu()
        .solve(&num)
        .expect("Pade denominator is singular; input matrix is not in the valid range");

    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}
