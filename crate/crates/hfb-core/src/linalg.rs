//! Thin dense linear-algebra layer over `faer`.
//!
//! Matrices are complex carriers (`CMat`) throughout the crate; the
//! eigendecomposition wrapper detects numerically real inputs and silently
//! switches to the ~4x faster real-symmetric path. Self-consistent-field
//! iterates seeded with real data therefore stay on the real path for the
//! whole run without any special casing in the solvers.

use faer::{Mat, Side};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = Mat<C64>;
pub type RMat = Mat<f64>;

/// Threshold below which an imaginary part is considered round-off.
const REAL_DETECT_TOL: f64 = 1e-13;

pub fn czeros(nrows: usize, ncols: usize) -> CMat {
    Mat::zeros(nrows, ncols)
}

pub fn cidentity(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn to_complex(a: &RMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| C64::new(a[(i, j)], 0.0))
}

/// Largest absolute imaginary part, used for the real fast-path detection.
pub fn max_imag(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].im.abs());
        }
    }
    m
}

/// Drop the imaginary part when it is pure round-off.
pub fn as_real(a: &CMat) -> Option<RMat> {
    let scale = 1.0 + frob(a);
    if max_imag(a) <= REAL_DETECT_TOL * scale {
        Some(Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].re))
    } else {
        None
    }
}

pub fn frob(a: &CMat) -> f64 {
    a.norm_l2()
}

pub fn frob_real(a: &RMat) -> f64 {
    a.norm_l2()
}

pub fn trace(a: &CMat) -> C64 {
    let mut t = C64::new(0.0, 0.0);
    for i in 0..a.nrows().min(a.ncols()) {
        t += a[(i, i)];
    }
    t
}

pub fn trace_re(a: &CMat) -> f64 {
    trace(a).re
}

pub fn scale(a: &CMat, s: C64) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn add(a: &CMat, b: &CMat) -> CMat {
    a + b
}

pub fn sub(a: &CMat, b: &CMat) -> CMat {
    a - b
}

pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    a * b
}

pub fn adjoint(a: &CMat) -> CMat {
    a.adjoint().to_owned()
}

pub fn transpose(a: &CMat) -> CMat {
    a.transpose().to_owned()
}

pub fn conj(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].conj())
}

/// `(A + A*)/2`
pub fn hermitian_part(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        (a[(i, j)] + a[(j, i)].conj()) * 0.5
    })
}

/// `(A - Aᵀ)/2`
pub fn antisymmetric_part(a: &CMat) -> CMat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        (a[(i, j)] - a[(j, i)]) * 0.5
    })
}

pub fn hermiticity_defect(a: &CMat) -> f64 {
    frob(&sub(a, &adjoint(a)))
}

pub fn antisymmetry_defect(a: &CMat) -> f64 {
    frob(&add(a, &transpose(a)))
}

/// `AB - BA`
pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    &(a * b) - &(b * a)
}

/// `‖AB - BA‖_F`, taking a real GEMM path when both inputs are numerically
/// real.
pub fn commutator_frob(a: &CMat, b: &CMat) -> f64 {
    if let (Some(ar), Some(br)) = (as_real(a), as_real(b)) {
        let c = &(&ar * &br) - &(&br * &ar);
        c.norm_l2()
    } else {
        commutator(a, b).norm_l2()
    }
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending and a fixed
/// phase convention (largest-magnitude component of each eigenvector is real
/// positive). Numerically real inputs take the real-symmetric path and retain
/// a real copy of the eigenvectors for fast projector assembly.
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMat,
    pub vectors_real: Option<RMat>,
}

impl Eigh {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Eigenvalues only, sorted ascending (real fast path as in [`eigh`]).
pub fn eigvalsh(a: &CMat) -> Vec<f64> {
    let mut vals: Vec<f64> = if let Some(ar) = as_real(a) {
        ar.self_adjoint_eigenvalues(Side::Lower)
            .expect("real symmetric eigenvalues failed")
    } else {
        a.self_adjoint_eigenvalues(Side::Lower)
            .expect("hermitian eigenvalues failed")
    };
    vals.sort_by(f64::total_cmp);
    vals
}

pub fn eigh_real(a: &RMat) -> (Vec<f64>, RMat) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigh_real: matrix must be square");
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .expect("real symmetric eigendecomposition failed");
    let mut vals: Vec<f64> = (0..n).map(|i| evd.S().column_vector()[i]).collect();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let sorted_vals: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let mut vecs = RMat::zeros(n, n);
    for (newc, &oldc) in order.iter().enumerate() {
        // sign convention: largest-magnitude component positive
        let mut imax = 0;
        let mut vmax = 0.0f64;
        for i in 0..n {
            let v = u[(i, oldc)].abs();
            if v > vmax {
                vmax = v;
                imax = i;
            }
        }
        let s = if u[(imax, oldc)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vecs[(i, newc)] = s * u[(i, oldc)];
        }
    }
    vals = sorted_vals;
    (vals, vecs)
}

pub fn eigh(a: &CMat) -> Eigh {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigh: matrix must be square");
    if let Some(ar) = as_real(a) {
        let (values, vr) = eigh_real(&ar);
        let vectors = to_complex(&vr);
        return Eigh {
            values,
            vectors,
            vectors_real: Some(vr),
        };
    }
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .expect("hermitian eigendecomposition failed");
    let mut vals: Vec<f64> = (0..n).map(|i| evd.S().column_vector()[i].re).collect();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let sorted_vals: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (newc, &oldc) in order.iter().enumerate() {
        let mut imax = 0;
        let mut vmax = 0.0f64;
        for i in 0..n {
            let v = u[(i, oldc)].norm_sqr();
            if v > vmax {
                vmax = v;
                imax = i;
            }
        }
        let pivot = u[(imax, oldc)];
        let phase = if pivot.norm() > 0.0 {
            pivot.conj() / pivot.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for i in 0..n {
            vecs[(i, newc)] = u[(i, oldc)] * phase;
        }
    }
    vals = sorted_vals;
    Eigh {
        values: vals,
        vectors: vecs,
        vectors_real: None,
    }
}

/// Assemble `Σ_i w_i v_i v_i*` from an eigendecomposition. Weights of zero
/// skip the column entirely; the real path uses a real outer-product GEMM.
pub fn weighted_projector(e: &Eigh, weights: &[f64]) -> CMat {
    let n = e.dim();
    assert_eq!(weights.len(), n);
    let cols: Vec<usize> = (0..n).filter(|&i| weights[i] != 0.0).collect();
    let k = cols.len();
    if k == 0 {
        return CMat::zeros(n, n);
    }
    if let Some(vr) = &e.vectors_real {
        let mut b = RMat::zeros(n, k);
        for (c, &i) in cols.iter().enumerate() {
            let w = weights[i].max(0.0).sqrt();
            for r in 0..n {
                b[(r, c)] = vr[(r, i)] * w;
            }
        }
        let p = &b * b.transpose();
        to_complex(&p)
    } else {
        let mut b = CMat::zeros(n, k);
        for (c, &i) in cols.iter().enumerate() {
            let w = weights[i].max(0.0).sqrt();
            for r in 0..n {
                b[(r, c)] = e.vectors[(r, i)] * w;
            }
        }
        &b * b.adjoint()
    }
}

/// `V f(D) V*` for a Hermitian matrix with eigendecomposition `e`.
pub fn spectral_function(e: &Eigh, f: impl Fn(f64) -> f64) -> CMat {
    let weights: Vec<f64> = e.values.iter().map(|&x| f(x)).collect();
    // weighted_projector requires nonnegative weights; split signs
    let pos: Vec<f64> = weights.iter().map(|&w| w.max(0.0)).collect();
    let neg: Vec<f64> = weights.iter().map(|&w| (-w).max(0.0)).collect();
    let p = weighted_projector(e, &pos);
    if neg.iter().all(|&w| w == 0.0) {
        p
    } else {
        let q = weighted_projector(e, &neg);
        &p - &q
    }
}

/// `e^{-i t F} G e^{+i t F}` given the eigendecomposition of Hermitian `F`.
pub fn conjugate_by_exp(f: &Eigh, t: f64, g: &CMat) -> CMat {
    let n = f.dim();
    // U = V e^{-itD} V*
    let mut vp = CMat::zeros(n, n);
    for j in 0..n {
        let ph = C64::from_polar(1.0, -t * f.values[j]);
        for i in 0..n {
            vp[(i, j)] = f.vectors[(i, j)] * ph;
        }
    }
    let u = &vp * f.vectors.adjoint();
    let ug = &u * g;
    &ug * u.adjoint()
}

/// Ordinary least squares fit of `y = a + b x`; returns `(a, b, rms_residual)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    let b = (n * sxy - sx * sy) / det;
    let a = (sy - b * sx) / n;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - a - b * x;
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (a, b, rms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_hermitian(n: usize) -> CMat {
        let a = CMat::from_fn(n, n, |i, j| {
            C64::new(
                ((i * 7 + j * 3) % 11) as f64 / 11.0,
                ((i * 5 + j * 2) % 7) as f64 / 7.0 - 0.4,
            )
        });
        hermitian_part(&a)
    }

    #[test]
    fn eigh_reconstructs_matrix() {
        let h = test_hermitian(24);
        let e = eigh(&h);
        let d = spectral_function(&e, |x| x);
        assert!(frob(&sub(&d, &h)) < 1e-12 * (1.0 + frob(&h)));
    }

    #[test]
    fn eigh_real_fast_path_taken_and_consistent() {
        let n = 20;
        let a = RMat::from_fn(n, n, |i, j| ((i * 3 + j * 5) % 13) as f64 / 13.0);
        let s = &a + a.transpose();
        let sc = to_complex(&s);
        let e = eigh(&sc);
        assert!(e.vectors_real.is_some(), "real input must take real path");
        let d = spectral_function(&e, |x| x);
        assert!(frob(&sub(&d, &sc)) < 1e-12 * (1.0 + frob(&sc)));
    }

    #[test]
    fn eigenvalues_sorted_ascending() {
        let h = test_hermitian(16);
        let e = eigh(&h);
        for w in e.values.windows(2) {
            assert!(w[0] <= w[1] + 1e-14);
        }
    }

    #[test]
    fn conjugation_matches_closed_form() {
        // F = [[0,1],[1,0]]: e^{-itF} = cos(t)·I - i·sin(t)·F;
        // Γ = diag(1,0) evolves to [[cos²t, i·c·s],[-i·c·s, sin²t]]
        let mut f = CMat::zeros(2, 2);
        f[(0, 1)] = C64::new(1.0, 0.0);
        f[(1, 0)] = C64::new(1.0, 0.0);
        let mut g = CMat::zeros(2, 2);
        g[(0, 0)] = C64::new(1.0, 0.0);
        let t = 0.83;
        let out = conjugate_by_exp(&eigh(&f), t, &g);
        let (c, s) = (t.cos(), t.sin());
        let expect = [
            [C64::new(c * c, 0.0), C64::new(0.0, c * s)],
            [C64::new(0.0, -c * s), C64::new(s * s, 0.0)],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (out[(i, j)] - expect[i][j]).norm() < 1e-14,
                    "({i},{j}): {} vs {}",
                    out[(i, j)],
                    expect[i][j]
                );
            }
        }
    }

    #[test]
    fn conjugation_preserves_spectrum_and_trace() {
        let h = test_hermitian(12);
        let g = test_hermitian(12);
        let ef = eigh(&h);
        let g1 = conjugate_by_exp(&ef, 0.37, &g);
        assert!((trace_re(&g1) - trace_re(&g)).abs() < 1e-12);
        let e0 = eigh(&g);
        let e1 = eigh(&g1);
        for (a, b) in e0.values.iter().zip(e1.values.iter()) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 - 1.5 * x).collect();
        let (a, b, r) = linear_fit(&xs, &ys);
        assert!((a - 2.5).abs() < 1e-12 && (b + 1.5).abs() < 1e-12 && r < 1e-12);
    }
}
