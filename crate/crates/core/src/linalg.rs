//! Small dense linear-algebra helpers on top of `nalgebra`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{CMat, CVec, Error, RMat, Result, C64};

pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `tr(A B)` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// `(1/K) tr(A B)`.
pub fn normalized_trace_product(a: &CMat, b: &CMat, k: usize) -> C64 {
    trace_product(a, b) / k as f64
}

pub fn trace(a: &CMat) -> C64 {
    a.diagonal().iter().sum()
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_error(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(A + Aᴴ)/2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5)
}

/// Eigenvalues of the Hermitian part of `a`, ascending.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(hermitian_part(a)).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn frobenius(a: &CMat) -> f64 {
    libm::sqrt(a.iter().map(|z| z.norm_sqr()).sum::<f64>())
}

fn checked_eigen(r: &CMat) -> Result<(SymmetricEigen<C64, nalgebra::Dyn>, f64)> {
    if r.nrows() != r.ncols() {
        return Err(Error::Dimension(format!("expected square matrix, got {}x{}", r.nrows(), r.ncols())));
    }
    let eig = SymmetricEigen::new(hermitian_part(r));
    let norm = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &x| a.min(x));
    if min < -1e-10 * norm {
        return Err(Error::NotPsd { min_eig: min, norm });
    }
    Ok((eig, norm))
}

/// Thin factor `F` (M×r) of a Hermitian PSD matrix with `F Fᴴ = R`.
///
/// Eigenvalues in `[-1e-10·‖R‖, 0)` are clipped to zero; anything more negative
/// is rejected. Eigenvalues below `1e-14·‖R‖` are dropped from the factor.
pub fn psd_factor(r: &CMat) -> Result<CMat> {
    let m = r.nrows();
    let (eig, norm) = checked_eigen(r)?;
    let keep: Vec<usize> = (0..m).filter(|&i| norm > 0.0 && eig.eigenvalues[i] > 1e-14 * norm).collect();
    let mut f = CMat::zeros(m, keep.len().max(1));
    for (col, &i) in keep.iter().enumerate() {
        let s = libm::sqrt(eig.eigenvalues[i]);
        for row in 0..m {
            f[(row, col)] = eig.eigenvectors[(row, i)] * s;
        }
    }
    Ok(f)
}

/// Hermitian PSD square root `R^{1/2}`, same clipping rule as [`psd_factor`].
pub fn psd_sqrt(r: &CMat) -> Result<CMat> {
    let m = r.nrows();
    let (eig, _) = checked_eigen(r)?;
    let mut scaled = eig.eigenvectors.clone();
    for i in 0..m {
        let s = libm::sqrt(eig.eigenvalues[i].max(0.0));
        scaled.column_mut(i).scale_mut(s);
    }
    Ok(&scaled * eig.eigenvectors.adjoint())
}

/// General inverse through LU.
pub fn inverse(a: &CMat) -> Result<CMat> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{}x{} matrix", a.nrows(), a.ncols())))
}

/// Inverse of a Hermitian positive definite matrix through Cholesky.
pub fn hpd_inverse(a: &CMat) -> Result<CMat> {
    match nalgebra::Cholesky::new(hermitian_part(a)) {
        Some(ch) => Ok(ch.inverse()),
        None => inverse(a),
    }
}

/// Largest eigenvalue of the PSD operator `x ↦ H Hᴴ x / K` by power iteration.
pub fn gram_power_iteration(h: &CMat, iterations: usize) -> f64 {
    let m = h.nrows();
    let k = h.ncols().max(1) as f64;
    let mut x = CVec::from_element(m, c(1.0 / libm::sqrt(m as f64)));
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let y = h * (h.adjoint() * &x) / c(k);
        let n = y.norm();
        if n == 0.0 {
            return 0.0;
        }
        lambda = x.dotc(&y).re;
        x = y / c(n);
    }
    lambda
}

/// Standard circularly-symmetric complex Gaussian entry, `CN(0, 1)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * core::f64::consts::FRAC_1_SQRT_2
}

/// Matrix with i.i.d. `CN(0, 1)` entries, filled column-major.
pub fn complex_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let mut z = CMat::zeros(rows, cols);
    for col in 0..cols {
        for row in 0..rows {
            z[(row, col)] = complex_normal(rng);
        }
    }
    z
}

pub fn factorial(n: usize) -> f64 {
    if n <= 20 {
        (1..=n).fold(1.0, |acc, i| acc * i as f64)
    } else {
        libm::exp(libm::lgamma(n as f64 + 1.0))
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    libm::round(acc)
}

/// Binomial table `C(n, k)` for `0 ≤ k ≤ n ≤ max`.
pub(crate) fn binomial_table(max: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(max + 1);
    for n in 0..=max {
        let mut row = alloc::vec![1.0; n + 1];
        for k in 1..n {
            row[k] = rows[n - 1][k - 1] + rows[n - 1][k];
        }
        rows.push(row);
    }
    rows
}

/// Symmetric eigen-decomposition of a real matrix, eigenpairs sorted by
/// descending eigenvalue.
pub fn sym_eigen_desc(a: &RMat) -> (Vec<f64>, RMat) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = a.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = RMat::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Groups a list of borrowed matrices by identity so repeated references are
/// processed once. Returns the distinct matrices and, per input, its slot.
pub(crate) fn distinct_refs<'a>(items: &[&'a CMat]) -> (Vec<&'a CMat>, Vec<usize>) {
    let mut uniq: Vec<&'a CMat> = Vec::new();
    let mut slot = Vec::with_capacity(items.len());
    for &it in items {
        match uniq.iter().position(|&u| core::ptr::eq(u, it)) {
            Some(p) => slot.push(p),
            None => {
                slot.push(uniq.len());
                uniq.push(it);
            }
        }
    }
    (uniq, slot)
}
