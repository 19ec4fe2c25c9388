//! MRT, RZF and truncated polynomial expansion (TPE) precoders.
//!
//! All precoders take the per-cell estimate matrix `Ĥ` (M×K) and return an
//! M×K matrix `G` whose column `k` is the beamformer of user `k`. Power is
//! measured as `(1/K) tr(G Gᴴ)`.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::{binomial, c, frobenius, gram_power_iteration, hpd_inverse};
use crate::{CMat, CVec, Error, RMat, Result};

/// A precoding matrix together with the scale applied to its unnormalized form.
#[derive(Debug, Clone)]
pub struct PrecodingMatrix {
    pub g: CMat,
    /// `(1/K) tr(G Gᴴ)` of the returned matrix.
    pub power: f64,
    /// Factor multiplying the unnormalized direction: `β` for RZF, the
    /// proportionality constant for MRT, 1 for TPE.
    pub scale: f64,
}

fn power_of(g: &CMat) -> f64 {
    let f = frobenius(g);
    f * f / g.ncols().max(1) as f64
}

fn normalized(direction: CMat, p: f64, what: &str) -> Result<PrecodingMatrix> {
    if !(p > 0.0) {
        return Err(Error::InvalidArgument(format!("power must be positive, got {p}")));
    }
    let raw = power_of(&direction);
    if !(raw > 0.0) || !raw.is_finite() {
        return Err(Error::ZeroPower(format!("{what} direction has zero power")));
    }
    let scale = libm::sqrt(p / raw);
    let g = direction * c(scale);
    let power = power_of(&g);
    Ok(PrecodingMatrix { g, power, scale })
}

/// `G = Ĥ`, scaled to power `P`.
pub fn mrt_precoder(h_hat: &CMat, p: f64) -> Result<PrecodingMatrix> {
    normalized(h_hat.clone(), p, "MRT")
}

/// `G = √K β (Ĥ Ĥᴴ + Kφ I)⁻¹ Ĥ` with `β` set by the power constraint.
///
/// Evaluated through `Ĥ (Ĥᴴ Ĥ + Kφ I)⁻¹`, which needs a K×K inverse only.
pub fn rzf_precoder(h_hat: &CMat, phi: f64, p: f64) -> Result<PrecodingMatrix> {
    if !(phi > 0.0) {
        return Err(Error::InvalidArgument(format!("phi must be positive, got {phi}")));
    }
    let k = h_hat.ncols();
    let kf = k as f64;
    let mut gram = h_hat.adjoint() * h_hat;
    for i in 0..k {
        gram[(i, i)] += c(kf * phi);
    }
    let direction = (h_hat * hpd_inverse(&gram)?) * c(libm::sqrt(kf));
    normalized(direction, p, "RZF")
}

/// Counts matrix-vector passes of [`tpe_apply`].
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCount {
    pub matvec: usize,
}

/// `G = Σ_n w_n (Ĥ Ĥᴴ/K)ⁿ Ĥ / √K` by Horner's rule on `Ĥ`.
///
/// The coefficients carry the scale; no renormalization happens here.
pub fn tpe_precoder(h_hat: &CMat, w: &[f64]) -> Result<PrecodingMatrix> {
    if w.is_empty() {
        return Err(Error::InvalidArgument("TPE order must be at least 1".into()));
    }
    let k = h_hat.ncols().max(1) as f64;
    let inv_k = c(1.0 / k);
    let mut acc = h_hat * c(w[w.len() - 1]);
    for &wn in w.iter().rev().skip(1) {
        let inner = h_hat.adjoint() * &acc;
        acc = h_hat * inner * inv_k + h_hat * c(wn);
    }
    let g = acc * c(1.0 / libm::sqrt(k));
    let power = power_of(&g);
    Ok(PrecodingMatrix { g, power, scale: 1.0 })
}

/// `x = G s` for the TPE precoder without forming `G`.
pub fn tpe_apply(h_hat: &CMat, w: &[f64], s: &CVec, ops: &mut OpCount) -> CVec {
    let k = h_hat.ncols().max(1) as f64;
    let v = h_hat * s;
    ops.matvec += 1;
    let mut acc = &v * c(w[w.len() - 1]);
    for &wn in w.iter().rev().skip(1) {
        let inner = h_hat.adjoint() * &acc;
        acc = h_hat * inner * c(1.0 / k) + &v * c(wn);
        ops.matvec += 2;
    }
    acc * c(1.0 / libm::sqrt(k))
}

/// Taylor-series coefficients of `β (A + φI)⁻¹`:
/// `w_n = β κ Σ_{m=n}^{J−1} C(m, n) (1 − κφ)^{m−n} (−κ)ⁿ`.
pub fn taylor_initial_coeffs(order: usize, beta: f64, phi: f64, kappa: f64) -> Vec<f64> {
    let base = 1.0 - kappa * phi;
    (0..order)
        .map(|n| {
            let tail: f64 = (n..order).map(|m| binomial(m, n) * libm::pow(base, (m - n) as f64)).sum();
            beta * kappa * tail * libm::pow(-kappa, n as f64)
        })
        .collect()
}

/// Series parameter `κ = 2 / (1.05 λ̂ + 2φ)` with `λ̂` the 20-step power
/// iteration estimate of the largest eigenvalue of `Ĥ Ĥᴴ/K`.
///
/// The eigenvalues of `κ(Ĥ Ĥᴴ/K + φI)` then lie in `[κφ, 2 − κφ)`, so the
/// expansion contracts.
pub fn default_kappa(h_hat: &CMat, phi: f64) -> f64 {
    let lambda = gram_power_iteration(h_hat, 20);
    2.0 / (1.05 * lambda + 2.0 * phi)
}

/// Scales `w` so that `wᵀ C̄ w = P`.
pub fn normalize_tpe_power(w: &[f64], c_bar: &RMat, p: f64) -> Result<Vec<f64>> {
    if c_bar.nrows() != w.len() || c_bar.ncols() != w.len() {
        return Err(Error::Dimension(format!("C̄ is {}x{}, w has {}", c_bar.nrows(), c_bar.ncols(), w.len())));
    }
    let v = crate::RVec::from_column_slice(w);
    let q = v.dot(&(c_bar * &v));
    if !(q > 0.0) {
        return Err(Error::ZeroPower(format!("wᵀC̄w = {q}")));
    }
    let s = libm::sqrt(p / q);
    Ok(w.iter().map(|x| x * s).collect())
}
