//! Deterministic equivalents of resolvent functionals.
//!
//! For a list of covariances `R_1..R_K` and `t ≥ 0`, the resolvent
//! `Σ(t) = (t Ĥ Ĥᴴ/K + I)⁻¹` is approximated by
//! `T(t) = (I + (t/K) Σ_k R_k/(1 + tδ_k) + tZ/K)⁻¹` with `δ_k = tr(R_k T)/K`.
//! Two-resolvent functionals `tr(U Σ Θ Σ)/K` are approximated by `T̄`.
//!
//! TPE performance is expressed through Taylor coefficients of these objects
//! at `t = 0`. The recursions used here follow from differentiating the
//! identities `T = I + Q T`, `f (1 + tδ) = −1`, `X̄ (1 + tδ) = δ` and
//! `(Z̄ − r)(1 + tδ) = −t|p|²` with Leibniz's rule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::channel::EstimationModel;
use crate::linalg::{binomial_table, c, distinct_refs, factorial, hpd_inverse, trace, trace_product};
use crate::scenario::CovarianceSet;
use crate::{CMat, Error, RMat, RVec, Result, C64};

/// Controls of the damped fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000, damping: 0.5 }
    }
}

/// Converged solution of the first-order system at one `t`.
#[derive(Debug, Clone)]
pub struct FixedPointState {
    pub t: f64,
    pub t_mat: CMat,
    pub delta: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

struct Resolvent<'a> {
    t: f64,
    k: f64,
    uniq: Vec<&'a CMat>,
    count: Vec<f64>,
    z: Option<&'a CMat>,
}

impl Resolvent<'_> {
    fn matrix(&self, delta: &[f64]) -> Result<CMat> {
        let m = self.uniq[0].nrows();
        let mut a = CMat::identity(m, m);
        for ((r, &n), &d) in self.uniq.iter().zip(&self.count).zip(delta) {
            a += *r * c(self.t * n / (self.k * (1.0 + self.t * d)));
        }
        if let Some(z) = self.z {
            a += z * c(self.t / self.k);
        }
        hpd_inverse(&a)
    }

    fn update(&self, delta: &[f64]) -> Result<(CMat, Vec<f64>)> {
        let t_mat = self.matrix(delta)?;
        let next = self.uniq.iter().map(|r| trace_product(r, &t_mat).re / self.k).collect();
        Ok((t_mat, next))
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Solves the first-order fixed point by damped Picard iteration.
///
/// A step whose residual exceeds the current one is rejected and retried
/// with half the damping, so accepted residuals never increase.
pub fn solve_fixed_point(t: f64, r_list: &[&CMat], z: Option<&CMat>, opts: FixedPointOptions) -> Result<FixedPointState> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("t must be finite and nonnegative, got {t}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if r_list.is_empty() {
        return Err(Error::Dimension("empty covariance list".into()));
    }
    let (uniq, slot) = distinct_refs(r_list);
    let mut count = vec![0.0; uniq.len()];
    for &s in &slot {
        count[s] += 1.0;
    }
    let k = r_list.len() as f64;
    let solver = Resolvent { t, k, uniq, count, z };

    let mut delta: Vec<f64> = solver.uniq.iter().map(|r| trace(r).re / k).collect();
    let (mut t_mat, mut next) = solver.update(&delta)?;
    let mut residual = sup_diff(&delta, &next);
    let mut omega = opts.damping;
    let mut iterations = 0;
    while residual >= opts.tol * delta.iter().fold(1.0f64, |m, d| m.max(d.abs())) {
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence { iterations, residual });
        }
        iterations += 1;
        let cand: Vec<f64> = delta.iter().zip(&next).map(|(d, n)| d + omega * (n - d)).collect();
        let (cand_t, cand_next) = solver.update(&cand)?;
        let cand_res = sup_diff(&cand, &cand_next);
        if cand_res <= residual || omega < 1e-8 {
            delta = cand;
            t_mat = cand_t;
            next = cand_next;
            residual = cand_res;
            omega = (omega * 2.0).min(opts.damping);
        } else {
            omega *= 0.5;
        }
    }
    // One undamped step from the converged point.
    if iterations > 0 {
        let (polished_t, polished_next) = solver.update(&next)?;
        let polished_res = sup_diff(&next, &polished_next);
        if polished_res <= residual {
            delta = next;
            t_mat = polished_t;
            residual = polished_res;
        }
    }
    let delta = slot.iter().map(|&s| delta[s]).collect();
    Ok(FixedPointState { t, t_mat, delta, residual, iterations })
}

/// Second-order equivalent `T̄` with its `δ̄`, `J` and `v`.
#[derive(Debug, Clone)]
pub struct SecondOrderState {
    pub t_bar: CMat,
    pub delta_bar: Vec<f64>,
    pub jmat: RMat,
    pub v: Vec<f64>,
}

/// Builds `T̄ = TΘT + t² T ((1/K) Σ_k R_k δ̄_k/(1+tδ_k)²) T` with
/// `δ̄ = (I − t² J)⁻¹ v`.
pub fn solve_second_order(fp: &FixedPointState, r_list: &[&CMat], theta: &CMat) -> Result<SecondOrderState> {
    let kn = r_list.len();
    if kn != fp.delta.len() {
        return Err(Error::Dimension(format!("{} covariances for {} fixed-point entries", kn, fp.delta.len())));
    }
    let k = kn as f64;
    let t = fp.t;
    let tm = &fp.t_mat;
    let (uniq, slot) = distinct_refs(r_list);
    let rt: Vec<CMat> = uniq.iter().map(|r| *r * tm).collect();
    let tqt = tm * theta * tm;
    let mut pair = RMat::zeros(uniq.len(), uniq.len());
    for a in 0..uniq.len() {
        for b in a..uniq.len() {
            let v = trace_product(&rt[a], &rt[b]).re / k;
            pair[(a, b)] = v;
            pair[(b, a)] = v;
        }
    }
    let v_u: Vec<f64> = uniq.iter().map(|r| trace_product(r, &tqt).re / k).collect();
    let mut jmat = RMat::zeros(kn, kn);
    let mut system = RMat::identity(kn, kn);
    for a in 0..kn {
        for b in 0..kn {
            let denom = 1.0 + t * fp.delta[b];
            jmat[(a, b)] = pair[(slot[a], slot[b])] / (k * denom * denom);
            system[(a, b)] -= t * t * jmat[(a, b)];
        }
    }
    let v: Vec<f64> = slot.iter().map(|&s| v_u[s]).collect();
    let delta_bar = system
        .lu()
        .solve(&RVec::from_column_slice(&v))
        .ok_or_else(|| Error::Singular("I - t^2 J".into()))?;
    if delta_bar.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular("I - t^2 J".into()));
    }
    let m = tm.nrows();
    let mut mid = CMat::zeros(m, m);
    let mut weight = vec![0.0; uniq.len()];
    for (i, &s) in slot.iter().enumerate() {
        let denom = 1.0 + t * fp.delta[i];
        weight[s] += delta_bar[i] / (k * denom * denom);
    }
    for (r, &wt) in uniq.iter().zip(&weight) {
        mid += *r * c(wt);
    }
    let t_bar = tqt + tm * mid * tm * c(t * t);
    Ok(SecondOrderState { t_bar, delta_bar: delta_bar.iter().copied().collect(), jmat, v })
}

/// Derivatives at `t = 0` of `T(t)` and `δ(t)` for the list `Φ_1..Φ_K`.
#[derive(Debug, Clone)]
pub struct DerivativeTable {
    /// `T⁽ⁿ⁾`, `n = 0..=D`.
    pub t_n: Vec<CMat>,
    /// `δ_k⁽ⁿ⁾`, indexed `[n][k]`.
    pub delta_n: Vec<Vec<f64>>,
    /// Derivatives of `f_k = −1/(1 + tδ_k)`, indexed `[n][k]`.
    pub f_n: Vec<Vec<f64>>,
    /// Derivatives of `g_k = tδ_k`, indexed `[n][k]`.
    pub g_n: Vec<Vec<f64>>,
    pub order: usize,
}

impl DerivativeTable {
    /// `tr(A T⁽ⁿ⁾)/K` for `n = 0..=D`.
    pub fn trace_sequence(&self, a: &CMat, k: usize) -> Vec<C64> {
        self.t_n.iter().map(|t| trace_product(a, t) / k as f64).collect()
    }

    /// `δ_k⁽ⁿ⁾` of user `k` for `n = 0..=D`.
    pub fn user_delta(&self, k: usize) -> Vec<f64> {
        self.delta_n.iter().map(|row| row[k]).collect()
    }
}

/// Derivatives of the first-order equivalent at `t = 0` up to order `d`.
///
/// With `Q(t) = (t/K) Σ_k f_k Φ_k` the resolvent satisfies `T = I + Q T`, so
/// `T⁽ⁱ⁾ = Σ_{n=1}^{i} C(i,n) Q⁽ⁿ⁾ T⁽ⁱ⁻ⁿ⁾` and `Q⁽ⁿ⁾ = (n/K) Σ_k f_k⁽ⁿ⁻¹⁾ Φ_k`.
/// `f_k⁽ⁱ⁾ = −Σ_{n=1}^{i} C(i,n) g_k⁽ⁿ⁾ f_k⁽ⁱ⁻ⁿ⁾` with `g_k⁽ⁿ⁾ = n δ_k⁽ⁿ⁻¹⁾`.
pub fn derivative_tables(phi: &[&CMat], d: usize) -> Result<DerivativeTable> {
    if phi.is_empty() {
        return Err(Error::Dimension("empty covariance list".into()));
    }
    let kn = phi.len();
    let k = kn as f64;
    let m = phi[0].nrows();
    let (uniq, slot) = distinct_refs(phi);
    let mut count = vec![0.0; uniq.len()];
    for &s in &slot {
        count[s] += 1.0;
    }
    let binom = binomial_table(d);
    // Per distinct matrix; expanded to users at the end.
    let mut delta_u: Vec<Vec<f64>> = vec![uniq.iter().map(|p| trace(p).re / k).collect()];
    let mut f_u: Vec<Vec<f64>> = vec![vec![-1.0; uniq.len()]];
    let mut g_u: Vec<Vec<f64>> = vec![vec![0.0; uniq.len()]];
    let mut q_n: Vec<CMat> = vec![CMat::zeros(m, m)];
    let mut t_n: Vec<CMat> = vec![CMat::identity(m, m)];
    for i in 1..=d {
        let g_i: Vec<f64> = delta_u[i - 1].iter().map(|x| i as f64 * x).collect();
        g_u.push(g_i);
        let f_i: Vec<f64> = (0..uniq.len())
            .map(|u| -(1..=i).map(|n| binom[i][n] * g_u[n][u] * f_u[i - n][u]).sum::<f64>())
            .collect();
        let mut q = CMat::zeros(m, m);
        for (u, p) in uniq.iter().enumerate() {
            q += *p * c(i as f64 * count[u] * f_u[i - 1][u] / k);
        }
        q_n.push(q);
        f_u.push(f_i);
        let mut t_i = CMat::zeros(m, m);
        for n in 1..=i {
            t_i += &q_n[n] * &t_n[i - n] * c(binom[i][n]);
        }
        let t_i = (&t_i + t_i.adjoint()) * c(0.5);
        delta_u.push(uniq.iter().map(|p| trace_product(p, &t_i).re / k).collect());
        t_n.push(t_i);
    }
    let expand = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { rows.iter().map(|r| slot.iter().map(|&s| r[s]).collect()).collect() };
    Ok(DerivativeTable {
        delta_n: expand(&delta_u),
        f_n: expand(&f_u),
        g_n: expand(&g_u),
        t_n,
        order: d,
    })
}

/// `X̄⁽ⁿ⁾` from `δ⁽ⁿ⁾`: derivatives of `X̄(t) = δ/(1 + tδ)` at zero.
pub fn xbar_derivatives(delta_n: &[f64]) -> Vec<f64> {
    let d = delta_n.len();
    let binom = binomial_table(d);
    let mut x: Vec<f64> = Vec::with_capacity(d);
    for n in 0..d {
        let corr: f64 = (1..=n).map(|k| binom[n][k] * k as f64 * delta_n[k - 1] * x[n - k]).sum();
        x.push(delta_n[n] - corr);
    }
    x
}

/// `Z̄⁽ⁿ⁾` from `r⁽ⁿ⁾ = tr(R T⁽ⁿ⁾)/K`, `p⁽ⁿ⁾ = tr(Φ T⁽ⁿ⁾)/K` and `δ⁽ⁿ⁾`:
/// derivatives of `Z̄(t) = r(t) − t|p(t)|²/(1 + tδ(t))` at zero.
pub fn zbar_derivatives(r_n: &[f64], p_n: &[C64], delta_n: &[f64]) -> Vec<f64> {
    let d = r_n.len();
    let binom = binomial_table(d);
    let p2: Vec<f64> = (0..d)
        .map(|m| (0..=m).map(|i| binom[m][i] * (p_n[i] * p_n[m - i].conj()).re).sum())
        .collect();
    let mut u: Vec<f64> = Vec::with_capacity(d);
    for n in 0..d {
        let rhs = if n == 0 { 0.0 } else { -(n as f64) * p2[n - 1] };
        let corr: f64 = (1..=n).map(|k| binom[n][k] * k as f64 * delta_n[k - 1] * u[n - k]).sum();
        u.push(rhs - corr);
    }
    r_n.iter().zip(&u).map(|(r, u)| r + u).collect()
}

fn sign(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Deterministic tables defining the asymptotic TPE SINR.
#[derive(Debug, Clone)]
pub struct SinrModelTpe {
    pub cells: usize,
    pub users: usize,
    pub orders: Vec<usize>,
    pub sigma2: f64,
    /// `ā_{j,m}`, indexed `[j * K + m]`.
    pub a_bar: Vec<RVec>,
    /// `B̄_{ℓ,j,m}`, indexed `[(ℓ * L + j) * K + m]`.
    pub b_bar: Vec<RMat>,
    /// `C̄_ℓ`.
    pub c_bar: Vec<RMat>,
    /// `X̄_{j,m}⁽ⁿ⁾`, indexed like `a_bar`.
    pub xbar: Vec<Vec<f64>>,
    /// `Z̄_{ℓ,j,m}⁽ⁿ⁾`, indexed like `b_bar`.
    pub zbar: Vec<Vec<f64>>,
}

impl SinrModelTpe {
    /// Builds all tables from the covariances and the estimation model.
    ///
    /// The derivative order is `D = 2·max_ℓ J_ℓ − 1` in every cell.
    pub fn build(covs: &CovarianceSet, est: &EstimationModel, sigma2: f64, orders: &[usize]) -> Result<Self> {
        let (l_n, k_n) = (covs.cells, covs.users);
        if orders.len() != l_n || orders.contains(&0) {
            return Err(Error::InvalidArgument(format!("need {l_n} TPE orders >= 1, got {orders:?}")));
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance must be nonnegative, got {sigma2}")));
        }
        let d = 2 * orders.iter().copied().max().unwrap_or(1) - 1;
        let mut xbar = vec![Vec::new(); l_n * k_n];
        let mut zbar = vec![Vec::new(); l_n * l_n * k_n];
        let mut c_bar = Vec::with_capacity(l_n);
        for l in 0..l_n {
            let own = est.own_phis(l);
            let table = derivative_tables(&own, d)?;
            for m in 0..k_n {
                xbar[l * k_n + m] = xbar_derivatives(&table.user_delta(m));
            }
            let tr_t: Vec<f64> = table.t_n.iter().map(|t| trace(t).re / k_n as f64).collect();
            let jl = orders[l];
            c_bar.push(RMat::from_fn(jl, jl, |n, p| {
                let s = n + p + 1;
                sign(s) / factorial(s) * tr_t[s]
            }));
            let r_refs: Vec<&CMat> = (0..l_n).flat_map(|j| (0..k_n).map(move |m| (j, m))).map(|(j, m)| covs.get(l, j, m)).collect();
            let p_refs: Vec<&CMat> = (0..l_n).flat_map(|j| (0..k_n).map(move |m| (j, m))).map(|(j, m)| est.phi(l, j, m)).collect();
            let (r_uniq, r_slot) = distinct_refs(&r_refs);
            let (p_uniq, p_slot) = distinct_refs(&p_refs);
            let r_seq: Vec<Vec<f64>> = r_uniq.iter().map(|r| table.trace_sequence(r, k_n).iter().map(|z| z.re).collect()).collect();
            let p_seq: Vec<Vec<C64>> = p_uniq.iter().map(|p| table.trace_sequence(p, k_n)).collect();
            for idx in 0..l_n * k_n {
                let m = idx % k_n;
                let z = zbar_derivatives(&r_seq[r_slot[idx]], &p_seq[p_slot[idx]], &table.user_delta(m));
                zbar[l * l_n * k_n + idx] = z;
            }
        }
        let a_bar = (0..l_n * k_n)
            .map(|idx| {
                let j = idx / k_n;
                RVec::from_fn(orders[j], |n, _| sign(n) / factorial(n) * xbar[idx][n])
            })
            .collect();
        let b_bar = (0..l_n * l_n * k_n)
            .map(|idx| {
                let l = idx / (l_n * k_n);
                let jl = orders[l];
                RMat::from_fn(jl, jl, |n, p| {
                    let s = n + p + 1;
                    sign(s) / factorial(s) * zbar[idx][s]
                })
            })
            .collect();
        Ok(Self { cells: l_n, users: k_n, orders: orders.to_vec(), sigma2, a_bar, b_bar, c_bar, xbar, zbar })
    }

    pub fn a(&self, j: usize, m: usize) -> &RVec {
        &self.a_bar[j * self.users + m]
    }

    pub fn b(&self, l: usize, j: usize, m: usize) -> &RMat {
        &self.b_bar[(l * self.cells + j) * self.users + m]
    }

    pub fn c(&self, l: usize) -> &RMat {
        &self.c_bar[l]
    }

    /// The same tables restricted to lower orders; entries depend only on
    /// `n + p`, so leading blocks are exact.
    pub fn truncated(&self, orders: &[usize]) -> Result<Self> {
        if orders.len() != self.cells || orders.iter().zip(&self.orders).any(|(&j, &have)| j == 0 || j > have) {
            return Err(Error::InvalidArgument(format!("cannot truncate orders {:?} to {orders:?}", self.orders)));
        }
        let (l_n, k_n) = (self.cells, self.users);
        let a_bar = (0..l_n * k_n).map(|idx| self.a_bar[idx].rows(0, orders[idx / k_n]).into_owned()).collect();
        let b_bar = (0..l_n * l_n * k_n)
            .map(|idx| {
                let j = orders[idx / (l_n * k_n)];
                self.b_bar[idx].view((0, 0), (j, j)).into_owned()
            })
            .collect();
        let c_bar = self.c_bar.iter().zip(orders).map(|(c, &j)| c.view((0, 0), (j, j)).into_owned()).collect();
        Ok(Self { orders: orders.to_vec(), a_bar, b_bar, c_bar, xbar: self.xbar.clone(), zbar: self.zbar.clone(), ..*self })
    }
}

/// `γ̄_{j,m} = (w_jᵀ ā)² / (σ²/K + Σ_ℓ w_ℓᵀ B̄_{ℓ,j,m} w_ℓ − (w_jᵀ ā)²)`,
/// indexed `[j][m]`.
pub fn tpe_sinr_detequiv(model: &SinrModelTpe, w: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if w.len() != model.cells || w.iter().zip(&model.orders).any(|(x, &j)| x.len() != j) {
        return Err(Error::Dimension(format!("coefficient lengths do not match orders {:?}", model.orders)));
    }
    let wv: Vec<RVec> = w.iter().map(|x| RVec::from_column_slice(x)).collect();
    let k = model.users;
    let mut out = vec![vec![0.0; k]; model.cells];
    for j in 0..model.cells {
        for m in 0..k {
            let s = wv[j].dot(model.a(j, m));
            let signal = s * s;
            let mut denom = model.sigma2 / k as f64 - signal;
            for (l, wl) in wv.iter().enumerate() {
                denom += wl.dot(&(model.b(l, j, m) * wl));
            }
            if !(denom > 0.0) {
                if signal == 0.0 && denom == 0.0 {
                    continue;
                }
                return Err(Error::NonPositiveDenominator(denom, j, m));
            }
            out[j][m] = signal / denom;
        }
    }
    Ok(out)
}

/// Asymptotic RZF quantities per cell and user.
#[derive(Debug, Clone)]
pub struct RzfDetEq {
    pub cells: usize,
    pub users: usize,
    /// `β̄_ℓ`, the deterministic equivalent of the squared RZF normalization.
    pub beta_bar: Vec<f64>,
    /// `θ_{ℓ,j,m}`, `θ̄_{ℓ,j,m}`, `κ_{ℓ,j,m}`, `κ̄_{ℓ,j,m}`, indexed `[(ℓ * L + j) * K + m]`.
    pub theta: Vec<f64>,
    pub theta_bar: Vec<f64>,
    pub kappa: Vec<C64>,
    pub kappa_bar: Vec<C64>,
    /// `δ_{ℓ,m}`, `δ̄_{ℓ,m}`, `ζ_{ℓ,m}`, indexed `[ℓ * K + m]`.
    pub delta: Vec<f64>,
    pub delta_bar: Vec<f64>,
    pub zeta: Vec<f64>,
    /// `γ̄_{j,m}`, indexed `[j * K + m]`.
    pub gamma_bar: Vec<f64>,
}

impl RzfDetEq {
    pub fn gamma(&self, j: usize, m: usize) -> f64 {
        self.gamma_bar[j * self.users + m]
    }
}

/// Asymptotic SINR of RZF with regularization `φ_ℓ` and per-user power `P_ℓ`.
///
/// Cell `ℓ` uses `T_ℓ`, `T̄_ℓ` at `t = 1/φ_ℓ` with the estimate covariances
/// `Φ_{ℓ,ℓ,k}` and `Θ = I`. Inter-cell cross terms `κ` are complex when the
/// pilot-contaminated covariances are not Hermitian, hence the moduli.
pub fn rzf_sinr_detequiv(
    covs: &CovarianceSet,
    est: &EstimationModel,
    phi: &[f64],
    sigma2: f64,
    power: &[f64],
) -> Result<RzfDetEq> {
    let (l_n, k_n) = (covs.cells, covs.users);
    if phi.len() != l_n || power.len() != l_n {
        return Err(Error::Dimension(format!("need {l_n} regularizers and powers")));
    }
    if phi.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument(format!("regularization must be positive, got {phi:?}")));
    }
    let k = k_n as f64;
    let m_n = covs.antennas;
    let idx3 = |l: usize, j: usize, m: usize| (l * l_n + j) * k_n + m;
    let mut out = RzfDetEq {
        cells: l_n,
        users: k_n,
        beta_bar: vec![0.0; l_n],
        theta: vec![0.0; l_n * l_n * k_n],
        theta_bar: vec![0.0; l_n * l_n * k_n],
        kappa: vec![C64::new(0.0, 0.0); l_n * l_n * k_n],
        kappa_bar: vec![C64::new(0.0, 0.0); l_n * l_n * k_n],
        delta: vec![0.0; l_n * k_n],
        delta_bar: vec![0.0; l_n * k_n],
        zeta: vec![0.0; l_n * k_n],
        gamma_bar: vec![0.0; l_n * k_n],
    };
    for l in 0..l_n {
        let t = 1.0 / phi[l];
        let own = est.own_phis(l);
        let fp = solve_fixed_point(t, &own, None, FixedPointOptions::default())?;
        let so = solve_second_order(&fp, &own, &CMat::identity(m_n, m_n))?;
        let gap = (trace(&fp.t_mat).re - trace(&so.t_bar).re) / k;
        if !(gap > 0.0) {
            return Err(Error::ZeroPower(format!("RZF normalization gap {gap} in cell {l}")));
        }
        out.beta_bar[l] = power[l] / (t * gap);
        for m in 0..k_n {
            out.delta[l * k_n + m] = fp.delta[m];
            out.delta_bar[l * k_n + m] = so.delta_bar[m];
            out.zeta[l * k_n + m] = 1.0 / (phi[l] + fp.delta[m]);
        }
        let mut memo: Vec<(*const CMat, *const CMat, [f64; 2], [C64; 2])> = Vec::new();
        for j in 0..l_n {
            for m in 0..k_n {
                let (r, p) = (covs.get(l, j, m), est.phi(l, j, m));
                let key = (r as *const CMat, p as *const CMat);
                let vals = match memo.iter().find(|e| e.0 == key.0 && e.1 == key.1) {
                    Some(e) => (e.2, e.3),
                    None => {
                        let th = [trace_product(r, &fp.t_mat).re / k, trace_product(r, &so.t_bar).re / k];
                        let ka = [trace_product(p, &fp.t_mat) / k, trace_product(p, &so.t_bar) / k];
                        memo.push((key.0, key.1, th, ka));
                        (th, ka)
                    }
                };
                let i = idx3(l, j, m);
                out.theta[i] = vals.0[0];
                out.theta_bar[i] = vals.0[1];
                out.kappa[i] = vals.1[0];
                out.kappa_bar[i] = vals.1[1];
            }
        }
    }
    for j in 0..l_n {
        for m in 0..k_n {
            let own = out.delta[j * k_n + m] * out.zeta[j * k_n + m];
            let signal = out.beta_bar[j] * own * own;
            let mut denom = sigma2 / k - signal;
            for l in 0..l_n {
                let i = idx3(l, j, m);
                let zeta = out.zeta[l * k_n + m];
                let (ka, kb) = (out.kappa[i], out.kappa_bar[i]);
                let k2 = ka.norm_sqr();
                let bracket = out.theta[i] - zeta * k2 - out.theta_bar[i] + 2.0 * zeta * (ka * kb.conj()).re
                    - zeta * zeta * k2 * out.delta_bar[l * k_n + m];
                denom += out.beta_bar[l] / phi[l] * bracket;
            }
            if !(denom > 0.0) {
                return Err(Error::NonPositiveDenominator(denom, j, m));
            }
            out.gamma_bar[j * k_n + m] = signal / denom;
        }
    }
    Ok(out)
}
