//! Weighted max-min fairness over TPE coefficients.
//!
//! The target `max_w min_{j,m} log2(1 + γ̄_{j,m}(w))/ν_{j,m}` is quasi-convex
//! after lifting `w_ℓ w_ℓᵀ` to a PSD matrix `W_ℓ`: for a fixed rate level `ξ`
//! every SINR constraint becomes linear in `W`. The level is found by
//! bisection, a coefficient vector is read off the principal eigenvector, and
//! a local search on that vector recovers what extraction loses.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::detequiv::{RzfDetEq, SinrModelTpe};
use crate::linalg::sym_eigen_desc;
use crate::{Error, RMat, RVec, Result};

/// Tables and weights of one max-min problem.
#[derive(Debug, Clone)]
pub struct MaxMinProblem {
    pub cells: usize,
    pub users: usize,
    pub orders: Vec<usize>,
    /// `ā_{j,m}` at `[j * K + m]`.
    pub a_bar: Vec<RVec>,
    /// `B̄_{ℓ,j,m}` at `[(ℓ * L + j) * K + m]`.
    pub b_bar: Vec<RMat>,
    pub c_bar: Vec<RMat>,
    /// `ν_{j,m}` at `[j * K + m]`.
    pub nu: Vec<f64>,
    pub power: Vec<f64>,
    pub sigma2: f64,
}

impl MaxMinProblem {
    pub fn from_model(model: &SinrModelTpe, nu: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        let p = Self {
            cells: model.cells,
            users: model.users,
            orders: model.orders.clone(),
            a_bar: model.a_bar.clone(),
            b_bar: model.b_bar.clone(),
            c_bar: model.c_bar.clone(),
            nu,
            power,
            sigma2: model.sigma2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (l_n, k_n) = (self.cells, self.users);
        if self.orders.len() != l_n || self.power.len() != l_n || self.c_bar.len() != l_n {
            return Err(Error::Dimension("per-cell data must have one entry per cell".into()));
        }
        if self.a_bar.len() != l_n * k_n || self.nu.len() != l_n * k_n || self.b_bar.len() != l_n * l_n * k_n {
            return Err(Error::Dimension("per-user tables have the wrong length".into()));
        }
        if self.nu.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        if self.power.iter().any(|&v| !(v > 0.0)) || !(self.sigma2 >= 0.0) {
            return Err(Error::InvalidArgument("powers must be positive and noise nonnegative".into()));
        }
        for l in 0..l_n {
            let j = self.orders[l];
            if self.c_bar[l].shape() != (j, j) {
                return Err(Error::Dimension(format!("C̄ of cell {l} is not {j}x{j}")));
            }
            let (ev, _) = sym_eigen_desc(&self.c_bar[l]);
            if ev[j - 1] < -1e-9 * ev[0].abs() {
                return Err(Error::NotPsd { min_eig: ev[j - 1], norm: ev[0] });
            }
        }
        Ok(())
    }

    fn a(&self, j: usize, m: usize) -> &RVec {
        &self.a_bar[j * self.users + m]
    }

    fn b(&self, l: usize, j: usize, m: usize) -> &RMat {
        &self.b_bar[(l * self.cells + j) * self.users + m]
    }

    /// Deterministic SINR of every user for lifted coefficients `W_ℓ`.
    pub fn lifted_sinr(&self, w: &[RMat]) -> Vec<f64> {
        let k = self.users;
        let mut out = vec![0.0; self.cells * k];
        for j in 0..self.cells {
            for m in 0..k {
                let a = self.a(j, m);
                let signal = a.dot(&(&w[j] * a));
                let mut denom = self.sigma2 / k as f64 - signal;
                for (l, wl) in w.iter().enumerate() {
                    denom += (self.b(l, j, m) * wl).trace();
                }
                out[j * k + m] = if denom > 0.0 { signal / denom } else { f64::INFINITY };
            }
        }
        out
    }

    /// `min_{j,m} log2(1 + γ̄_{j,m})/ν_{j,m}` for rank-one coefficients.
    pub fn weighted_min_rate(&self, w: &[Vec<f64>]) -> f64 {
        let lifted: Vec<RMat> = w.iter().map(|x| {
            let v = RVec::from_column_slice(x);
            &v * v.transpose()
        }).collect();
        self.lifted_sinr(&lifted)
            .iter()
            .zip(&self.nu)
            .map(|(g, nu)| libm::log2(1.0 + g) / nu)
            .fold(f64::INFINITY, f64::min)
    }

    /// Worst `āᵀW_jā − c(σ²/K + Σ_ℓ tr(B̄W_ℓ))` at level `ξ`; nonnegative when
    /// every constraint holds.
    pub fn feasibility_margin(&self, xi: f64, w: &[RMat]) -> f64 {
        let k = self.users;
        let mut worst = f64::INFINITY;
        for j in 0..self.cells {
            for m in 0..k {
                let c = level_factor(self.nu[j * k + m], xi);
                let a = self.a(j, m);
                let mut interference = self.sigma2 / k as f64;
                for (l, wl) in w.iter().enumerate() {
                    interference += (self.b(l, j, m) * wl).trace();
                }
                worst = worst.min(a.dot(&(&w[j] * a)) - c * interference);
            }
        }
        worst
    }
}

/// `(2^{νξ} − 1)/2^{νξ}`: the SINR target `2^{νξ} − 1` rewritten against the
/// total received power.
fn level_factor(nu: f64, xi: f64) -> f64 {
    let g = libm::exp2(nu * xi);
    (g - 1.0) / g
}

/// Outcome of a feasibility test at one rate level.
#[derive(Debug, Clone)]
pub enum Feasibility {
    /// A certificate `W_ℓ` per cell, in the original coordinates.
    Feasible(Vec<RMat>),
    Infeasible,
}

/// Decides whether a rate level `ξ` is achievable by the relaxation.
pub trait FeasibilityBackend {
    fn check(&self, problem: &MaxMinProblem, xi: f64) -> Result<Feasibility>;
}

/// Symmetric `J×J` matrices as upper-triangle coordinates: `W = Σ x_a E_a`
/// with `E_ii = e_i e_iᵀ` and `E_ij = e_i e_jᵀ + e_j e_iᵀ`.
#[derive(Debug, Clone)]
struct SymBasis {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl SymBasis {
    fn new(n: usize) -> Self {
        let mut pairs = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                pairs.push((i, j));
            }
        }
        Self { n, pairs }
    }

    fn dim(&self) -> usize {
        self.pairs.len()
    }

    /// Coefficients `tr(M E_a)` of the functional `W ↦ tr(M W)`.
    fn functional(&self, m: &RMat) -> Vec<f64> {
        self.pairs.iter().map(|&(i, j)| if i == j { m[(i, i)] } else { m[(i, j)] + m[(j, i)] }).collect()
    }

    fn matrix(&self, x: &[f64]) -> RMat {
        let mut w = RMat::zeros(self.n, self.n);
        for (&(i, j), &v) in self.pairs.iter().zip(x) {
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        w
    }

    fn coords(&self, w: &RMat) -> Vec<f64> {
        self.pairs.iter().map(|&(i, j)| w[(i, j)]).collect()
    }
}

/// Primal barrier method on the phase-one problem
/// `min s  s.t.  g_i(W) ≤ s,  tr(C̃_ℓ W_ℓ) = P_ℓ,  W_ℓ ≻ 0`,
/// in coordinates where every `C̄_ℓ` has unit diagonal.
///
/// The level is feasible as soon as an iterate has `s < 0`; it is declared
/// infeasible once the duality bound proves `s* > 0`, or when the bound
/// shrinks below `tol` without a sign (the conservative choice).
#[derive(Debug, Clone, Copy)]
pub struct BarrierSdp {
    pub tol: f64,
    pub max_newton: usize,
}

impl Default for BarrierSdp {
    fn default() -> Self {
        Self { tol: 1e-7, max_newton: 4000 }
    }
}

struct Lifted {
    bases: Vec<SymBasis>,
    offsets: Vec<usize>,
    nvar: usize,
    /// Constraint `i`: `g_i = h_iᵀ x + e_i` (normalized).
    h: Vec<Vec<f64>>,
    e: Vec<f64>,
    /// Equality rows `a_ℓᵀ x = P_ℓ`.
    eq: Vec<Vec<f64>>,
    eq_rhs: Vec<f64>,
    /// Diagonal equilibration `D_ℓ`; `W = D W̃ D`.
    scale: Vec<RVec>,
}

fn equilibrate(c: &RMat) -> RVec {
    RVec::from_fn(c.nrows(), |i, _| {
        let d = c[(i, i)];
        if d > 0.0 {
            1.0 / libm::sqrt(d)
        } else {
            1.0
        }
    })
}

fn congruence(m: &RMat, d: &RVec) -> RMat {
    RMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[i] * d[j])
}

impl Lifted {
    fn build(p: &MaxMinProblem, xi: f64) -> Self {
        let (l_n, k_n) = (p.cells, p.users);
        let bases: Vec<SymBasis> = p.orders.iter().map(|&j| SymBasis::new(j)).collect();
        let mut offsets = Vec::with_capacity(l_n);
        let mut nvar = 0;
        for b in &bases {
            offsets.push(nvar);
            nvar += b.dim();
        }
        let scale: Vec<RVec> = p.c_bar.iter().map(equilibrate).collect();
        let c_t: Vec<RMat> = p.c_bar.iter().zip(&scale).map(|(c, d)| congruence(c, d)).collect();
        let w0: Vec<RMat> = c_t
            .iter()
            .zip(&p.power)
            .map(|(c, &pw)| RMat::identity(c.nrows(), c.nrows()) * (pw / c.trace()))
            .collect();
        let mut h = Vec::with_capacity(l_n * k_n);
        let mut e = Vec::with_capacity(l_n * k_n);
        for j in 0..l_n {
            for m in 0..k_n {
                let cf = level_factor(p.nu[j * k_n + m], xi);
                let mut row = vec![0.0; nvar];
                let mut typical = cf * p.sigma2 / k_n as f64;
                for l in 0..l_n {
                    let bt = congruence(p.b(l, j, m), &scale[l]);
                    typical += (&bt * &w0[l]).trace().abs();
                    let mut coef = bases[l].functional(&bt);
                    if l == j {
                        let at = p.a(j, m).component_mul(&scale[j]);
                        let aat = &at * at.transpose();
                        typical += at.dot(&(&w0[j] * &at)).abs();
                        for (x, y) in coef.iter_mut().zip(bases[l].functional(&aat)) {
                            *x = cf * *x - y;
                        }
                    } else {
                        coef.iter_mut().for_each(|x| *x *= cf);
                    }
                    row[offsets[l]..offsets[l] + coef.len()].copy_from_slice(&coef);
                }
                let norm = if typical > 0.0 { typical } else { 1.0 };
                row.iter_mut().for_each(|x| *x /= norm);
                h.push(row);
                e.push(cf * p.sigma2 / k_n as f64 / norm);
            }
        }
        let eq = (0..l_n)
            .map(|l| {
                let mut row = vec![0.0; nvar];
                let coef = bases[l].functional(&c_t[l]);
                row[offsets[l]..offsets[l] + coef.len()].copy_from_slice(&coef);
                row
            })
            .collect();
        Self { bases, offsets, nvar, h, e, eq, eq_rhs: p.power.clone(), scale }
    }

    fn start(&self, p: &MaxMinProblem) -> Vec<f64> {
        let mut x = vec![0.0; self.nvar + 1];
        for (l, b) in self.bases.iter().enumerate() {
            let trc: f64 = (0..b.n).map(|i| self.eq[l][self.offsets[l] + b.pairs.iter().position(|&q| q == (i, i)).unwrap()]).sum();
            let w = RMat::identity(b.n, b.n) * (p.power[l] / trc);
            x[self.offsets[l]..self.offsets[l] + b.dim()].copy_from_slice(&b.coords(&w));
        }
        let worst = self.constraints(&x).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        x[self.nvar] = worst + 1.0;
        x
    }

    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        self.h.iter().zip(&self.e).map(|(h, e)| h.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + e).collect()
    }

    fn blocks(&self, x: &[f64]) -> Vec<RMat> {
        self.bases.iter().enumerate().map(|(l, b)| b.matrix(&x[self.offsets[l]..self.offsets[l] + b.dim()])).collect()
    }

    /// Barrier value, or `None` outside the domain.
    fn value(&self, x: &[f64], tau: f64) -> Option<f64> {
        let s = x[self.nvar];
        let mut v = tau * s;
        for g in self.constraints(x) {
            let r = s - g;
            if !(r > 0.0) {
                return None;
            }
            v -= libm::log(r);
        }
        for w in self.blocks(x) {
            let ch = nalgebra::Cholesky::new(w)?;
            v -= 2.0 * ch.l().diagonal().iter().map(|d| libm::log(*d)).sum::<f64>();
        }
        Some(v)
    }

    fn certificate(&self, x: &[f64]) -> Vec<RMat> {
        self.blocks(x).iter().zip(&self.scale).map(|(w, d)| congruence(w, d)).collect()
    }
}

impl BarrierSdp {
    fn newton_step(&self, lp: &Lifted, x: &[f64], tau: f64) -> Result<(Vec<f64>, f64)> {
        let n = lp.nvar + 1;
        let s = x[lp.nvar];
        let mut grad = vec![0.0; n];
        let mut hess = RMat::zeros(n, n);
        grad[lp.nvar] = tau;
        let g = lp.constraints(x);
        for (hi, gi) in lp.h.iter().zip(&g) {
            let r = s - gi;
            // ∇r = (−h_i, 1)
            let mut dr = hi.iter().map(|v| -v).collect::<Vec<_>>();
            dr.push(1.0);
            for a in 0..n {
                grad[a] -= dr[a] / r;
                if dr[a] == 0.0 {
                    continue;
                }
                let fa = dr[a] / (r * r);
                for b in 0..n {
                    hess[(a, b)] += fa * dr[b];
                }
            }
        }
        for (l, b) in lp.bases.iter().enumerate() {
            let w = b.matrix(&x[lp.offsets[l]..lp.offsets[l] + b.dim()]);
            let v = w
                .clone()
                .cholesky()
                .map(|ch| ch.inverse())
                .ok_or_else(|| Error::Solver("iterate left the PSD cone".into()))?;
            let off = lp.offsets[l];
            let gl = b.functional(&v);
            let products: Vec<RMat> = b
                .pairs
                .iter()
                .map(|&(i, j)| {
                    let mut e = RMat::zeros(b.n, b.n);
                    e[(i, j)] = 1.0;
                    e[(j, i)] = 1.0;
                    &v * e * &v
                })
                .collect();
            for a in 0..b.dim() {
                grad[off + a] -= gl[a];
                let fa = b.functional(&products[a]);
                for c in 0..b.dim() {
                    hess[(off + a, off + c)] += fa[c];
                }
            }
        }
        let neq = lp.eq.len();
        let mut kkt = RMat::zeros(n + neq, n + neq);
        kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
        for (r, row) in lp.eq.iter().enumerate() {
            for (a, &v) in row.iter().enumerate() {
                kkt[(n + r, a)] = v;
                kkt[(a, n + r)] = v;
            }
        }
        let mut rhs = RVec::zeros(n + neq);
        for a in 0..n {
            rhs[a] = -grad[a];
        }
        // Pull the equalities back onto the constraint manifold if they drifted.
        for (r, row) in lp.eq.iter().enumerate() {
            let lhs: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            rhs[n + r] = lp.eq_rhs[r] - lhs;
        }
        let sol = kkt.lu().solve(&rhs).ok_or_else(|| Error::Solver("singular KKT system".into()))?;
        let dx: Vec<f64> = sol.iter().take(n).copied().collect();
        let decrement = -grad.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>();
        Ok((dx, decrement))
    }
}

/// Newton steps per centering; stalls at large `τ` are rounding, not progress.
const INNER_NEWTON: usize = 60;

impl FeasibilityBackend for BarrierSdp {
    fn check(&self, problem: &MaxMinProblem, xi: f64) -> Result<Feasibility> {
        if !(xi >= 0.0) {
            return Err(Error::InvalidArgument(format!("rate level must be nonnegative, got {xi}")));
        }
        let lp = Lifted::build(problem, xi);
        let mut x = lp.start(problem);
        // Every PSD point meets the zero level, which has no strict interior when ā = 0.
        if xi == 0.0 || x[lp.nvar] - 1.0 < 0.0 {
            return Ok(Feasibility::Feasible(lp.certificate(&x)));
        }
        let barrier_weight = (lp.h.len() + lp.bases.iter().map(|b| b.n).sum::<usize>()) as f64;
        let mut tau = 1.0;
        let mut newton = 0;
        loop {
            for _ in 0..INNER_NEWTON {
                if newton >= self.max_newton {
                    return Err(Error::NoConvergence { iterations: newton, residual: barrier_weight / tau });
                }
                newton += 1;
                let (dx, decrement) = self.newton_step(&lp, &x, tau)?;
                if decrement.abs() < 1e-9 {
                    break;
                }
                let f0 = lp.value(&x, tau).ok_or_else(|| Error::Solver("iterate left the domain".into()))?;
                let mut step = 1.0;
                let accepted = loop {
                    let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + step * b).collect();
                    if let Some(f) = lp.value(&cand, tau) {
                        if f <= f0 - 0.25 * step * decrement {
                            break Some(cand);
                        }
                    }
                    step *= 0.5;
                    if step < 1e-14 {
                        break None;
                    }
                };
                match accepted {
                    Some(cand) => x = cand,
                    None => break,
                }
                if x[lp.nvar] < 0.0 {
                    return Ok(Feasibility::Feasible(lp.certificate(&x)));
                }
            }
            let gap = barrier_weight / tau;
            if x[lp.nvar] - gap > 0.0 || gap < self.tol {
                return Ok(Feasibility::Infeasible);
            }
            tau *= 10.0;
        }
    }
}

/// `min_{j,m} (1/ν_{j,m}) log2(1 + āᵀ(B̄_{j,j,m} − ā āᵀ)⁻¹ ā)`, the best rate
/// level each user could reach with neither noise nor inter-cell interference.
pub fn upper_bound_xi(problem: &MaxMinProblem) -> Result<f64> {
    let k_n = problem.users;
    let mut bound = f64::INFINITY;
    for j in 0..problem.cells {
        let d = equilibrate(&problem.c_bar[j]);
        for m in 0..k_n {
            let a = problem.a(j, m).component_mul(&d);
            if a.norm() == 0.0 {
                bound = 0.0;
                continue;
            }
            let mut cov = congruence(problem.b(j, j, m), &d) - &a * a.transpose();
            cov = (&cov + cov.transpose()) * 0.5;
            let scale = cov.diagonal().iter().fold(0.0f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);
            let q = match cov.clone().cholesky() {
                Some(ch) => a.dot(&ch.solve(&a)),
                None => {
                    let n = cov.nrows();
                    let reg = cov + RMat::identity(n, n) * (1e-12 * scale);
                    let ch = reg.cholesky().ok_or_else(|| Error::Singular(format!("B̄ − āāᵀ of user ({j}, {m})")))?;
                    a.dot(&ch.solve(&a))
                }
            };
            bound = bound.min(libm::log2(1.0 + q.max(0.0)) / problem.nu[j * k_n + m]);
        }
    }
    Ok(bound)
}

/// Result of the bisection.
#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub xi_star: f64,
    pub xi_max: f64,
    /// Last feasible certificate per cell.
    pub w_lifted: Vec<RMat>,
    /// Rank-one coefficients per cell, after [`refine_rank_one`].
    pub w: Vec<Vec<f64>>,
    /// `λ₂/λ₁` of each `W_ℓ` in `C̄`-whitened coordinates.
    pub rank_gap: Vec<f64>,
    /// Worst constraint slack of the certificate at `ξ*`.
    pub feasibility_margin: f64,
    pub iterations: usize,
}

/// Bisection with the default barrier backend.
pub fn bisection_solve(problem: &MaxMinProblem, epsilon: f64) -> Result<OptimizationResult> {
    bisection_solve_with(problem, epsilon, &BarrierSdp::default())
}

/// Bisection on `ξ ∈ [0, ξ_max]` until the bracket is narrower than `epsilon`.
pub fn bisection_solve_with<B: FeasibilityBackend + ?Sized>(
    problem: &MaxMinProblem,
    epsilon: f64,
    backend: &B,
) -> Result<OptimizationResult> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    problem.validate()?;
    let xi_max = upper_bound_xi(problem)?;
    let mut certificate = match backend.check(problem, 0.0)? {
        Feasibility::Feasible(w) => w,
        Feasibility::Infeasible => return Err(Error::Solver("zero rate level reported infeasible".into())),
    };
    let (mut lo, mut hi) = (0.0, xi_max);
    let mut iterations = 0;
    if xi_max > 0.0 {
        while hi - lo > epsilon {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            match backend.check(problem, mid)? {
                Feasibility::Feasible(w) => {
                    lo = mid;
                    certificate = w;
                }
                Feasibility::Infeasible => hi = mid,
            }
        }
    }
    let (w, rank_gap) = if xi_max > 0.0 {
        let (w, gap) = extract_rank_one(&certificate, problem)?;
        (refine_rank_one(problem, w, lo, REFINE_EVALS), gap)
    } else {
        // No user has a usable signal term: fall back to MRT.
        let w = (0..problem.cells)
            .map(|l| {
                let j = problem.orders[l];
                let c00 = problem.c_bar[l][(0, 0)];
                let mut v = vec![0.0; j];
                v[0] = if c00 > 0.0 { libm::sqrt(problem.power[l] / c00) } else { 1.0 };
                v
            })
            .collect();
        (w, vec![0.0; problem.cells])
    };
    let feasibility_margin = problem.feasibility_margin(lo, &certificate);
    Ok(OptimizationResult { xi_star: lo, xi_max, w_lifted: certificate, w, rank_gap, feasibility_margin, iterations })
}

/// Principal direction of each `W_ℓ` after whitening by `C̄_ℓ`, mapped back
/// and scaled to `wᵀ C̄ w = P`, signed so that `wᵀā` of the cell's first user
/// is nonnegative. Also returns `λ₂/λ₁` per cell.
pub fn extract_rank_one(w: &[RMat], problem: &MaxMinProblem) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut out = Vec::with_capacity(w.len());
    let mut gaps = Vec::with_capacity(w.len());
    for (l, wl) in w.iter().enumerate() {
        let c = &problem.c_bar[l];
        let (cev, cvec) = sym_eigen_desc(c);
        let floor = cev[0].abs() * 1e-14;
        let half = RMat::from_diagonal(&RVec::from_iterator(cev.len(), cev.iter().map(|&x| libm::sqrt(x.max(floor)))));
        let inv_half = RMat::from_diagonal(&RVec::from_iterator(cev.len(), cev.iter().map(|&x| 1.0 / libm::sqrt(x.max(floor)))));
        let root = &cvec * half * cvec.transpose();
        let inv_root = &cvec * inv_half * cvec.transpose();
        let white = &root * wl * &root;
        let (ev, vecs) = sym_eigen_desc(&white);
        if !(ev[0] > 0.0) {
            return Err(Error::ZeroPower(format!("W of cell {l} is zero")));
        }
        gaps.push(if ev.len() > 1 { ev[1].max(0.0) / ev[0] } else { 0.0 });
        let mut v = &inv_root * vecs.column(0);
        let q = v.dot(&(c * &v));
        v *= libm::sqrt(problem.power[l] / q);
        if v.dot(problem.a(l, 0)) < 0.0 {
            v = -v;
        }
        out.push(v.iter().copied().collect());
    }
    Ok((out, gaps))
}

/// Objective evaluations spent by [`refine_rank_one`] after extraction.
pub const REFINE_EVALS: usize = 20_000;

/// Compass search on the `C̄`-whitened unit sphere of every cell, started at
/// `w`, that raises the weighted min-rate until it reaches `target` or the
/// step falls below `1e-9`. Never returns a worse point than `w`.
pub fn refine_rank_one(problem: &MaxMinProblem, w: Vec<Vec<f64>>, target: f64, max_evals: usize) -> Vec<Vec<f64>> {
    let maps: Vec<(RMat, RMat)> = problem
        .c_bar
        .iter()
        .map(|c| {
            let (ev, vecs) = sym_eigen_desc(c);
            let floor = ev[0].abs() * 1e-14;
            let diag = |f: &dyn Fn(f64) -> f64| RMat::from_diagonal(&RVec::from_iterator(ev.len(), ev.iter().map(|&x| f(x.max(floor)))));
            (&vecs * diag(&libm::sqrt) * vecs.transpose(), &vecs * diag(&|x| 1.0 / libm::sqrt(x)) * vecs.transpose())
        })
        .collect();
    let to_w = |u: &[RVec]| -> Vec<Vec<f64>> {
        u.iter()
            .enumerate()
            .map(|(l, ul)| {
                let mut v = &maps[l].1 * ul;
                let q = v.dot(&(&problem.c_bar[l] * &v));
                v *= libm::sqrt(problem.power[l] / q);
                if v.dot(problem.a(l, 0)) < 0.0 {
                    v = -v;
                }
                v.iter().copied().collect()
            })
            .collect()
    };
    let mut u: Vec<RVec> = w
        .iter()
        .enumerate()
        .map(|(l, wl)| {
            let x = &maps[l].0 * RVec::from_column_slice(wl);
            let n = x.norm();
            x / n
        })
        .collect();
    let start = problem.weighted_min_rate(&w);
    let mut best = start;
    let mut step = 1e-2;
    let mut evals = 0;
    while best < target && step > 1e-9 && evals < max_evals {
        let mut improved = false;
        for l in 0..u.len() {
            for i in 0..u[l].len() {
                for sign in [1.0, -1.0] {
                    let mut cand = u.clone();
                    cand[l][i] += sign * step;
                    let n = cand[l].norm();
                    cand[l] /= n;
                    evals += 1;
                    let f = problem.weighted_min_rate(&to_w(&cand));
                    if f > best {
                        best = f;
                        u = cand;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    if best > start {
        to_w(&u)
    } else {
        w
    }
}

/// `ν_{j,m} = log2(1 + γ̄_{j,m})` of RZF, floored at `1e-6`.
pub fn rzf_mimic_weights(rzf: &RzfDetEq) -> Vec<f64> {
    rzf.gamma_bar.iter().map(|&g| libm::log2(1.0 + g).max(1e-6)).collect()
}
