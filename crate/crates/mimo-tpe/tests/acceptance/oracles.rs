use mimo_tpe::DropContext;
use mimo_tpe_core::channel::{compute_estimation_model, mmse_estimate, sample_channels, CovarianceFactors};
use mimo_tpe_core::detequiv::{derivative_tables, SinrModelTpe};
use mimo_tpe_core::linalg::{binomial, complex_normal_matrix};
use mimo_tpe_core::optimizer::{bisection_solve, BarrierSdp, Feasibility, FeasibilityBackend, MaxMinProblem};
use mimo_tpe_core::precoders::{mrt_precoder, normalize_tpe_power, rzf_precoder, tpe_precoder};
use mimo_tpe_core::rng::{stream, Purpose};
use mimo_tpe_core::scenario::{build_covariances, CovarianceSet, Geometry, ScenarioConfig};
use mimo_tpe_core::{CMat, C64};
use rand::Rng;

use crate::Outcome;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn tr(a: &CMat, b: &CMat) -> C64 {
    (a * b).trace()
}

fn random_psd(m: usize, rank: usize, scale: f64, rng: &mut impl Rng) -> CMat {
    let a = complex_normal_matrix(m, rank, rng);
    &a * a.adjoint() * c(scale / rank as f64)
}

/// Independent Picard solver for T(t) and δ(t); valid for small negative t.
fn fixed_point(t: f64, phis: &[&CMat]) -> (CMat, Vec<f64>) {
    let k = phis.len() as f64;
    let m = phis[0].nrows();
    let build = |delta: &[f64]| {
        let mut a = CMat::identity(m, m);
        for (p, d) in phis.iter().zip(delta) {
            a += *p * c(t / (k * (1.0 + t * d)));
        }
        a.try_inverse().unwrap()
    };
    let mut delta: Vec<f64> = phis.iter().map(|p| p.trace().re / k).collect();
    for _ in 0..1000 {
        let t_mat = build(&delta);
        let next: Vec<f64> = phis.iter().map(|p| tr(p, &t_mat).re / k).collect();
        let change = next.iter().zip(&delta).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        let scale = next.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        delta = next;
        if change <= 4.0 * f64::EPSILON * scale {
            break;
        }
    }
    (build(&delta), delta)
}

/// n-th derivative at zero by central differences, Richardson-extrapolated in h².
fn richardson<F: Fn(f64) -> Vec<f64>>(f: &F, n: usize, h0: f64, levels: usize) -> Vec<f64> {
    let diff = |h: f64| -> Vec<f64> {
        let mut acc: Vec<f64> = Vec::new();
        for i in 0..=n {
            let w = if i % 2 == 0 { 1.0 } else { -1.0 } * binomial(n, i) / h.powi(n as i32);
            let v = f((n as f64 / 2.0 - i as f64) * h);
            acc.resize(v.len(), 0.0);
            for (a, x) in acc.iter_mut().zip(v) {
                *a += w * x;
            }
        }
        acc
    };
    let mut prev_row: Vec<Vec<f64>> = Vec::new();
    for i in 0..levels {
        let mut row = vec![diff(h0 / 2f64.powi(i as i32))];
        for j in 1..=i {
            let fac = 4f64.powi(j as i32) - 1.0;
            let next = row[j - 1].iter().zip(&prev_row[j - 1]).map(|(a, b)| a + (a - b) / fac).collect();
            row.push(next);
        }
        prev_row = row;
    }
    prev_row.pop().unwrap()
}

fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = want.iter().map(|b| b * b).sum();
    (num / den.max(1e-300)).sqrt()
}

pub fn derivative_recursion() -> Outcome {
    const MAX_ORDER: usize = 5;
    let mut worst = [0.0f64; 4];
    for instance in 0..20u64 {
        let mut rng = stream(2024, Purpose::Test, instance, 0);
        let m = rng.gen_range(16..=64);
        let k = rng.gen_range(4..=16);
        let mut mats = Vec::new();
        for l in 0..2 {
            for j in 0..2 {
                for _ in 0..2 {
                    mats.push(random_psd(m, m / 2, if l == j { 1.0 } else { 0.3 }, &mut rng));
                }
            }
        }
        let groups = vec![(0..k).map(|u| u % 2).collect::<Vec<_>>(); 2];
        let covs = CovarianceSet::from_groups(2, k, groups, mats).unwrap();
        let est = compute_estimation_model(&covs, 4.0).unwrap();
        let model = SinrModelTpe::build(&covs, &est, 0.1, &[3, 3]).unwrap();
        let own = est.own_phis(0);
        let table = derivative_tables(&own, MAX_ORDER).unwrap();
        let lambda: f64 = own.iter().map(|p| p.trace().re).sum::<f64>() / k as f64;
        let user = 1;
        let r = covs.get(0, 1, user);
        let cross = est.phi(0, 1, user);
        let closed = |t: f64| -> Vec<f64> {
            let (t_mat, delta) = fixed_point(t, &own);
            let d = delta[user];
            let p = tr(cross, &t_mat) / k as f64;
            let z = tr(r, &t_mat).re / k as f64 - t * p.norm_sqr() / (1.0 + t * d);
            let mut v: Vec<f64> = t_mat.iter().flat_map(|e| [e.re, e.im]).collect();
            v.extend([d, d / (1.0 + t * d), z]);
            v
        };
        for n in 1..=MAX_ORDER {
            let fd = richardson(&closed, n, 0.4 / lambda, 4);
            let nt = 2 * m * m;
            let t_lib: Vec<f64> = table.t_n[n].iter().flat_map(|e| [e.re, e.im]).collect();
            let errs = [
                rel_err(&t_lib, &fd[..nt]),
                rel_err(&[table.delta_n[n][user]], &[fd[nt]]),
                rel_err(&[model.xbar[user][n]], &[fd[nt + 1]]),
                rel_err(&[model.zbar[k + user][n]], &[fd[nt + 2]]),
            ];
            for (w, e) in worst.iter_mut().zip(errs) {
                *w = w.max(e);
            }
        }
    }
    let pass = worst.iter().all(|&e| e < 1e-4);
    Outcome::new(pass, format!("worst rel. error T/delta/X/Z = {:.1e}/{:.1e}/{:.1e}/{:.1e} (< 1e-4)", worst[0], worst[1], worst[2], worst[3]))
}

fn resolvent(h: &CMat, t: f64, k: usize) -> CMat {
    let m = h.nrows();
    (h * h.adjoint() * c(t / k as f64) + CMat::identity(m, m)).try_inverse().unwrap()
}

pub fn resolvent_identity() -> Outcome {
    let (m, k) = (32, 8);
    let mut worst: f64 = 0.0;
    for inst in 0..100 {
        let mut rng = stream(2025, Purpose::Test, inst, 0);
        let h = complex_normal_matrix(m, k, &mut rng);
        let t: f64 = rng.gen_range(0.1..5.0);
        let col = rng.gen_range(0..k);
        let hk = h.column(col).into_owned();
        let q = resolvent(&h, t, k);
        let qk = resolvent(&h.clone().remove_column(col), t, k);
        let qh = &qk * &hk;
        let denom = c(1.0) + (hk.adjoint() * &qh)[(0, 0)] * c(t / k as f64);
        let update = &qk - &qh * qh.adjoint() * (c(t / k as f64) / denom);
        let column = &qh / denom;
        worst = worst.max((&q - update).camax()).max((&q * &hk - column).camax());
    }
    Outcome::new(worst <= 1e-12, format!("max entry error {worst:.1e} over 100 instances (<= 1e-12)"))
}

pub fn table_convergence() -> Outcome {
    let (m, k, order) = (128, 32, 3);
    let mut rng = stream(2026, Purpose::Test, 1, 0);
    let covs = CovarianceSet::single_cell(
        (0..k).map(|_| random_psd(m, m, 1.0, &mut rng) * c(rng.gen_range(0.2..1.0))).collect(),
    )
    .unwrap();
    let est = compute_estimation_model(&covs, 10.0).unwrap();
    let model = SinrModelTpe::build(&covs, &est, 0.1, &[order]).unwrap();
    let factors = CovarianceFactors::new(&covs).unwrap();
    let mut rng = stream(2026, Purpose::Test, 0, 0);
    let draws = 500;
    let mut a_acc = vec![vec![0.0; order]; k];
    let mut b_acc = vec![vec![0.0; 2 * order - 1]; k];
    for t in 0..draws {
        let d = sample_channels(&factors, t, &mut rng);
        let hat = mmse_estimate(&d, &est, &mut rng);
        let hh = hat.cell(0);
        let apply = |v: &CMat| hh * (hh.adjoint() * v) * c(1.0 / k as f64);
        for u in 0..k {
            let h = d.block(0, 0).columns(u, 1).into_owned();
            let mut vh = hh.columns(u, 1).into_owned();
            let mut vt = h.clone();
            for n in 0..2 * order - 1 {
                if n < order {
                    a_acc[u][n] += (h.adjoint() * &vh)[(0, 0)].re / k as f64;
                    vh = apply(&vh);
                }
                vt = apply(&vt);
                b_acc[u][n] += (h.adjoint() * &vt)[(0, 0)].re / k as f64;
            }
        }
    }
    let (mut worst_a, mut worst_b) = (0.0f64, 0.0f64);
    for u in 0..k {
        let (a, b) = (model.a(0, u), model.b(0, 0, u));
        for n in 0..order {
            worst_a = worst_a.max((a_acc[u][n] / draws as f64 - a[n]).abs() / a[n].abs());
            for p in 0..order {
                worst_b = worst_b.max((b_acc[u][n + p] / draws as f64 - b[(n, p)]).abs() / b[(n, p)].abs());
            }
        }
    }
    Outcome::new(worst_a < 0.05 && worst_b < 0.07, format!("worst a {worst_a:.3} (< 0.05), B {worst_b:.3} (< 0.07)"))
}

fn grid_problem(seed: u64) -> MaxMinProblem {
    let (users, m) = (4, 16);
    let mut rng = stream(seed, Purpose::Test, 0, 0);
    let mats = (0..users)
        .map(|_| random_psd(m, m, rng.gen_range(0.3..1.0), &mut rng))
        .collect();
    let covs = CovarianceSet::single_cell(mats).unwrap();
    let est = compute_estimation_model(&covs, 10.0).unwrap();
    let model = SinrModelTpe::build(&covs, &est, 0.1, &[2]).unwrap();
    let nu = (0..users).map(|_| rng.gen_range(0.5..2.0)).collect();
    MaxMinProblem::from_model(&model, nu, vec![1.0]).unwrap()
}

/// Best weighted min-rate over 10⁴ full-power directions of a two-coefficient cell.
fn grid_search(p: &MaxMinProblem) -> f64 {
    let cb = &p.c_bar[0];
    let points = 10_000;
    (0..points)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / points as f64;
            let (x, y) = (th.cos(), th.sin());
            let q = cb[(0, 0)] * x * x + 2.0 * cb[(0, 1)] * x * y + cb[(1, 1)] * y * y;
            let s = (p.power[0] / q).sqrt();
            p.weighted_min_rate(&[vec![s * x, s * y]])
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn optimizer_grid() -> Outcome {
    let backend = BarrierSdp::default();
    let (mut worst_gap, mut zero_ok, mut monotone) = (0.0f64, true, true);
    for seed in 0..10 {
        let p = grid_problem(5000 + seed);
        let r = bisection_solve(&p, 1e-3).unwrap();
        worst_gap = worst_gap.max((p.weighted_min_rate(&r.w) - grid_search(&p)).abs());
        zero_ok &= matches!(backend.check(&p, 0.0).unwrap(), Feasibility::Feasible(_));
        let mut seen_infeasible = false;
        for i in 0..20 {
            let xi = 1.2 * r.xi_max * i as f64 / 19.0;
            match backend.check(&p, xi).unwrap() {
                Feasibility::Feasible(_) => monotone &= !seen_infeasible,
                Feasibility::Infeasible => seen_infeasible = true,
            }
        }
    }
    Outcome::new(
        worst_gap < 1e-2 && zero_ok && monotone,
        format!("worst gap to grid {worst_gap:.2e} bit (< 1e-2), zero level feasible: {zero_ok}, monotone: {monotone}"),
    )
}

pub fn power_contracts() -> Outcome {
    let config = ScenarioConfig::default().broadcast();
    let ctx = DropContext::new(&config, 0, mimo_tpe::PhiRule::Fixed).unwrap();
    let power = |g: &CMat| g.norm_squared() / g.ncols() as f64;
    let mut exact_err: f64 = 0.0;
    for t in 0..20 {
        let (_, est) = ctx.trial(t);
        for l in 0..config.cells {
            let h = est.cell(l);
            let p = config.power[l];
            exact_err = exact_err
                .max((power(&rzf_precoder(h, ctx.phi[l], p).unwrap().g) - p).abs() / p)
                .max((power(&mrt_precoder(h, p).unwrap().g) - p).abs() / p);
        }
    }

    let big = ScenarioConfig { cells: 1, users: 64, antennas: 256, ..ScenarioConfig::default() }.broadcast();
    let geo = Geometry::for_drop(&big, 0).unwrap();
    let covs = build_covariances(&big, &geo).unwrap();
    let est = compute_estimation_model(&covs, big.rho_tr).unwrap();
    let model = SinrModelTpe::build(&covs, &est, big.noise_variance(), &[4]).unwrap();
    let w = normalize_tpe_power(&[1.0, -0.8, 0.3, -0.05], model.c(0), 1.0).unwrap();
    let factors = CovarianceFactors::new(&covs).unwrap();
    let trials = 20;
    let mut total = 0.0;
    for t in 0..trials {
        let mut rng = stream(11, Purpose::Channel, 0, t);
        let draw = sample_channels(&factors, t, &mut rng);
        let hat = mmse_estimate(&draw, &est, &mut rng);
        total += power(&tpe_precoder(hat.cell(0), &w).unwrap().g);
    }
    let tpe_err = (total / trials as f64 - 1.0).abs();
    Outcome::new(
        exact_err <= 1e-10 && tpe_err < 0.05,
        format!("RZF/MRT worst rel. error {exact_err:.1e} (<= 1e-10), TPE mean power error {:.2}% (< 5%)", 100.0 * tpe_err),
    )
}
