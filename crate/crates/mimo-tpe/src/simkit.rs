//! Monte-Carlo evaluation and experiment orchestration.
//!
//! Every scheme in a drop is simulated on the same channel realizations and
//! pilot noise, so differences between schemes are not blurred by sampling.

use mimo_tpe_core::channel::{
    compute_estimation_model, mmse_estimate, sample_channels, CovarianceFactors, EstimateSet, EstimationModel,
};
use mimo_tpe_core::detequiv::{rzf_sinr_detequiv, tpe_sinr_detequiv, SinrModelTpe};
use mimo_tpe_core::optimizer::{bisection_solve, rzf_mimic_weights, MaxMinProblem};
use mimo_tpe_core::precoders::{
    default_kappa, mrt_precoder, normalize_tpe_power, rzf_precoder, taylor_initial_coeffs, tpe_precoder,
};
use mimo_tpe_core::rng::{stream, Purpose};
use mimo_tpe_core::scenario::{build_covariances, CovarianceSet, Geometry, ScenarioConfig};
use mimo_tpe_core::sinr::{rate, SinrAccumulator};
use mimo_tpe_core::CMat;

use crate::config::{CoefficientMode, ExperimentConfig, PhiRule, RunConfig};
use crate::error::{Result, SimError, Stage, StageExt};

pub use mimo_tpe_core::sinr::average_rate;

/// Per-cell RZF regularization for a rule.
pub fn resolve_phi(config: &ScenarioConfig, rule: PhiRule) -> Vec<f64> {
    match rule {
        PhiRule::Fixed => config.phi.clone(),
        PhiRule::NoiseScaled => {
            vec![config.antennas as f64 * config.noise_variance() / config.users as f64; config.cells]
        }
    }
}

/// Everything about one user drop that does not depend on the precoder.
#[derive(Debug, Clone)]
pub struct DropContext {
    pub config: ScenarioConfig,
    pub drop: u64,
    pub covs: CovarianceSet,
    pub est: EstimationModel,
    pub factors: CovarianceFactors,
    pub sigma2: f64,
    pub phi: Vec<f64>,
}

impl DropContext {
    pub fn new(config: &ScenarioConfig, drop: u64, rule: PhiRule) -> Result<Self> {
        let where_ = || format!("drop {drop}");
        let geometry = Geometry::for_drop(config, drop).at(Stage::Geometry, where_)?;
        let covs = build_covariances(config, &geometry).at(Stage::Covariance, where_)?;
        Self::from_covariances(config, drop, rule, covs)
    }

    /// Context over given covariances; `config` supplies sizes, SNRs and seed.
    pub fn from_covariances(config: &ScenarioConfig, drop: u64, rule: PhiRule, covs: CovarianceSet) -> Result<Self> {
        let where_ = || format!("drop {drop}");
        let est = compute_estimation_model(&covs, config.rho_tr).at(Stage::Estimation, where_)?;
        let factors = CovarianceFactors::new(&covs).at(Stage::Covariance, where_)?;
        Ok(Self {
            config: config.clone(),
            drop,
            covs,
            est,
            factors,
            sigma2: config.noise_variance(),
            phi: resolve_phi(config, rule),
        })
    }

    fn cells(&self) -> usize {
        self.covs.cells
    }

    fn users(&self) -> usize {
        self.covs.users
    }

    /// Channels and estimates of one trial. Channel and pilot noise come from
    /// separate streams keyed by `(seed, drop, trial)`.
    pub fn trial(&self, trial: u64) -> (mimo_tpe_core::channel::ChannelDraw, EstimateSet) {
        let mut channel_rng = stream(self.config.seed, Purpose::Channel, self.drop, trial);
        let draw = sample_channels(&self.factors, trial, &mut channel_rng);
        let mut pilot_rng = stream(self.config.seed, Purpose::PilotNoise, self.drop, trial);
        let estimate = mmse_estimate(&draw, &self.est, &mut pilot_rng);
        (draw, estimate)
    }
}

/// Builds one precoding matrix per cell from the channel estimates.
pub type PrecoderFactory<'a> = dyn Fn(&EstimateSet) -> mimo_tpe_core::Result<Vec<CMat>> + 'a;

/// Empirical SINR of one precoder family.
#[derive(Debug, Clone)]
pub struct SinrEstimate {
    /// `γ_{j,m}` at `[j * K + m]`.
    pub gamma: Vec<f64>,
    /// Jackknife standard error of the network-average rate.
    pub rate_stderr: f64,
    pub trials: usize,
}

/// Runs `n_trials` trials and evaluates every factory on each of them.
pub fn empirical_sinr(ctx: &DropContext, factories: &[&PrecoderFactory], n_trials: usize) -> Result<Vec<SinrEstimate>> {
    if n_trials < 2 {
        return Err(SimError::Config(format!("need at least 2 trials, got {n_trials}")));
    }
    let mut accs: Vec<SinrAccumulator> =
        factories.iter().map(|_| SinrAccumulator::new(ctx.cells(), ctx.users(), ctx.sigma2)).collect();
    for t in 0..n_trials {
        let (draw, estimate) = ctx.trial(t as u64);
        for (acc, factory) in accs.iter_mut().zip(factories) {
            let where_ = || format!("drop {}, trial {t}", ctx.drop);
            let g = factory(&estimate).at(Stage::Simulation, where_)?;
            acc.add_trial(t, &draw, &g).at(Stage::Simulation, where_)?;
        }
    }
    Ok(accs
        .iter()
        .map(|acc| SinrEstimate { gamma: acc.sinr(), rate_stderr: acc.jackknife(average_rate), trials: acc.trials() })
        .collect())
}

/// Precoding scheme of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Rzf,
    Mrt,
    Tpe { order: usize },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Rzf => "RZF",
            Scheme::Mrt => "MRT",
            Scheme::Tpe { .. } => "TPE",
        }
    }

    /// Polynomial order; 0 for RZF.
    pub fn order(&self) -> usize {
        match self {
            Scheme::Rzf => 0,
            Scheme::Mrt => 1,
            Scheme::Tpe { order } => *order,
        }
    }
}

/// A scheme fixed for one drop, with its deterministic SINR.
#[derive(Debug, Clone)]
pub struct Design {
    pub scheme: Scheme,
    /// TPE coefficients per cell; empty for RZF and MRT.
    pub w: Vec<Vec<f64>>,
    pub gamma_det: Vec<f64>,
    pub xi_star: Option<f64>,
    /// Largest `λ₂/λ₁` over cells of the relaxed solution.
    pub rank_gap: Option<f64>,
}

impl Design {
    pub fn precoders(&self, ctx: &DropContext, estimate: &EstimateSet) -> mimo_tpe_core::Result<Vec<CMat>> {
        (0..ctx.cells())
            .map(|l| {
                let h = estimate.cell(l);
                let p = ctx.config.power[l];
                Ok(match self.scheme {
                    Scheme::Rzf => rzf_precoder(h, ctx.phi[l], p)?.g,
                    Scheme::Mrt => mrt_precoder(h, p)?.g,
                    Scheme::Tpe { .. } => tpe_precoder(h, &self.w[l])?.g,
                })
            })
            .collect()
    }
}

fn flatten(gamma: Vec<Vec<f64>>) -> Vec<f64> {
    gamma.into_iter().flatten().collect()
}

/// Series parameters `κ_ℓ` from one calibration estimate, drawn on a stream
/// disjoint from the evaluation trials.
fn calibrate_kappa(ctx: &DropContext) -> Vec<f64> {
    let mut rng = stream(ctx.config.seed, Purpose::Calibration, ctx.drop, 0);
    let draw = sample_channels(&ctx.factors, 0, &mut rng);
    let estimate = mmse_estimate(&draw, &ctx.est, &mut rng);
    (0..ctx.cells()).map(|l| default_kappa(estimate.cell(l), ctx.phi[l])).collect()
}

/// Fixes RZF, optionally MRT, and TPE of every configured order for a drop.
pub fn design_schemes(ctx: &DropContext, exp: &ExperimentConfig) -> Result<Vec<Design>> {
    let drop = ctx.drop;
    let (l_n, power) = (ctx.cells(), &ctx.config.power);
    let rzf = rzf_sinr_detequiv(&ctx.covs, &ctx.est, &ctx.phi, ctx.sigma2, power)
        .at(Stage::DetEquiv, || format!("RZF, drop {drop}"))?;
    let mut designs = vec![Design {
        scheme: Scheme::Rzf,
        w: Vec::new(),
        gamma_det: rzf.gamma_bar.clone(),
        xi_star: None,
        rank_gap: None,
    }];
    let max_order = exp.orders.iter().copied().max().unwrap_or(1);
    let full = SinrModelTpe::build(&ctx.covs, &ctx.est, ctx.sigma2, &vec![max_order; l_n])
        .at(Stage::DetEquiv, || format!("TPE tables, drop {drop}"))?;
    if exp.include_mrt {
        let model = full.truncated(&vec![1; l_n]).at(Stage::DetEquiv, || format!("MRT, drop {drop}"))?;
        let w: Vec<Vec<f64>> = (0..l_n)
            .map(|l| normalize_tpe_power(&[1.0], model.c(l), power[l]))
            .collect::<mimo_tpe_core::Result<_>>()
            .at(Stage::DetEquiv, || format!("MRT, drop {drop}"))?;
        let gamma = tpe_sinr_detequiv(&model, &w).at(Stage::DetEquiv, || format!("MRT, drop {drop}"))?;
        designs.push(Design { scheme: Scheme::Mrt, w: Vec::new(), gamma_det: flatten(gamma), xi_star: None, rank_gap: None });
    }
    let kappa = match exp.coefficients {
        CoefficientMode::Taylor => calibrate_kappa(ctx),
        CoefficientMode::Optimized => Vec::new(),
    };
    let nu = rzf_mimic_weights(&rzf);
    for &order in &exp.orders {
        let where_ = || format!("TPE J={order}, drop {drop}");
        let model = full.truncated(&vec![order; l_n]).at(Stage::DetEquiv, where_)?;
        let (w, xi_star, rank_gap) = match exp.coefficients {
            CoefficientMode::Optimized => {
                let problem = MaxMinProblem::from_model(&model, nu.clone(), power.clone()).at(Stage::Optimizer, where_)?;
                let r = bisection_solve(&problem, exp.epsilon).at(Stage::Optimizer, where_)?;
                let gap = r.rank_gap.iter().copied().fold(0.0, f64::max);
                (r.w, Some(r.xi_star), Some(gap))
            }
            CoefficientMode::Taylor => {
                let w = (0..l_n)
                    .map(|l| {
                        let series = taylor_initial_coeffs(order, 1.0, ctx.phi[l], kappa[l]);
                        normalize_tpe_power(&series, model.c(l), power[l])
                    })
                    .collect::<mimo_tpe_core::Result<Vec<_>>>()
                    .at(Stage::DetEquiv, where_)?;
                (w, None, None)
            }
        };
        let gamma = tpe_sinr_detequiv(&model, &w).at(Stage::DetEquiv, where_)?;
        designs.push(Design { scheme: Scheme::Tpe { order }, w, gamma_det: flatten(gamma), xi_star, rank_gap });
    }
    Ok(designs)
}

/// Empirical against deterministic performance of one scheme.
#[derive(Debug, Clone)]
pub struct SinrReport {
    pub scheme: Scheme,
    pub gamma_emp: Vec<f64>,
    pub gamma_det: Vec<f64>,
    pub rate_emp: Vec<f64>,
    pub rate_det: Vec<f64>,
    pub avg_rate_emp: f64,
    pub avg_rate_det: f64,
    /// Mean over drops of the worst user's empirical rate.
    pub min_rate_emp: f64,
    pub n_trials: usize,
    pub n_drops: usize,
    pub stderr: f64,
    /// Mean over drops of the optimized level, when optimized.
    pub xi_star: Option<f64>,
}

impl SinrReport {
    fn new(design: &Design, emp: &SinrEstimate) -> Self {
        let rate_emp: Vec<f64> = emp.gamma.iter().map(|&g| rate(g)).collect();
        let rate_det: Vec<f64> = design.gamma_det.iter().map(|&g| rate(g)).collect();
        Self {
            scheme: design.scheme,
            avg_rate_emp: average_rate(&emp.gamma),
            avg_rate_det: average_rate(&design.gamma_det),
            min_rate_emp: rate_emp.iter().copied().fold(f64::INFINITY, f64::min),
            gamma_emp: emp.gamma.clone(),
            gamma_det: design.gamma_det.clone(),
            rate_emp,
            rate_det,
            n_trials: emp.trials,
            n_drops: 1,
            stderr: emp.rate_stderr,
            xi_star: design.xi_star,
        }
    }

    /// Pools drops of the same scheme; per-user vectors are concatenated.
    pub fn merge(parts: &[SinrReport]) -> Option<SinrReport> {
        let first = parts.first()?;
        let n = parts.len() as f64;
        let mean = |f: &dyn Fn(&SinrReport) -> f64| parts.iter().map(f).sum::<f64>() / n;
        let cat = |f: &dyn Fn(&SinrReport) -> &Vec<f64>| parts.iter().flat_map(|p| f(p).iter().copied()).collect::<Vec<_>>();
        let xi: Vec<f64> = parts.iter().filter_map(|p| p.xi_star).collect();
        Some(SinrReport {
            scheme: first.scheme,
            gamma_emp: cat(&|p| &p.gamma_emp),
            gamma_det: cat(&|p| &p.gamma_det),
            rate_emp: cat(&|p| &p.rate_emp),
            rate_det: cat(&|p| &p.rate_det),
            avg_rate_emp: mean(&|p| p.avg_rate_emp),
            avg_rate_det: mean(&|p| p.avg_rate_det),
            min_rate_emp: mean(&|p| p.min_rate_emp),
            n_trials: first.n_trials,
            n_drops: parts.iter().map(|p| p.n_drops).sum(),
            stderr: parts.iter().map(|p| p.stderr * p.stderr).sum::<f64>().sqrt() / n,
            xi_star: (xi.len() == parts.len()).then(|| xi.iter().sum::<f64>() / n),
        })
    }
}

/// Designs and simulates every scheme of one drop.
pub fn evaluate_drop(ctx: &DropContext, exp: &ExperimentConfig, n_trials: usize) -> Result<Vec<SinrReport>> {
    let designs = design_schemes(ctx, exp)?;
    let closures: Vec<Box<PrecoderFactory>> = designs
        .iter()
        .map(|d| Box::new(move |e: &EstimateSet| d.precoders(ctx, e)) as Box<PrecoderFactory>)
        .collect();
    let factories: Vec<&PrecoderFactory> = closures.iter().map(|b| b.as_ref()).collect();
    let emp = empirical_sinr(ctx, &factories, n_trials)?;
    Ok(designs.iter().zip(&emp).map(|(d, e)| SinrReport::new(d, e)).collect())
}

/// Evaluates all drops of a configuration and pools them per scheme.
pub fn evaluate_point(cfg: &RunConfig) -> Result<Vec<SinrReport>> {
    let mut per_scheme: Vec<Vec<SinrReport>> = Vec::new();
    for drop in 0..cfg.scenario.n_drops as u64 {
        let ctx = DropContext::new(&cfg.scenario, drop, cfg.experiment.phi_rule)?;
        let reports = evaluate_drop(&ctx, &cfg.experiment, cfg.scenario.n_trials)?;
        if per_scheme.is_empty() {
            per_scheme = reports.into_iter().map(|r| vec![r]).collect();
        } else {
            for (acc, r) in per_scheme.iter_mut().zip(reports) {
                acc.push(r);
            }
        }
    }
    Ok(per_scheme.iter().filter_map(|parts| SinrReport::merge(parts)).collect())
}

/// One-parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    Antennas(Vec<usize>),
    Phi(Vec<f64>),
    RhoTrDb(Vec<f64>),
    Order(Vec<usize>),
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::Antennas(_) => "M",
            Sweep::Phi(_) => "phi",
            Sweep::RhoTrDb(_) => "rho_tr_db",
            Sweep::Order(_) => "J",
        }
    }

    fn points(&self) -> Vec<f64> {
        match self {
            Sweep::Antennas(v) | Sweep::Order(v) => v.iter().map(|&x| x as f64).collect(),
            Sweep::Phi(v) | Sweep::RhoTrDb(v) => v.clone(),
        }
    }

    /// The configuration at sweep point `i`.
    pub fn apply(&self, base: &RunConfig, i: usize) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            Sweep::Antennas(v) => cfg.scenario.antennas = v[i],
            Sweep::Phi(v) => {
                cfg.scenario.phi = vec![v[i]; cfg.scenario.cells];
                cfg.experiment.phi_rule = PhiRule::Fixed;
            }
            Sweep::RhoTrDb(v) => cfg.scenario.rho_tr = 10f64.powf(v[i] / 10.0),
            Sweep::Order(v) => cfg.experiment.orders = vec![v[i]],
        }
        cfg
    }
}

/// One CSV line: a scheme at one sweep point, pooled over drops.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub sweep_name: String,
    pub sweep_value: f64,
    pub scheme: String,
    pub order: usize,
    pub drop_count: usize,
    pub trial_count: usize,
    pub avg_rate_emp: f64,
    pub avg_rate_det: f64,
    pub stderr: f64,
    pub min_rate_emp: f64,
    pub xi_star: Option<f64>,
}

impl CsvRow {
    pub fn new(sweep_name: &str, sweep_value: f64, r: &SinrReport) -> Self {
        Self {
            sweep_name: sweep_name.to_string(),
            sweep_value,
            scheme: r.scheme.name().to_string(),
            order: r.scheme.order(),
            drop_count: r.n_drops,
            trial_count: r.n_trials,
            avg_rate_emp: r.avg_rate_emp,
            avg_rate_det: r.avg_rate_det,
            stderr: r.stderr,
            min_rate_emp: r.min_rate_emp,
            xi_star: r.xi_star,
        }
    }
}

/// Runs every point of `sweep` and returns one row per (point, scheme).
pub fn run_experiment(cfg: &RunConfig, sweep: &Sweep) -> Result<Vec<CsvRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (i, value) in sweep.points().into_iter().enumerate() {
        let point = sweep.apply(cfg, i);
        point.validate()?;
        let reports = evaluate_point(&point).map_err(|e| tag_point(e, sweep.name(), value))?;
        rows.extend(reports.iter().map(|r| CsvRow::new(sweep.name(), value, r)));
    }
    Ok(rows)
}

fn tag_point(err: SimError, name: &str, value: f64) -> SimError {
    match err {
        SimError::Core { stage, context, source } => {
            SimError::Core { stage, context: format!("{name}={value}, {context}"), source }
        }
        other => other,
    }
}

/// Empirical against deterministic rates of RZF and TPE `J = 5` with
/// `φ = Mσ²/K`, one row per scheme and antenna count.
pub fn theory_vs_empirical(cfg: &RunConfig, m_list: &[usize]) -> Result<Vec<CsvRow>> {
    let mut base = cfg.clone();
    base.experiment.phi_rule = PhiRule::NoiseScaled;
    base.experiment.orders = vec![5];
    base.experiment.include_mrt = false;
    run_experiment(&base, &Sweep::Antennas(m_list.to_vec()))
}

/// Optimizer output of one drop and order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRow {
    pub drop: u64,
    pub order: usize,
    pub xi_star: f64,
    pub xi_max: f64,
    pub rank_gap: f64,
    pub feasibility_margin: f64,
    pub iterations: usize,
    pub w: Vec<Vec<f64>>,
}

/// Solves the max-min problem for every drop and order without simulating.
pub fn optimize_only(cfg: &RunConfig) -> Result<Vec<OptimizerRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for drop in 0..cfg.scenario.n_drops as u64 {
        let ctx = DropContext::new(&cfg.scenario, drop, cfg.experiment.phi_rule)?;
        let l_n = ctx.cells();
        let power = &ctx.config.power;
        let rzf = rzf_sinr_detequiv(&ctx.covs, &ctx.est, &ctx.phi, ctx.sigma2, power)
            .at(Stage::DetEquiv, || format!("RZF, drop {drop}"))?;
        let nu = rzf_mimic_weights(&rzf);
        let max_order = cfg.experiment.orders.iter().copied().max().unwrap_or(1);
        let full = SinrModelTpe::build(&ctx.covs, &ctx.est, ctx.sigma2, &vec![max_order; l_n])
            .at(Stage::DetEquiv, || format!("TPE tables, drop {drop}"))?;
        for &order in &cfg.experiment.orders {
            let where_ = || format!("TPE J={order}, drop {drop}");
            let model = full.truncated(&vec![order; l_n]).at(Stage::DetEquiv, where_)?;
            let problem = MaxMinProblem::from_model(&model, nu.clone(), power.clone()).at(Stage::Optimizer, where_)?;
            let r = bisection_solve(&problem, cfg.experiment.epsilon).at(Stage::Optimizer, where_)?;
            rows.push(OptimizerRow {
                drop,
                order,
                xi_star: r.xi_star,
                xi_max: r.xi_max,
                rank_gap: r.rank_gap.iter().copied().fold(0.0, f64::max),
                feasibility_margin: r.feasibility_margin,
                iterations: r.iterations,
                w: r.w,
            });
        }
    }
    Ok(rows)
}
