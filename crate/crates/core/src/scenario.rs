//! Multi-cell layout and channel covariance synthesis.
//!
//! All base stations of a site are co-located at the origin. Cell `j` points
//! its boresight at `90° + j·360°/L` and serves a sector of width
//! `min(120°, 360°/L)` of the annulus `[r_inner, r_outer]`. Users are split
//! round-robin into `G` groups per cell; all users of a group share a location
//! and therefore a covariance matrix towards every base station.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::quadrature::GaussLegendre;
use crate::rng::{self, Purpose};
use crate::{CMat, Error, Result, C64};

/// Gauss–Legendre nodes used for the one-ring integral.
pub const QUADRATURE_NODES: usize = 256;

/// Every physical and numerical parameter of a run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScenarioConfig {
    /// Number of cells (and base stations).
    #[cfg_attr(feature = "serde", serde(rename = "L"))]
    pub cells: usize,
    /// Users per cell.
    #[cfg_attr(feature = "serde", serde(rename = "K"))]
    pub users: usize,
    /// Antennas per base station.
    #[cfg_attr(feature = "serde", serde(rename = "M"))]
    pub antennas: usize,
    /// User groups per cell.
    #[cfg_attr(feature = "serde", serde(rename = "G"))]
    pub groups: usize,
    /// Annulus radii in meters.
    pub r_inner: f64,
    pub r_outer: f64,
    pub delta_pl: f64,
    /// Pathloss reference distance in meters.
    pub d0: f64,
    /// Half-power beamwidth in degrees.
    pub theta_3db: f64,
    /// Antenna spacing in wavelengths.
    pub ant_spacing: f64,
    /// One-ring azimuth half-spread in radians.
    pub ang_spread: f64,
    /// Effective training SNR (linear).
    pub rho_tr: f64,
    /// Downlink SNR `P/σ²` (linear).
    pub rho_dl: f64,
    /// Per-user transmit power, one entry per cell.
    #[cfg_attr(feature = "serde", serde(rename = "P"))]
    pub power: Vec<f64>,
    /// TPE order, one entry per cell.
    #[cfg_attr(feature = "serde", serde(rename = "J"))]
    pub tpe_order: Vec<usize>,
    /// RZF regularization, one entry per cell.
    pub phi: Vec<f64>,
    pub seed: u64,
    pub n_drops: usize,
    pub n_trials: usize,
}

impl Default for ScenarioConfig {
    /// The three-sector site of the reference deployment: `L = 3`, `K = 40`,
    /// `M = 160`, two groups, 15 dB training SNR and 10 dB downlink SNR.
    fn default() -> Self {
        let cells = 3;
        Self {
            cells,
            users: 40,
            antennas: 160,
            groups: 2,
            r_inner: 35.0,
            r_outer: 250.0,
            delta_pl: 3.7,
            d0: 30.0,
            theta_3db: 70.0,
            ant_spacing: 0.5,
            ang_spread: 10.0f64.to_radians(),
            rho_tr: libm::pow(10.0, 1.5),
            rho_dl: 10.0,
            power: alloc::vec![1.0; cells],
            tpe_order: alloc::vec![5; cells],
            phi: alloc::vec![0.1; cells],
            seed: 1,
            n_drops: 10,
            n_trials: 500,
        }
    }
}

impl ScenarioConfig {
    /// Resizes the per-cell lists `P`, `J`, `φ` to `L` entries by repeating
    /// their first value when they do not already have one entry per cell.
    pub fn broadcast(mut self) -> Self {
        fn fill<T: Clone>(v: &mut Vec<T>, n: usize) {
            if v.len() != n {
                if let Some(first) = v.first().cloned() {
                    *v = alloc::vec![first; n];
                }
            }
        }
        fill(&mut self.power, self.cells);
        fill(&mut self.tpe_order, self.cells);
        fill(&mut self.phi, self.cells);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.cells == 0 || self.users == 0 || self.antennas == 0 || self.groups == 0 {
            return bad(format!(
                "L, K, M, G must be positive (got {}, {}, {}, {})",
                self.cells, self.users, self.antennas, self.groups
            ));
        }
        if !self.users.is_multiple_of(self.groups) {
            return bad(format!("K = {} is not divisible by G = {}", self.users, self.groups));
        }
        if !(self.r_inner > 0.0 && self.r_inner < self.r_outer) {
            return bad(format!("need 0 < r_inner < r_outer (got {}, {})", self.r_inner, self.r_outer));
        }
        if !(self.delta_pl > 0.0) || !(self.d0 > 0.0) {
            return bad(format!("delta_pl and d0 must be positive (got {}, {})", self.delta_pl, self.d0));
        }
        if !(self.theta_3db > 0.0) || !(self.ant_spacing > 0.0) || !(self.ang_spread > 0.0) {
            return bad("theta_3db, ant_spacing and ang_spread must be positive".into());
        }
        if !(self.rho_tr > 0.0) || !(self.rho_dl > 0.0) {
            return bad(format!("rho_tr and rho_dl must be positive (got {}, {})", self.rho_tr, self.rho_dl));
        }
        for (name, len) in [("P", self.power.len()), ("J", self.tpe_order.len()), ("phi", self.phi.len())] {
            if len != self.cells {
                return bad(format!("{name} has {len} entries, expected one per cell ({})", self.cells));
            }
        }
        if self.power.iter().any(|&p| !(p > 0.0)) {
            return bad("P must be positive in every cell".into());
        }
        if self.tpe_order.contains(&0) {
            return bad("J must be at least 1 in every cell".into());
        }
        if self.phi.iter().any(|&p| !(p > 0.0)) {
            return bad("phi must be positive in every cell".into());
        }
        Ok(())
    }

    /// Receiver noise variance `σ² = 1/ρ_dl` (transmit power normalized to 1).
    pub fn noise_variance(&self) -> f64 {
        1.0 / self.rho_dl
    }

    pub fn users_per_group(&self) -> usize {
        self.users / self.groups
    }
}

/// Angle wrapped to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = libm::fmod(a + PI, 2.0 * PI);
    if x <= 0.0 {
        x += 2.0 * PI;
    }
    x - PI
}

/// User placement for one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub cells: usize,
    pub users: usize,
    pub groups: usize,
    pub bs_position: Vec<[f64; 2]>,
    /// Boresight azimuth per cell, radians.
    pub boresight: Vec<f64>,
    /// `[cell][group]`.
    pub group_position: Vec<Vec<[f64; 2]>>,
    /// `[cell][user]` → group index.
    pub user_group: Vec<Vec<usize>>,
    distance: Vec<f64>,
    azimuth: Vec<f64>,
}

impl Geometry {
    /// Distance `d_{ℓ,j,m}` from base station `l` to user `m` of cell `j`.
    pub fn distance(&self, l: usize, j: usize, m: usize) -> f64 {
        self.distance[(l * self.cells + j) * self.users + m]
    }

    /// Azimuth `θ_{ℓ,j,g}` of group `g` of cell `j` seen from the boresight of
    /// base station `l`, in `(-π, π]`.
    pub fn azimuth(&self, l: usize, j: usize, g: usize) -> f64 {
        self.azimuth[(l * self.cells + j) * self.groups + g]
    }

    /// Geometry of drop `drop` for `config.seed`.
    pub fn for_drop(config: &ScenarioConfig, drop: u64) -> Result<Self> {
        let mut rng = rng::stream(config.seed, Purpose::Geometry, drop, 0);
        build_geometry(config, &mut rng)
    }
}

/// Boresight of cell `j` among `cells`.
pub fn boresight(j: usize, cells: usize) -> f64 {
    wrap_angle(PI / 2.0 + 2.0 * PI * j as f64 / cells as f64)
}

/// Angular width of each sector.
pub fn sector_width(cells: usize) -> f64 {
    (2.0 * PI / 3.0).min(2.0 * PI / cells as f64)
}

/// Draws group locations uniformly (by area) over each cell's annulus sector.
pub fn build_geometry<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<Geometry> {
    config.validate()?;
    let (l_n, k_n, g_n) = (config.cells, config.users, config.groups);
    let width = sector_width(l_n);
    let bs_position = alloc::vec![[0.0, 0.0]; l_n];
    let bores: Vec<f64> = (0..l_n).map(|j| boresight(j, l_n)).collect();

    let (r2_in, r2_out) = (config.r_inner * config.r_inner, config.r_outer * config.r_outer);
    let group_position: Vec<Vec<[f64; 2]>> = bores
        .iter()
        .map(|&b| {
            (0..g_n)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let v: f64 = rng.gen();
                    let r = libm::sqrt(r2_in + u * (r2_out - r2_in));
                    let a = b + (v - 0.5) * width;
                    [r * libm::cos(a), r * libm::sin(a)]
                })
                .collect()
        })
        .collect();
    let user_group: Vec<Vec<usize>> = (0..l_n).map(|_| (0..k_n).map(|m| m % g_n).collect()).collect();

    let mut distance = alloc::vec![0.0; l_n * l_n * k_n];
    let mut azimuth = alloc::vec![0.0; l_n * l_n * g_n];
    for l in 0..l_n {
        let [bx, by] = bs_position[l];
        for j in 0..l_n {
            for g in 0..g_n {
                let [x, y] = group_position[j][g];
                azimuth[(l * l_n + j) * g_n + g] = wrap_angle(libm::atan2(y - by, x - bx) - bores[l]);
            }
            for m in 0..k_n {
                let [x, y] = group_position[j][user_group[j][m]];
                distance[(l * l_n + j) * k_n + m] = libm::hypot(x - bx, y - by);
            }
        }
    }
    Ok(Geometry {
        cells: l_n,
        users: k_n,
        groups: g_n,
        bs_position,
        boresight: bores,
        group_position,
        user_group,
        distance,
        azimuth,
    })
}

/// Antenna element gain `-min(12 (θ/θ_3dB)², 30)` dB, `theta` in radians
/// from boresight and `theta_3db` in degrees.
pub fn antenna_gain_db(theta: f64, theta_3db: f64) -> f64 {
    let ratio = theta.to_degrees() / theta_3db;
    -(12.0 * ratio * ratio).min(30.0)
}

/// `1 / (1 + (d/d0)^δ)`.
pub fn pathloss(d: f64, d0: f64, delta_pl: f64) -> f64 {
    1.0 / (1.0 + libm::pow(d / d0, delta_pl))
}

/// One-ring covariance with `N` quadrature nodes; see [`one_ring_covariance`].
pub fn one_ring_covariance_with(
    theta: f64,
    spread: f64,
    ant_spacing: f64,
    antennas: usize,
    scale: f64,
    rule: &GaussLegendre,
) -> Result<CMat> {
    if !(spread > 0.0) {
        return Err(Error::InvalidArgument(format!("angular spread must be positive, got {spread}")));
    }
    if !(scale >= 0.0) {
        return Err(Error::InvalidArgument(format!("covariance scale must be nonnegative, got {scale}")));
    }
    // Toeplitz: entry (u, v) depends on u - v only.
    let mut lag = alloc::vec![C64::new(0.0, 0.0); antennas];
    lag[0] = C64::new(scale, 0.0);
    let k = 2.0 * PI * ant_spacing;
    for (n, slot) in lag.iter_mut().enumerate().skip(1) {
        let phase = k * n as f64;
        let integral: C64 = rule.integrate(theta - spread, theta + spread, |a| {
            let (s, c) = libm::sincos(phase * libm::sin(a));
            C64::new(c, s)
        });
        *slot = integral * (scale / (2.0 * spread));
    }
    Ok(CMat::from_fn(antennas, antennas, |u, v| if u >= v { lag[u - v] } else { lag[v - u].conj() }))
}

/// `scale/(2Δ) ∫_{θ-Δ}^{θ+Δ} exp(i·2π·d·(u−v)·sin α) dα` for a uniform linear
/// array with `antennas` elements spaced `ant_spacing` wavelengths.
pub fn one_ring_covariance(theta: f64, spread: f64, ant_spacing: f64, antennas: usize, scale: f64) -> Result<CMat> {
    one_ring_covariance_with(theta, spread, ant_spacing, antennas, scale, &GaussLegendre::new(QUADRATURE_NODES))
}

/// Covariances `R_{ℓ,j,m}` of one drop, stored once per `(ℓ, j, group)`.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    pub cells: usize,
    pub users: usize,
    pub antennas: usize,
    pub groups: usize,
    pub user_group: Vec<Vec<usize>>,
    mats: Vec<CMat>,
    scales: Vec<f64>,
}

impl CovarianceSet {
    /// Builds a set from explicit per-group matrices, indexed `[(l * L + j) * G + g]`.
    pub fn from_groups(cells: usize, users: usize, user_group: Vec<Vec<usize>>, mats: Vec<CMat>) -> Result<Self> {
        let groups = mats.len() / (cells * cells).max(1);
        if groups == 0 || mats.len() != cells * cells * groups {
            return Err(Error::Dimension(format!("{} matrices for {cells} cells", mats.len())));
        }
        let antennas = mats[0].nrows();
        if mats.iter().any(|r| r.nrows() != antennas || r.ncols() != antennas) {
            return Err(Error::Dimension("covariances must share one square size".into()));
        }
        if user_group.len() != cells
            || user_group.iter().any(|u| u.len() != users || u.iter().any(|&g| g >= groups))
        {
            return Err(Error::Dimension("user_group table inconsistent with cells/users/groups".into()));
        }
        let scales = mats.iter().map(|r| r.diagonal().iter().map(|z| z.re).sum::<f64>() / antennas as f64).collect();
        Ok(Self { cells, users, antennas, groups, user_group, mats, scales })
    }

    /// Single-cell set where every user has its own covariance.
    pub fn single_cell(per_user: Vec<CMat>) -> Result<Self> {
        let users = per_user.len();
        Self::from_groups(1, users, alloc::vec![(0..users).collect()], per_user)
    }

    /// `R_{ℓ,j,m}`: channel from base station `l` to user `m` of cell `j`.
    pub fn get(&self, l: usize, j: usize, m: usize) -> &CMat {
        self.group(l, j, self.user_group[j][m])
    }

    pub fn group(&self, l: usize, j: usize, g: usize) -> &CMat {
        &self.mats[(l * self.cells + j) * self.groups + g]
    }

    /// `(1/M) tr(R)` of group `g`.
    pub fn group_scale(&self, l: usize, j: usize, g: usize) -> f64 {
        self.scales[(l * self.cells + j) * self.groups + g]
    }

    pub fn groups_iter(&self) -> impl Iterator<Item = (usize, usize, usize, &CMat)> {
        let (lc, gc) = (self.cells, self.groups);
        self.mats.iter().enumerate().map(move |(i, r)| (i / (lc * gc), (i / gc) % lc, i % gc, r))
    }
}

/// Pathloss- and pattern-scaled one-ring covariances for every `(ℓ, j, group)`.
pub fn build_covariances(config: &ScenarioConfig, geometry: &Geometry) -> Result<CovarianceSet> {
    config.validate()?;
    if geometry.cells != config.cells || geometry.users != config.users || geometry.groups != config.groups {
        return Err(Error::Dimension("geometry does not match configuration".into()));
    }
    let rule = GaussLegendre::new(QUADRATURE_NODES);
    let (l_n, g_n) = (config.cells, config.groups);
    let mut mats = Vec::with_capacity(l_n * l_n * g_n);
    for l in 0..l_n {
        for j in 0..l_n {
            for g in 0..g_n {
                let theta = geometry.azimuth(l, j, g);
                let m = geometry.user_group[j].iter().position(|&x| x == g).ok_or_else(|| {
                    Error::InvalidConfig(format!("group {g} of cell {j} has no users"))
                })?;
                let gain = libm::pow(10.0, antenna_gain_db(theta, config.theta_3db) / 10.0);
                let scale = gain * pathloss(geometry.distance(l, j, m), config.d0, config.delta_pl);
                mats.push(one_ring_covariance_with(
                    theta,
                    config.ang_spread,
                    config.ant_spacing,
                    config.antennas,
                    scale,
                    &rule,
                )?);
            }
        }
    }
    CovarianceSet::from_groups(l_n, config.users, geometry.user_group.clone(), mats)
}
