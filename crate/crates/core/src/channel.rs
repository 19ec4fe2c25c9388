//! Rayleigh block fading, pilot contamination and MMSE channel estimation.
//!
//! Index conventions follow the covariance set: `h_{ℓ,j,m}` is the channel
//! from base station `ℓ` to user `m` of cell `j`. Users with the same index in
//! different cells share a pilot, so the processed pilot observation of user
//! `k` at base station `j` is
//! `y_{j,k} = Σ_ℓ h_{j,ℓ,k} + ρ_tr^{-1/2} b_{j,k}`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::{c, complex_normal_matrix, hermitian_eigenvalues, hpd_inverse, psd_factor};
use crate::scenario::CovarianceSet;
use crate::{CMat, Error, Result};

/// Thin factors `F` with `F Fᴴ = R` for every stored covariance.
#[derive(Debug, Clone)]
pub struct CovarianceFactors {
    pub cells: usize,
    pub users: usize,
    pub antennas: usize,
    pub groups: usize,
    user_group: Vec<Vec<usize>>,
    factors: Vec<CMat>,
}

impl CovarianceFactors {
    pub fn new(covs: &CovarianceSet) -> Result<Self> {
        let factors = covs.groups_iter().map(|(_, _, _, r)| psd_factor(r)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cells: covs.cells,
            users: covs.users,
            antennas: covs.antennas,
            groups: covs.groups,
            user_group: covs.user_group.clone(),
            factors,
        })
    }

    pub fn factor(&self, l: usize, j: usize, g: usize) -> &CMat {
        &self.factors[(l * self.cells + j) * self.groups + g]
    }
}

/// True channels of one coherence block.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub trial_index: u64,
    pub cells: usize,
    /// `[l * L + j]`: M×K matrix whose column `m` is `h_{l,j,m}`.
    blocks: Vec<CMat>,
}

impl ChannelDraw {
    /// All channels from base station `l` to the users of cell `j`.
    pub fn block(&self, l: usize, j: usize) -> &CMat {
        &self.blocks[l * self.cells + j]
    }

    pub fn h(&self, l: usize, j: usize, m: usize) -> crate::CVec {
        self.block(l, j).column(m).into_owned()
    }
}

/// Draws `h = F z` with `z ~ CN(0, I)` independently for every `(ℓ, j, m)`.
pub fn sample_channels<R: Rng + ?Sized>(factors: &CovarianceFactors, trial_index: u64, rng: &mut R) -> ChannelDraw {
    let (l_n, k_n, m_n) = (factors.cells, factors.users, factors.antennas);
    let mut blocks = Vec::with_capacity(l_n * l_n);
    for l in 0..l_n {
        for j in 0..l_n {
            let mut block = CMat::zeros(m_n, k_n);
            for g in 0..factors.groups {
                let members: Vec<usize> = (0..k_n).filter(|&m| factors.user_group[j][m] == g).collect();
                if members.is_empty() {
                    continue;
                }
                let f = factors.factor(l, j, g);
                let z = complex_normal_matrix(f.ncols(), members.len(), rng);
                let h = f * z;
                for (col, &m) in members.iter().enumerate() {
                    block.set_column(m, &h.column(col));
                }
            }
            blocks.push(block);
        }
    }
    ChannelDraw { trial_index, cells: l_n, blocks }
}

/// `S_{j,k}` and `Φ_{j,ℓ,k}` of the MMSE estimator.
///
/// Users whose pilot-sharing tuple of groups coincides share their matrices,
/// so storage is per `(cell, pilot class)` rather than per user.
#[derive(Debug, Clone)]
pub struct EstimationModel {
    pub cells: usize,
    pub users: usize,
    pub antennas: usize,
    pub rho_tr: f64,
    /// Pilot class of each user index.
    class_of: Vec<usize>,
    classes: usize,
    s: Vec<CMat>,
    phi: Vec<CMat>,
    estimator: Vec<CMat>,
}

impl EstimationModel {
    fn idx(&self, j: usize, k: usize) -> usize {
        j * self.classes + self.class_of[k]
    }

    /// `S_{j,k} = (ρ_tr⁻¹ I + Σ_ℓ R_{j,ℓ,k})⁻¹`.
    pub fn s(&self, j: usize, k: usize) -> &CMat {
        &self.s[self.idx(j, k)]
    }

    /// `Φ_{j,ℓ,k} = R_{j,j,k} S_{j,k} R_{j,ℓ,k}`.
    pub fn phi(&self, j: usize, l: usize, k: usize) -> &CMat {
        &self.phi[(j * self.cells + l) * self.classes + self.class_of[k]]
    }

    /// `R_{j,j,k} S_{j,k}`, the linear MMSE filter applied to the pilot observation.
    pub fn estimator(&self, j: usize, k: usize) -> &CMat {
        &self.estimator[self.idx(j, k)]
    }

    /// Users that share estimator matrices with `k` (same pilot class).
    pub fn class_members(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let class = self.class_of[k];
        (0..self.users).filter(move |&u| self.class_of[u] == class)
    }

    pub fn pilot_classes(&self) -> usize {
        self.classes
    }

    /// `Φ_{ℓ,ℓ,k}` for `k = 0..K`, the covariances of cell `ℓ`'s estimates.
    pub fn own_phis(&self, l: usize) -> Vec<&CMat> {
        (0..self.users).map(|k| self.phi(l, l, k)).collect()
    }
}

/// Builds `S` and `Φ` for every cell and user.
pub fn compute_estimation_model(covs: &CovarianceSet, rho_tr: f64) -> Result<EstimationModel> {
    if !(rho_tr > 0.0) {
        return Err(Error::InvalidArgument(format!("rho_tr must be positive, got {rho_tr}")));
    }
    let (l_n, k_n, m_n) = (covs.cells, covs.users, covs.antennas);
    let mut keys: Vec<Vec<usize>> = Vec::new();
    let mut class_of = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let key: Vec<usize> = (0..l_n).map(|l| covs.user_group[l][k]).collect();
        match keys.iter().position(|x| *x == key) {
            Some(p) => class_of.push(p),
            None => {
                class_of.push(keys.len());
                keys.push(key);
            }
        }
    }
    let classes = keys.len();
    let rep: Vec<usize> = (0..classes).map(|c| class_of.iter().position(|&x| x == c).unwrap()).collect();

    let mut s = Vec::with_capacity(l_n * classes);
    let mut estimator = Vec::with_capacity(l_n * classes);
    for j in 0..l_n {
        for &k in &rep {
            let mut total = CMat::identity(m_n, m_n) * c(1.0 / rho_tr);
            let mut norm_bound = 1.0 / rho_tr;
            for l in 0..l_n {
                let r = covs.get(j, l, k);
                total += r;
                norm_bound += crate::linalg::trace(r).re;
            }
            if norm_bound * rho_tr > 1e12 {
                let ev = hermitian_eigenvalues(&total);
                let cond = ev[ev.len() - 1] / ev[0];
                if !(cond <= 1e12) {
                    return Err(Error::IllConditioned(cond));
                }
            }
            let s_jk = hpd_inverse(&total)?;
            estimator.push(covs.get(j, j, k) * &s_jk);
            s.push(s_jk);
        }
    }
    let mut phi = Vec::with_capacity(l_n * l_n * classes);
    for j in 0..l_n {
        for l in 0..l_n {
            for (class, &k) in rep.iter().enumerate() {
                phi.push(&estimator[j * classes + class] * covs.get(j, l, k));
            }
        }
    }
    Ok(EstimationModel { cells: l_n, users: k_n, antennas: m_n, rho_tr, class_of, classes, s, phi, estimator })
}

/// Channel estimates of one coherence block.
#[derive(Debug, Clone)]
pub struct EstimateSet {
    /// `Ĥ_{j,j}` per cell: M×K, column `k` is `ĥ_{j,j,k}`.
    pub h_hat: Vec<CMat>,
}

impl EstimateSet {
    pub fn cell(&self, j: usize) -> &CMat {
        &self.h_hat[j]
    }
}

/// Forms the contaminated pilot observations with fresh noise and applies the
/// MMSE filter `R_{j,j,k} S_{j,k}`.
pub fn mmse_estimate<R: Rng + ?Sized>(draw: &ChannelDraw, model: &EstimationModel, rng: &mut R) -> EstimateSet {
    let (l_n, k_n, m_n) = (model.cells, model.users, model.antennas);
    let noise_scale = c(1.0 / libm::sqrt(model.rho_tr));
    let mut h_hat = Vec::with_capacity(l_n);
    for j in 0..l_n {
        let mut y = complex_normal_matrix(m_n, k_n, rng) * noise_scale;
        for l in 0..l_n {
            y += draw.block(j, l);
        }
        let mut est = CMat::zeros(m_n, k_n);
        for class in 0..model.classes {
            let members: Vec<usize> = (0..k_n).filter(|&k| model.class_of[k] == class).collect();
            let mut ys = CMat::zeros(m_n, members.len());
            for (col, &k) in members.iter().enumerate() {
                ys.set_column(col, &y.column(k));
            }
            let filtered = &model.estimator[j * model.classes + class] * ys;
            for (col, &k) in members.iter().enumerate() {
                est.set_column(k, &filtered.column(col));
            }
        }
        h_hat.push(est);
    }
    EstimateSet { h_hat }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, hermitian_error};
    use crate::rng::{stream, Purpose};
    use crate::CVec;

    fn identity_set(m: usize, users: usize) -> CovarianceSet {
        CovarianceSet::single_cell((0..users).map(|_| CMat::identity(m, m)).collect()).unwrap()
    }

    fn random_psd(m: usize, seed: u64) -> CMat {
        let mut rng = stream(seed, Purpose::Test, 0, 0);
        let a = complex_normal_matrix(m, m, &mut rng);
        &a * a.adjoint() / c(m as f64) + CMat::identity(m, m) * c(0.05)
    }

    #[test]
    fn identity_covariance_energy() {
        let covs = identity_set(4, 1);
        let f = CovarianceFactors::new(&covs).unwrap();
        let mut rng = stream(1, Purpose::Test, 0, 0);
        let n = 10_000;
        let mut acc = 0.0;
        for t in 0..n {
            let d = sample_channels(&f, t, &mut rng);
            acc += d.h(0, 0, 0).norm_squared() / 4.0;
        }
        let mean = acc / n as f64;
        assert!((0.97..=1.03).contains(&mean), "{mean}");
    }

    #[test]
    fn rank_one_draws_follow_eigenvector() {
        let v = CVec::from_vec(alloc::vec![c(1.0), crate::C64::new(0.0, 1.0), c(-1.0)]) / c(3f64.sqrt());
        let covs = CovarianceSet::single_cell(alloc::vec![&v * v.adjoint() * c(2.0)]).unwrap();
        let f = CovarianceFactors::new(&covs).unwrap();
        let mut rng = stream(2, Purpose::Test, 0, 0);
        for t in 0..50 {
            let h = sample_channels(&f, t, &mut rng).h(0, 0, 0);
            let proj = v.dotc(&h);
            assert!((&h - &v * proj).norm() < 1e-12 * h.norm().max(1e-300));
        }
    }

    #[test]
    fn perfect_csi_limit() {
        let r = random_psd(6, 4);
        let covs = CovarianceSet::single_cell(alloc::vec![r.clone()]).unwrap();
        let model = compute_estimation_model(&covs, 1e8).unwrap();
        let phi = model.phi(0, 0, 0);
        assert!(frobenius(&(phi - &r)) / frobenius(&r) < 1e-3);
    }

    #[test]
    fn identity_closed_form() {
        let rho = 3.0;
        let model = compute_estimation_model(&identity_set(5, 2), rho).unwrap();
        let s_expected = CMat::identity(5, 5) * c(1.0 / (1.0 / rho + 1.0));
        let phi_expected = CMat::identity(5, 5) * c(rho / (1.0 + rho));
        assert!(frobenius(&(model.s(0, 1) - s_expected)) < 1e-14);
        assert!(frobenius(&(model.phi(0, 0, 1) - phi_expected)) < 1e-14);
        assert_eq!(model.pilot_classes(), 2);
    }

    #[test]
    fn two_cell_phi_psd_and_identity() {
        let mats: Vec<CMat> = (0..4).map(|i| random_psd(8, 10 + i)).collect();
        let covs = CovarianceSet::from_groups(2, 3, alloc::vec![alloc::vec![0, 0, 0]; 2], mats).unwrap();
        let model = compute_estimation_model(&covs, 10.0).unwrap();
        for j in 0..2 {
            let own = model.phi(j, j, 0);
            assert!(hermitian_error(own) < 1e-12 * frobenius(own));
            let ev = hermitian_eigenvalues(own);
            assert!(ev[0] >= -1e-10);
            for l in 0..2 {
                let direct = covs.get(j, j, 0) * model.s(j, 0) * covs.get(j, l, 0);
                assert!(frobenius(&(model.phi(j, l, 0) - &direct)) < 1e-12 * frobenius(&direct));
            }
        }
    }

    #[test]
    fn rejects_nonpositive_training_snr() {
        assert!(compute_estimation_model(&identity_set(3, 1), 0.0).is_err());
    }

    #[test]
    fn noiseless_single_cell_recovers_channel() {
        let r = random_psd(6, 21);
        let covs = CovarianceSet::single_cell(alloc::vec![r]).unwrap();
        let model = compute_estimation_model(&covs, 1e10).unwrap();
        let f = CovarianceFactors::new(&covs).unwrap();
        let mut rng = stream(5, Purpose::Test, 0, 0);
        let d = sample_channels(&f, 0, &mut rng);
        let est = mmse_estimate(&d, &model, &mut rng);
        let h = d.h(0, 0, 0);
        assert!((est.cell(0).column(0) - &h).norm() < 1e-4 * h.norm());
    }
}
