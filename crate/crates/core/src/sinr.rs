//! Monte-Carlo estimation of the effective average SINR.
//!
//! For user `m` of cell `j` the SINR treats the mean useful gain
//! `E[h_{j,j,m}ᴴ g_{j,m}]` as the known signal and everything else as noise:
//! `γ = |E[hᴴg]|² / (σ² + Σ_{ℓ,k} E[|h_{ℓ,j,m}ᴴ g_{ℓ,k}|²] − |E[hᴴg]|²)`.
//! Both expectations are sample means over the same trials.

use alloc::vec;
use alloc::vec::Vec;

use crate::channel::ChannelDraw;
use crate::{CMat, Error, Result, C64};

/// Number of batches used for jackknife standard errors.
pub const JACKKNIFE_BATCHES: usize = 10;

#[derive(Debug, Clone)]
struct Sums {
    signal: Vec<C64>,
    power: Vec<f64>,
    trials: usize,
}

impl Sums {
    fn new(n: usize) -> Self {
        Self { signal: vec![C64::new(0.0, 0.0); n], power: vec![0.0; n], trials: 0 }
    }

    fn add(&mut self, other: &Sums, sign: f64) {
        for (a, b) in self.signal.iter_mut().zip(&other.signal) {
            *a += b * sign;
        }
        for (a, b) in self.power.iter_mut().zip(&other.power) {
            *a += b * sign;
        }
        self.trials = (self.trials as isize + sign as isize * other.trials as isize) as usize;
    }

    fn sinr(&self, sigma2: f64) -> Vec<f64> {
        let n = self.trials.max(1) as f64;
        self.signal
            .iter()
            .zip(&self.power)
            .map(|(s, p)| {
                let mean = s / n;
                let sig = mean.norm_sqr();
                let denom = sigma2 + p / n - sig;
                if denom > 0.0 {
                    sig / denom
                } else if sig == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }
}

/// Running sums of `hᴴg` and received power per user, split into batches.
#[derive(Debug, Clone)]
pub struct SinrAccumulator {
    pub cells: usize,
    pub users: usize,
    pub sigma2: f64,
    batches: Vec<Sums>,
}

impl SinrAccumulator {
    pub fn new(cells: usize, users: usize, sigma2: f64) -> Self {
        Self { cells, users, sigma2, batches: vec![Sums::new(cells * users); JACKKNIFE_BATCHES] }
    }

    /// Adds one coherence block; trial `i` goes to batch `i mod 10`.
    ///
    /// `precoders[ℓ]` is the M×K matrix used by base station `ℓ`.
    pub fn add_trial(&mut self, trial: usize, draw: &ChannelDraw, precoders: &[CMat]) -> Result<()> {
        if precoders.len() != self.cells {
            return Err(Error::Dimension("one precoder per cell expected".into()));
        }
        let batch = &mut self.batches[trial % JACKKNIFE_BATCHES];
        let k_n = self.users;
        for j in 0..self.cells {
            for (l, g) in precoders.iter().enumerate() {
                let gains = draw.block(l, j).adjoint() * g;
                for m in 0..k_n {
                    let idx = j * k_n + m;
                    batch.power[idx] += gains.row(m).iter().map(|z| z.norm_sqr()).sum::<f64>();
                    if l == j {
                        batch.signal[idx] += gains[(m, m)];
                    }
                }
            }
        }
        batch.trials += 1;
        Ok(())
    }

    fn total(&self) -> Sums {
        let mut acc = Sums::new(self.cells * self.users);
        for b in &self.batches {
            acc.add(b, 1.0);
        }
        acc
    }

    pub fn trials(&self) -> usize {
        self.batches.iter().map(|b| b.trials).sum()
    }

    /// Empirical SINR per user, indexed `[j * K + m]`.
    pub fn sinr(&self) -> Vec<f64> {
        self.total().sinr(self.sigma2)
    }

    /// Mean useful gain `E[hᴴg]` per user.
    pub fn mean_gain(&self) -> Vec<C64> {
        let t = self.total();
        let n = t.trials.max(1) as f64;
        t.signal.iter().map(|s| s / n).collect()
    }

    /// Delete-one-batch jackknife standard error of `stat(γ)`.
    pub fn jackknife<F: Fn(&[f64]) -> f64>(&self, stat: F) -> f64 {
        let total = self.total();
        let leave_out: Vec<f64> = self
            .batches
            .iter()
            .filter(|b| b.trials > 0)
            .map(|b| {
                let mut s = total.clone();
                s.add(b, -1.0);
                stat(&s.sinr(self.sigma2))
            })
            .collect();
        let nb = leave_out.len();
        if nb < 2 {
            return 0.0;
        }
        let mean = leave_out.iter().sum::<f64>() / nb as f64;
        let ss: f64 = leave_out.iter().map(|x| (x - mean) * (x - mean)).sum();
        libm::sqrt((nb as f64 - 1.0) / nb as f64 * ss)
    }
}

/// `log2(1 + γ)`.
pub fn rate(gamma: f64) -> f64 {
    libm::log2(1.0 + gamma)
}

/// `(1/KL) Σ log2(1 + γ_{j,m})`.
pub fn average_rate(gamma: &[f64]) -> f64 {
    if gamma.is_empty() {
        return 0.0;
    }
    gamma.iter().map(|&g| rate(g)).sum::<f64>() / gamma.len() as f64
}
