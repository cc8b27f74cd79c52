//! Metropolis-Hastings sampling of electron configurations from `|psi|^2`.

use ndarray::{Array3, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::system::{distance, Molecule};
use crate::wavefunction::LogPsi;

/// Batched `log|psi|` over `walkers x n_el x 3` positions.
pub type LogPsiFn<'a> = dyn Fn(ArrayView3<f64>) -> Vec<LogPsi> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MoveMode {
    #[default]
    AllElectron,
    /// One electron per step, cycling through the electrons.
    OneElectron,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub init_stepsize: f64,
    pub target_acceptance: f64,
    /// Gain `kappa` of `stepsize *= exp(kappa (acc - target))`.
    pub adapt_rate: f64,
    /// Weight of the newest step in the acceptance moving average.
    pub ema_weight: f64,
    pub min_stepsize: f64,
    pub max_stepsize: f64,
    pub burn_in: usize,
    pub decorrelation: usize,
    pub mode: MoveMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            init_stepsize: 0.2,
            target_acceptance: 0.5,
            adapt_rate: 0.02,
            ema_weight: 0.1,
            min_stepsize: 1e-4,
            max_stepsize: 10.0,
            burn_in: 500,
            decorrelation: 20,
            mode: MoveMode::AllElectron,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.decorrelation == 0 {
            return Err("decorrelation must be at least 1".into());
        }
        if !(self.init_stepsize > 0.0) || !(self.min_stepsize > 0.0) || self.min_stepsize > self.max_stepsize {
            return Err("step sizes must be positive with min <= max".into());
        }
        if !(0.0..=1.0).contains(&self.target_acceptance) || !(0.0..=1.0).contains(&self.ema_weight) {
            return Err("acceptance target and EMA weight must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Serializable state of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

pub fn save_rng(r: &ChaCha8Rng) -> RngState {
    RngState { seed: r.get_seed(), stream: r.get_stream(), word_pos: r.get_word_pos() }
}

pub fn restore_rng(s: &RngState) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::from_seed(s.seed);
    r.set_stream(s.stream);
    r.set_word_pos(s.word_pos);
    r
}

/// Independent stream for walker `w` of a run seeded with `seed`.
pub fn walker_rng(seed: u64, w: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(w as u64);
    r
}

#[derive(Debug, Clone)]
pub struct WalkerBatch {
    /// `walkers x n_el x 3`.
    pub pos: Array3<f64>,
    pub log_psi: Vec<LogPsi>,
    pub stepsize: f64,
    pub acc_ema: f64,
    /// Acceptance fraction of the most recent step.
    pub last_acceptance: f64,
    pub rngs: Vec<ChaCha8Rng>,
    /// Steps taken so far (selects the electron in one-electron mode).
    pub n_steps: u64,
}

impl WalkerBatch {
    pub fn n_walkers(&self) -> usize {
        self.pos.dim().0
    }

    pub fn n_el(&self) -> usize {
        self.pos.dim().1
    }

    pub fn config(&self, w: usize) -> Vec<[f64; 3]> {
        (0..self.n_el()).map(|i| [self.pos[[w, i, 0]], self.pos[[w, i, 1]], self.pos[[w, i, 2]]]).collect()
    }
}

/// Nucleus index for every electron: electrons are taken in spin-alternating
/// pairs `(up_k, dn_k)` and handed out round-robin over nuclei, each nucleus
/// receiving at most `Z` electrons until every nucleus is full.
pub fn assign_electrons(mol: &Molecule) -> Vec<usize> {
    let n_nuc = mol.n_nuc();
    let mut cap: Vec<i64> = mol.nuclei().iter().map(|n| n.charge as i64).collect();
    let mut out = vec![0; mol.n_el()];
    let mut ptr = 0;
    for k in 0..mol.n_up().max(mol.n_dn()) {
        let pair = [(k < mol.n_up()).then_some(k), (k < mol.n_dn()).then_some(mol.n_up() + k)];
        for e in pair.into_iter().flatten() {
            if cap.iter().any(|&c| c > 0) {
                while cap[ptr] <= 0 {
                    ptr = (ptr + 1) % n_nuc;
                }
            }
            out[e] = ptr;
            cap[ptr] -= 1;
        }
        ptr = (ptr + 1) % n_nuc;
    }
    out
}

/// Walkers placed around their assigned nuclei with unit Gaussian noise.
pub fn init_walkers(mol: &Molecule, n_walkers: usize, seed: u64, stepsize: f64, log_psi: &LogPsiFn) -> WalkerBatch {
    assert!(n_walkers >= 1);
    let n_el = mol.n_el();
    let owner = assign_electrons(mol);
    let mut rngs: Vec<ChaCha8Rng> = (0..n_walkers).map(|w| walker_rng(seed, w)).collect();
    let mut pos = Array3::zeros((n_walkers, n_el, 3));
    for (w, rng) in rngs.iter_mut().enumerate() {
        for i in 0..n_el {
            let c = mol.nuclei()[owner[i]].position;
            for k in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                pos[[w, i, k]] = c[k] + z;
            }
        }
    }
    let lp = log_psi(pos.view());
    WalkerBatch { pos, log_psi: lp, stepsize, acc_ema: 0.5, last_acceptance: 0.0, rngs, n_steps: 0 }
}

/// `min(1, exp(2 (new - old)))`.
pub fn acceptance_probability(old: f64, new: f64) -> f64 {
    (2.0 * (new - old)).exp().min(1.0)
}

/// Whether a moved electron lands on a nucleus or on another electron.
fn coincident(mol: &Molecule, pos: &ArrayView2<f64>, moved: &[usize]) -> bool {
    let tol = crate::diff::COINCIDENCE_TOL;
    let at = |i: usize| [pos[[i, 0]], pos[[i, 1]], pos[[i, 2]]];
    moved.iter().any(|&i| {
        let r = at(i);
        mol.nuclei().iter().any(|n| distance(&r, &n.position) < tol)
            || (0..pos.nrows()).any(|j| j != i && distance(&r, &at(j)) < tol)
    })
}

/// One Metropolis step for every walker; returns the acceptance fraction.
/// With `adapt`, the step size follows the acceptance moving average.
pub fn mh_step(batch: &mut WalkerBatch, mol: &Molecule, cfg: &SamplerConfig, adapt: bool, log_psi: &LogPsiFn) -> f64 {
    let (n_w, n_el, _) = batch.pos.dim();
    let mut prop = batch.pos.clone();
    let moved: Vec<usize> = match cfg.mode {
        MoveMode::AllElectron => (0..n_el).collect(),
        MoveMode::OneElectron => vec![(batch.n_steps % n_el as u64) as usize],
    };
    for (w, rng) in batch.rngs.iter_mut().enumerate() {
        for &i in &moved {
            for k in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                prop[[w, i, k]] += batch.stepsize * z;
            }
        }
    }
    let new = log_psi(prop.view());
    let mut accepted = 0usize;
    for w in 0..n_w {
        let u: f64 = batch.rngs[w].random();
        let lp = new[w];
        let valid = lp.sign != 0.0
            && lp.log_abs.is_finite()
            && !coincident(mol, &prop.index_axis(Axis(0), w), &moved);
        if valid && u < acceptance_probability(batch.log_psi[w].log_abs, lp.log_abs) {
            for i in &moved {
                for k in 0..3 {
                    batch.pos[[w, *i, k]] = prop[[w, *i, k]];
                }
            }
            batch.log_psi[w] = lp;
            accepted += 1;
        }
    }
    let frac = accepted as f64 / n_w as f64;
    batch.last_acceptance = frac;
    batch.acc_ema = (1.0 - cfg.ema_weight) * batch.acc_ema + cfg.ema_weight * frac;
    batch.n_steps += 1;
    if adapt {
        adapt_stepsize(batch, cfg);
    }
    frac
}

/// `stepsize *= exp(kappa (acc_ema - target))`, clamped.
pub fn adapt_stepsize(batch: &mut WalkerBatch, cfg: &SamplerConfig) {
    let s = batch.stepsize * (cfg.adapt_rate * (batch.acc_ema - cfg.target_acceptance)).exp();
    batch.stepsize = s.clamp(cfg.min_stepsize, cfg.max_stepsize);
}

/// `n_steps` Metropolis steps; returns the mean acceptance.
pub fn decorrelate(
    batch: &mut WalkerBatch,
    mol: &Molecule,
    cfg: &SamplerConfig,
    n_steps: usize,
    adapt: bool,
    log_psi: &LogPsiFn,
) -> f64 {
    assert!(n_steps >= 1);
    (0..n_steps).map(|_| mh_step(batch, mol, cfg, adapt, log_psi)).sum::<f64>() / n_steps as f64
}

/// Adaptive burn-in of `cfg.burn_in` steps.
pub fn burn_in(batch: &mut WalkerBatch, mol: &Molecule, cfg: &SamplerConfig, log_psi: &LogPsiFn) {
    for _ in 0..cfg.burn_in {
        mh_step(batch, mol, cfg, true, log_psi);
    }
}
