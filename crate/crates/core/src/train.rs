//! Pretraining against Hartree-Fock orbitals, variational optimization and
//! blocked evaluation.

use ndarray::{Array2, Array3, ArrayView3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{lu_logdet_inverse, Graph};
use crate::checkpoint::{Checkpoint, NamedArray};
use crate::diff::{local_energy_batch, log_psi_batch, param_gradient};
use crate::error::{Error, Result};
use crate::params::Params;
use crate::sampler::{decorrelate, init_walkers, mh_step, restore_rng, save_rng, LogPsiFn, SamplerConfig, WalkerBatch};
use crate::scf::ScfResult;
use crate::system::Molecule;
use crate::wavefunction::{Ansatz, DetMode, LogPsi, WaveFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_walkers: usize,
    pub n_pretrain: usize,
    pub pretrain_lr: f64,
    /// Metropolis steps per pretraining step, for each of the two walker sets.
    pub pretrain_decorrelation: usize,
    pub n_opt: usize,
    pub lr0: f64,
    /// `lr(t) = lr0 / (1 + t / lr_decay)`.
    pub lr_decay: f64,
    /// Cap on the global gradient norm.
    pub norm_constraint: f64,
    /// Local energies are clipped to `median +- clip_window * MAD`.
    pub clip_window: f64,
    pub eval_steps: usize,
    pub checkpoint_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_walkers: 2048,
            n_pretrain: 1000,
            pretrain_lr: 3e-3,
            pretrain_decorrelation: 1,
            n_opt: 20000,
            lr0: 1e-3,
            lr_decay: 6000.0,
            norm_constraint: 1.0,
            clip_window: 5.0,
            eval_steps: 10000,
            checkpoint_every: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = [
            ("n_walkers", self.n_walkers),
            ("pretrain_decorrelation", self.pretrain_decorrelation),
            ("eval_steps", self.eval_steps),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err((k, "must be at least 1".into()));
            }
        }
        let reals = [
            ("lr0", self.lr0),
            ("pretrain_lr", self.pretrain_lr),
            ("lr_decay", self.lr_decay),
            ("norm_constraint", self.norm_constraint),
            ("clip_window", self.clip_window),
            ("adam_eps", self.adam_eps),
        ];
        for (k, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err((k, "must be positive".into()));
            }
        }
        for (k, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err((k, "must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn lr(&self, t: usize) -> f64 {
        self.lr0 / (1.0 + t as f64 / self.lr_decay)
    }
}

/// Adaptive-moment first-order optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &Params, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0, beta1, beta2, eps }
    }

    pub fn from_config(params: &Params, cfg: &TrainConfig) -> Self {
        Adam::new(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    /// Updates every parameter whose `frozen` flag is unset.
    pub fn step(&mut self, params: &mut Params, grads: &[Array2<f64>], lr: f64, frozen: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (id, g) in grads.iter().enumerate() {
            if frozen[id] {
                continue;
            }
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            ndarray::Zip::from(params.tensor_mut(id)).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

pub fn global_norm(grads: &[Array2<f64>]) -> f64 {
    grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescales `grads` so that their global norm does not exceed `cap`;
/// returns the norm before rescaling.
pub fn constrain_norm(grads: &mut [Array2<f64>], cap: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > cap {
        let s = cap / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * s);
        }
    }
    norm
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Clips to `median +- window * MAD`; returns the clipped values and the
/// fraction of values that changed.
pub fn clip_local_energy(e: &[f64], window: f64) -> (Vec<f64>, f64) {
    assert!(!e.is_empty());
    let med = median(e);
    let dev: Vec<f64> = e.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&dev);
    let (lo, hi) = (med - window * mad, med + window * mad);
    let out: Vec<f64> = e.iter().map(|&x| x.clamp(lo, hi)).collect();
    let changed = e.iter().zip(&out).filter(|(a, b)| a != b).count();
    (out, changed as f64 / e.len() as f64)
}

/// Mean computed as an offset from the first value, so identical inputs
/// give exactly that value.
pub fn centered_mean(e: &[f64]) -> f64 {
    e[0] + e.iter().map(|x| x - e[0]).sum::<f64>() / e.len() as f64
}

/// `2 mean_w[(E_w - mean E) grad_theta log|psi_w|]`.
pub fn vmc_gradient(ans: &dyn Ansatz, params: &Params, pos: ArrayView3<f64>, e_local: &[f64]) -> Vec<Array2<f64>> {
    let n = e_local.len() as f64;
    let mean = centered_mean(e_local);
    let coeffs: Vec<f64> = e_local.iter().map(|e| 2.0 * (e - mean) / n).collect();
    param_gradient(ans, params, pos, &coeffs)
}

/// Blocking analysis by repeated pair averaging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blocking {
    pub mean: f64,
    /// Largest standard error over levels with at least `MIN_BLOCKS` blocks
    /// (level 0 always counts), hence never below the naive one.
    pub stderr: f64,
    pub naive_stderr: f64,
}

const MIN_BLOCKS: usize = 32;

pub fn blocking(series: &[f64]) -> Blocking {
    let n0 = series.len();
    assert!(n0 >= 1);
    let mean = series.iter().sum::<f64>() / n0 as f64;
    let se = |x: &[f64]| -> f64 {
        let n = x.len();
        if n < 2 {
            return 0.0;
        }
        let m = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    let naive = se(series);
    let mut best = naive;
    let mut cur = series.to_vec();
    while cur.len() / 2 >= MIN_BLOCKS {
        cur = cur.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        best = best.max(se(&cur));
    }
    Blocking { mean, stderr: best, naive_stderr: naive }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub variance: f64,
    pub n_samples: usize,
    /// `(stderr / naive stderr)^2` in units of evaluation steps.
    pub autocorrelation_time: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub energy_mean: f64,
    pub energy_var: f64,
    pub acceptance: f64,
    pub stepsize: f64,
    pub lr: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,energy_mean,energy_var,acceptance,stepsize,lr,clip_fraction,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.energy_mean,
            self.energy_var,
            self.acceptance,
            self.stepsize,
            self.lr,
            self.clip_fraction,
            self.grad_norm
        )
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
}

/// The walker-density closure for an ansatz and parameter set.
pub fn density<'a>(ans: &'a dyn Ansatz, params: &'a Params) -> impl Fn(ArrayView3<f64>) -> Vec<LogPsi> + Sync + 'a {
    move |x| log_psi_batch(ans, params, x)
}

/// Local energies of every walker; any failure or non-finite value is a
/// numeric abort at `step`.
pub fn local_energies(ans: &dyn Ansatz, params: &Params, mol: &Molecule, walkers: &WalkerBatch, step: usize) -> Result<Vec<f64>> {
    let parts = local_energy_batch(ans, params, mol, walkers.pos.view())
        .map_err(|e| Error::NonFinite { what: format!("local energy ({e})"), step })?;
    let e: Vec<f64> = parts.iter().map(|(p, _)| p.e_local).collect();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "local energy".into(), step });
    }
    Ok(e)
}

/// One variational step: decorrelate, local energies, clip, gradient,
/// norm constraint, update.
#[allow(clippy::too_many_arguments)]
pub fn optimize_step(
    ans: &dyn Ansatz,
    params: &mut Params,
    mol: &Molecule,
    walkers: &mut WalkerBatch,
    adam: &mut Adam,
    cfg: &TrainConfig,
    scfg: &SamplerConfig,
    step: usize,
) -> Result<StepLog> {
    let acceptance = {
        let f = density(ans, params);
        decorrelate(walkers, mol, scfg, scfg.decorrelation, true, &f)
    };
    let e = local_energies(ans, params, mol, walkers, step)?;
    let (energy_mean, energy_var) = mean_var(&e);
    let (clipped, clip_fraction) = clip_local_energy(&e, cfg.clip_window);
    let mut grads = vmc_gradient(ans, params, walkers.pos.view(), &clipped);
    let grad_norm = constrain_norm(&mut grads, cfg.norm_constraint);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite { what: "gradient".into(), step });
    }
    let lr = cfg.lr(step);
    let frozen = vec![false; params.len()];
    adam.step(params, &grads, lr, &frozen);
    // Cached log|psi| must follow the new parameters.
    walkers.log_psi = log_psi_batch(ans, params, walkers.pos.view());
    Ok(StepLog { step, energy_mean, energy_var, acceptance, stepsize: walkers.stepsize, lr, clip_fraction, grad_norm })
}

/// Frozen-parameter evaluation over `cfg.eval_steps` steps; the step size is
/// not adapted. Returns the estimate and the per-step mean energies.
pub fn evaluate(
    ans: &dyn Ansatz,
    params: &Params,
    mol: &Molecule,
    walkers: &mut WalkerBatch,
    n_steps: usize,
    scfg: &SamplerConfig,
) -> Result<(EnergyEstimate, Vec<f64>)> {
    let f = density(ans, params);
    let mut means = Vec::with_capacity(n_steps);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for step in 0..n_steps {
        decorrelate(walkers, mol, scfg, scfg.decorrelation, false, &f);
        let e = local_energies(ans, params, mol, walkers, step)?;
        means.push(e.iter().sum::<f64>() / e.len() as f64);
        sum += e.iter().sum::<f64>();
        sum_sq += e.iter().map(|v| v * v).sum::<f64>();
        count += e.len();
    }
    let b = blocking(&means);
    let m = sum / count as f64;
    let variance = (sum_sq / count as f64 - m * m).max(0.0);
    let tau = if b.naive_stderr > 0.0 { (b.stderr / b.naive_stderr).powi(2) } else { 1.0 };
    Ok((EnergyEstimate { mean: b.mean, stderr: b.stderr, variance, n_samples: count, autocorrelation_time: tau }, means))
}

/// `log|Psi_HF|` of the unrestricted Slater determinant.
pub fn hf_log_psi(scf: &ScfResult, n_up: usize, pos: ArrayView3<f64>) -> Vec<LogPsi> {
    let (n_w, n_el, _) = pos.dim();
    (0..n_w)
        .into_par_iter()
        .map(|w| {
            let pts: Vec<[f64; 3]> = (0..n_el).map(|i| [pos[[w, i, 0]], pos[[w, i, 1]], pos[[w, i, 2]]]).collect();
            let [up, dn] = scf.eval_orbitals(&pts);
            let mut sign = 1.0;
            let mut log_abs = 0.0;
            for (orb, rows) in [(up, 0..n_up), (dn, 0..n_el - n_up)] {
                let n = rows.len();
                if n == 0 {
                    continue;
                }
                let m: Vec<f64> = rows.flat_map(|i| (0..n).map(move |k| (i, k))).map(|(i, k)| orb[[i, k]]).collect();
                let mut inv = vec![0.0; n * n];
                let ld = lu_logdet_inverse(&m, n, &mut inv);
                sign *= ld.sign;
                log_abs += ld.log_abs;
            }
            LogPsi { sign, log_abs: if sign == 0.0 { f64::NEG_INFINITY } else { log_abs } }
        })
        .collect()
}

/// Pretraining targets in the row layout of [`WaveFunction::build_orbitals`].
/// In dense mode an electron's row holds its own spin's occupied HF
/// orbitals and zeros in the other spin's columns.
fn orbital_targets(wf: &WaveFunction, scf: &ScfResult, pos: ArrayView3<f64>) -> [Option<Array2<f64>>; 2] {
    let (n_w, n_el, _) = pos.dim();
    let mol = wf.molecule();
    let n_up = mol.n_up();
    let n_det = wf.config().n_det;
    let mut out = [None, None];
    for (a, slot) in out.iter_mut().enumerate() {
        let range = if a == 0 { 0..n_up } else { n_up..n_el };
        let n_a = range.len();
        if n_a == 0 {
            continue;
        }
        let n_orb = wf.n_orb(a);
        let offset = if a == 1 && wf.config().det_mode == DetMode::Dense { n_up } else { 0 };
        let mut t = Array2::zeros((n_w * n_a * n_det, n_orb));
        for w in 0..n_w {
            let pts: Vec<[f64; 3]> = range.clone().map(|i| [pos[[w, i, 0]], pos[[w, i, 1]], pos[[w, i, 2]]]).collect();
            let phi = &scf.eval_orbitals(&pts)[a];
            for i in 0..n_a {
                for d in 0..n_det {
                    for k in 0..n_a {
                        t[[(w * n_a + i) * n_det + d, offset + k]] = phi[[i, k]];
                    }
                }
            }
        }
        *slot = Some(t);
    }
    out
}

/// Mean squared deviation of the orbital matrix entries from the HF
/// orbitals, with its parameter gradient.
pub fn pretrain_loss(wf: &WaveFunction, params: &Params, scf: &ScfResult, pos: ArrayView3<f64>) -> (f64, Vec<Array2<f64>>) {
    let (n_w, n_el, _) = pos.dim();
    let chunk = (512 / (n_el * n_el)).clamp(1, 128);
    let targets = orbital_targets(wf, scf, pos);
    let total: usize = targets.iter().flatten().map(|t| t.len()).sum();
    let bounds: Vec<(usize, usize)> = (0..n_w.div_ceil(chunk)).map(|c| (c * chunk, ((c + 1) * chunk).min(n_w))).collect();
    let parts: Vec<(f64, Vec<Array2<f64>>)> = bounds
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut g = Graph::with_tape(params);
            let rows = pos.slice(ndarray::s![lo..hi, .., ..]).to_owned().into_shape_with_order(((hi - lo) * n_el, 3)).unwrap();
            let x = g.constant(rows);
            let orb = wf.build_orbitals(&mut g, x, hi - lo);
            let mut terms = Vec::new();
            for a in 0..2 {
                let (Some(v), Some(t)) = (orb.channels[a], &targets[a]) else { continue };
                let per_walker = t.nrows() / n_w;
                let tv = g.constant(t.slice(ndarray::s![lo * per_walker..hi * per_walker, ..]).to_owned());
                let d = g.sub(v, tv);
                let sq = g.mul(d, d);
                terms.push(g.sum_all(sq));
            }
            let mut loss = terms[0];
            for t in &terms[1..] {
                loss = g.add(loss, *t);
            }
            let value = g.value(loss)[[0, 0]];
            let grads = g.backward(loss, Array2::from_elem((1, 1), 1.0 / total as f64));
            (value, grads)
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = params.zeros_like();
    for (l, gs) in parts {
        loss += l;
        for (t, g) in grads.iter_mut().zip(gs) {
            *t += &g;
        }
    }
    (loss / total as f64, grads)
}

/// Supervised pretraining. Positions are drawn half from the network's own
/// walkers (`walkers`, sampling `|psi|^2`) and half from a second walker set
/// sampling the HF determinant. Envelope parameters stay fixed. Returns the
/// loss after every step.
#[allow(clippy::too_many_arguments)]
pub fn pretrain(
    wf: &WaveFunction,
    params: &mut Params,
    scf: &ScfResult,
    walkers: &mut WalkerBatch,
    hf_walkers: &mut WalkerBatch,
    cfg: &TrainConfig,
    scfg: &SamplerConfig,
    n_steps: usize,
) -> Result<Vec<f64>> {
    if !scf.converged {
        return Err(Error::NotConverged("pretraining needs a converged SCF reference".into()));
    }
    let mol = wf.molecule();
    let n_up = mol.n_up();
    let frozen: Vec<bool> = params.names().iter().map(|n| n.starts_with("env.")).collect();
    let mut adam = Adam::new(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let hf = |x: ArrayView3<f64>| hf_log_psi(scf, n_up, x);
    let half_a = walkers.n_walkers().div_ceil(2);
    let half_b = hf_walkers.n_walkers() / 2;
    let mut losses = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        {
            let f = density(wf, params);
            decorrelate(walkers, mol, scfg, cfg.pretrain_decorrelation, true, &f);
        }
        decorrelate(hf_walkers, mol, scfg, cfg.pretrain_decorrelation, true, &hf);
        let a = walkers.pos.slice(ndarray::s![..half_a, .., ..]);
        let b = hf_walkers.pos.slice(ndarray::s![..half_b, .., ..]);
        let pos: Array3<f64> = ndarray::concatenate(Axis(0), &[a, b]).unwrap();
        let (loss, grads) = pretrain_loss(wf, params, scf, pos.view());
        if !loss.is_finite() || !global_norm(&grads).is_finite() {
            return Err(Error::NonFinite { what: "pretraining loss".into(), step });
        }
        adam.step(params, &grads, cfg.pretrain_lr, &frozen);
        losses.push(loss);
    }
    walkers.log_psi = log_psi_batch(wf, params, walkers.pos.view());
    Ok(losses)
}

/// Walker set sampling the HF determinant, burnt in.
pub fn hf_walkers(scf: &ScfResult, mol: &Molecule, n_walkers: usize, seed: u64, scfg: &SamplerConfig) -> WalkerBatch {
    let n_up = mol.n_up();
    let hf = |x: ArrayView3<f64>| hf_log_psi(scf, n_up, x);
    let mut b = init_walkers(mol, n_walkers, seed, scfg.init_stepsize, &hf);
    for _ in 0..scfg.burn_in {
        mh_step(&mut b, mol, scfg, true, &hf);
    }
    b
}

/// Full training state for checkpointing.
pub struct TrainState {
    pub params: Params,
    pub adam: Adam,
    pub walkers: WalkerBatch,
    /// Next optimization step.
    pub step: usize,
}

impl TrainState {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays = Vec::new();
        let push = |arrays: &mut Vec<NamedArray>, name: String, a: &Array2<f64>| {
            arrays.push(NamedArray { name, shape: a.shape().to_vec(), data: a.iter().copied().collect() });
        };
        for (id, name) in self.params.names().iter().enumerate() {
            push(&mut arrays, format!("param.{name}"), self.params.tensor(id));
            push(&mut arrays, format!("adam.m.{name}"), &self.adam.m[id]);
            push(&mut arrays, format!("adam.v.{name}"), &self.adam.v[id]);
        }
        let w = &self.walkers;
        arrays.push(NamedArray { name: "walkers.pos".into(), shape: w.pos.shape().to_vec(), data: w.pos.iter().copied().collect() });
        arrays.push(NamedArray {
            name: "walkers.log_psi".into(),
            shape: vec![w.n_walkers(), 2],
            data: w.log_psi.iter().flat_map(|l| [l.sign, l.log_abs]).collect(),
        });
        arrays.push(NamedArray {
            name: "walkers.state".into(),
            shape: vec![3],
            data: vec![w.stepsize, w.acc_ema, w.last_acceptance],
        });
        Checkpoint {
            step: self.step as u64,
            counters: vec![("adam.t".into(), self.adam.t), ("walkers.n_steps".into(), w.n_steps)],
            rngs: w.rngs.iter().map(save_rng).collect(),
            arrays,
        }
    }

    /// Restores a state; `template` supplies parameter names and shapes.
    pub fn from_checkpoint(ck: &Checkpoint, template: &Params, cfg: &TrainConfig) -> std::result::Result<Self, String> {
        let get = |name: &str| ck.array(name).ok_or_else(|| format!("missing array `{name}`"));
        let as2 = |a: &NamedArray, want: &Array2<f64>| -> std::result::Result<Array2<f64>, String> {
            if a.shape != want.shape() {
                return Err(format!("array `{}` has shape {:?}, expected {:?}", a.name, a.shape, want.shape()));
            }
            Ok(Array2::from_shape_vec(want.dim(), a.data.clone()).unwrap())
        };
        let mut params = template.clone();
        let mut adam = Adam::from_config(template, cfg);
        for id in 0..template.len() {
            let name = template.name(id).to_string();
            *params.tensor_mut(id) = as2(get(&format!("param.{name}"))?, template.tensor(id))?;
            adam.m[id] = as2(get(&format!("adam.m.{name}"))?, template.tensor(id))?;
            adam.v[id] = as2(get(&format!("adam.v.{name}"))?, template.tensor(id))?;
        }
        adam.t = ck.counter("adam.t").ok_or("missing counter `adam.t`")?;
        let pos = get("walkers.pos")?;
        if pos.shape.len() != 3 {
            return Err("walker positions must be three-dimensional".into());
        }
        let pos = Array3::from_shape_vec((pos.shape[0], pos.shape[1], pos.shape[2]), pos.data.clone()).map_err(|e| e.to_string())?;
        let lp = get("walkers.log_psi")?;
        let log_psi = lp.data.chunks_exact(2).map(|c| LogPsi { sign: c[0], log_abs: c[1] }).collect::<Vec<_>>();
        let st = get("walkers.state")?;
        if st.data.len() != 3 || log_psi.len() != pos.dim().0 || ck.rngs.len() != pos.dim().0 {
            return Err("inconsistent walker state".into());
        }
        let walkers = WalkerBatch {
            pos,
            log_psi,
            stepsize: st.data[0],
            acc_ema: st.data[1],
            last_acceptance: st.data[2],
            rngs: ck.rngs.iter().map(restore_rng).collect(),
            n_steps: ck.counter("walkers.n_steps").ok_or("missing counter `walkers.n_steps`")?,
        };
        Ok(TrainState { params, adam, walkers, step: ck.step as usize })
    }
}

/// Runs `n_steps` optimization steps starting at `state.step`, calling
/// `on_step` after each one (logging, checkpointing).
pub fn optimize(
    ans: &dyn Ansatz,
    mol: &Molecule,
    state: &mut TrainState,
    cfg: &TrainConfig,
    scfg: &SamplerConfig,
    n_steps: usize,
    on_step: &mut dyn FnMut(&StepLog, &TrainState) -> Result<()>,
) -> Result<()> {
    for _ in 0..n_steps {
        let step = state.step;
        let log = optimize_step(ans, &mut state.params, mol, &mut state.walkers, &mut state.adam, cfg, scfg, step)?;
        state.step += 1;
        on_step(&log, state)?;
    }
    Ok(())
}

/// Convenience: fresh walkers for `ans`, burnt in.
pub fn burnt_in_walkers(
    ans: &dyn Ansatz,
    params: &Params,
    mol: &Molecule,
    n_walkers: usize,
    seed: u64,
    scfg: &SamplerConfig,
) -> WalkerBatch {
    let f = density(ans, params);
    let f: &LogPsiFn = &f;
    let mut b = init_walkers(mol, n_walkers, seed, scfg.init_stepsize, f);
    crate::sampler::burn_in(&mut b, mol, scfg, f);
    b
}
