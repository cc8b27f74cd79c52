//! The many-electron ansatz: orbital matrices from electron embeddings,
//! exponential envelopes and a sum of determinants.
//!
//! For determinant `d` and an electron `i` of spin channel `a`,
//!
//! ```text
//! M^d_ki = (W^da_k . h_i) * sum_I pi^da_kI exp(-|omega^da_kI| |r_i - R_I|)
//! psi    = sum_d det M^d
//! ```
//!
//! In dense mode every electron sees `n_el` orbitals and each determinant is
//! `n_el x n_el`; in block mode the two spin channels get separate square
//! determinants whose product enters the sum.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, RowMap, Var};
use crate::embedding::{graph_embed, register_params, EmbeddingConfig, InputDims};
use crate::features::{graph_features, FeatureConstants, FeatureMode};
use crate::frames::FrameSet;
use crate::layout::Layout;
use crate::params::Params;
use crate::system::Molecule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetMode {
    #[default]
    Dense,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeInit {
    /// `omega_kI = Z_I / n_k`.
    #[default]
    ZOverN,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub embedding: EmbeddingConfig,
    pub n_det: usize,
    pub features: FeatureMode,
    pub det_mode: DetMode,
    pub envelope_init: EnvelopeInit,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            embedding: EmbeddingConfig::default(),
            n_det: 32,
            features: FeatureMode::LocalFrames,
            det_mode: DetMode::Dense,
            envelope_init: EnvelopeInit::ZOverN,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.embedding.validate()?;
        if self.n_det == 0 {
            return Err("n_det must be at least 1".into());
        }
        Ok(())
    }
}

/// `psi = sign * exp(log_abs)`. Nodal points have sign 0 and log_abs `-inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPsi {
    pub sign: f64,
    pub log_abs: f64,
}

/// Anything that can build `log|psi|` for a batch of walkers on a graph.
pub trait Ansatz: Sync {
    fn n_el(&self) -> usize;
    fn n_up(&self) -> usize;
    /// `x` holds `batch * n_el` electron rows; the result is `batch x 1`
    /// with a sign vector attached.
    fn build_log_psi(&self, g: &mut Graph, x: Var, batch: usize) -> Var;
}

/// Principal quantum number for the 1-based orbital index `k`: the smallest
/// `n` with `1 + 4 + ... + n^2 >= k`.
pub fn principal_quantum_number(k: usize) -> usize {
    assert!(k >= 1);
    let mut n = 0;
    let mut cap = 0;
    while cap < k {
        n += 1;
        cap += n * n;
    }
    n
}

/// Plain envelope evaluation: `out[i, k] = sum_I pi[I, k] exp(-|omega[I, k]| rho[i, I])`.
pub fn envelopes(omega: &Array2<f64>, pi: &Array2<f64>, rho_norms: &Array2<f64>) -> Array2<f64> {
    let (n, n_nuc) = rho_norms.dim();
    let k = omega.ncols();
    Array2::from_shape_fn((n, k), |(i, c)| (0..n_nuc).map(|nuc| pi[[nuc, c]] * (-omega[[nuc, c]].abs() * rho_norms[[i, nuc]]).exp()).sum())
}

const CHANNELS: [&str; 2] = ["up", "dn"];

/// The full ansatz for one molecule.
pub struct WaveFunction {
    cfg: NetworkConfig,
    mol: Molecule,
    frames: FrameSet,
    consts: FeatureConstants,
    layouts: Mutex<HashMap<usize, Arc<Layout>>>,
}

/// Per-channel orbital matrix entries of a batch.
pub struct OrbitalVars {
    /// `(walker, electron-in-channel, det)` rows x `n_orb` columns, one per
    /// non-empty spin channel (`None` for an empty channel).
    pub channels: [Option<Var>; 2],
}

impl WaveFunction {
    pub fn new(cfg: NetworkConfig, mol: Molecule, frames: FrameSet) -> Self {
        assert_eq!(frames.frames.len(), mol.n_nuc());
        let consts = FeatureConstants::new(&mol, &frames, cfg.features);
        WaveFunction { cfg, mol, frames, consts, layouts: Mutex::new(HashMap::new()) }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn molecule(&self) -> &Molecule {
        &self.mol
    }

    pub fn frames(&self) -> &FrameSet {
        &self.frames
    }

    /// Number of orbitals per electron in channel `a`.
    pub fn n_orb(&self, a: usize) -> usize {
        match self.cfg.det_mode {
            DetMode::Dense => self.mol.n_el(),
            DetMode::Block => self.channel_size(a),
        }
    }

    fn channel_size(&self, a: usize) -> usize {
        if a == 0 {
            self.mol.n_up()
        } else {
            self.mol.n_dn()
        }
    }

    pub fn input_dims(&self) -> InputDims {
        let n_nuc = self.mol.n_nuc();
        let f = self.cfg.features;
        InputDims { h0: f.h0_dim(n_nuc), v0: f.v0_dim(), g0: f.g0_dim(), n_nuc, opposite_pairs: self.mol.n_dn() > 0 }
    }

    pub fn layout(&self, batch: usize) -> Arc<Layout> {
        let mut cache = self.layouts.lock().expect("layout cache");
        cache
            .entry(batch)
            .or_insert_with(|| Arc::new(Layout::new(batch, self.mol.n_el(), self.mol.n_up(), self.mol.n_nuc())))
            .clone()
    }

    /// Fresh parameters: embedding weights `N(0, 1/fan_in)` with zero biases,
    /// orbital maps likewise, `pi = 1` and exponents per `envelope_init`.
    pub fn init_params(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let cfg = &self.cfg;
        register_params(&mut p, &cfg.embedding, &self.input_dims(), &mut rng);
        let width = cfg.embedding.width_one;
        let normal = Normal::new(0.0, (1.0 / width as f64).sqrt()).unwrap();
        let n_nuc = self.mol.n_nuc();
        for a in 0..2 {
            if self.channel_size(a) == 0 {
                continue;
            }
            let n_orb = self.n_orb(a);
            let cols = cfg.n_det * n_orb;
            let ch = CHANNELS[a];
            p.add(format!("orb.w.{ch}"), Array2::from_shape_fn((width, cols), |_| normal.sample(&mut rng)));
            let omega = Array2::from_shape_fn((n_nuc, cols), |(nuc, c)| match cfg.envelope_init {
                EnvelopeInit::Ones => 1.0,
                EnvelopeInit::ZOverN => {
                    let k = c % n_orb + 1;
                    self.mol.nuclei()[nuc].charge as f64 / principal_quantum_number(k) as f64
                }
            });
            p.add(format!("env.omega.{ch}"), omega);
            p.add(format!("env.pi.{ch}"), Array2::ones((n_nuc, cols)));
        }
        p
    }

    /// Orbital matrix entries `Lambda * Omega` for a batch of walkers.
    pub fn build_orbitals(&self, g: &mut Graph, x: Var, batch: usize) -> OrbitalVars {
        let layout = self.layout(batch);
        let fv = graph_features(g, &self.consts, &layout, x);
        let h = graph_embed(g, &self.cfg.embedding, &layout, &fv);
        let mut channels = [None, None];
        for (a, slot) in channels.iter_mut().enumerate() {
            let n_a = self.channel_size(a);
            if n_a == 0 {
                continue;
            }
            let sel = if a == 0 { layout.select_up.clone() } else { layout.select_dn.clone() };
            let ch = CHANNELS[a];
            let ha = g.row_map(&[h], sel.clone());
            let ra = g.row_map(&[fv.rho_norm], sel);
            let w = g.param_named(&format!("orb.w.{ch}"));
            let lam = g.matmul(ha, w);
            let omega = g.param_named(&format!("env.omega.{ch}"));
            let pi = g.param_named(&format!("env.pi.{ch}"));
            let env = g.envelope(ra, omega, pi);
            let m = g.mul(lam, env);
            let n_orb = self.n_orb(a);
            *slot = Some(g.reshape(m, batch * n_a * self.cfg.n_det, n_orb));
        }
        OrbitalVars { channels }
    }
}

impl Ansatz for WaveFunction {
    fn n_el(&self) -> usize {
        self.mol.n_el()
    }

    fn n_up(&self) -> usize {
        self.mol.n_up()
    }

    fn build_log_psi(&self, g: &mut Graph, x: Var, batch: usize) -> Var {
        let layout = self.layout(batch);
        let n_det = self.cfg.n_det;
        let orb = self.build_orbitals(g, x, batch);
        let up = orb.channels[0].expect("at least one spin-up electron");
        let ld = match self.cfg.det_mode {
            DetMode::Dense => {
                let n = self.mol.n_el();
                let dn = match orb.channels[1] {
                    Some(v) => v,
                    None => g.constant(Array2::zeros((0, n))),
                };
                let m = g.row_map(&[up, dn], layout.det_assembly(n_det, true, 0));
                g.logdet(m, n)
            }
            DetMode::Block => {
                let m = g.row_map(&[up], layout.det_assembly(n_det, false, 0));
                let lu = g.logdet(m, self.mol.n_up());
                match orb.channels[1] {
                    Some(dn) => {
                        let m = g.row_map(&[dn], layout.det_assembly(n_det, false, 1));
                        let ld = g.logdet(m, self.mol.n_dn());
                        g.add(lu, ld)
                    }
                    None => lu,
                }
            }
        };
        let per_walker = g.reshape(ld, batch, n_det);
        g.logsumexp_signed(per_walker)
    }
}

/// Sums consecutive groups of `n` rows.
fn group_sum(rows: usize, n: usize) -> Arc<RowMap> {
    let mut b = RowMap::builder(vec![rows], rows / n);
    for r in 0..rows {
        b.add(r / n, 0, r, 1.0);
    }
    Arc::new(b.build())
}

/// `log psi = -|r|^2 / 2` over all electron coordinates; no parameters.
pub struct GaussianToy {
    pub n_el: usize,
}

impl Ansatz for GaussianToy {
    fn n_el(&self) -> usize {
        self.n_el
    }

    fn n_up(&self) -> usize {
        self.n_el
    }

    fn build_log_psi(&self, g: &mut Graph, x: Var, batch: usize) -> Var {
        let sq = g.mul(x, x);
        let ones = g.constant(Array2::ones((3, 1)));
        let r2 = g.matmul(sq, ones);
        let total = g.row_map(&[r2], group_sum(batch * self.n_el, self.n_el));
        let out = g.scale(total, -0.5);
        g.set_sign(out, Array1::ones(batch));
        out
    }
}

/// Sets parameters of a one-electron, one-nucleus [`WaveFunction`] with a
/// single determinant so that `psi = c exp(-Z |r - R|)`, the exact
/// hydrogen-like ground state: every embedding weight is zero, so `h^L` is a
/// constant, and `omega = Z`, `pi = 1`.
pub fn make_exact_hydrogenic(wf: &WaveFunction, params: &mut Params) {
    assert_eq!(wf.mol.n_el(), 1);
    assert_eq!(wf.mol.n_nuc(), 1);
    let last = wf.cfg.embedding.n_layers - 1;
    let names: Vec<String> = params.names().to_vec();
    for name in &names {
        if name.starts_with("emb.") {
            params.get_mut(name).unwrap().fill(0.0);
        }
    }
    params.get_mut(&format!("emb.{last}.one.b")).unwrap().fill(0.5);
    params.get_mut("orb.w.up").unwrap().fill(1.0);
    params.get_mut("env.omega.up").unwrap().fill(wf.mol.nuclei()[0].charge as f64);
    params.get_mut("env.pi.up").unwrap().fill(1.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingVariant;
    use crate::system::{parse_geometry, LengthUnit, Nucleus};

    fn small_cfg(mode: DetMode) -> NetworkConfig {
        NetworkConfig {
            embedding: EmbeddingConfig { width_one: 8, width_aux: 4, n_layers: 2, variant: EmbeddingVariant::Combined },
            n_det: 2,
            det_mode: mode,
            ..NetworkConfig::default()
        }
    }

    fn lih() -> Molecule {
        parse_geometry("2\n\nLi 0 0 0\nH 0 0 3.015\n", LengthUnit::Bohr).unwrap()
    }

    pub(crate) fn eval(wf: &WaveFunction, p: &Params, r: &[[f64; 3]]) -> LogPsi {
        let mut g = Graph::new(p);
        let x = g.constant(Array2::from_shape_fn((r.len(), 3), |(i, c)| r[i][c]));
        let out = wf.build_log_psi(&mut g, x, 1);
        LogPsi { sign: g.sign(out).unwrap()[0], log_abs: g.value(out)[[0, 0]] }
    }

    fn config() -> Vec<[f64; 3]> {
        vec![[0.3, -0.2, 0.5], [-0.4, 0.9, 0.1], [0.2, 0.1, 2.6], [0.7, -0.6, -0.3]]
    }

    #[test]
    fn quantum_numbers_follow_shell_capacities() {
        let n: Vec<usize> = (1..=15).map(principal_quantum_number).collect();
        assert_eq!(n, [1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3, 4]);
    }

    #[test]
    fn envelope_arithmetic() {
        let omega = Array2::from_shape_vec((2, 1), vec![1.0, 2.0]).unwrap();
        let pi = Array2::ones((2, 1));
        let rho = Array2::from_shape_vec((1, 2), vec![0.5, 0.5]).unwrap();
        let v = envelopes(&omega, &pi, &rho);
        assert!((v[[0, 0]] - ((-0.5f64).exp() + (-1.0f64).exp())).abs() < 1e-15);
        let one = envelopes(&Array2::ones((1, 1)), &Array2::ones((1, 1)), &Array2::zeros((1, 1)));
        assert_eq!(one[[0, 0]], 1.0);
        let far = envelopes(&Array2::ones((1, 1)), &Array2::ones((1, 1)), &Array2::from_elem((1, 1), 800.0));
        assert_eq!(far[[0, 0]], 0.0);
        // negative raw exponents act through their magnitude
        let neg = envelopes(&Array2::from_elem((1, 1), -2.0), &Array2::ones((1, 1)), &Array2::ones((1, 1)));
        assert!((neg[[0, 0]] - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn nitrogen_exponents() {
        let mol = Molecule::neutral(vec![Nucleus { charge: 7, position: [0.0; 3] }]).unwrap();
        let mut cfg = small_cfg(DetMode::Dense);
        let wf = WaveFunction::new(cfg, mol.clone(), FrameSet::identity(1));
        let p = wf.init_params(0);
        let om = p.get("env.omega.up").unwrap();
        assert_eq!(om.ncols(), 2 * 7);
        for d in 0..2 {
            assert_eq!(om[[0, d * 7]], 7.0);
            for k in 1..5 {
                assert_eq!(om[[0, d * 7 + k]], 3.5);
            }
            assert_eq!(om[[0, d * 7 + 5]], 7.0 / 3.0);
        }
        assert!(p.get("env.pi.dn").unwrap().iter().all(|&v| v == 1.0));
        cfg.envelope_init = EnvelopeInit::Ones;
        let wf = WaveFunction::new(cfg, mol, FrameSet::identity(1));
        let p = wf.init_params(0);
        assert!(p.get("env.omega.up").unwrap().iter().chain(p.get("env.omega.dn").unwrap()).all(|&v| v == 1.0));
    }

    #[test]
    fn transposition_flips_sign() {
        for mode in [DetMode::Dense, DetMode::Block] {
            let wf = WaveFunction::new(small_cfg(mode), lih(), FrameSet::identity(2));
            let p = wf.init_params(3);
            let r = config();
            let a = eval(&wf, &p, &r);
            let mut s = r.clone();
            s.swap(0, 1);
            let b = eval(&wf, &p, &s);
            assert_eq!(a.sign, -b.sign);
            assert!((a.log_abs - b.log_abs).abs() < 1e-10);
        }
    }

    #[test]
    fn opposite_spin_exchange_is_not_antisymmetric() {
        let wf = WaveFunction::new(small_cfg(DetMode::Dense), lih(), FrameSet::identity(2));
        let p = wf.init_params(3);
        let r = config();
        let mut s = r.clone();
        s.swap(0, 2);
        assert!((eval(&wf, &p, &r).log_abs - eval(&wf, &p, &s).log_abs).abs() > 1e-6);
    }

    #[test]
    fn scaling_orbital_maps_scales_determinant() {
        let mut cfg = small_cfg(DetMode::Dense);
        cfg.n_det = 1;
        let wf = WaveFunction::new(cfg, lih(), FrameSet::identity(2));
        let mut p = wf.init_params(5);
        let r = config();
        let a = eval(&wf, &p, &r);
        let c: f64 = 1.7;
        for ch in CHANNELS {
            p.get_mut(&format!("orb.w.{ch}")).unwrap().mapv_inplace(|v| v * c);
        }
        let b = eval(&wf, &p, &r);
        assert_eq!(a.sign, b.sign);
        assert!((b.log_abs - a.log_abs - 4.0 * c.ln()).abs() < 1e-10);
    }

    #[test]
    fn one_electron_collapses_to_single_entry() {
        let mol = Molecule::neutral(vec![Nucleus { charge: 1, position: [0.1, 0.0, -0.2] }]).unwrap();
        let mut cfg = small_cfg(DetMode::Dense);
        cfg.n_det = 1;
        let wf = WaveFunction::new(cfg, mol.clone(), FrameSet::identity(1));
        let p = wf.init_params(1);
        let r = [[0.5, 0.4, 0.3]];
        let lp = eval(&wf, &p, &r);
        let feats = crate::features::build_features(&mol, wf.frames(), &r, cfg.features);
        let h = crate::embedding::embed(&p, &cfg.embedding, &feats, 1);
        let lam = h.dot(p.get("orb.w.up").unwrap())[[0, 0]];
        let rho = Array2::from_elem((1, 1), crate::system::distance(&r[0], &mol.nuclei()[0].position));
        let om = envelopes(p.get("env.omega.up").unwrap(), p.get("env.pi.up").unwrap(), &rho)[[0, 0]];
        assert!((lp.log_abs - (lam * om).abs().ln()).abs() < 1e-12);
        assert_eq!(lp.sign, (lam * om).signum());
    }

    #[test]
    fn exact_hydrogenic_is_exponential() {
        let mol = Molecule::neutral(vec![Nucleus { charge: 1, position: [0.0; 3] }]).unwrap();
        let mut cfg = small_cfg(DetMode::Dense);
        cfg.n_det = 1;
        let wf = WaveFunction::new(cfg, mol, FrameSet::identity(1));
        let mut p = wf.init_params(1);
        make_exact_hydrogenic(&wf, &mut p);
        let a = eval(&wf, &p, &[[0.3, 0.0, 0.4]]).log_abs;
        let b = eval(&wf, &p, &[[1.0, 1.0, 1.0]]).log_abs;
        assert!((a - b - (3f64.sqrt() - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn dense_has_more_parameters_and_dets_scale_orbital_counts() {
        let n2 = parse_geometry("2\n\nN 0 0 0\nN 0 0 2.068\n", LengthUnit::Bohr).unwrap();
        let dense = WaveFunction::new(small_cfg(DetMode::Dense), n2.clone(), FrameSet::identity(2));
        let block = WaveFunction::new(small_cfg(DetMode::Block), n2.clone(), FrameSet::identity(2));
        assert!(dense.init_params(0).count() > block.init_params(0).count());
        let orbital = |p: &Params| -> usize {
            p.names().iter().zip(p.tensors()).filter(|(n, _)| !n.starts_with("emb.")).map(|(_, t)| t.len()).sum()
        };
        let mut cfg = small_cfg(DetMode::Dense);
        let one = orbital(&WaveFunction::new(cfg, n2.clone(), FrameSet::identity(2)).init_params(0));
        cfg.n_det = 4;
        let two = orbital(&WaveFunction::new(cfg, n2, FrameSet::identity(2)).init_params(0));
        assert_eq!(two, 2 * one);
    }

    #[test]
    fn hand_counted_parameters() {
        // H atom, one layer, widths (256, 32), one determinant.
        let mol = Molecule::neutral(vec![Nucleus { charge: 1, position: [0.0; 3] }]).unwrap();
        let cfg = NetworkConfig {
            embedding: EmbeddingConfig { width_one: 256, width_aux: 32, n_layers: 1, variant: EmbeddingVariant::Combined },
            n_det: 1,
            ..NetworkConfig::default()
        };
        let wf = WaveFunction::new(cfg, mol, FrameSet::identity(1));
        // h0: 4, g0: 1, v0: 4. f = 3*4 + 32 + 32 = 76.
        let one = 76 * 256 + 256;
        // no opposite-spin kernels with a single electron
        let b_same = 32 + 32;
        let c_same = 4 * 32 + 32;
        let b_nuc = 4 * 32 + 32;
        let c_nuc = 32 * 32 + 32;
        let z = 32;
        let orb = 256 + 1 + 1;
        assert_eq!(wf.init_params(0).count(), one + b_same + c_same + b_nuc + c_nuc + z + orb);
    }

    #[test]
    fn decays_far_from_nuclei() {
        let wf = WaveFunction::new(small_cfg(DetMode::Dense), lih(), FrameSet::identity(2));
        let p = wf.init_params(9);
        let base = config();
        let dir = [0.48, -0.6, 0.64];
        let mut prev = f64::INFINITY;
        for step in 0..8 {
            let t = 10.0 + 5.0 * step as f64;
            let mut r = base.clone();
            for c in 0..3 {
                r[1][c] = dir[c] * t;
            }
            let v = eval(&wf, &p, &r).log_abs;
            assert!(v < prev);
            prev = v;
        }
    }
}
