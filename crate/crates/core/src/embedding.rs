//! Iterated electron embedding with one-electron, electron-pair and
//! electron-nucleus streams.
//!
//! Per iteration `l`:
//!
//! ```text
//! s_el_i  = sum_j B_s(g_ij) * C_s(h_j)        s = same / opposite spin
//! s_nuc_i = sum_I B_nuc(v_iI) * C_nuc(z_I)
//! f_i     = [h_i, mean_up(h), mean_dn(h), s_el_i, s_nuc_i]
//! h_i    <- tanh(A_one f_i) + h_i
//! g_ij   <- tanh(A_s g_ij) + g_ij,   v_iI <- tanh(A_nuc v_iI) + v_iI
//! ```
//!
//! Every map is one affine layer followed by `tanh`; residual terms are added
//! only where input and output widths agree. The pair and nucleus streams are
//! not updated after the last iteration since nothing reads them.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::features::{FeatureBatch, FeatureVars};
use crate::layout::Layout;
use crate::params::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingVariant {
    #[default]
    Combined,
    /// `B` is the identity on `g`, `C` is 1 and there is no nucleus stream.
    FerminetLike,
    /// `f_i = [s_el_i, s_nuc_i]`.
    PaulinetLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub width_one: usize,
    pub width_aux: usize,
    pub n_layers: usize,
    pub variant: EmbeddingVariant,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { width_one: 256, width_aux: 32, n_layers: 4, variant: EmbeddingVariant::Combined }
    }
}

/// Input widths of the three streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputDims {
    pub h0: usize,
    pub v0: usize,
    pub g0: usize,
    pub n_nuc: usize,
    /// Whether both spin channels are occupied, i.e. opposite-spin pairs exist.
    pub opposite_pairs: bool,
}

/// Structural switches derived from the variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Kernels {
    b_identity: bool,
    c_one: bool,
    nucleus: bool,
    h_terms: bool,
}

impl Kernels {
    fn of(v: EmbeddingVariant) -> Self {
        match v {
            EmbeddingVariant::Combined => Kernels { b_identity: false, c_one: false, nucleus: true, h_terms: true },
            EmbeddingVariant::FerminetLike => Kernels { b_identity: true, c_one: true, nucleus: false, h_terms: true },
            EmbeddingVariant::PaulinetLike => Kernels { b_identity: false, c_one: false, nucleus: true, h_terms: false },
        }
    }
}

struct Widths {
    h: usize,
    g: usize,
    v: usize,
    f: usize,
}

impl EmbeddingConfig {
    fn widths(&self, k: Kernels, dims: &InputDims, l: usize) -> Widths {
        let h = if l == 0 { dims.h0 } else { self.width_one };
        let g = if l == 0 { dims.g0 } else { self.width_aux };
        let v = if l == 0 { dims.v0 } else { self.width_aux };
        let s_el = if k.b_identity { g } else { self.width_aux };
        let s_nuc = if k.nucleus { self.width_aux } else { 0 };
        let f = if k.h_terms { 3 * h } else { 0 } + s_el + s_nuc;
        Widths { h, g, v, f }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_layers == 0 {
            return Err("n_layers must be at least 1".into());
        }
        if self.width_one == 0 || self.width_aux == 0 {
            return Err("network widths must be positive".into());
        }
        Ok(())
    }
}

fn add_affine(p: &mut Params, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
    p.add(format!("{name}.w"), Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng)));
    p.add(format!("{name}.b"), Array2::zeros((1, fan_out)));
}

/// Registers all embedding parameters with random initial values.
pub fn register_params(p: &mut Params, cfg: &EmbeddingConfig, dims: &InputDims, rng: &mut impl Rng) {
    register_with(p, cfg, Kernels::of(cfg.variant), dims, rng)
}

fn register_with(p: &mut Params, cfg: &EmbeddingConfig, k: Kernels, dims: &InputDims, rng: &mut impl Rng) {
    let aux = cfg.width_aux;
    for l in 0..cfg.n_layers {
        let w = cfg.widths(k, dims, l);
        let last = l + 1 == cfg.n_layers;
        add_affine(p, &format!("emb.{l}.one"), w.f, cfg.width_one, rng);
        if !k.b_identity {
            add_affine(p, &format!("emb.{l}.b_same"), w.g, aux, rng);
            if dims.opposite_pairs {
                add_affine(p, &format!("emb.{l}.b_diff"), w.g, aux, rng);
            }
        }
        if !k.c_one {
            add_affine(p, &format!("emb.{l}.c_same"), w.h, aux, rng);
            if dims.opposite_pairs {
                add_affine(p, &format!("emb.{l}.c_diff"), w.h, aux, rng);
            }
        }
        if k.nucleus {
            add_affine(p, &format!("emb.{l}.b_nuc"), w.v, aux, rng);
            add_affine(p, &format!("emb.{l}.c_nuc"), aux, aux, rng);
        }
        if !last {
            add_affine(p, &format!("emb.{l}.a_same"), w.g, aux, rng);
            if dims.opposite_pairs {
                add_affine(p, &format!("emb.{l}.a_diff"), w.g, aux, rng);
            }
            if k.nucleus {
                add_affine(p, &format!("emb.{l}.a_nuc"), w.v, aux, rng);
            }
        }
    }
    if k.nucleus {
        let normal = Normal::new(0.0, 1.0).unwrap();
        p.add("emb.z", Array2::from_shape_fn((dims.n_nuc, aux), |_| normal.sample(rng)));
    }
}

fn dense_tanh(g: &mut Graph, x: Var, name: &str) -> Var {
    let w = g.param_named(&format!("{name}.w"));
    let b = g.param_named(&format!("{name}.b"));
    let a = g.affine(x, w, b);
    g.tanh(a)
}

fn residual(g: &mut Graph, new: Var, old: Var) -> Var {
    if g.shape(new) == g.shape(old) {
        g.add(new, old)
    } else {
        new
    }
}

/// Runs the embedding on batched features; returns `h^L` (electron rows).
pub fn graph_embed(g: &mut Graph, cfg: &EmbeddingConfig, layout: &Layout, fv: &FeatureVars) -> Var {
    graph_embed_with(g, cfg, Kernels::of(cfg.variant), layout, fv)
}

fn graph_embed_with(g: &mut Graph, cfg: &EmbeddingConfig, k: Kernels, layout: &Layout, fv: &FeatureVars) -> Var {
    let mut h = fv.h0;
    let mut g_same = fv.g_same;
    let mut g_diff = fv.g_diff;
    let mut v = fv.v0;
    let z = k.nucleus.then(|| g.param_named("emb.z"));
    for l in 0..cfg.n_layers {
        let last = l + 1 == cfg.n_layers;
        let mut parts = Vec::with_capacity(5);
        if k.h_terms {
            let mu = g.row_map(&[h], layout.mean_up.clone());
            let md = g.row_map(&[h], layout.mean_dn.clone());
            parts.extend([h, mu, md]);
        }
        // electron-electron convolution
        let pair_term = |g: &mut Graph, pairs: Var, which: &str, gather| {
            let b = if k.b_identity { pairs } else { dense_tanh(g, pairs, &format!("emb.{l}.b_{which}")) };
            if k.c_one {
                b
            } else {
                let c = dense_tanh(g, h, &format!("emb.{l}.c_{which}"));
                let cj = g.row_map(&[c], gather);
                g.mul(b, cj)
            }
        };
        let ts = pair_term(g, g_same, "same", layout.same_gather_j.clone());
        let s_el = match g_diff {
            Some(gd) => {
                let td = pair_term(g, gd, "diff", layout.diff_gather_j.clone());
                g.row_map(&[ts, td], layout.pair_scatter_i.clone())
            }
            None => {
                let cols = g.shape(ts).1;
                let empty = g.constant(Array2::zeros((0, cols)));
                g.row_map(&[ts, empty], layout.pair_scatter_i.clone())
            }
        };
        parts.push(s_el);
        if let Some(z) = z {
            let bn = dense_tanh(g, v, &format!("emb.{l}.b_nuc"));
            let cn = dense_tanh(g, z, &format!("emb.{l}.c_nuc"));
            let cg = g.row_map(&[cn], layout.nuc_gather.clone());
            let prod = g.mul(bn, cg);
            parts.push(g.row_map(&[prod], layout.nuc_scatter.clone()));
        }
        let f = g.concat_cols(&parts);
        let hn = dense_tanh(g, f, &format!("emb.{l}.one"));
        h = residual(g, hn, h);
        if !last {
            let gs = dense_tanh(g, g_same, &format!("emb.{l}.a_same"));
            g_same = residual(g, gs, g_same);
            if let Some(gd) = g_diff {
                let t = dense_tanh(g, gd, &format!("emb.{l}.a_diff"));
                g_diff = Some(residual(g, t, gd));
            }
            if k.nucleus {
                let t = dense_tanh(g, v, &format!("emb.{l}.a_nuc"));
                v = residual(g, t, v);
            }
        }
    }
    h
}

/// Embedding of a single configuration from precomputed features.
pub fn embed(params: &Params, cfg: &EmbeddingConfig, feats: &FeatureBatch, n_up: usize) -> Array2<f64> {
    embed_with(params, cfg, Kernels::of(cfg.variant), feats, n_up)
}

fn embed_with(params: &Params, cfg: &EmbeddingConfig, k: Kernels, feats: &FeatureBatch, n_up: usize) -> Array2<f64> {
    let n_el = feats.h0.nrows();
    let (_, n_nuc, v_dim) = feats.v0.dim();
    let g_dim = feats.g0.dim().2;
    let layout = Layout::new(1, n_el, n_up, n_nuc);
    let mut g = Graph::new(params);
    let h0 = g.constant(feats.h0.clone());
    let v0 = g.constant(feats.v0.clone().into_shape_with_order((n_el * n_nuc, v_dim)).unwrap());
    let pairs = |list: &[(usize, usize)]| {
        Array2::from_shape_fn((list.len(), g_dim), |(p, c)| feats.g0[[list[p].0, list[p].1, c]])
    };
    let g_same = g.constant(pairs(&layout.same_pairs));
    let g_diff = (!layout.diff_pairs.is_empty()).then(|| g.constant(pairs(&layout.diff_pairs)));
    let rho_norm = g.constant(Array2::zeros((n_el, n_nuc)));
    let fv = FeatureVars { h0, v0, g_same, g_diff, rho_norm };
    let out = graph_embed_with(&mut g, cfg, k, &layout, &fv);
    g.value(out).clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_features, FeatureMode};
    use crate::frames::FrameSet;
    use crate::system::{parse_geometry, LengthUnit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(variant: EmbeddingVariant, mode: FeatureMode) -> (EmbeddingConfig, Params, crate::system::Molecule) {
        let mol = parse_geometry("2\n\nLi 0 0 0\nH 0 0 3.0\n", LengthUnit::Bohr).unwrap();
        let cfg = EmbeddingConfig { width_one: 6, width_aux: 3, n_layers: 3, variant };
        let dims = InputDims { h0: mode.h0_dim(2), v0: mode.v0_dim(), g0: mode.g0_dim(), n_nuc: 2, opposite_pairs: true };
        let mut p = Params::new();
        register_params(&mut p, &cfg, &dims, &mut ChaCha8Rng::seed_from_u64(1));
        (cfg, p, mol)
    }

    fn electrons() -> Vec<[f64; 3]> {
        vec![[0.3, -0.2, 0.9], [1.7, 0.4, -0.3], [-0.6, 0.8, 2.1], [0.2, 0.1, -0.4]]
    }

    #[test]
    fn same_spin_permutation_is_equivariant() {
        for variant in [EmbeddingVariant::Combined, EmbeddingVariant::FerminetLike, EmbeddingVariant::PaulinetLike] {
            let (cfg, p, mol) = setup(variant, FeatureMode::RawDiffs);
            let fs = FrameSet::identity(2);
            let mut r = electrons();
            let a = embed(&p, &cfg, &build_features(&mol, &fs, &r, FeatureMode::RawDiffs), 2);
            r.swap(0, 1);
            let b = embed(&p, &cfg, &build_features(&mol, &fs, &r, FeatureMode::RawDiffs), 2);
            for c in 0..6 {
                assert!((a[[0, c]] - b[[1, c]]).abs() < 1e-12);
                assert!((a[[1, c]] - b[[0, c]]).abs() < 1e-12);
                assert!((a[[2, c]] - b[[2, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coincident_same_spin_electrons_share_rows() {
        let (cfg, p, mol) = setup(EmbeddingVariant::Combined, FeatureMode::LocalFrames);
        let mut r = electrons();
        r[1] = r[0];
        let h = embed(&p, &cfg, &build_features(&mol, &FrameSet::identity(2), &r, FeatureMode::LocalFrames), 2);
        assert!(h.iter().all(|v| v.is_finite()));
        assert_eq!(h.row(0), h.row(1));
    }

    #[test]
    fn hydrogen_without_spin_down_is_finite() {
        let mol = parse_geometry("1\n\nH 0 0 0\n", LengthUnit::Bohr).unwrap();
        let cfg = EmbeddingConfig { width_one: 5, width_aux: 2, n_layers: 2, variant: EmbeddingVariant::Combined };
        let dims = InputDims { h0: 4, v0: 4, g0: 1, n_nuc: 1, opposite_pairs: false };
        let mut p = Params::new();
        register_params(&mut p, &cfg, &dims, &mut ChaCha8Rng::seed_from_u64(2));
        let f = build_features(&mol, &FrameSet::identity(1), &[[0.4, 0.1, -0.2]], FeatureMode::LocalFrames);
        let h = embed(&p, &cfg, &f, 1);
        assert_eq!(h.dim(), (1, 5));
        assert!(h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ferminet_like_is_combined_skeleton_without_nucleus_term() {
        // B = identity and C = 1 with the nucleus stream present but its slot
        // in A_one zeroed must reproduce ferminet_like with matched weights
        let mode = FeatureMode::LocalFrames;
        let (cfg, fp, mol) = setup(EmbeddingVariant::FerminetLike, mode);
        let dims = InputDims { h0: mode.h0_dim(2), v0: mode.v0_dim(), g0: mode.g0_dim(), n_nuc: 2, opposite_pairs: true };
        let k = Kernels { b_identity: true, c_one: true, nucleus: true, h_terms: true };
        let mut p = Params::new();
        register_with(&mut p, &cfg, k, &dims, &mut ChaCha8Rng::seed_from_u64(9));
        for (id, name) in fp.names().iter().enumerate() {
            let src = fp.tensor(id);
            let dst = p.get_mut(name).unwrap();
            if dst.dim() == src.dim() {
                dst.assign(src);
            } else {
                // A_one gains trailing rows for s_nuc
                dst.fill(0.0);
                dst.slice_mut(ndarray::s![..src.nrows(), ..]).assign(src);
            }
        }
        assert!(p.count() > fp.count());
        let f = build_features(&mol, &FrameSet::identity(2), &electrons(), mode);
        let reference = embed(&fp, &cfg, &f, 2);
        let out = embed_with(&p, &cfg, k, &f, 2);
        for (a, b) in out.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn widths_follow_variant() {
        let dims = InputDims { h0: 8, v0: 4, g0: 1, n_nuc: 2, opposite_pairs: true };
        let cfg = EmbeddingConfig { width_one: 10, width_aux: 3, n_layers: 2, variant: EmbeddingVariant::Combined };
        let w = |v| cfg.widths(Kernels::of(v), &dims, 0).f;
        let w1 = |v| cfg.widths(Kernels::of(v), &dims, 1);
        assert_eq!(w(EmbeddingVariant::Combined), 3 * 8 + 3 + 3);
        assert_eq!(w1(EmbeddingVariant::Combined).f, 3 * 10 + 3 + 3);
        assert_eq!(w(EmbeddingVariant::FerminetLike), 3 * 8 + 1);
        assert_eq!(w1(EmbeddingVariant::FerminetLike).f, 3 * 10 + 3);
        assert_eq!(w1(EmbeddingVariant::PaulinetLike).f, 6);
    }
}
