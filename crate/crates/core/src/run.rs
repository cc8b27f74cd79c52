//! Run configuration, presets and the pretrain -> optimize -> evaluate
//! pipeline with its on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::frames::{compute_frames, FrameSet, DEFAULT_TOL_DEGENERATE};
use crate::params::Params;
use crate::sampler::{burn_in, SamplerConfig};
use crate::scf::{self, compute_integrals, scf_for_molecule, BasisName, BasisSet, MolecularBasis, ScfOptions, ScfResult};
use crate::system::{parse_geometry, LengthUnit, Molecule};
use crate::train::{
    burnt_in_walkers, density, evaluate, hf_walkers, optimize, pretrain, Adam, EnergyEstimate, StepLog, TrainConfig,
    TrainState,
};
use crate::wavefunction::{NetworkConfig, WaveFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySource {
    /// XYZ text.
    Inline(String),
    /// Path to an XYZ file, relative to the working directory.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub geometry: GeometrySource,
    pub unit: LengthUnit,
    pub charge: i32,
    /// Optional explicit `(n_up, n_dn)`.
    pub spin: Option<(usize, usize)>,
    pub basis: BasisName,
    pub scf: ScfOptions,
    pub frame_tol_degenerate: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            geometry: GeometrySource::Inline("1\n\nH 0 0 0\n".into()),
            unit: LengthUnit::Bohr,
            charge: 0,
            spin: None,
            basis: BasisName::Sto6g,
            scf: ScfOptions::default(),
            frame_tol_degenerate: DEFAULT_TOL_DEGENERATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub system: SystemConfig,
    pub network: NetworkConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            seed: 0,
            output_dir: PathBuf::from("runs"),
            system: SystemConfig::default(),
            network: NetworkConfig::default(),
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Parses a dotted override `a.b.c=value`; the value is read as JSON and
/// falls back to a plain string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s.split_once('=').ok_or_else(|| Error::config(s, "override must look like key.path=value"))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::config(key, "empty key segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<()> {
    let mut cur = root;
    for (i, seg) in path.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| Error::config(path[..i].join("."), "not an object"))?;
        if i + 1 == path.len() {
            obj.insert(seg.clone(), value);
            return Ok(());
        }
        cur = obj.entry(seg.clone()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path is nonempty")
}

impl RunConfig {
    /// Deserializes a JSON value, reporting the key path of the first error.
    pub fn from_value(v: Value) -> Result<RunConfig> {
        let cfg: RunConfig = serde_path_to_error::deserialize(v).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses JSON text and applies `overrides` (`key.path=value`).
    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut v: Value = serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            set_path(&mut v, &path, value)?;
        }
        RunConfig::from_value(v)
    }

    /// Applies overrides to an existing config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<RunConfig> {
        let text = serde_json::to_string(self)?;
        RunConfig::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate().map_err(|m| Error::config("network", m))?;
        self.sampler.validate().map_err(|m| Error::config("sampler", m))?;
        self.train.validate().map_err(|(k, m)| Error::config(format!("train.{k}"), m))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn molecule(&self) -> Result<Molecule> {
        let s = &self.system;
        let text = match &s.geometry {
            GeometrySource::Inline(t) => t.clone(),
            GeometrySource::File(p) => fs::read_to_string(p)
                .map_err(|e| Error::config("system.geometry.file", format!("{}: {e}", p.display())))?,
        };
        let mol = parse_geometry(&text, s.unit)?;
        if s.charge == 0 && s.spin.is_none() {
            return Ok(mol);
        }
        Molecule::with_charge_and_spin(mol.nuclei().to_vec(), s.charge, s.spin)
    }
}

const PRESET_NAMES: [&str; 6] = ["hydrogen", "helium", "lithium", "h2", "lih", "n2"];

pub fn preset_names() -> &'static [&'static str] {
    &PRESET_NAMES
}

/// Desk-scale presets. Network widths and budgets are far below the
/// production settings so that each preset trains in minutes on one core.
pub fn preset(name: &str) -> Option<RunConfig> {
    let (geometry, spin) = match name {
        "hydrogen" => ("1\nH atom\nH 0 0 0\n", None),
        "helium" => ("1\nHe atom\nHe 0 0 0\n", None),
        "lithium" => ("1\nLi atom\nLi 0 0 0\n", None),
        "h2" => ("2\nH2, R = 1.4 bohr\nH 0 0 0\nH 0 0 1.4\n", None),
        "lih" => ("2\nLiH, R = 3.015 bohr\nLi 0 0 0\nH 0 0 3.015\n", None),
        "n2" => ("2\nN2, R = 2.068 bohr\nN 0 0 0\nN 0 0 2.068\n", None),
        _ => return None,
    };
    let mut cfg = RunConfig { name: name.to_string(), ..RunConfig::default() };
    cfg.system.geometry = GeometrySource::Inline(geometry.into());
    cfg.system.spin = spin;
    cfg.network.embedding.width_one = 32;
    cfg.network.embedding.width_aux = 16;
    cfg.network.embedding.n_layers = 2;
    cfg.network.n_det = 4;
    cfg.train.n_walkers = 256;
    cfg.train.n_pretrain = 200;
    cfg.train.n_opt = 1000;
    cfg.train.eval_steps = 500;
    cfg.train.checkpoint_every = 500;
    cfg.sampler.decorrelation = 5;
    cfg.sampler.burn_in = 500;
    match name {
        "hydrogen" => {
            cfg.network.n_det = 1;
            cfg.train.n_walkers = 512;
        }
        "n2" => {
            cfg.train.n_walkers = 128;
            cfg.train.n_opt = 500;
        }
        _ => {}
    }
    Some(cfg)
}

/// Molecule, SCF reference and frames of a run.
pub struct Prepared {
    pub mol: Molecule,
    pub scf: ScfResult,
    pub frames: FrameSet,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let mol = cfg.molecule()?;
    let scf = scf_for_molecule(&mol, cfg.system.basis, &cfg.system.scf)?;
    let frames = compute_frames(&scf, &mol, cfg.system.frame_tol_degenerate)?;
    Ok(Prepared { mol, scf, frames })
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScfSummary {
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
    pub electron_count: f64,
    pub n_basis: usize,
    pub orbital_energies: [Vec<f64>; 2],
}

/// SCF only: writes `scf.json`, optionally the integral tables.
pub fn run_scf(cfg: &RunConfig, dir: &Path, dump_integrals: bool) -> Result<ScfSummary> {
    write_config(cfg, dir)?;
    let mol = cfg.molecule()?;
    let basis = MolecularBasis::new(&BasisSet::builtin(cfg.system.basis), &mol)?;
    let tables = compute_integrals(&mol, &basis);
    if dump_integrals {
        fs::write(dir.join("integrals.txt"), tables.dump())?;
    }
    let scf = scf::run_scf(&tables, &mol, &basis, &cfg.system.scf)?;
    let summary = ScfSummary {
        energy: scf.energy,
        converged: scf.converged,
        iterations: scf.iterations,
        electron_count: scf.electron_count(),
        n_basis: basis.n_functions,
        orbital_energies: [scf.orbital_energies[0].iter().copied().collect(), scf.orbital_energies[1].iter().copied().collect()],
    };
    fs::write(dir.join("scf.json"), serde_json::to_string_pretty(&summary)?)?;
    if !scf.converged {
        return Err(Error::NotConverged(format!("SCF after {} iterations", scf.iterations)));
    }
    Ok(summary)
}

/// Frames only: writes `frames.txt`.
pub fn run_frames(cfg: &RunConfig, dir: &Path) -> Result<FrameSet> {
    write_config(cfg, dir)?;
    let p = prepare(cfg)?;
    fs::write(dir.join("frames.txt"), p.frames.dump())?;
    Ok(p.frames)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub name: String,
    pub n_params: usize,
    pub hf_energy: f64,
    pub optimization_steps: usize,
    #[serde(flatten)]
    pub estimate: EnergyEstimate,
}

/// The artifacts of one run.
pub struct Outcome {
    pub report: Option<EnergyReport>,
    pub state: TrainState,
    pub pretrain_losses: Vec<f64>,
    pub log: Vec<StepLog>,
}

fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.bin")
}

fn write_pretrain_log(dir: &Path, losses: &[f64]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "{i},{l}").unwrap();
    }
    fs::write(dir.join("pretrain.csv"), s)?;
    Ok(())
}

/// Fresh parameters and walkers, optionally pretrained, then burnt in.
fn initial_state(cfg: &RunConfig, p: &Prepared, wf: &WaveFunction, n_pretrain: usize) -> Result<(TrainState, Vec<f64>)> {
    let params = wf.init_params(cfg.seed);
    let mut walkers = burnt_in_walkers(wf, &params, &p.mol, cfg.train.n_walkers, cfg.seed.wrapping_add(1), &cfg.sampler);
    let mut params = params;
    let mut losses = Vec::new();
    if n_pretrain > 0 {
        let mut hf = hf_walkers(&p.scf, &p.mol, cfg.train.n_walkers, cfg.seed.wrapping_add(2), &cfg.sampler);
        losses = pretrain(wf, &mut params, &p.scf, &mut walkers, &mut hf, &cfg.train, &cfg.sampler, n_pretrain)?;
        let f = density(wf, &params);
        burn_in(&mut walkers, &p.mol, &cfg.sampler, &f);
    }
    let adam = Adam::from_config(&params, &cfg.train);
    Ok((TrainState { params, adam, walkers, step: 0 }, losses))
}

/// Pretraining only; writes `pretrain.csv` and a step-0 checkpoint.
pub fn run_pretrain(cfg: &RunConfig, dir: &Path) -> Result<Vec<f64>> {
    write_config(cfg, dir)?;
    let p = prepare(cfg)?;
    let wf = WaveFunction::new(cfg.network, p.mol.clone(), p.frames.clone());
    let (state, losses) = initial_state(cfg, &p, &wf, cfg.train.n_pretrain)?;
    write_pretrain_log(dir, &losses)?;
    state.to_checkpoint().save(&checkpoint_path(dir))?;
    Ok(losses)
}

/// The full pipeline. Writes `config.json`, `pretrain.csv`, `log.csv`,
/// `checkpoint.bin` (every `checkpoint_every` steps and at the end) and
/// `energy.json`. A numeric abort leaves `checkpoint-abort.bin`.
pub fn run_train(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    write_config(cfg, dir)?;
    let p = prepare(cfg)?;
    let wf = WaveFunction::new(cfg.network, p.mol.clone(), p.frames.clone());
    let (mut state, losses) = initial_state(cfg, &p, &wf, cfg.train.n_pretrain)?;
    write_pretrain_log(dir, &losses)?;
    let mut csv = String::from(StepLog::CSV_HEADER);
    csv.push('\n');
    let mut log = Vec::with_capacity(cfg.train.n_opt);
    let log_path = dir.join("log.csv");
    fs::write(&log_path, &csv)?;
    let every = cfg.train.checkpoint_every;
    let mut last_good = state.to_checkpoint();
    let result = optimize(&wf, &p.mol, &mut state, &cfg.train, &cfg.sampler, cfg.train.n_opt, &mut |row, st| {
        writeln!(csv, "{}", row.csv_row()).unwrap();
        log.push(*row);
        if st.step % every == 0 || st.step == cfg.train.n_opt {
            fs::write(&log_path, &csv)?;
            last_good = st.to_checkpoint();
            last_good.save(&checkpoint_path(dir))?;
        }
        Ok(())
    });
    fs::write(&log_path, &csv)?;
    if let Err(e) = result {
        last_good.save(&dir.join("checkpoint-abort.bin"))?;
        return Err(e);
    }
    state.to_checkpoint().save(&checkpoint_path(dir))?;
    let report = evaluate_state(cfg, &p, &wf, &mut state, dir)?;
    Ok(Outcome { report: Some(report), state, pretrain_losses: losses, log })
}

fn evaluate_state(cfg: &RunConfig, p: &Prepared, wf: &WaveFunction, state: &mut TrainState, dir: &Path) -> Result<EnergyReport> {
    let (estimate, means) = evaluate(wf, &state.params, &p.mol, &mut state.walkers, cfg.train.eval_steps, &cfg.sampler)?;
    let report = EnergyReport {
        name: cfg.name.clone(),
        n_params: state.params.count(),
        hf_energy: p.scf.energy,
        optimization_steps: state.step,
        estimate,
    };
    fs::write(dir.join("energy.json"), serde_json::to_string_pretty(&report)?)?;
    let mut s = String::from("step,energy_mean\n");
    for (i, m) in means.iter().enumerate() {
        writeln!(s, "{i},{m}").unwrap();
    }
    fs::write(dir.join("eval.csv"), s)?;
    Ok(report)
}

/// Evaluation of a saved checkpoint; parameters are left untouched.
pub fn run_evaluate(cfg: &RunConfig, checkpoint: &Path, dir: &Path) -> Result<EnergyReport> {
    if !checkpoint.exists() {
        return Err(Error::Checkpoint { path: checkpoint.into(), msg: "file not found".into() });
    }
    write_config(cfg, dir)?;
    let p = prepare(cfg)?;
    let wf = WaveFunction::new(cfg.network, p.mol.clone(), p.frames.clone());
    let template: Params = wf.init_params(cfg.seed);
    let ck = Checkpoint::load(checkpoint)?;
    let mut state = TrainState::from_checkpoint(&ck, &template, &cfg.train)
        .map_err(|msg| Error::Checkpoint { path: checkpoint.into(), msg })?;
    evaluate_state(cfg, &p, &wf, &mut state, dir)
}

/// One cell of an ablation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub label: String,
    pub config: RunConfig,
}

/// Expands an ablation preset over a base config.
///
/// * `waterfall-lite`: the full configuration plus one cell per axis with
///   only that axis degraded (block determinants, PauliNet-like embedding,
///   raw coordinate differences instead of local frames, unit envelope
///   exponents);
/// * `factorial`: all 16 combinations of the four axes.
pub fn ablation_cells(base: &RunConfig, preset: &str) -> Result<Vec<AblationCell>> {
    use crate::embedding::EmbeddingVariant;
    use crate::features::FeatureMode;
    use crate::wavefunction::{DetMode, EnvelopeInit};
    type Axis = fn(&mut RunConfig);
    let axes: [(&str, Axis); 4] = [
        ("block_dets", |c| c.network.det_mode = DetMode::Block),
        ("paulinet_like", |c| c.network.embedding.variant = EmbeddingVariant::PaulinetLike),
        ("raw_diffs", |c| c.network.features = FeatureMode::RawDiffs),
        ("ones_envelope", |c| c.network.envelope_init = EnvelopeInit::Ones),
    ];
    let masks: Vec<u32> = match preset {
        "waterfall-lite" => vec![0, 1, 2, 4, 8],
        "factorial" => (0..16).collect(),
        _ => return Err(Error::config("ablate.preset", format!("unknown ablation preset `{preset}`"))),
    };
    Ok(masks
        .into_iter()
        .map(|m| {
            let mut c = base.clone();
            let mut names = Vec::new();
            for (bit, (name, f)) in axes.iter().enumerate() {
                if m & (1 << bit) != 0 {
                    f(&mut c);
                    names.push(*name);
                }
            }
            let label = if names.is_empty() { "full".to_string() } else { names.join("+") };
            c.name = format!("{}-{label}", base.name);
            AblationCell { label, config: c }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub system: String,
    pub cell: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_params: usize,
}

/// Runs every cell (sequentially, shared seed) under `dir/<cell name>` and
/// writes `ablation.csv`.
pub fn run_ablation(cells: &[AblationCell], dir: &Path) -> Result<Vec<AblationRow>> {
    fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    let mut csv = String::from("system,cell,mean,stderr,n_params\n");
    for cell in cells {
        let out = run_train(&cell.config, &dir.join(&cell.config.name))?;
        let r = out.report.expect("training reports an energy");
        let system = cell.config.name.trim_end_matches(&format!("-{}", cell.label)).to_string();
        writeln!(csv, "{system},{},{},{},{}", cell.label, r.estimate.mean, r.estimate.stderr, r.n_params).unwrap();
        rows.push(AblationRow { system, cell: cell.label.clone(), mean: r.estimate.mean, stderr: r.estimate.stderr, n_params: r.n_params });
        fs::write(dir.join("ablation.csv"), &csv)?;
    }
    Ok(rows)
}
