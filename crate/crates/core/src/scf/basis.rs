//! Contracted Cartesian Gaussian basis sets (s and p shells only).
//!
//! The STO-3G and STO-6G tables for H through Kr are embedded in Gaussian94
//! format. Elements whose minimal basis carries d shells parse fine but are
//! rejected when placed on a molecule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{atomic_number, element_symbol, Molecule};

const STO_3G: &str = include_str!("../../data/sto-3g.g94");
const STO_6G: &str = include_str!("../../data/sto-6g.g94");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BasisName {
    #[serde(rename = "sto-3g")]
    Sto3g,
    #[default]
    #[serde(rename = "sto-6g")]
    Sto6g,
}

/// One contracted shell as tabulated: angular momentum, primitive exponents
/// and raw contraction coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellDef {
    pub l: u32,
    pub exponents: Vec<f64>,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BasisSet {
    pub name: String,
    elements: BTreeMap<u32, Vec<ShellDef>>,
}

impl BasisSet {
    pub fn builtin(name: BasisName) -> Self {
        let (label, text) = match name {
            BasisName::Sto3g => ("STO-3G", STO_3G),
            BasisName::Sto6g => ("STO-6G", STO_6G),
        };
        Self::parse_g94(label, text).expect("embedded basis table is well formed")
    }

    pub fn shells(&self, z: u32) -> Option<&[ShellDef]> {
        self.elements.get(&z).map(Vec::as_slice)
    }

    /// Parses Gaussian94-format text. `SP` shells are split into an s and a p
    /// shell sharing exponents.
    pub fn parse_g94(name: &str, text: &str) -> Result<Self> {
        let mut elements = BTreeMap::new();
        let mut lines = text.lines().enumerate().peekable();
        let bad = |line: usize, msg: &str| Error::Parse { line: line + 1, msg: msg.to_string() };
        while let Some((ln, line)) = lines.next() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('!') || t == "****" {
                continue;
            }
            let sym = t.split_whitespace().next().unwrap();
            let z = atomic_number(sym).ok_or_else(|| Error::UnsupportedElement(sym.into()))?;
            let mut shells = Vec::new();
            while let Some((ln, line)) = lines.next() {
                let t = line.trim();
                if t == "****" {
                    break;
                }
                let head: Vec<&str> = t.split_whitespace().collect();
                if head.len() < 2 {
                    return Err(bad(ln, "expected shell header"));
                }
                let n: usize = head[1].parse().map_err(|_| bad(ln, "bad primitive count"))?;
                let kinds: Vec<u32> = match head[0] {
                    "S" => vec![0],
                    "P" => vec![1],
                    "D" => vec![2],
                    "F" => vec![3],
                    "SP" => vec![0, 1],
                    other => return Err(bad(ln, &format!("unknown shell type {other}"))),
                };
                let mut exps = Vec::with_capacity(n);
                let mut coefs = vec![Vec::with_capacity(n); kinds.len()];
                for _ in 0..n {
                    let (ln, line) = lines.next().ok_or_else(|| bad(ln, "truncated shell"))?;
                    let nums: Vec<f64> = line
                        .split_whitespace()
                        .map(|s| s.replace(['D', 'd'], "E").parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(ln, "bad number"))?;
                    if nums.len() != 1 + kinds.len() {
                        return Err(bad(ln, "wrong number of columns"));
                    }
                    exps.push(nums[0]);
                    for (c, v) in coefs.iter_mut().zip(&nums[1..]) {
                        c.push(*v);
                    }
                }
                for (l, c) in kinds.into_iter().zip(coefs) {
                    shells.push(ShellDef { l, exponents: exps.clone(), coefficients: c });
                }
            }
            let _ = ln;
            elements.insert(z, shells);
        }
        Ok(BasisSet { name: name.to_string(), elements })
    }
}

/// A shell placed on a nucleus, with coefficients that already include the
/// primitive normalization and the contraction renormalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub atom: usize,
    pub center: [f64; 3],
    pub l: u32,
    pub exponents: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Index of the first basis function of this shell.
    pub offset: usize,
}

impl Shell {
    pub fn n_functions(&self) -> usize {
        if self.l == 0 {
            1
        } else {
            3
        }
    }

    /// Cartesian exponents of the shell's functions, in (x, y, z) order for p.
    pub fn components(&self) -> &'static [[u32; 3]] {
        const S: [[u32; 3]; 1] = [[0, 0, 0]];
        const P: [[u32; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
        if self.l == 0 {
            &S
        } else {
            &P
        }
    }
}

/// Normalization of a primitive `x^i y^j z^k exp(-a r^2)` with `i+j+k = l <= 1`.
fn primitive_norm(a: f64, l: u32) -> f64 {
    (2.0 * a / PI).powf(0.75) * (4.0 * a).powf(l as f64 / 2.0)
}

fn normalized_coefficients(def: &ShellDef) -> Vec<f64> {
    let l = def.l as i32;
    let mut c: Vec<f64> = def
        .exponents
        .iter()
        .zip(&def.coefficients)
        .map(|(&a, &d)| d * primitive_norm(a, def.l))
        .collect();
    let mut s = 0.0;
    for (i, &ai) in def.exponents.iter().enumerate() {
        for (j, &aj) in def.exponents.iter().enumerate() {
            let p = ai + aj;
            s += c[i] * c[j] * (PI / p).powf(1.5) / (2.0 * p).powi(l);
        }
    }
    let scale = 1.0 / s.sqrt();
    c.iter_mut().for_each(|x| *x *= scale);
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolecularBasis {
    pub name: String,
    pub shells: Vec<Shell>,
    pub n_functions: usize,
}

impl MolecularBasis {
    pub fn new(basis: &BasisSet, mol: &Molecule) -> Result<Self> {
        let mut shells = Vec::new();
        let mut offset = 0;
        for (atom, nuc) in mol.nuclei().iter().enumerate() {
            let sym = element_symbol(nuc.charge).unwrap_or("?");
            let defs = basis.shells(nuc.charge).ok_or_else(|| {
                Error::UnsupportedBasis(format!("{} has no entry for {sym}", basis.name))
            })?;
            for def in defs {
                if def.l > 1 {
                    return Err(Error::UnsupportedBasis(format!(
                        "{} for {sym} contains l={} shells; only s and p are supported",
                        basis.name, def.l
                    )));
                }
                let shell = Shell {
                    atom,
                    center: nuc.position,
                    l: def.l,
                    exponents: def.exponents.clone(),
                    coefficients: normalized_coefficients(def),
                    offset,
                };
                offset += shell.n_functions();
                shells.push(shell);
            }
        }
        Ok(MolecularBasis { name: basis.name.clone(), shells, n_functions: offset })
    }

    /// Basis-function indices of the first p shell on `atom`, in (x, y, z) order.
    pub fn p_functions(&self, atom: usize) -> Option<[usize; 3]> {
        self.shells
            .iter()
            .find(|s| s.atom == atom && s.l == 1)
            .map(|s| [s.offset, s.offset + 1, s.offset + 2])
    }

    /// Values of all basis functions at `point`, written into `out`.
    pub fn eval_into(&self, point: &[f64; 3], out: &mut [f64]) {
        for sh in &self.shells {
            let d = [point[0] - sh.center[0], point[1] - sh.center[1], point[2] - sh.center[2]];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let radial: f64 =
                sh.exponents.iter().zip(&sh.coefficients).map(|(a, c)| c * (-a * r2).exp()).sum();
            if sh.l == 0 {
                out[sh.offset] = radial;
            } else {
                for k in 0..3 {
                    out[sh.offset + k] = d[k] * radial;
                }
            }
        }
    }
}
