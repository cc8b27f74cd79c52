//! Molecules in atomic units: nuclei, electron count and spin split.
//!
//! Electrons are always ordered spin-up first: indices `0..n_up` carry spin
//! up, `n_up..n_el` spin down. Electron positions for a single configuration
//! are passed around as flat row-major slices of length `3 * n_el`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOHR_PER_ANGSTROM: f64 = 1.8897259886;

const ELEMENTS: [&str; 36] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr",
];

/// Nuclear charge for an element symbol (case-insensitive), H through Kr.
pub fn atomic_number(symbol: &str) -> Option<u32> {
    ELEMENTS
        .iter()
        .position(|s| s.eq_ignore_ascii_case(symbol))
        .map(|i| i as u32 + 1)
}

pub fn element_symbol(z: u32) -> Option<&'static str> {
    ELEMENTS.get((z as usize).checked_sub(1)?).copied()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Bohr,
    Angstrom,
}

impl LengthUnit {
    pub fn to_bohr(self) -> f64 {
        match self {
            LengthUnit::Bohr => 1.0,
            LengthUnit::Angstrom => BOHR_PER_ANGSTROM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nucleus {
    pub position: [f64; 3],
    pub charge: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    nuclei: Vec<Nucleus>,
    n_up: usize,
    n_dn: usize,
}

/// `(ceil(n/2), floor(n/2))`: minimal spin polarization.
pub fn default_spin_assignment(n_el: usize) -> (usize, usize) {
    (n_el.div_ceil(2), n_el / 2)
}

impl Molecule {
    /// Neutral molecule with minimal spin polarization.
    pub fn neutral(nuclei: Vec<Nucleus>) -> Result<Self> {
        Self::with_charge_and_spin(nuclei, 0, None)
    }

    /// `charge` is the net molecular charge; `spin` optionally fixes `(n_up, n_dn)`.
    pub fn with_charge_and_spin(
        nuclei: Vec<Nucleus>,
        charge: i32,
        spin: Option<(usize, usize)>,
    ) -> Result<Self> {
        let total_z: i64 = nuclei.iter().map(|n| n.charge as i64).sum();
        let n_el = total_z - charge as i64;
        if n_el < 1 {
            return Err(Error::InvalidMolecule(format!(
                "molecule with charge {charge} has {n_el} electrons"
            )));
        }
        let n_el = n_el as usize;
        let (n_up, n_dn) = match spin {
            Some((u, d)) => {
                if u + d != n_el {
                    return Err(Error::InvalidMolecule(format!(
                        "spin split ({u}, {d}) does not add up to {n_el} electrons"
                    )));
                }
                (u, d)
            }
            None => default_spin_assignment(n_el),
        };
        Self::from_parts(nuclei, n_up, n_dn)
    }

    pub fn from_parts(nuclei: Vec<Nucleus>, n_up: usize, n_dn: usize) -> Result<Self> {
        if nuclei.is_empty() {
            return Err(Error::InvalidMolecule("no nuclei".into()));
        }
        if n_up + n_dn == 0 {
            return Err(Error::InvalidMolecule("no electrons".into()));
        }
        if n_up < n_dn {
            return Err(Error::InvalidMolecule(format!(
                "n_up ({n_up}) must be >= n_dn ({n_dn})"
            )));
        }
        for (i, n) in nuclei.iter().enumerate() {
            if n.charge < 1 {
                return Err(Error::InvalidMolecule(format!("nucleus {i} has charge 0")));
            }
            if n.position.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidMolecule(format!("nucleus {i} has a non-finite position")));
            }
            for (j, m) in nuclei.iter().enumerate().take(i) {
                if distance(&n.position, &m.position) == 0.0 {
                    return Err(Error::InvalidMolecule(format!(
                        "nuclei {j} and {i} coincide"
                    )));
                }
            }
        }
        Ok(Molecule { nuclei, n_up, n_dn })
    }

    pub fn nuclei(&self) -> &[Nucleus] {
        &self.nuclei
    }

    pub fn n_nuc(&self) -> usize {
        self.nuclei.len()
    }

    pub fn n_el(&self) -> usize {
        self.n_up + self.n_dn
    }

    pub fn n_up(&self) -> usize {
        self.n_up
    }

    pub fn n_dn(&self) -> usize {
        self.n_dn
    }

    pub fn is_up(&self, electron: usize) -> bool {
        electron < self.n_up
    }

    pub fn total_charge(&self) -> u32 {
        self.nuclei.iter().map(|n| n.charge).sum()
    }

    /// Nuclear-nuclear repulsion `sum_{I<J} Z_I Z_J / |R_I - R_J|`.
    pub fn nuclear_repulsion(&self) -> f64 {
        let mut e = 0.0;
        for (i, a) in self.nuclei.iter().enumerate() {
            for b in &self.nuclei[..i] {
                e += (a.charge * b.charge) as f64 / distance(&a.position, &b.position);
            }
        }
        e
    }

    /// Applies `x -> q x + shift` to every nucleus. `q` is row-major 3x3.
    pub fn transformed(&self, q: &[[f64; 3]; 3], shift: [f64; 3]) -> Molecule {
        let nuclei = self
            .nuclei
            .iter()
            .map(|n| Nucleus { position: add3(mat_vec3(q, &n.position), shift), charge: n.charge })
            .collect();
        Molecule { nuclei, n_up: self.n_up, n_dn: self.n_dn }
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn mat_vec3(q: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        q[0][0] * v[0] + q[0][1] * v[1] + q[0][2] * v[2],
        q[1][0] * v[0] + q[1][1] * v[1] + q[1][2] * v[2],
        q[2][0] * v[0] + q[2][1] * v[1] + q[2][2] * v[2],
    ]
}

/// Rotation matrix from three numbers uniform on [0, 1), via a unit
/// quaternion. Uniform inputs give rotations uniform over SO(3).
pub fn rotation_from_uniform(u1: f64, u2: f64, u3: f64) -> [[f64; 3]; 3] {
    use std::f64::consts::PI;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x) = (a * (2.0 * PI * u2).sin(), a * (2.0 * PI * u2).cos());
    let (y, z) = (b * (2.0 * PI * u3).sin(), b * (2.0 * PI * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Parses an XYZ listing: atom count, comment line, then `SYMBOL x y z` per nucleus.
/// Coordinates are converted to bohr; the molecule is neutral with minimal spin.
pub fn parse_geometry(text: &str, unit: LengthUnit) -> Result<Molecule> {
    let nuclei = parse_nuclei(text, unit)?;
    Molecule::neutral(nuclei)
}

pub fn parse_nuclei(text: &str, unit: LengthUnit) -> Result<Vec<Nucleus>> {
    let mut lines = text.lines().enumerate();
    let (_, count_line) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty geometry".into() })?;
    let count: usize = count_line.trim().parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("expected atom count, found `{}`", count_line.trim()),
    })?;
    if lines.next().is_none() {
        return Err(Error::Parse { line: 2, msg: "missing comment line".into() });
    }
    let scale = unit.to_bohr();
    let mut nuclei = Vec::with_capacity(count);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if nuclei.len() == count {
            return Err(Error::Parse { line: lineno, msg: "more atoms than declared".into() });
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected `SYMBOL x y z`, found {} fields", fields.len()),
            });
        }
        let charge = atomic_number(fields[0])
            .ok_or_else(|| Error::UnsupportedElement(fields[0].to_string()))?;
        let mut position = [0.0; 3];
        for (k, f) in fields[1..].iter().enumerate() {
            let x: f64 = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid coordinate `{f}`"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse { line: lineno, msg: format!("non-finite coordinate `{f}`") });
            }
            position[k] = x * scale;
        }
        nuclei.push(Nucleus { position, charge });
    }
    if nuclei.len() != count {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("declared {count} atoms, found {}", nuclei.len()),
        });
    }
    Ok(nuclei)
}

/// XYZ text for `mol` in bohr, with shortest round-trip float formatting.
pub fn emit_geometry(mol: &Molecule) -> String {
    let mut out = format!("{}\nunits: bohr\n", mol.n_nuc());
    for n in mol.nuclei() {
        let sym = element_symbol(n.charge).unwrap_or("X");
        let [x, y, z] = n.position;
        writeln!(out, "{sym} {x:?} {y:?} {z:?}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hydrogen_atom() {
        let mol = parse_geometry("1\n\nH 0 0 0", LengthUnit::Bohr).unwrap();
        assert_eq!(mol.n_nuc(), 1);
        assert_eq!(mol.nuclei()[0].charge, 1);
        assert_eq!((mol.n_el(), mol.n_up(), mol.n_dn()), (1, 1, 0));
    }

    #[test]
    fn nitrogen_dimer() {
        let mol = parse_geometry("2\n\nN 0 0 0\nN 0 0 2.068", LengthUnit::Bohr).unwrap();
        assert_eq!(mol.n_nuc(), 2);
        assert!(mol.nuclei().iter().all(|n| n.charge == 7));
        assert_eq!((mol.n_el(), mol.n_up(), mol.n_dn()), (14, 7, 7));
        assert!((mol.nuclear_repulsion() - 49.0 / 2.068).abs() < 1e-12);
    }

    #[test]
    fn angstrom_conversion() {
        let mol = parse_geometry("1\n\nO 0 0 0.529177", LengthUnit::Angstrom).unwrap();
        assert!((mol.nuclei()[0].position[2] - 1.0).abs() < 1e-4);
        assert_eq!(mol.nuclei()[0].position[2], 0.529177 * BOHR_PER_ANGSTROM);
    }

    #[test]
    fn spin_defaults() {
        assert_eq!(default_spin_assignment(1), (1, 0));
        assert_eq!(default_spin_assignment(14), (7, 7));
        assert_eq!(default_spin_assignment(3), (2, 1));
    }

    #[test]
    fn parse_errors() {
        let err = parse_geometry("1\n\nH 0 0", LengthUnit::Bohr).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_geometry("1\n\nXx 0 0 0", LengthUnit::Bohr).unwrap_err();
        assert!(matches!(err, Error::UnsupportedElement(_)));
        let err = parse_geometry("2\n\nH 0 0 0", LengthUnit::Bohr).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = parse_geometry("2\n\nH 0 0 0\nH 0 0 0", LengthUnit::Bohr).unwrap_err();
        assert!(matches!(err, Error::InvalidMolecule(_)));
        let err = parse_geometry("x\n\nH 0 0 0", LengthUnit::Bohr).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn spin_overrides() {
        let n = vec![Nucleus { position: [0.0; 3], charge: 7 }];
        let quartet = Molecule::with_charge_and_spin(n.clone(), 0, Some((5, 2))).unwrap();
        assert_eq!((quartet.n_up(), quartet.n_dn()), (5, 2));
        assert!(Molecule::with_charge_and_spin(n.clone(), 0, Some((2, 5))).is_err());
        assert!(Molecule::with_charge_and_spin(n.clone(), 0, Some((4, 4))).is_err());
        let cation = Molecule::with_charge_and_spin(n, 1, None).unwrap();
        assert_eq!((cation.n_up(), cation.n_dn()), (3, 3));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn coord() -> impl Strategy<Value = f64> {
            -20.0f64..20.0
        }

        proptest! {
            #[test]
            fn emit_parse_round_trip(xs in proptest::collection::vec((1u32..=18, coord(), coord(), coord()), 1..6)) {
                let nuclei: Vec<Nucleus> = xs.iter().enumerate()
                    .map(|(i, &(z, x, y, w))| Nucleus { position: [x + 50.0 * i as f64, y, w], charge: z })
                    .collect();
                let mol = Molecule::neutral(nuclei).unwrap();
                let back = parse_geometry(&emit_geometry(&mol), LengthUnit::Bohr).unwrap();
                for (a, b) in mol.nuclei().iter().zip(back.nuclei()) {
                    prop_assert_eq!(a.charge, b.charge);
                    for k in 0..3 {
                        prop_assert!((a.position[k] - b.position[k]).abs() <= 1e-12);
                    }
                }
            }

            #[test]
            fn unit_flags_differ_by_conversion(x in coord(), y in coord(), z in coord()) {
                let text = format!("1\n\nC {x} {y} {z}");
                let b = parse_geometry(&text, LengthUnit::Bohr).unwrap();
                let a = parse_geometry(&text, LengthUnit::Angstrom).unwrap();
                for k in 0..3 {
                    prop_assert_eq!(a.nuclei()[0].position[k], b.nuclei()[0].position[k] * BOHR_PER_ANGSTROM);
                }
            }
        }
    }
}
