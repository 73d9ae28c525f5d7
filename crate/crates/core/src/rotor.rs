//! Free quantum rotor energies and isotope definitions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IsotopeLabel {
    H2,
    D2,
    HD,
}

impl IsotopeLabel {
    pub const ALL: [IsotopeLabel; 3] = [IsotopeLabel::H2, IsotopeLabel::D2, IsotopeLabel::HD];

    pub fn as_str(&self) -> &'static str {
        match self {
            IsotopeLabel::H2 => "H2",
            IsotopeLabel::D2 => "D2",
            IsotopeLabel::HD => "HD",
        }
    }
}

impl fmt::Display for IsotopeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IsotopeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H2" | "h2" => Ok(IsotopeLabel::H2),
            "D2" | "d2" => Ok(IsotopeLabel::D2),
            "HD" | "hd" => Ok(IsotopeLabel::HD),
            other => Err(Error::Unknown {
                kind: "isotope",
                name: other.to_string(),
                available: IsotopeLabel::ALL.iter().map(|l| l.to_string()).collect(),
            }),
        }
    }
}

/// Parity of J that carries the ortho nuclear-spin isomer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(j: u32) -> Parity {
        if j.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// A diatomic rotor species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Isotope {
    pub label: IsotopeLabel,
    /// Rotational constant at zero pressure, cm⁻¹.
    pub b: f64,
    /// Centrifugal distortion constant, cm⁻¹.
    #[serde(default)]
    pub centrifugal_d: f64,
    /// Linear pressure coefficient of B, cm⁻¹/GPa.
    #[serde(default)]
    pub db_dp: f64,
    pub spin_weight_even_j: u32,
    pub spin_weight_odd_j: u32,
}

pub const DEFAULT_B_H2: f64 = 59.1;

impl Isotope {
    pub fn h2() -> Isotope {
        Isotope {
            label: IsotopeLabel::H2,
            b: DEFAULT_B_H2,
            centrifugal_d: 0.0,
            db_dp: 0.0,
            spin_weight_even_j: 1,
            spin_weight_odd_j: 3,
        }
    }

    /// Homonuclear reduced-mass scaling: μ(D2) = 2μ(H2).
    pub fn d2() -> Isotope {
        Isotope {
            label: IsotopeLabel::D2,
            b: DEFAULT_B_H2 / 2.0,
            centrifugal_d: 0.0,
            db_dp: 0.0,
            spin_weight_even_j: 6,
            spin_weight_odd_j: 3,
        }
    }

    /// μ(HD) = (4/3)μ(H2); no ortho/para partition.
    pub fn hd() -> Isotope {
        Isotope {
            label: IsotopeLabel::HD,
            b: DEFAULT_B_H2 * 0.75,
            centrifugal_d: 0.0,
            db_dp: 0.0,
            spin_weight_even_j: 1,
            spin_weight_odd_j: 1,
        }
    }

    pub fn default_for(label: IsotopeLabel) -> Isotope {
        match label {
            IsotopeLabel::H2 => Isotope::h2(),
            IsotopeLabel::D2 => Isotope::d2(),
            IsotopeLabel::HD => Isotope::hd(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::Validation(format!(
                "{}: rotational constant must be positive, got {}",
                self.label, self.b
            )));
        }
        if !(self.centrifugal_d >= 0.0 && self.centrifugal_d.is_finite()) {
            return Err(Error::Validation(format!(
                "{}: centrifugal constant must be non-negative",
                self.label
            )));
        }
        if self.spin_weight_even_j == 0 && self.spin_weight_odd_j == 0 {
            return Err(Error::Validation(format!(
                "{}: at least one spin weight must be non-zero",
                self.label
            )));
        }
        Ok(())
    }

    /// Copy of this isotope with B evaluated at `pressure_gpa`.
    pub fn at_pressure(&self, pressure_gpa: f64) -> Isotope {
        Isotope {
            b: self.b + self.db_dp * pressure_gpa,
            ..self.clone()
        }
    }

    pub fn spin_weight(&self, j: u32) -> u32 {
        match Parity::of(j) {
            Parity::Even => self.spin_weight_even_j,
            Parity::Odd => self.spin_weight_odd_j,
        }
    }

    /// Parity of J carrying the ortho isomer, `None` for heteronuclear species.
    pub fn ortho_parity(&self) -> Option<Parity> {
        match self.label {
            IsotopeLabel::H2 => Some(Parity::Odd),
            IsotopeLabel::D2 => Some(Parity::Even),
            IsotopeLabel::HD => None,
        }
    }

    pub fn is_ortho(&self, j: u32) -> bool {
        self.ortho_parity() == Some(Parity::of(j))
    }

    /// Rotor term value including centrifugal distortion.
    pub fn energy(&self, j: u32) -> f64 {
        let jj = f64::from(j) * f64::from(j + 1);
        self.b * jj - self.centrifugal_d * jj * jj
    }
}

/// E(J) = B·J(J+1) in cm⁻¹.
pub fn free_rotor_energy(j: u32, b: f64) -> f64 {
    b * f64::from(j) * f64::from(j + 1)
}

/// Shift of the S₀(J) line, J → J+2: B(4J+6), evaluated as E(J+2) − E(J).
pub fn roton_shift_s0(j: u32, b: f64) -> f64 {
    free_rotor_energy(j + 2, b) - free_rotor_energy(j, b)
}

/// Parse a sample label such as `H2`, `H2+D2` or `H2:0.3+D2:0.7`. Components
/// without an explicit fraction share the remainder equally.
pub fn parse_composition(text: &str) -> Result<Vec<(IsotopeLabel, f64)>> {
    let mut out = Vec::new();
    let mut given = 0.0;
    let mut open = 0usize;
    for part in text.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
        let (label, frac) = match part.split_once(':') {
            Some((l, f)) => {
                let x: f64 = f.trim().parse().map_err(|_| {
                    Error::Validation(format!("bad mole fraction '{f}' in composition '{text}'"))
                })?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::Validation(format!("mole fraction {x} outside [0, 1]")));
                }
                given += x;
                (l.parse::<IsotopeLabel>()?, Some(x))
            }
            None => {
                open += 1;
                (part.parse::<IsotopeLabel>()?, None)
            }
        };
        if out.iter().any(|(l, _): &(IsotopeLabel, Option<f64>)| *l == label) {
            return Err(Error::Validation(format!("{label} listed twice in '{text}'")));
        }
        out.push((label, frac));
    }
    if out.is_empty() {
        return Err(Error::Validation("empty composition".into()));
    }
    let share = if open > 0 { (1.0 - given) / open as f64 } else { 0.0 };
    let comps: Vec<(IsotopeLabel, f64)> = out.into_iter().map(|(l, f)| (l, f.unwrap_or(share))).collect();
    let total: f64 = comps.iter().map(|c| c.1).sum();
    if (total - 1.0).abs() > 1e-9 || comps.iter().any(|c| c.1 < 0.0) {
        return Err(Error::Validation(format!(
            "mole fractions in '{text}' sum to {total}, expected 1"
        )));
    }
    Ok(comps)
}

/// Single rotor standing in for a mixture: mole-fraction-weighted B.
pub fn effective_isotope(composition: &[(IsotopeLabel, f64)]) -> Isotope {
    let mut iso = Isotope::default_for(composition[0].0);
    iso.b = composition
        .iter()
        .map(|(l, x)| x * Isotope::default_for(*l).b)
        .sum();
    iso
}
