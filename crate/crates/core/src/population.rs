//! Nuclear-spin-constrained Boltzmann populations and ortho-para conversion.

use serde::{Deserialize, Serialize};

use crate::crystalfield::{level_diagram_perturbative, CrystalField, LevelDiagram};
use crate::error::{Error, Result};
use crate::rotor::{Isotope, IsotopeLabel, Parity};
use crate::units::thermal_energy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelPopulation {
    pub j: u32,
    pub abs_m: u32,
    pub energy: f64,
    pub degeneracy: u32,
    /// Fraction of this species' molecules in the level (all its signed-m states).
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesPopulation {
    pub isotope: Isotope,
    pub mole_fraction: f64,
    pub ortho_fraction: Option<f64>,
    /// True when the ortho/para split is held fixed rather than thermal.
    pub frozen: bool,
    pub levels: Vec<LevelPopulation>,
}

impl SpeciesPopulation {
    pub fn fraction(&self, j: u32, abs_m: u32) -> f64 {
        self.level(j, abs_m).map_or(0.0, |l| l.fraction)
    }

    pub fn level(&self, j: u32, abs_m: u32) -> Option<&LevelPopulation> {
        self.levels.iter().find(|l| l.j == j && l.abs_m == abs_m)
    }

    /// Per-state occupation of a level.
    pub fn state_fraction(&self, j: u32, abs_m: u32) -> f64 {
        self.level(j, abs_m)
            .map_or(0.0, |l| l.fraction / f64::from(l.degeneracy))
    }

    pub fn total(&self) -> f64 {
        self.levels.iter().map(|l| l.fraction).sum()
    }

    pub fn j_total(&self, j: u32) -> f64 {
        self.levels.iter().filter(|l| l.j == j).map(|l| l.fraction).sum()
    }

    pub fn parity_total(&self, parity: Parity) -> f64 {
        self.levels
            .iter()
            .filter(|l| Parity::of(l.j) == parity)
            .map(|l| l.fraction)
            .sum()
    }

    fn diagram(&self) -> LevelDiagram {
        LevelDiagram {
            method: crate::crystalfield::LevelMethod::Perturbative,
            entries: self
                .levels
                .iter()
                .map(|l| crate::crystalfield::Level {
                    j: l.j,
                    abs_m: l.abs_m,
                    energy: l.energy,
                    degeneracy: l.degeneracy,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub temperature_k: f64,
    pub species: Vec<SpeciesPopulation>,
}

impl PopulationState {
    pub fn species(&self, label: IsotopeLabel) -> Option<&SpeciesPopulation> {
        self.species.iter().find(|s| s.isotope.label == label)
    }

    /// Mole-fraction-weighted total of one species.
    pub fn species_total(&self, label: IsotopeLabel) -> f64 {
        self.species(label)
            .map_or(0.0, |s| s.mole_fraction * s.total())
    }

    pub fn is_mixture(&self) -> bool {
        self.species.len() > 1
    }
}

/// Highest J worth keeping in a partition sum at `temperature_k`.
pub fn thermal_j_max(iso: &Isotope, temperature_k: f64) -> u32 {
    let cutoff = 40.0 * thermal_energy(temperature_k.max(0.0));
    let mut j = 6;
    while iso.b * f64::from(j) * f64::from(j + 1) - 2.0 * iso.b < cutoff && j < 400 {
        j += 1;
    }
    j
}

fn check_temperature(temperature_k: f64, frozen: Option<f64>) -> Result<()> {
    if !(temperature_k >= 0.0) || !temperature_k.is_finite() {
        return Err(Error::Domain(format!("temperature must be >= 0 K, got {temperature_k}")));
    }
    if temperature_k == 0.0 && frozen.is_none() {
        return Err(Error::Domain(
            "T = 0 K is only defined with a frozen ortho fraction".into(),
        ));
    }
    if let Some(x) = frozen {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("ortho fraction must be in [0, 1], got {x}")));
        }
    }
    Ok(())
}

/// Unnormalized Boltzmann weights of every level, with T = 0 taken as the
/// limit over the lowest levels of each group.
fn boltzmann_weights(
    iso: &Isotope,
    levels: &LevelDiagram,
    temperature_k: f64,
    group: impl Fn(u32) -> usize,
    n_groups: usize,
) -> Vec<f64> {
    let mut e_min = vec![f64::INFINITY; n_groups];
    for l in &levels.entries {
        if iso.spin_weight(l.j) > 0 {
            let g = group(l.j);
            e_min[g] = e_min[g].min(l.energy);
        }
    }
    let kt = thermal_energy(temperature_k);
    levels
        .entries
        .iter()
        .map(|l| {
            let g = f64::from(iso.spin_weight(l.j)) * f64::from(l.degeneracy);
            let de = l.energy - e_min[group(l.j)];
            if kt == 0.0 {
                if de.abs() <= 1e-9 * (1.0 + l.energy.abs()) {
                    g
                } else {
                    0.0
                }
            } else {
                g * (-de / kt).exp()
            }
        })
        .collect()
}

fn build_species(
    iso: &Isotope,
    levels: &LevelDiagram,
    fractions: Vec<f64>,
    ortho_fraction: Option<f64>,
    frozen: bool,
) -> SpeciesPopulation {
    SpeciesPopulation {
        isotope: iso.clone(),
        mole_fraction: 1.0,
        ortho_fraction,
        frozen,
        levels: levels
            .entries
            .iter()
            .zip(fractions)
            .map(|(l, fraction)| LevelPopulation {
                j: l.j,
                abs_m: l.abs_m,
                energy: l.energy,
                degeneracy: l.degeneracy,
                fraction,
            })
            .collect(),
    }
}

/// Populations of one species over an existing level diagram.
///
/// With `frozen_ortho` the even-J and odd-J manifolds are normalized separately
/// to the given split; otherwise the spin-weighted Boltzmann distribution is
/// used across both.
pub fn populate_levels(
    iso: &Isotope,
    levels: &LevelDiagram,
    temperature_k: f64,
    frozen_ortho: Option<f64>,
) -> Result<SpeciesPopulation> {
    check_temperature(temperature_k, frozen_ortho)?;
    iso.validate()?;
    match (frozen_ortho, iso.ortho_parity()) {
        (Some(_), None) => Err(Error::Domain(format!(
            "{} has no ortho/para partition; frozen fraction not allowed",
            iso.label
        ))),
        (Some(x), Some(ortho_parity)) => {
            let w = boltzmann_weights(iso, levels, temperature_k, |j| (j % 2) as usize, 2);
            let mut sums = [0.0; 2];
            for (l, wi) in levels.entries.iter().zip(&w) {
                sums[(l.j % 2) as usize] += wi;
            }
            let target = |j: u32| {
                if Parity::of(j) == ortho_parity {
                    x
                } else {
                    1.0 - x
                }
            };
            let fractions = levels
                .entries
                .iter()
                .zip(&w)
                .map(|(l, wi)| {
                    let s = sums[(l.j % 2) as usize];
                    if s > 0.0 {
                        target(l.j) * wi / s
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok(build_species(iso, levels, fractions, Some(x), true))
        }
        (None, parity) => {
            let w = boltzmann_weights(iso, levels, temperature_k, |_| 0, 1);
            let z: f64 = w.iter().sum();
            let fractions: Vec<f64> = w.iter().map(|wi| wi / z).collect();
            let ortho = parity.map(|p| {
                levels
                    .entries
                    .iter()
                    .zip(&fractions)
                    .filter(|(l, _)| Parity::of(l.j) == p)
                    .map(|(_, f)| f)
                    .sum()
            });
            Ok(build_species(iso, levels, fractions, ortho, false))
        }
    }
}

/// Equilibrium populations of one species in a crystal field.
pub fn equilibrium_populations(
    iso: &Isotope,
    temperature_k: f64,
    field: &CrystalField,
    frozen_ortho: Option<f64>,
) -> Result<PopulationState> {
    check_temperature(temperature_k, frozen_ortho)?;
    let levels = level_diagram_perturbative(iso, field, thermal_j_max(iso, temperature_k));
    let species = populate_levels(iso, &levels, temperature_k, frozen_ortho)?;
    Ok(PopulationState {
        temperature_k,
        species: vec![species],
    })
}

/// Thermal-equilibrium ortho fraction over `levels` at `temperature_k`.
pub fn equilibrium_ortho_fraction(
    iso: &Isotope,
    levels: &LevelDiagram,
    temperature_k: f64,
) -> Option<f64> {
    let parity = iso.ortho_parity()?;
    let w = boltzmann_weights(iso, levels, temperature_k, |_| 0, 1);
    let z: f64 = w.iter().sum();
    Some(
        levels
            .entries
            .iter()
            .zip(&w)
            .filter(|(l, _)| Parity::of(l.j) == parity)
            .map(|(_, wi)| wi / z)
            .sum(),
    )
}

/// Pressure-activated ortho-para conversion, k(P) = k0·exp(α(P − P0)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConversionKinetics {
    /// 1/hour at `p0_gpa`.
    pub k0_per_hour: f64,
    pub p0_gpa: f64,
    /// 1/GPa
    pub alpha_per_gpa: f64,
    /// Rate multiplier for D2 relative to H2 (placeholder: the D2 rate is not quantified).
    pub d2_rate_factor: f64,
    pub mixture_conversion: bool,
    pub mixture_rate_factor: f64,
}

impl Default for ConversionKinetics {
    fn default() -> Self {
        ConversionKinetics {
            k0_per_hour: 0.005,
            p0_gpa: 7.0,
            alpha_per_gpa: 100f64.ln() / 18.0,
            d2_rate_factor: 1.0 / 30.0,
            mixture_conversion: false,
            mixture_rate_factor: 1.0,
        }
    }
}

impl ConversionKinetics {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k0_per_hour", self.k0_per_hour),
            ("d2_rate_factor", self.d2_rate_factor),
            ("mixture_rate_factor", self.mixture_rate_factor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("kinetics.{name} must be >= 0, got {v}")));
            }
        }
        if !self.alpha_per_gpa.is_finite() || !self.p0_gpa.is_finite() {
            return Err(Error::Validation("kinetics parameters must be finite".into()));
        }
        Ok(())
    }

    /// H2 conversion rate at `pressure_gpa`, 1/hour.
    pub fn rate(&self, pressure_gpa: f64) -> f64 {
        self.k0_per_hour * (self.alpha_per_gpa * (pressure_gpa - self.p0_gpa)).exp()
    }

    /// Rate for one species; zero when conversion does not apply.
    pub fn rate_for(&self, label: IsotopeLabel, in_mixture: bool, pressure_gpa: f64) -> f64 {
        let species = match label {
            IsotopeLabel::H2 => 1.0,
            IsotopeLabel::D2 => self.d2_rate_factor,
            IsotopeLabel::HD => return 0.0,
        };
        let mixture = match (in_mixture, self.mixture_conversion) {
            (false, _) => 1.0,
            (true, true) => self.mixture_rate_factor,
            (true, false) => 0.0,
        };
        species * mixture * self.rate(pressure_gpa)
    }
}

/// Relax the ortho fraction of every species toward its thermal value for `dt_hours`.
///
/// x(t+dt) = x_eq + (x(t) − x_eq)·exp(−k(P)·dt), followed by thermal
/// re-equilibration inside each spin manifold at `temperature_k`.
pub fn evolve_ortho_para(
    state: &PopulationState,
    kinetics: &ConversionKinetics,
    pressure_gpa: f64,
    temperature_k: f64,
    dt_hours: f64,
) -> Result<PopulationState> {
    if !(dt_hours >= 0.0) {
        return Err(Error::Domain(format!("time step must be >= 0, got {dt_hours}")));
    }
    let in_mixture = state.is_mixture();
    let mut species = Vec::with_capacity(state.species.len());
    for s in &state.species {
        let levels = s.diagram();
        let x0 = match s.ortho_fraction {
            Some(x) => x,
            None => {
                let mut next = populate_levels(&s.isotope, &levels, temperature_k, None)?;
                next.mole_fraction = s.mole_fraction;
                species.push(next);
                continue;
            }
        };
        let k = kinetics.rate_for(s.isotope.label, in_mixture, pressure_gpa);
        let x = if dt_hours == 0.0 || k == 0.0 {
            x0
        } else {
            let x_eq = equilibrium_ortho_fraction(&s.isotope, &levels, temperature_k)
                .expect("species with ortho fraction has an ortho parity");
            (x_eq + (x0 - x_eq) * (-k * dt_hours).exp()).clamp(0.0, 1.0)
        };
        let mut next = populate_levels(&s.isotope, &levels, temperature_k, Some(x))?;
        next.mole_fraction = s.mole_fraction;
        species.push(next);
    }
    Ok(PopulationState {
        temperature_k,
        species,
    })
}

/// Populations of a multi-species sample; each species is computed on its
/// own and carries its mole fraction.
pub fn mixture_population(
    components: &[(Isotope, f64)],
    temperature_k: f64,
    field: &CrystalField,
    frozen: &[Option<f64>],
) -> Result<PopulationState> {
    validate_mole_fractions(components.iter().map(|c| c.1))?;
    if frozen.len() != components.len() {
        return Err(Error::Validation(format!(
            "{} frozen ortho entries for {} components",
            frozen.len(),
            components.len()
        )));
    }
    let mut species = Vec::with_capacity(components.len());
    for ((iso, x), f) in components.iter().zip(frozen) {
        let mut s = equilibrium_populations(iso, temperature_k, field, *f)?
            .species
            .remove(0);
        s.mole_fraction = *x;
        species.push(s);
    }
    Ok(PopulationState {
        temperature_k,
        species,
    })
}

pub fn validate_mole_fractions(fractions: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for x in fractions {
        if !(x >= 0.0) {
            return Err(Error::Validation(format!("mole fraction must be >= 0, got {x}")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("mole fractions sum to {sum}, expected 1")));
    }
    Ok(())
}
