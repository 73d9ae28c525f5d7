//! Raman-allowed rotational transitions over a crystal-field level diagram.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::angular::c2_strength;
use crate::crystalfield::LevelDiagram;
use crate::error::{Error, Result};
use crate::population::SpeciesPopulation;

/// Energies closer than this are treated as degenerate (no shift).
const ZERO_SHIFT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountConvention {
    /// One line per unordered pair of (J, |mJ|) levels.
    #[default]
    LevelPairs,
    /// One line per unordered pair of signed-mJ states with distinct energies.
    StatePairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionRules {
    pub allowed_dj: Vec<i32>,
    pub max_abs_dm: u32,
    pub count_convention: CountConvention,
    /// Emit degenerate ΔJ = 0 pairs at zero shift.
    pub include_zero_shift: bool,
}

impl Default for SelectionRules {
    fn default() -> Self {
        SelectionRules {
            allowed_dj: vec![-2, 0, 2],
            max_abs_dm: 2,
            count_convention: CountConvention::LevelPairs,
            include_zero_shift: false,
        }
    }
}

impl SelectionRules {
    pub fn with_convention(mut self, convention: CountConvention) -> Self {
        self.count_convention = convention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_abs_dm > 2 {
            return Err(Error::Validation(format!(
                "max_abs_dm must be <= 2, got {}",
                self.max_abs_dm
            )));
        }
        if let Some(dj) = self.allowed_dj.iter().find(|dj| ![-2, 0, 2].contains(*dj)) {
            return Err(Error::Validation(format!("ΔJ = {dj} is not a rank-2 Raman transition")));
        }
        Ok(())
    }

    fn allows(&self, dj: i32) -> bool {
        self.allowed_dj.contains(&dj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    ZeroRoton,
    S0,
    AntiStokesS0,
    AntiStokesZeroRoton,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::ZeroRoton => "zero_roton",
            Branch::S0 => "S0",
            Branch::AntiStokesS0 => "anti_stokes_S0",
            Branch::AntiStokesZeroRoton => "anti_stokes_zero_roton",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRef {
    pub j: u32,
    pub abs_m: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: LevelRef,
    pub to: LevelRef,
    /// Signed states for the state-pair convention.
    pub signed_m: Option<(i32, i32)>,
    /// cm⁻¹, positive for Stokes.
    pub shift: f64,
    pub weight: f64,
    pub branch: Branch,
}

impl Transition {
    pub fn is_zero_roton(&self) -> bool {
        matches!(self.branch, Branch::ZeroRoton | Branch::AntiStokesZeroRoton)
    }
}

fn push_level_pair(
    out: &mut Vec<Transition>,
    levels: &LevelDiagram,
    a: (u32, u32),
    b: (u32, u32),
    signed: Option<(i32, i32)>,
    rules: &SelectionRules,
) {
    let (ea, eb) = match (levels.energy(a.0, a.1), levels.energy(b.0, b.1)) {
        (Some(ea), Some(eb)) => (ea, eb),
        _ => return,
    };
    let same_j = a.0 == b.0;
    let degenerate = (ea - eb).abs() <= ZERO_SHIFT_TOL * (1.0 + ea.abs());
    if same_j && degenerate && !rules.include_zero_shift {
        return;
    }
    // ΔJ = 2 always runs upward in J; ΔJ = 0 runs from the lower level.
    let (from, to, signed) = if (same_j && ea <= eb) || (!same_j && a.0 < b.0) {
        (a, b, signed)
    } else {
        (b, a, signed.map(|(x, y)| (y, x)))
    };
    let shift = levels.energy(to.0, to.1).unwrap() - levels.energy(from.0, from.1).unwrap();
    out.push(Transition {
        from: LevelRef { j: from.0, abs_m: from.1 },
        to: LevelRef { j: to.0, abs_m: to.1 },
        signed_m: signed,
        shift,
        weight: 0.0,
        branch: if same_j { Branch::ZeroRoton } else { Branch::S0 },
    });
}

/// Raman-allowed transitions over `levels`, Stokes side only, weights unset.
pub fn enumerate_transitions(levels: &LevelDiagram, rules: &SelectionRules) -> Vec<Transition> {
    let mut out = Vec::new();
    let cap = rules.max_abs_dm;
    let max_j = levels.max_j();
    for j in 0..=max_j {
        let mut js = Vec::new();
        if rules.allows(0) {
            js.push(j);
        }
        if (rules.allows(2) || rules.allows(-2)) && j + 2 <= max_j {
            js.push(j + 2);
        }
        for jp in js {
            match rules.count_convention {
                CountConvention::LevelPairs => {
                    for m in 0..=j {
                        let partners = match (jp == j, rules.include_zero_shift) {
                            (true, true) => m..=j,
                            (true, false) => m + 1..=j,
                            (false, _) => 0..=jp,
                        };
                        for mp in partners {
                            if m.abs_diff(mp) <= cap {
                                push_level_pair(&mut out, levels, (j, m), (jp, mp), None, rules);
                            }
                        }
                    }
                }
                CountConvention::StatePairs => {
                    let (j_i, jp_i) = (j as i32, jp as i32);
                    for m in -j_i..=j_i {
                        for mp in -jp_i..=jp_i {
                            if jp == j && mp <= m {
                                continue;
                            }
                            if m.abs_diff(mp) > cap {
                                continue;
                            }
                            push_level_pair(
                                &mut out,
                                levels,
                                (j, m.unsigned_abs()),
                                (jp, mp.unsigned_abs()),
                                Some((m, mp)),
                                rules,
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

/// Count of ΔJ = 0 lines inside one J manifold.
pub fn zero_roton_count(levels: &LevelDiagram, j: u32, rules: &SelectionRules) -> usize {
    enumerate_transitions(levels, rules)
        .iter()
        .filter(|t| t.branch == Branch::ZeroRoton && t.from.j == j)
        .count()
}

fn signed_states(abs_m: u32) -> Vec<i32> {
    if abs_m == 0 {
        vec![0]
    } else {
        vec![abs_m as i32, -(abs_m as i32)]
    }
}

/// Rank-2 line strength averaged over the initial level's signed states and
/// summed over the final level's states.
pub fn angular_factor(t: &Transition) -> f64 {
    let from = signed_states(t.from.abs_m);
    let to = signed_states(t.to.abs_m);
    let pairs: Vec<(i32, i32)> = match t.signed_m {
        Some(p) => vec![p],
        None => from
            .iter()
            .flat_map(|&m| to.iter().map(move |&mp| (m, mp)))
            .collect(),
    };
    let total: f64 = pairs
        .iter()
        .map(|&(m, mp)| c2_strength(t.to.j, mp, t.from.j, m))
        .sum();
    total / from.len() as f64
}

/// Assign weight = (initial-level population) × (angular factor).
pub fn intensity_weights(
    transitions: &[Transition],
    pop: &SpeciesPopulation,
) -> Result<Vec<Transition>> {
    transitions
        .iter()
        .map(|t| {
            let level = pop.level(t.from.j, t.from.abs_m).ok_or_else(|| {
                Error::Validation(format!(
                    "population has no level (J={}, |m|={})",
                    t.from.j, t.from.abs_m
                ))
            })?;
            if pop.level(t.to.j, t.to.abs_m).is_none() {
                return Err(Error::Validation(format!(
                    "population has no level (J={}, |m|={})",
                    t.to.j, t.to.abs_m
                )));
            }
            let mut out = *t;
            out.weight = level.fraction * angular_factor(t);
            Ok(out)
        })
        .collect()
}

/// Stokes lines plus, optionally, their anti-Stokes partners.
///
/// The partner sits at −shift with weight scaled by the per-state occupation
/// ratio of the upper and lower levels.
pub fn stick_spectrum(
    weighted: &[Transition],
    pop: &SpeciesPopulation,
    temperature_k: f64,
    include_anti_stokes: bool,
) -> Result<Vec<Transition>> {
    if include_anti_stokes && !(temperature_k > 0.0) {
        return Err(Error::Domain("anti-Stokes lines need T > 0".into()));
    }
    let mut out: Vec<Transition> = weighted.to_vec();
    if include_anti_stokes {
        for t in weighted {
            let lower = pop.state_fraction(t.from.j, t.from.abs_m);
            let upper = pop.state_fraction(t.to.j, t.to.abs_m);
            let ratio = if lower > 0.0 { upper / lower } else { 0.0 };
            let weight = if t.weight > 0.0 {
                t.weight * ratio
            } else {
                // Empty lower level: compute directly from the upper one.
                pop.fraction(t.to.j, t.to.abs_m) * angular_factor(&Transition {
                    from: t.to,
                    to: t.from,
                    signed_m: t.signed_m.map(|(a, b)| (b, a)),
                    ..*t
                })
            };
            out.push(Transition {
                from: t.to,
                to: t.from,
                signed_m: t.signed_m.map(|(a, b)| (b, a)),
                shift: -t.shift,
                weight,
                branch: match t.branch {
                    Branch::ZeroRoton | Branch::AntiStokesZeroRoton => Branch::AntiStokesZeroRoton,
                    Branch::S0 | Branch::AntiStokesS0 => Branch::AntiStokesS0,
                },
            });
        }
    }
    Ok(out)
}
