//! (J, |mJ|) level energies of a rotor in an axial crystal field.
//!
//! The field enters as H_cf = V2·P₂(cos θ) + V4·P₄(cos θ) about the crystal
//! axis. Two routes are provided: first-order perturbation theory, which is
//! diagonal in |J mJ⟩, and exact diagonalization in a truncated basis, where
//! P₂ couples J to J±2 and P₄ additionally to J±4 at fixed mJ.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::angular::{legendre_element, p2_expectation};
use crate::error::{Error, Result};
use crate::rotor::Isotope;

/// Levels with J above `j_max - EXACT_MARGIN` are not reported by the exact route.
pub const EXACT_MARGIN: u32 = 4;
/// Agreement required between basis sizes j_max and j_max + 2.
pub const TRUNCATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrystalField {
    /// Axial quadrupolar strength, cm⁻¹.
    pub v2: f64,
    /// Hexadecapolar strength, cm⁻¹.
    #[serde(default)]
    pub v4: f64,
    /// Basis truncation for exact diagonalization.
    pub j_max: u32,
}

impl CrystalField {
    pub fn new(v2: f64) -> CrystalField {
        CrystalField {
            v2,
            v4: 0.0,
            j_max: 16,
        }
    }

    pub fn free() -> CrystalField {
        CrystalField::new(0.0)
    }

    pub fn with_j_max(mut self, j_max: u32) -> CrystalField {
        self.j_max = j_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.j_max < 4 {
            return Err(Error::Validation(format!(
                "crystal field basis truncation must be >= 4, got {}",
                self.j_max
            )));
        }
        if !self.v2.is_finite() || !self.v4.is_finite() {
            return Err(Error::Validation("crystal field strengths must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMethod {
    #[default]
    Perturbative,
    Exact,
}

impl fmt::Display for LevelMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LevelMethod::Perturbative => "perturbative",
            LevelMethod::Exact => "exact",
        })
    }
}

impl FromStr for LevelMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturbative" => Ok(LevelMethod::Perturbative),
            "exact" => Ok(LevelMethod::Exact),
            other => Err(Error::Unknown {
                kind: "level method",
                name: other.into(),
                available: vec!["perturbative".into(), "exact".into()],
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub j: u32,
    pub abs_m: u32,
    /// cm⁻¹
    pub energy: f64,
    pub degeneracy: u32,
}

impl Level {
    pub fn degeneracy_for(abs_m: u32) -> u32 {
        if abs_m == 0 {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagram {
    pub method: LevelMethod,
    /// Sorted by (J, |mJ|).
    pub entries: Vec<Level>,
}

impl LevelDiagram {
    pub fn get(&self, j: u32, abs_m: u32) -> Option<&Level> {
        self.entries
            .binary_search_by(|l| (l.j, l.abs_m).cmp(&(j, abs_m)))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn energy(&self, j: u32, abs_m: u32) -> Option<f64> {
        self.get(j, abs_m).map(|l| l.energy)
    }

    pub fn max_j(&self) -> u32 {
        self.entries.iter().map(|l| l.j).max().unwrap_or(0)
    }

    /// Levels belonging to one J manifold, ordered by |mJ|.
    pub fn manifold(&self, j: u32) -> impl Iterator<Item = &Level> {
        self.entries.iter().filter(move |l| l.j == j)
    }

    /// E(J, |m_a|) − E(J, |m_b|).
    pub fn splitting(&self, j: u32, m_a: u32, m_b: u32) -> Option<f64> {
        Some(self.energy(j, m_a)? - self.energy(j, m_b)?)
    }
}

fn field_element(field: &CrystalField, j_bra: u32, j_ket: u32, m: i32) -> f64 {
    let mut v = field.v2 * legendre_element(2, j_bra, j_ket, m);
    if field.v4 != 0.0 {
        v += field.v4 * legendre_element(4, j_bra, j_ket, m);
    }
    v
}

/// E(J, mJ) = E_rot(J) + V2·⟨P₂⟩ + V4·⟨P₄⟩ for all J ≤ `j_max`.
pub fn level_diagram_perturbative(iso: &Isotope, field: &CrystalField, j_max: u32) -> LevelDiagram {
    let mut entries = Vec::new();
    for j in 0..=j_max {
        for abs_m in 0..=j {
            let m = abs_m as i32;
            let mut energy = iso.energy(j)
                + field.v2 * p2_expectation(j, m).expect("|m| <= J by construction");
            if field.v4 != 0.0 {
                energy += field.v4 * legendre_element(4, j, j, m);
            }
            entries.push(Level {
                j,
                abs_m,
                energy,
                degeneracy: Level::degeneracy_for(abs_m),
            });
        }
    }
    LevelDiagram {
        method: LevelMethod::Perturbative,
        entries,
    }
}

/// Eigenvalues of every (|m|, parity) block up to `basis_j_max`, labeled by (J, |m|).
fn diagonalize(iso: &Isotope, field: &CrystalField, basis_j_max: u32) -> Vec<Level> {
    let mut levels = Vec::new();
    for abs_m in 0..=basis_j_max {
        for parity in 0..2u32 {
            let basis: Vec<u32> = (abs_m..=basis_j_max).filter(|j| j % 2 == parity).collect();
            if basis.is_empty() {
                continue;
            }
            let n = basis.len();
            let m = abs_m as i32;
            let h = DMatrix::from_fn(n, n, |r, c| {
                let (jr, jc) = (basis[r], basis[c]);
                let diag = if r == c { iso.energy(jr) } else { 0.0 };
                if jr.abs_diff(jc) > 4 {
                    diag
                } else {
                    diag + field_element(field, jr, jc, m)
                }
            });
            let eig = SymmetricEigen::new(h);

            // Greedy maximum-overlap assignment; ties go to the lower J.
            let mut candidates = Vec::with_capacity(n * n);
            for (k, _) in eig.eigenvalues.iter().enumerate() {
                for (b, _) in basis.iter().enumerate() {
                    candidates.push((eig.eigenvectors[(b, k)].powi(2), b, k));
                }
            }
            candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut basis_used = vec![false; n];
            let mut eig_used = vec![false; n];
            for (_, b, k) in candidates {
                if basis_used[b] || eig_used[k] {
                    continue;
                }
                basis_used[b] = true;
                eig_used[k] = true;
                levels.push(Level {
                    j: basis[b],
                    abs_m,
                    energy: eig.eigenvalues[k],
                    degeneracy: Level::degeneracy_for(abs_m),
                });
            }
        }
    }
    levels.sort_by_key(|l| (l.j, l.abs_m));
    levels
}

/// Exact diagonalization of B·L² + V2·P₂ + V4·P₄ in |J mJ⟩ with J ≤ `field.j_max`.
///
/// Only levels with J ≤ j_max − 4 are reported, and each of them must agree
/// to within 1e−6 cm⁻¹ with a basis enlarged by two.
pub fn level_diagram_exact(iso: &Isotope, field: &CrystalField) -> Result<LevelDiagram> {
    field.validate()?;
    exact_up_to(iso, field, field.j_max - EXACT_MARGIN)
}

fn exact_up_to(iso: &Isotope, field: &CrystalField, report_j: u32) -> Result<LevelDiagram> {
    iso.validate()?;
    let small = diagonalize(iso, field, field.j_max);
    let large = diagonalize(iso, field, field.j_max + 2);

    let entries: Vec<Level> = small.into_iter().filter(|l| l.j <= report_j).collect();
    let mut worst = (0.0f64, 0u32, 0u32);
    for level in &entries {
        let other = large
            .iter()
            .find(|l| l.j == level.j && l.abs_m == level.abs_m)
            .expect("enlarged basis contains every smaller-basis label");
        let diff = (other.energy - level.energy).abs();
        if diff > worst.0 {
            worst = (diff, level.j, level.abs_m);
        }
    }
    if worst.0 > TRUNCATION_TOL {
        return Err(Error::Truncation(format!(
            "level (J={}, |m|={}) moved by {:.3e} cm^-1 when j_max went {} -> {} (V2={}, B={}); increase j_max",
            worst.1,
            worst.2,
            worst.0,
            field.j_max,
            field.j_max + 2,
            field.v2,
            iso.b
        )));
    }
    Ok(LevelDiagram {
        method: LevelMethod::Exact,
        entries,
    })
}

/// Diagram holding every J ≤ `j_report` by the requested route. The exact
/// route enlarges the basis to at least `j_report + 4` and checks truncation
/// only for the returned levels.
pub fn level_diagram(
    iso: &Isotope,
    field: &CrystalField,
    method: LevelMethod,
    j_report: u32,
) -> Result<LevelDiagram> {
    match method {
        LevelMethod::Perturbative => Ok(level_diagram_perturbative(iso, field, j_report)),
        LevelMethod::Exact => {
            field.validate()?;
            let field = field.with_j_max(field.j_max.max(j_report + EXACT_MARGIN));
            exact_up_to(iso, &field, j_report)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn second_order_shift(iso: &Isotope, v2: f64, j: u32, m: i32) -> f64 {
        [j + 2, j.wrapping_sub(2)]
            .into_iter()
            .filter(|&jp| jp < 1000 && m.unsigned_abs() <= jp)
            .map(|jp| {
                let el = v2 * legendre_element(2, jp, j, m);
                el * el / (iso.energy(j) - iso.energy(jp))
            })
            .sum()
    }

    #[test]
    fn zero_field_is_free_rotor() {
        let iso = Isotope::h2();
        for diagram in [
            level_diagram_perturbative(&iso, &CrystalField::free(), 12),
            level_diagram_exact(&iso, &CrystalField::free()).unwrap(),
        ] {
            for level in &diagram.entries {
                let free = crate::rotor::free_rotor_energy(level.j, iso.b);
                assert!((level.energy - free).abs() <= 1e-9 * free.max(1.0));
            }
        }
    }

    #[test]
    fn degeneracies_sum_to_2j_plus_1() {
        let diagram = level_diagram_exact(&Isotope::d2(), &CrystalField::new(80.0)).unwrap();
        for j in 0..=diagram.max_j() {
            let sum: u32 = diagram.manifold(j).map(|l| l.degeneracy).sum();
            assert_eq!(sum, 2 * j + 1);
        }
    }

    #[test]
    fn first_order_splittings() {
        let v2 = 125.0;
        let d = level_diagram_perturbative(&Isotope::h2(), &CrystalField::new(v2), 6);
        assert!((d.splitting(1, 0, 1).unwrap() - 0.6 * v2).abs() < 1e-12);
        assert!((d.splitting(1, 0, 1).unwrap() - 75.0).abs() < 1e-12);
        assert!((d.splitting(2, 0, 2).unwrap() - 4.0 / 7.0 * v2).abs() < 1e-12);
        let ratio = d.splitting(1, 0, 1).unwrap() / d.splitting(2, 0, 2).unwrap();
        assert!((ratio - 21.0 / 20.0).abs() < 1e-14);
    }

    #[test]
    fn first_order_splitting_is_mass_free() {
        let f = CrystalField::new(125.0);
        let h = level_diagram_perturbative(&Isotope::h2(), &f, 4);
        let d = level_diagram_perturbative(&Isotope::d2(), &f, 4);
        let (a, b) = (h.splitting(1, 0, 1).unwrap(), d.splitting(1, 0, 1).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn positive_v2_puts_m1_below_m0() {
        let d = level_diagram_perturbative(&Isotope::h2(), &CrystalField::new(50.0), 3);
        assert!(d.energy(1, 1).unwrap() < d.energy(1, 0).unwrap());
    }

    #[test]
    fn sign_flip_reflects_splittings() {
        let iso = Isotope::h2();
        let plus = level_diagram_perturbative(&iso, &CrystalField::new(40.0), 6);
        let minus = level_diagram_perturbative(&iso, &CrystalField::new(-40.0), 6);
        for j in 1..=6 {
            let sp = plus.splitting(j, 0, j).unwrap();
            let sm = minus.splitting(j, 0, j).unwrap();
            assert!(sp * sm < 0.0);
            assert!((sp.abs() - sm.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_block_structure_and_degeneracy() {
        let d = level_diagram_exact(&Isotope::h2(), &CrystalField::new(200.0)).unwrap();
        for level in &d.entries {
            assert!(level.abs_m <= level.j);
            assert_eq!(level.degeneracy, Level::degeneracy_for(level.abs_m));
        }
        assert_eq!(d.entries.len(), (0..=12u32).map(|j| j as usize + 1).sum::<usize>());
    }

    #[test]
    fn exact_agrees_to_first_order() {
        let iso = Isotope::h2();
        for ratio in [1e-3, 1e-2] {
            let v2 = ratio * iso.b;
            let f = CrystalField::new(v2);
            let exact = level_diagram_exact(&iso, &f).unwrap();
            let pert = level_diagram_perturbative(&iso, &f, 8);
            for level in exact.entries.iter().filter(|l| l.j <= 3) {
                let diff = (level.energy - pert.energy(level.j, level.abs_m).unwrap()).abs();
                assert!(diff / v2 < 2.0 * ratio, "ratio={ratio} J={} diff={diff}", level.j);
            }
        }
    }

    #[test]
    fn second_order_scaling() {
        // Determine C once from a small-field sweep, then check the V2/B = 0.1 bound.
        let iso = Isotope::h2();
        let mut c = 0.0f64;
        for ratio in [1e-4, 3e-4, 1e-3] {
            let v2 = ratio * iso.b;
            let f = CrystalField::new(v2);
            let exact = level_diagram_exact(&iso, &f).unwrap();
            let pert = level_diagram_perturbative(&iso, &f, 4);
            for l in exact.entries.iter().filter(|l| l.j <= 3) {
                let diff = (l.energy - pert.energy(l.j, l.abs_m).unwrap()).abs();
                c = c.max(diff / (v2 * v2 / iso.b));
                let e2 = second_order_shift(&iso, v2, l.j, l.abs_m as i32);
                let residual = l.energy - pert.energy(l.j, l.abs_m).unwrap() - e2;
                assert!(residual.abs() < 1e-9 + 10.0 * v2.powi(3) / iso.b.powi(2));
            }
        }
        assert!(c > 0.0 && c < 0.1, "C = {c}");
        let v2 = 0.1 * iso.b;
        let f = CrystalField::new(v2);
        let exact = level_diagram_exact(&iso, &f).unwrap();
        let pert = level_diagram_perturbative(&iso, &f, 4);
        for l in exact.entries.iter().filter(|l| l.j <= 3) {
            let diff = (l.energy - pert.energy(l.j, l.abs_m).unwrap()).abs();
            assert!(diff <= 1.2 * c * v2 * v2 / iso.b, "J={} |m|={}", l.j, l.abs_m);
        }
    }

    #[test]
    fn truncation_failure_is_reported() {
        let f = CrystalField::new(5000.0).with_j_max(6);
        let err = level_diagram_exact(&Isotope::d2(), &f).unwrap_err();
        assert!(matches!(err, Error::Truncation(_)));
    }

    #[test]
    fn small_basis_rejected() {
        let f = CrystalField::new(10.0).with_j_max(3);
        assert!(matches!(level_diagram_exact(&Isotope::h2(), &f), Err(Error::Validation(_))));
    }

    #[test]
    fn hexadecapole_term_is_exposed() {
        let mut f = CrystalField::new(0.0);
        f.v4 = 30.0;
        let d = level_diagram_perturbative(&Isotope::h2(), &f, 3);
        // P4 has no first-order effect on J = 1
        assert!(d.splitting(1, 0, 1).unwrap().abs() < 1e-12);
        assert!(d.splitting(2, 0, 2).unwrap().abs() > 1.0);
        let exact = level_diagram_exact(&Isotope::h2(), &f.with_j_max(14)).unwrap();
        assert!(exact.splitting(2, 0, 2).unwrap().abs() > 1.0);
    }
}
