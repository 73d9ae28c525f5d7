//! Named peak models seeded from the forward model's predicted line positions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::{Link, Param, PeakModelSpec, PeakParam, PeakSpec};
use crate::crystalfield::{level_diagram, CrystalField, LevelMethod};
use crate::error::{Error, Result};
use crate::lineshape::Spectrum;
use crate::rotor::Isotope;
use crate::units::kelvin_to_wavenumber;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateName {
    #[serde(rename = "S0_0_triplet")]
    S0Triplet,
    #[serde(rename = "S0_1_phenomenological")]
    S1Phenomenological,
    #[serde(rename = "zero_roton_single")]
    ZeroRotonSingle,
    #[serde(rename = "zero_roton_D2II_quad")]
    ZeroRotonQuad,
}

impl TemplateName {
    pub const ALL: [TemplateName; 4] = [
        TemplateName::S0Triplet,
        TemplateName::S1Phenomenological,
        TemplateName::ZeroRotonSingle,
        TemplateName::ZeroRotonQuad,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateName::S0Triplet => "S0_0_triplet",
            TemplateName::S1Phenomenological => "S0_1_phenomenological",
            TemplateName::ZeroRotonSingle => "zero_roton_single",
            TemplateName::ZeroRotonQuad => "zero_roton_D2II_quad",
        }
    }

    /// Components without physical meaning; kept out of physics reports.
    pub fn is_phenomenological(&self) -> bool {
        matches!(self, TemplateName::S1Phenomenological)
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateName::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| Error::Unknown {
                kind: "template",
                name: s.to_string(),
                available: TemplateName::ALL.iter().map(|t| t.to_string()).collect(),
            })
    }
}

/// Physical context used to predict where the template's peaks sit.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSeed {
    pub isotope: Isotope,
    /// One field per site; only the quad template uses more than the first.
    pub fields: Vec<CrystalField>,
    pub fwhm: f64,
    pub level_method: LevelMethod,
    /// Positions of other expected lines; the window stops short of them.
    pub neighbors: Vec<f64>,
}

impl TemplateSeed {
    pub fn new(isotope: Isotope, field: CrystalField, fwhm: f64) -> TemplateSeed {
        TemplateSeed {
            isotope,
            fields: vec![field],
            fwhm,
            level_method: LevelMethod::Perturbative,
            neighbors: Vec::new(),
        }
    }
}

const INIT_ETA: f64 = 0.3;

/// Predicted positions and names of the template's peaks at the spectrum's
/// pressure, ascending.
fn predicted(name: TemplateName, seed: &TemplateSeed, pressure_gpa: f64, temperature_k: f64) -> Result<Vec<(String, f64)>> {
    let iso = seed.isotope.at_pressure(pressure_gpa);
    let diagram = |field: &CrystalField| level_diagram(&iso, field, seed.level_method, 4);
    let field0 = seed
        .fields
        .first()
        .ok_or_else(|| Error::Validation("template seed has no crystal field".into()))?;
    let zero_roton = |field: &CrystalField| -> Result<f64> {
        let d = diagram(field)?;
        let (e0, e1) = (d.energy(1, 0).unwrap_or(0.0), d.energy(1, 1).unwrap_or(0.0));
        Ok((e1 - e0).abs())
    };
    let mut out = match name {
        TemplateName::S0Triplet => {
            let d = diagram(field0)?;
            let e00 = d.energy(0, 0).unwrap_or(0.0);
            (0..=2u32)
                .map(|m| (format!("m{m}"), d.energy(2, m).unwrap_or(0.0) - e00))
                .collect::<Vec<_>>()
        }
        TemplateName::S1Phenomenological => {
            let d = diagram(field0)?;
            // Only initial sublevels within a Boltzmann factor of 1e-2 of the lowest.
            let e_min = d.manifold(1).map(|l| l.energy).fold(f64::INFINITY, f64::min);
            let reach = thermal_reach(temperature_k);
            let mut shifts = Vec::new();
            for lo in d.manifold(1).filter(|l| l.energy - e_min <= reach) {
                for hi in d.manifold(3) {
                    if hi.abs_m.abs_diff(lo.abs_m) <= 2 {
                        shifts.push(hi.energy - lo.energy);
                    }
                }
            }
            let (min, max) = shifts
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(*s), b.max(*s)));
            vec![
                ("c1".into(), min),
                ("c2".into(), 0.5 * (min + max)),
                ("c3".into(), max),
            ]
        }
        TemplateName::ZeroRotonSingle => vec![("zr".into(), zero_roton(field0)?)],
        TemplateName::ZeroRotonQuad => {
            if seed.fields.len() != 4 {
                return Err(Error::Validation(format!(
                    "{name} needs 4 site fields, got {}",
                    seed.fields.len()
                )));
            }
            seed.fields
                .iter()
                .enumerate()
                .map(|(k, f)| Ok((format!("site{k}"), zero_roton(f)?)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(out)
}

/// Energy above the lowest sublevel at which the Boltzmann factor drops to 1e-2.
fn thermal_reach(temperature_k: f64) -> f64 {
    100f64.ln() * kelvin_to_wavenumber(temperature_k)
}

fn amplitude_guess(spectrum: &Spectrum, center: f64, fwhm: f64, floor: f64) -> f64 {
    let height = spectrum
        .grid
        .iter()
        .zip(&spectrum.intensity)
        .zip(&spectrum.valid)
        .filter(|((nu, _), ok)| **ok && (**nu - center).abs() <= 0.5 * fwhm)
        .map(|((_, y), _)| *y - floor)
        .fold(f64::NEG_INFINITY, f64::max);
    1.064 * height * fwhm
}

/// A fully bounded model for `name`, centers seeded from predicted sticks at
/// the spectrum's pressure and amplitudes from the spectrum itself.
pub fn template(name: TemplateName, seed: &TemplateSeed, spectrum: &Spectrum) -> Result<PeakModelSpec> {
    if !(seed.fwhm > 0.0) {
        return Err(Error::Validation(format!("template fwhm must be > 0, got {}", seed.fwhm)));
    }
    let w = seed.fwhm;
    let centers = predicted(
        name,
        seed,
        spectrum.meta.pressure_gpa.unwrap_or(0.0),
        spectrum.meta.temperature_k.unwrap_or(0.0),
    )?;
    let gaps: Vec<f64> = centers.windows(2).map(|p| p[1].1 - p[0].1).collect();
    let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let ordered = match name {
        TemplateName::ZeroRotonQuad => {
            if !(min_gap > 0.0) {
                return Err(Error::Validation(format!(
                    "{name}: site fields predict coincident zero rotons"
                )));
            }
            true
        }
        TemplateName::S0Triplet => min_gap >= 0.5 * w,
        _ => false,
    };
    let reach = match name {
        TemplateName::ZeroRotonSingle => (0.5 * centers[0].1).max(3.0 * w),
        _ => 2.0 * w,
    };
    let bounds: Vec<(f64, f64)> = (0..centers.len())
        .map(|k| {
            let c = centers[k].1;
            if ordered {
                let lo = if k == 0 { c - gaps[0].max(reach) / 2.0 } else { c - gaps[k - 1] / 2.0 };
                let hi = if k + 1 == centers.len() {
                    c + gaps[k - 1].max(reach) / 2.0
                } else {
                    c + gaps[k] / 2.0
                };
                (lo, hi)
            } else {
                (c - reach, c + reach)
            }
        })
        .map(|(lo, hi)| (lo.max(1e-3), hi))
        .collect();

    let mut bounds = bounds;
    let mut lo_all = bounds.iter().map(|b| b.0).fold(f64::INFINITY, f64::min) - 3.0 * w;
    let mut hi_all = bounds.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max) + 3.0 * w;
    let (c_min, c_max) = (centers[0].1, centers[centers.len() - 1].1);
    // Lines within w/2 of a template peak are the template's own.
    for &n in &seed.neighbors {
        if centers.iter().any(|(_, c)| (n - c).abs() < 0.5 * w) {
            continue;
        }
        if n > c_max {
            hi_all = hi_all.min((n - 3.0 * w).max(c_max + 1.5 * w));
            for ((_, c), b) in centers.iter().zip(bounds.iter_mut()) {
                b.1 = b.1.min((0.5 * (c + n)).max(c + 0.25 * w));
            }
        } else if n < c_min {
            lo_all = lo_all.max((n + 3.0 * w).min(c_min - 1.5 * w));
            for ((_, c), b) in centers.iter().zip(bounds.iter_mut()) {
                b.0 = b.0.max((0.5 * (c + n)).min(c - 0.25 * w));
            }
        }
    }
    let mut in_window: Vec<f64> = spectrum
        .grid
        .iter()
        .zip(&spectrum.intensity)
        .zip(&spectrum.valid)
        .filter(|((nu, _), ok)| **ok && **nu >= lo_all && **nu <= hi_all)
        .map(|((_, y), _)| *y)
        .collect();
    in_window.sort_by(f64::total_cmp);
    let floor = in_window.get(in_window.len() / 10).copied().unwrap_or(0.0);
    let y_max = in_window.last().copied().unwrap_or(0.0) - floor;
    let area_cap = 100.0 * y_max.abs().max(f64::MIN_POSITIVE) * (hi_all - lo_all);
    let area_floor = 1e-3 * y_max.abs().max(f64::MIN_POSITIVE) * w;

    let peaks = centers
        .iter()
        .zip(&bounds)
        .map(|((label, c), &(lo, hi))| {
            let c = c.clamp(lo, hi);
            let amp = amplitude_guess(spectrum, c, w, floor).clamp(area_floor, area_cap);
            PeakSpec {
                name: label.clone(),
                center: Param::bounded(c, lo, hi),
                amplitude: Param::bounded(amp, 0.0, area_cap),
                fwhm: Param::bounded(w, 0.2 * w, 5.0 * w),
                eta: Param::bounded(INIT_ETA, 0.0, 1.0),
            }
        })
        .collect::<Vec<_>>();
    let links = if peaks.len() > 1 {
        vec![Link {
            param: PeakParam::Eta,
            peaks: (0..peaks.len()).collect(),
        }]
    } else {
        vec![]
    };
    let model = PeakModelSpec {
        label: name.to_string(),
        baseline_order: 1,
        window: Some([lo_all, hi_all]),
        mask_cutoff: None,
        ordered_centers: ordered,
        peaks,
        links,
    };
    model.validate()?;
    Ok(model)
}

pub fn template_by_name(name: &str, seed: &TemplateSeed, spectrum: &Spectrum) -> Result<PeakModelSpec> {
    template(name.parse()?, seed, spectrum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineshape::{Grid, Spectrum};

    fn flat() -> Spectrum {
        let g = Grid::default().points();
        let n = g.len();
        Spectrum::new(g, vec![1.0; n]).unwrap()
    }

    #[test]
    fn triplet_has_three_peaks_and_shared_eta() {
        let seed = TemplateSeed::new(Isotope::h2(), CrystalField::new(125.0), 6.0);
        let m = template(TemplateName::S0Triplet, &seed, &flat()).unwrap();
        assert_eq!(m.peaks.len(), 3);
        assert_eq!(m.links.len(), 1);
        assert_eq!(m.links[0].param, PeakParam::Eta);
        assert!(m.layout().n_free() > 3 * 3);
        // |m| = 2 lowest for positive V2
        let names: Vec<&str> = m.peaks.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["m2", "m1", "m0"]);
        assert!((m.peaks[2].center.init - m.peaks[0].center.init - 4.0 / 7.0 * 125.0).abs() < 1e-9);
    }

    #[test]
    fn quad_template_is_ordered() {
        let mut seed = TemplateSeed::new(Isotope::d2(), CrystalField::new(80.0), 4.0);
        seed.fields = [110.0, 80.0, 125.0, 95.0].map(CrystalField::new).to_vec();
        let m = template(TemplateName::ZeroRotonQuad, &seed, &flat()).unwrap();
        assert_eq!(m.peaks.len(), 4);
        assert!(m.ordered_centers);
        for w in m.peaks.windows(2) {
            assert!(w[0].center.max <= w[1].center.min);
        }
    }

    #[test]
    fn quad_template_needs_four_sites() {
        let seed = TemplateSeed::new(Isotope::d2(), CrystalField::new(80.0), 4.0);
        assert!(template(TemplateName::ZeroRotonQuad, &seed, &flat()).is_err());
    }

    #[test]
    fn unknown_template_lists_available() {
        let seed = TemplateSeed::new(Isotope::h2(), CrystalField::new(125.0), 6.0);
        match template_by_name("S0_2_quintet", &seed, &flat()) {
            Err(Error::Unknown { available, .. }) => assert_eq!(available.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_template_roundtrips_through_toml() {
        let mut seed = TemplateSeed::new(Isotope::d2(), CrystalField::new(80.0), 4.0);
        seed.fields = [80.0, 95.0, 110.0, 125.0].map(CrystalField::new).to_vec();
        for name in TemplateName::ALL {
            let m = template(name, &seed, &flat()).unwrap();
            let text = toml::to_string(&m).unwrap();
            let back: PeakModelSpec = toml::from_str(&text).unwrap();
            assert_eq!(back, m, "{name}");
        }
    }
}
