//! Continuous spectra from stick lists: pseudo-Voigt broadening, elastic-line
//! masking and multi-species, multi-site synthesis.

use std::f64::consts::{LN_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crystalfield::{level_diagram, CrystalField, LevelMethod};
use crate::error::{Error, Result};
use crate::population::{populate_levels, thermal_j_max, validate_mole_fractions};
use crate::raman::{enumerate_transitions, intensity_weights, stick_spectrum, SelectionRules, Transition};
use crate::rotor::{Isotope, IsotopeLabel};

/// Unit-area pseudo-Voigt: η·Lorentzian + (1 − η)·Gaussian with a common FWHM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakProfile {
    pub fwhm: f64,
    pub eta: f64,
}

impl Default for PeakProfile {
    fn default() -> Self {
        PeakProfile { fwhm: 6.0, eta: 0.3 }
    }
}

/// Profile value and its partial derivatives at one offset.
#[derive(Debug, Clone, Copy)]
pub struct ProfileEval {
    pub value: f64,
    pub d_offset: f64,
    pub d_fwhm: f64,
    pub d_eta: f64,
}

impl PeakProfile {
    pub fn new(fwhm: f64, eta: f64) -> Result<PeakProfile> {
        let p = PeakProfile { fwhm, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm > 0.0 && self.fwhm.is_finite()) {
            return Err(Error::Validation(format!("fwhm must be > 0, got {}", self.fwhm)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Validation(format!("eta must be in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }

    pub fn value(&self, offset: f64) -> f64 {
        pseudo_voigt(offset, self.fwhm, self.eta).value
    }
}

pub fn gaussian_peak_height(fwhm: f64) -> f64 {
    2.0 / fwhm * (LN_2 / PI).sqrt()
}

/// Unit-area pseudo-Voigt at `x` (offset from the center) with gradients.
pub fn pseudo_voigt(x: f64, fwhm: f64, eta: f64) -> ProfileEval {
    let w = fwhm;
    let g = gaussian_peak_height(w) * (-4.0 * LN_2 * x * x / (w * w)).exp();
    let dg_dx = g * (-8.0 * LN_2 * x / (w * w));
    let dg_dw = g * (-1.0 / w + 8.0 * LN_2 * x * x / (w * w * w));

    let hw2 = w * w / 4.0;
    let den = x * x + hw2;
    let l = (w / 2.0) / (PI * den);
    let dl_dx = -(w / 2.0) * 2.0 * x / (PI * den * den);
    let dl_dw = (x * x - hw2) / (2.0 * PI * den * den);

    ProfileEval {
        value: eta * l + (1.0 - eta) * g,
        d_offset: eta * dl_dx + (1.0 - eta) * dg_dx,
        d_fwhm: eta * dl_dw + (1.0 - eta) * dg_dw,
        d_eta: l - g,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            start: 5.0,
            stop: 1200.0,
            step: 0.5,
        }
    }
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.stop > self.start) {
            return Err(Error::Validation(format!(
                "grid needs stop > start and step > 0, got {:?}",
                self
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub pressure_gpa: Option<f64>,
    pub temperature_k: Option<f64>,
    pub composition: Option<String>,
    pub cutoff_cm1: f64,
    pub warnings: Vec<String>,
}

/// A sampled trace. Masked samples keep their intensity but carry `valid = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub grid: Vec<f64>,
    pub intensity: Vec<f64>,
    pub valid: Vec<bool>,
    pub meta: SpectrumMeta,
}

impl Spectrum {
    pub fn new(grid: Vec<f64>, intensity: Vec<f64>) -> Result<Spectrum> {
        if grid.len() != intensity.len() {
            return Err(Error::Validation(format!(
                "grid has {} samples but intensity has {}",
                grid.len(),
                intensity.len()
            )));
        }
        if let Some(i) = grid.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(format!(
                "grid not strictly ascending at sample {} ({} -> {})",
                i + 1,
                grid[i],
                grid[i + 1]
            )));
        }
        let valid = vec![true; grid.len()];
        Ok(Spectrum {
            grid,
            intensity,
            valid,
            meta: SpectrumMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Trapezoidal integral of the intensity over the whole grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.intensity.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    /// Inclusive index runs of masked samples.
    pub fn masked_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, v) in self.valid.iter().enumerate() {
            match (v, start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    runs.push((s, i - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.valid.len() - 1));
        }
        runs
    }
}

/// intensity(ν) = Σ weightᵢ·profile(ν − shiftᵢ).
pub fn broaden(sticks: &[(f64, f64)], profile: &PeakProfile, grid: &[f64]) -> Result<Spectrum> {
    profile.validate()?;
    let mut spectrum = Spectrum::new(grid.to_vec(), vec![0.0; grid.len()])?;
    for (nu, out) in grid.iter().zip(spectrum.intensity.iter_mut()) {
        *out = sticks
            .iter()
            .map(|(shift, w)| w * profile.value(nu - shift))
            .sum();
    }
    if let (Some(lo), Some(hi)) = (grid.first(), grid.last()) {
        let w_max = sticks.iter().map(|s| s.1.abs()).fold(0.0, f64::max);
        let outside = sticks
            .iter()
            .filter(|(shift, w)| w.abs() > 1e-12 * w_max && (shift < lo || shift > hi))
            .count();
        if outside > 0 {
            spectrum.meta.warnings.push(format!(
                "{outside} stick(s) outside the grid [{lo}, {hi}]"
            ));
        }
    }
    Ok(spectrum)
}

/// Exclude |ν| < cutoff from fitting; intensities are left untouched.
pub fn apply_elastic_mask(spectrum: &Spectrum, cutoff_cm1: f64) -> Result<Spectrum> {
    if !(cutoff_cm1 >= 0.0) {
        return Err(Error::Domain(format!("mask cutoff must be >= 0, got {cutoff_cm1}")));
    }
    let mut out = spectrum.clone();
    for (nu, v) in out.grid.iter().zip(out.valid.iter_mut()) {
        if nu.abs() < cutoff_cm1 {
            *v = false;
        }
    }
    out.meta.cutoff_cm1 = out.meta.cutoff_cm1.max(cutoff_cm1);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Site {
    pub weight: f64,
    pub field: CrystalField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteModel {
    pub sites: Vec<Site>,
}

impl SiteModel {
    pub fn single(field: CrystalField) -> SiteModel {
        SiteModel {
            sites: vec![Site { weight: 1.0, field }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites.is_empty() {
            return Err(Error::Validation("site model has no sites".into()));
        }
        let mut sum = 0.0;
        for s in &self.sites {
            if !(s.weight >= 0.0) {
                return Err(Error::Validation(format!("site weight must be >= 0, got {}", s.weight)));
            }
            s.field.validate()?;
            sum += s.weight;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("site weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub isotope: Isotope,
    pub mole_fraction: f64,
    pub sites: SiteModel,
    /// Frozen ortho fraction; `None` for full thermal equilibrium.
    pub frozen_ortho: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    /// Standard deviation relative to the maximum noiseless intensity.
    pub relative_amplitude: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub level_method: LevelMethod,
    pub rules: SelectionRules,
    pub include_anti_stokes: bool,
    pub noise: Option<Noise>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            level_method: LevelMethod::Perturbative,
            rules: SelectionRules::default(),
            include_anti_stokes: false,
            noise: None,
        }
    }
}

/// One stick attributed to a species and a site, weight already scaled by
/// mole fraction × site weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledStick {
    pub species: IsotopeLabel,
    pub site: usize,
    pub transition: Transition,
}

pub fn composition_label(components: &[Component]) -> String {
    components
        .iter()
        .map(|c| format!("{}:{}", c.isotope.label, c.mole_fraction))
        .collect::<Vec<_>>()
        .join("+")
}

/// Sticks of every species and site at (P, T).
pub fn synth_sticks(
    components: &[Component],
    pressure_gpa: f64,
    temperature_k: f64,
    options: &SynthOptions,
) -> Result<Vec<LabeledStick>> {
    validate_mole_fractions(components.iter().map(|c| c.mole_fraction))?;
    options.rules.validate()?;
    let mut out = Vec::new();
    for c in components {
        c.sites.validate()?;
        let iso = c.isotope.at_pressure(pressure_gpa);
        iso.validate()?;
        let j_report = thermal_j_max(&iso, temperature_k);
        for (k, site) in c.sites.sites.iter().enumerate() {
            let levels = level_diagram(&iso, &site.field, options.level_method, j_report)?;
            let pop = populate_levels(&iso, &levels, temperature_k, c.frozen_ortho)?;
            let lines = enumerate_transitions(&levels, &options.rules);
            let weighted = intensity_weights(&lines, &pop)?;
            let anti_stokes = options.include_anti_stokes && temperature_k > 0.0;
            let sticks = stick_spectrum(&weighted, &pop, temperature_k, anti_stokes)?;
            let scale = c.mole_fraction * site.weight;
            out.extend(sticks.into_iter().map(|mut t| {
                t.weight *= scale;
                LabeledStick {
                    species: iso.label,
                    site: k,
                    transition: t,
                }
            }));
        }
    }
    Ok(out)
}

/// Superpose broadened sticks of every species and site; optional seeded
/// white noise relative to the maximum noiseless intensity.
pub fn synth(
    components: &[Component],
    pressure_gpa: f64,
    temperature_k: f64,
    profile: &PeakProfile,
    grid: &[f64],
    options: &SynthOptions,
) -> Result<Spectrum> {
    let sticks = synth_sticks(components, pressure_gpa, temperature_k, options)?;
    let pairs: Vec<(f64, f64)> = sticks
        .iter()
        .map(|s| (s.transition.shift, s.transition.weight))
        .collect();
    let mut spectrum = broaden(&pairs, profile, grid)?;
    if let Some(noise) = options.noise {
        add_noise(&mut spectrum, &noise)?;
    }
    spectrum.meta.pressure_gpa = Some(pressure_gpa);
    spectrum.meta.temperature_k = Some(temperature_k);
    spectrum.meta.composition = Some(composition_label(components));
    Ok(spectrum)
}

pub fn add_noise(spectrum: &mut Spectrum, noise: &Noise) -> Result<()> {
    if !(noise.relative_amplitude >= 0.0) {
        return Err(Error::Validation("noise amplitude must be >= 0".into()));
    }
    let peak = spectrum.intensity.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let sigma = noise.relative_amplitude * peak;
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    for y in &mut spectrum.intensity {
        *y += normal.sample(&mut rng);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Indices of strict local maxima above `min_height`.
    fn local_maxima(s: &Spectrum, min_height: f64) -> Vec<f64> {
        (1..s.len() - 1)
            .filter(|&i| {
                s.intensity[i] > s.intensity[i - 1]
                    && s.intensity[i] >= s.intensity[i + 1]
                    && s.intensity[i] > min_height
            })
            .map(|i| s.grid[i])
            .collect()
    }

    fn fine_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        Grid { start: lo, stop: hi, step }.points()
    }

    #[test]
    fn empty_sticks_give_zero_spectrum() {
        let s = broaden(&[], &PeakProfile::default(), &fine_grid(0.0, 10.0, 1.0)).unwrap();
        assert!(s.intensity.iter().all(|y| *y == 0.0));
    }

    #[test]
    fn gaussian_peak_height_closed_form() {
        let fwhm = 4.0;
        let p = PeakProfile::new(fwhm, 0.0).unwrap();
        let s = broaden(&[(50.0, 1.0)], &p, &fine_grid(0.0, 100.0, 0.25)).unwrap();
        let max = s.intensity.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 2.0 / fwhm * (LN_2 / PI).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn two_resolved_sticks_give_two_maxima() {
        let fwhm = 3.0;
        let p = PeakProfile::new(fwhm, 0.3).unwrap();
        let s = broaden(&[(40.0, 1.0), (40.0 + 5.0 * fwhm, 0.7)], &p, &fine_grid(0.0, 100.0, 0.05)).unwrap();
        let maxima = local_maxima(&s, 1e-3);
        assert_eq!(maxima.len(), 2);
        assert!((maxima[0] - 40.0).abs() < 0.05 * fwhm);
        assert!((maxima[1] - 55.0).abs() < 0.05 * fwhm);
    }

    #[test]
    fn area_is_conserved() {
        let p = PeakProfile::new(5.0, 0.1).unwrap();
        let sticks = [(100.0, 2.0), (130.0, 0.5)];
        let s = broaden(&sticks, &p, &fine_grid(100.0 - 50.0, 130.0 + 50.0, 0.1)).unwrap();
        assert!((s.integral() / 2.5 - 1.0).abs() < 0.005);
    }

    #[test]
    fn pure_lorentzian_needs_wide_margins() {
        let p = PeakProfile::new(5.0, 1.0).unwrap();
        let s = broaden(&[(0.0, 1.0)], &p, &fine_grid(-1000.0, 1000.0, 0.1)).unwrap();
        assert!((s.integral() - 1.0).abs() < 0.005);
    }

    #[test]
    fn profile_gradients_match_finite_differences() {
        let h = 1e-6;
        for &(x, w, eta) in &[(0.3, 2.0, 0.2), (-4.0, 6.0, 0.8), (1.5, 1.0, 0.5)] {
            let e = pseudo_voigt(x, w, eta);
            let dx = (pseudo_voigt(x + h, w, eta).value - pseudo_voigt(x - h, w, eta).value) / (2.0 * h);
            let dw = (pseudo_voigt(x, w + h, eta).value - pseudo_voigt(x, w - h, eta).value) / (2.0 * h);
            let de = (pseudo_voigt(x, w, eta + h).value - pseudo_voigt(x, w, eta - h).value) / (2.0 * h);
            assert!((e.d_offset - dx).abs() < 1e-7);
            assert!((e.d_fwhm - dw).abs() < 1e-7);
            assert!((e.d_eta - de).abs() < 1e-7);
        }
    }

    #[test]
    fn warns_when_grid_misses_sticks() {
        let s = broaden(&[(500.0, 1.0)], &PeakProfile::default(), &fine_grid(0.0, 100.0, 1.0)).unwrap();
        assert_eq!(s.meta.warnings.len(), 1);
    }

    #[test]
    fn mask_behaviour() {
        let p = PeakProfile::default();
        let s = broaden(&[(10.0, 1.0), (80.0, 1.0)], &p, &fine_grid(0.0, 100.0, 0.5)).unwrap();
        assert_eq!(apply_elastic_mask(&s, 0.0).unwrap(), s);
        let m = apply_elastic_mask(&s, 25.0).unwrap();
        assert_eq!(m.meta.cutoff_cm1, 25.0);
        for (nu, v) in m.grid.iter().zip(&m.valid) {
            assert_eq!(*v, *nu >= 25.0);
        }
        assert_eq!(apply_elastic_mask(&m, 25.0).unwrap(), m);
        assert_eq!(m.intensity, s.intensity);
        assert_eq!(m.masked_runs(), vec![(0, 49)]);
    }

    #[test]
    fn spectrum_requires_ascending_grid() {
        assert!(Spectrum::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(Spectrum::new(vec![1.0, 2.0], vec![0.0]).is_err());
    }

    fn component(iso: Isotope, x: f64, v2: f64, frozen: Option<f64>) -> Component {
        Component {
            isotope: iso,
            mole_fraction: x,
            sites: SiteModel::single(CrystalField::new(v2)),
            frozen_ortho: frozen,
        }
    }

    #[test]
    fn single_component_equals_broadened_sticks() {
        let p = PeakProfile::default();
        let grid = Grid::default().points();
        let c = component(Isotope::h2(), 1.0, 100.0, Some(0.75));
        let opts = SynthOptions::default();
        let s = synth(std::slice::from_ref(&c), 30.0, 10.0, &p, &grid, &opts).unwrap();

        let iso = Isotope::h2();
        let field = CrystalField::new(100.0);
        let levels = crate::crystalfield::level_diagram_perturbative(&iso, &field, thermal_j_max(&iso, 10.0));
        let pop = populate_levels(&iso, &levels, 10.0, Some(0.75)).unwrap();
        let w = intensity_weights(&enumerate_transitions(&levels, &opts.rules), &pop).unwrap();
        let sticks: Vec<(f64, f64)> = stick_spectrum(&w, &pop, 10.0, false)
            .unwrap()
            .iter()
            .map(|t| (t.shift, t.weight))
            .collect();
        let direct = broaden(&sticks, &p, &grid).unwrap();
        assert_eq!(s.intensity, direct.intensity);
    }

    #[test]
    fn four_sites_four_maxima() {
        let fwhm = 4.0;
        let p = PeakProfile::new(fwhm, 0.2).unwrap();
        let v2s = [80.0, 95.0, 110.0, 125.0]; // zero rotons 9 cm⁻¹ apart
        let c = Component {
            isotope: Isotope::d2(),
            mole_fraction: 1.0,
            sites: SiteModel {
                sites: v2s
                    .iter()
                    .map(|&v2| Site { weight: 0.25, field: CrystalField::new(v2) })
                    .collect(),
            },
            frozen_ortho: Some(2.0 / 3.0),
        };
        let grid = fine_grid(30.0, 100.0, 0.1);
        let s = synth(&[c], 30.0, 10.0, &p, &grid, &SynthOptions::default()).unwrap();
        let peak = s.intensity.iter().cloned().fold(0.0, f64::max);
        let maxima = local_maxima(&s, 0.05 * peak);
        assert_eq!(maxima.len(), 4, "{maxima:?}");
        for (m, v2) in maxima.iter().zip(v2s) {
            assert!((m - 0.6 * v2).abs() < 0.05 * fwhm);
        }
    }

    #[test]
    fn mixture_equal_field_single_symmetric_peak() {
        let p = PeakProfile::new(5.0, 0.3).unwrap();
        let grid = fine_grid(30.0, 120.0, 0.1);
        let comps = [
            component(Isotope::h2(), 0.5, 125.0, Some(0.75)),
            component(Isotope::d2(), 0.5, 125.0, Some(2.0 / 3.0)),
        ];
        let s = synth(&comps, 50.0, 10.0, &p, &grid, &SynthOptions::default()).unwrap();
        let peak = s.intensity.iter().cloned().fold(0.0, f64::max);
        let maxima = local_maxima(&s, 0.05 * peak);
        assert_eq!(maxima.len(), 1);
        assert!((maxima[0] - 75.0).abs() < 0.1);
        // mirror symmetry about the line center, up to the far S0 wings
        for d in [1.0, 2.5, 5.0] {
            let at = |x: f64| {
                let i = ((x - 30.0) / 0.1).round() as usize;
                s.intensity[i]
            };
            assert!((at(75.0 - d) - at(75.0 + d)).abs() < 1e-3 * peak);
        }
    }

    #[test]
    fn synth_is_linear_in_components() {
        let p = PeakProfile::default();
        let grid = Grid::default().points();
        let opts = SynthOptions::default();
        let a = component(Isotope::h2(), 0.3, 90.0, Some(0.75));
        let b = component(Isotope::d2(), 0.7, 110.0, Some(2.0 / 3.0));
        let both = synth(&[a.clone(), b.clone()], 40.0, 60.0, &p, &grid, &opts).unwrap();
        let sa = synth(&[Component { mole_fraction: 1.0, ..a }], 40.0, 60.0, &p, &grid, &opts).unwrap();
        let sb = synth(&[Component { mole_fraction: 1.0, ..b }], 40.0, 60.0, &p, &grid, &opts).unwrap();
        for i in 0..grid.len() {
            let sum = 0.3 * sa.intensity[i] + 0.7 * sb.intensity[i];
            assert!((both.intensity[i] - sum).abs() < 1e-10);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let p = PeakProfile::default();
        let grid = Grid::default().points();
        let mut opts = SynthOptions {
            noise: Some(Noise { relative_amplitude: 0.01, seed: 11 }),
            ..SynthOptions::default()
        };
        let c = [component(Isotope::h2(), 1.0, 100.0, Some(0.75))];
        let a = synth(&c, 30.0, 10.0, &p, &grid, &opts).unwrap();
        let b = synth(&c, 30.0, 10.0, &p, &grid, &opts).unwrap();
        assert_eq!(a, b);
        opts.noise = Some(Noise { relative_amplitude: 0.01, seed: 12 });
        let c2 = synth(&c, 30.0, 10.0, &p, &grid, &opts).unwrap();
        assert_ne!(a.intensity, c2.intensity);
    }

    #[test]
    fn site_weights_validated() {
        let sm = SiteModel {
            sites: vec![Site { weight: 0.6, field: CrystalField::new(1.0) }],
        };
        assert!(sm.validate().is_err());
    }
}
