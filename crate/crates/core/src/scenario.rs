//! Named end-to-end pipelines: populations, sticks, synthesis, mask, template
//! fits and frequency extraction for every (P, T) point, persisted as a bundle.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{FrequencyDataset, FrequencyRow};
use crate::config::RunConfig;
use crate::crystalfield::{level_diagram, CrystalField};
use crate::error::{Error, Result};
use crate::fitkit::{fit_peaks, splitting_report, template, FitResult, FitStatus, SplittingReport, TemplateName, TemplateSeed};
use crate::io::{fmt_sig, format_spectrum, parse_spectrum, sha256_hex, to_report, write_atomic, LoadOptions};
use crate::lineshape::{apply_elastic_mask, synth, synth_sticks, Component, Grid, Noise, PeakProfile, Site, SiteModel, Spectrum, SynthOptions};
use crate::population::{evolve_ortho_para, populate_levels, thermal_j_max, PopulationState};
use crate::rotor::{parse_composition, Isotope, IsotopeLabel, Parity};
use crate::raman::SelectionRules;

/// Anti-Stokes sticks weaker than this fraction of the strongest Stokes
/// stick are not counted as visible.
pub const ANTI_STOKES_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub weight: f64,
    /// Multiplies the model V2 at the point's (P, T).
    #[serde(default = "one")]
    pub v2_scale: f64,
}

fn one() -> f64 {
    1.0
}

fn default_sites() -> Vec<SiteSpec> {
    vec![SiteSpec { weight: 1.0, v2_scale: 1.0 }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldSpec {
    /// Durations of successive holds, hours; a point is emitted before the
    /// first hold and after each one.
    pub steps_h: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub template: TemplateName,
    /// Rotor used to place the template's peaks; defaults to the
    /// composition's mole-weighted rotor.
    #[serde(default)]
    pub isotope: Option<IsotopeLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// e.g. "H2", "H2:0.5+D2:0.5".
    pub composition: String,
    pub pressures_gpa: Vec<f64>,
    pub temperatures_k: Vec<f64>,
    #[serde(default)]
    pub phase: String,
    #[serde(default = "default_sites")]
    pub sites: Vec<SiteSpec>,
    /// Initial ortho fraction of homonuclear species; defaults to the
    /// high-temperature spin-statistics value.
    #[serde(default)]
    pub initial_ortho: Option<f64>,
    /// Ignore spin isomerism and populate every level thermally.
    #[serde(default)]
    pub thermal_equilibrium: bool,
    /// Ortho-para conversion history; off when absent.
    #[serde(default)]
    pub hold: Option<HoldSpec>,
    #[serde(default)]
    pub profile: Option<PeakProfile>,
    #[serde(default)]
    pub grid: Option<Grid>,
    #[serde(default)]
    pub include_anti_stokes: bool,
    /// Overrides the config noise level; 0 for noiseless spectra.
    #[serde(default)]
    pub noise_relative: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fits: Vec<FitSpec>,
}

const BUILTIN: [(&str, &str); 6] = [
    ("fig1_h2_pressure_series", include_str!("../scenarios/fig1_h2_pressure_series.toml")),
    ("fig1_h2_conversion_hold", include_str!("../scenarios/fig1_h2_conversion_hold.toml")),
    ("fig1_d2_pressure_series_phase2", include_str!("../scenarios/fig1_d2_pressure_series_phase2.toml")),
    ("fig1_mixture_pressure_series", include_str!("../scenarios/fig1_mixture_pressure_series.toml")),
    ("fig3_mixture_31gpa_Tseries", include_str!("../scenarios/fig3_mixture_31gpa_Tseries.toml")),
    ("fig3_h2_96gpa_Tseries", include_str!("../scenarios/fig3_h2_96gpa_Tseries.toml")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    let (_, text) = BUILTIN.iter().find(|(n, _)| *n == name).ok_or_else(|| Error::Unknown {
        kind: "scenario",
        name: name.to_string(),
        available: builtin_names().iter().map(|s| s.to_string()).collect(),
    })?;
    Scenario::from_toml(text, name)
}

/// Ortho fraction of a homonuclear species with all rotational levels
/// equally accessible: the odd/even spin-weight ratio alone.
pub fn high_temperature_ortho(iso: &Isotope) -> Option<f64> {
    let parity = iso.ortho_parity()?;
    let (even, odd) = (f64::from(iso.spin_weight_even_j), f64::from(iso.spin_weight_odd_j));
    Some(match parity {
        Parity::Odd => odd / (even + odd),
        Parity::Even => even / (even + odd),
    })
}

impl Scenario {
    pub fn from_toml(text: &str, source: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_toml(&text, &path.display().to_string())
    }

    /// Resolve a name: a built-in scenario, otherwise a file path.
    pub fn resolve(name_or_path: &str) -> Result<Scenario> {
        if BUILTIN.iter().any(|(n, _)| *n == name_or_path) {
            return builtin_scenario(name_or_path);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Scenario::load(path);
        }
        builtin_scenario(name_or_path)
    }

    pub fn validate(&self, cfg: &RunConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("scenario {}: {m}", self.name)));
        if self.name.trim().is_empty() {
            return bad("name must not be empty".into());
        }
        parse_composition(&self.composition)?;
        if self.pressures_gpa.is_empty() || self.temperatures_k.is_empty() {
            return bad("needs at least one pressure and one temperature".into());
        }
        if self.pressures_gpa.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("pressures must be finite and >= 0".into());
        }
        if self.temperatures_k.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("temperatures must be finite and >= 0".into());
        }
        if self.sites.is_empty() {
            return bad("needs at least one site".into());
        }
        if self.sites.iter().any(|s| !(s.weight > 0.0) || !s.v2_scale.is_finite()) {
            return bad("site weights must be > 0 and scales finite".into());
        }
        let w: f64 = self.sites.iter().map(|s| s.weight).sum();
        if (w - 1.0).abs() > 1e-9 {
            return bad(format!("site weights sum to {w}, expected 1"));
        }
        if let Some(x) = self.initial_ortho {
            if !(0.0..=1.0).contains(&x) {
                return bad(format!("initial_ortho {x} outside [0, 1]"));
            }
        }
        if let Some(h) = &self.hold {
            if h.steps_h.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return bad("hold steps must be finite and >= 0".into());
            }
            if self.thermal_equilibrium {
                return bad("a conversion hold needs frozen spin isomers, not thermal_equilibrium".into());
            }
        }
        if let Some(p) = &self.profile {
            p.validate()?;
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        if let Some(n) = self.noise_relative {
            if !(n >= 0.0) {
                return bad("noise_relative must be >= 0".into());
            }
        }
        if self.include_anti_stokes && self.temperatures_k.iter().any(|t| *t <= 0.0) {
            return bad("anti-Stokes lines need T > 0".into());
        }
        for f in &self.fits {
            if f.template == TemplateName::ZeroRotonQuad && self.sites.len() != 4 {
                return bad(format!("{} needs 4 sites", f.template));
            }
        }
        cfg.validate()
    }

    pub fn profile(&self, cfg: &RunConfig) -> PeakProfile {
        self.profile.unwrap_or(cfg.profile)
    }

    pub fn grid(&self, cfg: &RunConfig) -> Grid {
        self.grid.unwrap_or(cfg.grid)
    }

    pub fn site_scales(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.v2_scale).collect()
    }

    /// Every (P, T, hold time) point in execution order.
    pub fn points(&self) -> Vec<PointSpec> {
        let times: Vec<Option<f64>> = match &self.hold {
            None => vec![None],
            Some(h) => std::iter::once(0.0)
                .chain(h.steps_h.iter().scan(0.0, |acc, d| {
                    *acc += d;
                    Some(*acc)
                }))
                .map(Some)
                .collect(),
        };
        let mut out = Vec::new();
        for &p in &self.pressures_gpa {
            for &t in &self.temperatures_k {
                for &time in &times {
                    out.push(PointSpec {
                        index: out.len(),
                        pressure_gpa: p,
                        temperature_k: t,
                        hold_time_h: time,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSpec {
    pub index: usize,
    pub pressure_gpa: f64,
    pub temperature_k: f64,
    pub hold_time_h: Option<f64>,
}

impl PointSpec {
    pub fn tag(&self) -> String {
        format!("p{:03}", self.index)
    }
}

/// Inputs of one template fit; the CLI `fit` command builds the same request.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRequest {
    pub template: TemplateName,
    pub isotope: Option<IsotopeLabel>,
    pub site_scales: Vec<f64>,
    pub fwhm: f64,
    /// Explicit V2; otherwise the config field model at the spectrum's (P, T).
    pub v2_cm1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub template: String,
    /// Decomposition is not physically determined; excluded from frequency tables.
    pub phenomenological: bool,
    pub isotope: IsotopeLabel,
    pub pressure_gpa: f64,
    pub temperature_k: f64,
    pub v2_cm1: Vec<f64>,
    pub fit: FitResult,
    #[serde(default)]
    pub splittings: Option<SplittingReport>,
}

impl FitReport {
    pub fn to_text(&self) -> Result<String> {
        to_report(self)
    }
}

fn resolve_rotor(cfg: &RunConfig, isotope: Option<IsotopeLabel>, spectrum: &Spectrum) -> Result<Isotope> {
    if let Some(label) = isotope {
        return Ok(cfg.isotopes.get(label).clone());
    }
    let comp = spectrum.meta.composition.as_deref().ok_or_else(|| {
        Error::Validation("spectrum has no composition header; name the isotope explicitly".into())
    })?;
    Ok(cfg.isotopes.effective(&parse_composition(comp)?))
}

/// Stokes stick positions of appreciable weight for the spectrum's sample,
/// spin isomers at their high-temperature fractions.
fn expected_lines(spectrum: &Spectrum, iso: &Isotope, fields: &[CrystalField], cfg: &RunConfig) -> Result<Vec<f64>> {
    let comp: Vec<(Isotope, f64)> = match spectrum.meta.composition.as_deref() {
        Some(c) => parse_composition(c)?
            .into_iter()
            .map(|(l, x)| (cfg.isotopes.get(l).clone(), x))
            .collect(),
        None => vec![(iso.clone(), 1.0)],
    };
    let weight = 1.0 / fields.len() as f64;
    let sites = SiteModel {
        sites: fields.iter().map(|f| Site { weight, field: *f }).collect(),
    };
    let comps: Vec<Component> = comp
        .into_iter()
        .map(|(isotope, x)| Component {
            frozen_ortho: high_temperature_ortho(&isotope),
            isotope,
            mole_fraction: x,
            sites: sites.clone(),
        })
        .collect();
    let opts = SynthOptions {
        level_method: cfg.level_method,
        ..SynthOptions::default()
    };
    let sticks = synth_sticks(
        &comps,
        spectrum.meta.pressure_gpa.unwrap_or(0.0),
        spectrum.meta.temperature_k.unwrap_or(0.0),
        &opts,
    )?;
    let strongest = sticks.iter().fold(0.0f64, |a, s| a.max(s.transition.weight));
    Ok(sticks
        .iter()
        .filter(|s| s.transition.shift > 0.0 && s.transition.weight >= ANTI_STOKES_THRESHOLD * strongest)
        .map(|s| s.transition.shift)
        .collect())
}

/// Build the template for `req`, fit it and attach the splitting table when
/// the template defines one.
pub fn fit_point(spectrum: &Spectrum, req: &FitRequest, cfg: &RunConfig) -> Result<FitReport> {
    let iso = resolve_rotor(cfg, req.isotope, spectrum)?;
    let pressure = spectrum.meta.pressure_gpa.unwrap_or(0.0);
    let temperature = spectrum.meta.temperature_k.unwrap_or(0.0);
    let v2 = match req.v2_cm1 {
        Some(v) => v,
        None => {
            if spectrum.meta.pressure_gpa.is_none() {
                return Err(Error::Validation(
                    "spectrum has no pressure header; supply V2 explicitly".into(),
                ));
            }
            cfg.field_model.v2_at(pressure, temperature)
        }
    };
    let scales = if req.site_scales.is_empty() { vec![1.0] } else { req.site_scales.clone() };
    let v2s: Vec<f64> = scales.iter().map(|s| s * v2).collect();
    let fields: Vec<CrystalField> = v2s.iter().map(|v| CrystalField::new(*v)).collect();
    let neighbors = expected_lines(spectrum, &iso, &fields, cfg)?;
    let seed = TemplateSeed {
        isotope: iso.clone(),
        fields,
        fwhm: req.fwhm,
        level_method: cfg.level_method,
        neighbors,
    };
    let mut model = template(req.template, &seed, spectrum)?;
    model.mask_cutoff = Some(model.mask_cutoff.unwrap_or(0.0).max(cfg.mask_cutoff_cm1));
    let fit = fit_peaks(spectrum, &model, &cfg.fit)?;
    let splittings = match (req.template, fit.status) {
        (TemplateName::S0Triplet, FitStatus::Converged) => Some(splitting_report(&fit, req.template.as_str())?),
        _ => None,
    };
    Ok(FitReport {
        template: req.template.to_string(),
        phenomenological: req.template.is_phenomenological(),
        isotope: iso.label,
        pressure_gpa: pressure,
        temperature_k: temperature,
        v2_cm1: v2s,
        fit,
        splittings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateOutcome {
    pub spec: FitSpec,
    pub report: std::result::Result<FitReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub spec: PointSpec,
    /// Unscaled model V2 at (P, T).
    pub v2_cm1: f64,
    pub ortho: Vec<(IsotopeLabel, Option<f64>)>,
    pub anti_stokes_lines: usize,
    /// Canonical text of the masked spectrum; the fits ran on its parse.
    pub spectrum_text: Option<String>,
    pub fits: Vec<TemplateOutcome>,
    pub error: Option<String>,
}

impl PointResult {
    pub fn fit(&self, name: TemplateName) -> Option<&FitReport> {
        self.fits
            .iter()
            .find(|f| f.spec.template == name)
            .and_then(|f| f.report.as_ref().ok())
    }

    /// (center, sigma, amplitude) of the single zero-roton fit.
    pub fn zero_roton(&self) -> Option<(f64, f64, f64)> {
        let r = self.fit(TemplateName::ZeroRotonSingle)?;
        let p = r.fit.peaks.first()?;
        Some((p.center.value, p.center.sigma, p.amplitude.value))
    }

    /// Total S₀(0) over total S₀(1) fitted intensity.
    /// The S₀(1) decomposition is phenomenological, but its summed area is
    /// constrained by the data whatever the fit status.
    pub fn s0_ratio(&self) -> Option<f64> {
        let total = |n| -> Option<f64> {
            Some(self.fit(n)?.fit.peaks.iter().map(|p| p.amplitude.value).sum())
        };
        let (a, b) = (total(TemplateName::S0Triplet)?, total(TemplateName::S1Phenomenological)?);
        (b > 0.0).then(|| a / b)
    }

    pub fn status(&self) -> String {
        if let Some(e) = &self.error {
            return format!("error: {e}");
        }
        let bad: Vec<String> = self
            .fits
            .iter()
            .filter_map(|f| match &f.report {
                Ok(r) if r.fit.status == FitStatus::Converged => None,
                Ok(r) => Some(format!("{}={}", f.spec.template, r.fit.status)),
                Err(_) => Some(format!("{}=error", f.spec.template)),
            })
            .collect();
        if bad.is_empty() {
            "ok".into()
        } else {
            bad.join(",")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub config: RunConfig,
    pub config_sha256: String,
    pub scenario_sha256: String,
    pub points: Vec<PointResult>,
}

fn components(scn: &Scenario, cfg: &RunConfig) -> Result<Vec<(Isotope, f64)>> {
    Ok(parse_composition(&scn.composition)?
        .into_iter()
        .map(|(l, x)| (cfg.isotopes.get(l).clone(), x))
        .collect())
}

/// Ortho fraction per component at every point, following the conversion
/// history when a hold is configured.
fn ortho_history(scn: &Scenario, cfg: &RunConfig, points: &[PointSpec]) -> Result<Vec<Vec<Option<f64>>>> {
    let comps = components(scn, cfg)?;
    let initial: Vec<Option<f64>> = comps
        .iter()
        .map(|(iso, _)| {
            if scn.thermal_equilibrium {
                None
            } else {
                high_temperature_ortho(iso).map(|x| scn.initial_ortho.unwrap_or(x))
            }
        })
        .collect();
    let mut out = Vec::with_capacity(points.len());
    let mut state: Option<(PointSpec, PopulationState)> = None;
    for pt in points {
        let Some(time) = pt.hold_time_h else {
            out.push(initial.clone());
            continue;
        };
        let field = CrystalField::new(cfg.field_model.v2_at(pt.pressure_gpa, pt.temperature_k) * scn.sites[0].v2_scale);
        let next = match state.take() {
            Some((last, prev))
                if last.pressure_gpa == pt.pressure_gpa
                    && last.temperature_k == pt.temperature_k
                    && last.hold_time_h.is_some_and(|t| t <= time) =>
            {
                let dt = time - last.hold_time_h.unwrap_or(0.0);
                evolve_ortho_para(&prev, &cfg.kinetics, pt.pressure_gpa, pt.temperature_k, dt)?
            }
            _ => {
                let mut species = Vec::with_capacity(comps.len());
                for ((iso, x), x0) in comps.iter().zip(&initial) {
                    let iso = iso.at_pressure(pt.pressure_gpa);
                    let levels = level_diagram(&iso, &field, cfg.level_method, thermal_j_max(&iso, pt.temperature_k))?;
                    let mut s = populate_levels(&iso, &levels, pt.temperature_k, *x0)?;
                    s.mole_fraction = *x;
                    species.push(s);
                }
                PopulationState {
                    temperature_k: pt.temperature_k,
                    species,
                }
            }
        };
        out.push(next.species.iter().map(|s| s.ortho_fraction).collect());
        state = Some((*pt, next));
    }
    Ok(out)
}

fn point_seed(cfg: &RunConfig, scn: &Scenario, index: usize) -> u64 {
    cfg.seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(scn.seed.wrapping_mul(1_000_003))
        .wrapping_add(index as u64)
}

fn run_point(scn: &Scenario, cfg: &RunConfig, spec: PointSpec, ortho: &[Option<f64>]) -> PointResult {
    let labels: Vec<IsotopeLabel> = parse_composition(&scn.composition)
        .map(|c| c.into_iter().map(|(l, _)| l).collect())
        .unwrap_or_default();
    let v2 = cfg.field_model.v2_at(spec.pressure_gpa, spec.temperature_k);
    let mut result = PointResult {
        spec,
        v2_cm1: v2,
        ortho: labels.into_iter().zip(ortho.iter().copied()).collect(),
        anti_stokes_lines: 0,
        spectrum_text: None,
        fits: Vec::new(),
        error: None,
    };
    let spectrum = match synthesize_point(scn, cfg, &spec, v2, ortho, &mut result.anti_stokes_lines) {
        Ok(s) => s,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    let text = format_spectrum(&spectrum);
    let parsed = match parse_spectrum(&text, &format!("{}.txt", spec.tag()), &LoadOptions::default()) {
        Ok(s) => s,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    result.spectrum_text = Some(text);
    let fwhm = scn.profile(cfg).fwhm;
    for f in &scn.fits {
        let req = FitRequest {
            template: f.template,
            isotope: f.isotope,
            site_scales: scn.site_scales(),
            fwhm,
            v2_cm1: None,
        };
        result.fits.push(TemplateOutcome {
            spec: *f,
            report: fit_point(&parsed, &req, cfg).map_err(|e| e.to_string()),
        });
    }
    result
}

fn synthesize_point(
    scn: &Scenario,
    cfg: &RunConfig,
    spec: &PointSpec,
    v2: f64,
    ortho: &[Option<f64>],
    anti_stokes_lines: &mut usize,
) -> Result<Spectrum> {
    let sites = SiteModel {
        sites: scn
            .sites
            .iter()
            .map(|s| Site {
                weight: s.weight,
                field: CrystalField::new(v2 * s.v2_scale),
            })
            .collect(),
    };
    let comps: Vec<Component> = components(scn, cfg)?
        .into_iter()
        .zip(ortho)
        .map(|((isotope, x), frozen)| Component {
            isotope,
            mole_fraction: x,
            sites: sites.clone(),
            frozen_ortho: *frozen,
        })
        .collect();
    let amplitude = scn.noise_relative.unwrap_or(cfg.noise_relative);
    let opts = SynthOptions {
        level_method: cfg.level_method,
        rules: SelectionRules::default(),
        include_anti_stokes: scn.include_anti_stokes,
        noise: (amplitude > 0.0).then(|| Noise {
            relative_amplitude: amplitude,
            seed: point_seed(cfg, scn, spec.index),
        }),
    };
    let grid = scn.grid(cfg);
    let points = grid.points();
    let lo = points[0];
    let sticks = synth_sticks(&comps, spec.pressure_gpa, spec.temperature_k, &opts)?;
    let strongest = sticks
        .iter()
        .filter(|s| s.transition.shift > 0.0)
        .fold(0.0f64, |a, s| a.max(s.transition.weight));
    *anti_stokes_lines = sticks
        .iter()
        .filter(|s| {
            let x = s.transition.shift;
            x < 0.0 && x >= lo && x.abs() >= cfg.mask_cutoff_cm1 && s.transition.weight >= ANTI_STOKES_THRESHOLD * strongest
        })
        .count();
    let spectrum = synth(&comps, spec.pressure_gpa, spec.temperature_k, &scn.profile(cfg), &points, &opts)?;
    apply_elastic_mask(&spectrum, cfg.mask_cutoff_cm1)
}

/// Run every point; failures are recorded per point and never abort the run.
pub fn run_scenario(scn: &Scenario, cfg: &RunConfig) -> Result<ScenarioRun> {
    scn.validate(cfg)?;
    let points = scn.points();
    let history = ortho_history(scn, cfg, &points)?;
    let results: Vec<PointResult> = points
        .par_iter()
        .zip(history.par_iter())
        .map(|(p, h)| run_point(scn, cfg, *p, h))
        .collect();
    Ok(ScenarioRun {
        scenario: scn.clone(),
        config: cfg.clone(),
        config_sha256: cfg.hash()?,
        scenario_sha256: sha256_hex(to_report(scn)?.as_bytes()),
        points: results,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), fmt_sig)
}

impl ScenarioRun {
    /// Zero-roton rows ready for field-model calibration (converged fits only).
    pub fn zero_roton_dataset(&self) -> FrequencyDataset {
        let mut rows = Vec::new();
        for pt in &self.points {
            for f in &pt.fits {
                let Ok(r) = &f.report else { continue };
                if r.fit.status != FitStatus::Converged {
                    continue;
                }
                let site_peaks = match f.spec.template {
                    TemplateName::ZeroRotonSingle => r.fit.peaks.iter().map(|p| (None, p)).collect::<Vec<_>>(),
                    TemplateName::ZeroRotonQuad => r
                        .fit
                        .peaks
                        .iter()
                        .enumerate()
                        .map(|(k, p)| (Some(k as u32), p))
                        .collect(),
                    _ => continue,
                };
                for (site, p) in site_peaks {
                    rows.push(FrequencyRow {
                        pressure_gpa: pt.spec.pressure_gpa,
                        temperature_k: pt.spec.temperature_k,
                        sample: self.scenario.composition.clone(),
                        phase: self.scenario.phase.clone(),
                        frequency_cm1: p.center.value,
                        uncertainty_cm1: p.center.sigma,
                        site,
                    });
                }
            }
        }
        FrequencyDataset { rows }
    }

    pub fn frequencies_table(&self) -> String {
        let mut out = String::from(
            "point\tpressure_gpa\ttemperature_k\thold_h\ttemplate\tpeak\tcenter_cm1\tcenter_sigma_cm1\tamplitude\tamplitude_sigma\tfwhm_cm1\tstatus\n",
        );
        for pt in &self.points {
            for f in &pt.fits {
                let Ok(r) = &f.report else { continue };
                if r.phenomenological {
                    continue;
                }
                for p in &r.fit.peaks {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        pt.spec.tag(),
                        fmt_sig(pt.spec.pressure_gpa),
                        fmt_sig(pt.spec.temperature_k),
                        opt(pt.spec.hold_time_h),
                        r.template,
                        p.name,
                        fmt_sig(p.center.value),
                        fmt_sig(p.center.sigma),
                        fmt_sig(p.amplitude.value),
                        fmt_sig(p.amplitude.sigma),
                        fmt_sig(p.fwhm.value),
                        r.fit.status,
                    );
                }
            }
        }
        out
    }

    pub fn points_table(&self) -> String {
        let mut out = String::from(
            "point\tpressure_gpa\ttemperature_k\thold_h\tv2_cm1\tortho\tanti_stokes_lines\tzero_roton_cm1\tzero_roton_sigma_cm1\tzero_roton_intensity\ts0_0_over_s0_1\tstatus\n",
        );
        for pt in &self.points {
            let ortho: Vec<String> = pt
                .ortho
                .iter()
                .map(|(l, x)| format!("{l}:{}", opt(*x)))
                .collect();
            let zr = pt.zero_roton();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                pt.spec.tag(),
                fmt_sig(pt.spec.pressure_gpa),
                fmt_sig(pt.spec.temperature_k),
                opt(pt.spec.hold_time_h),
                fmt_sig(pt.v2_cm1),
                ortho.join(","),
                pt.anti_stokes_lines,
                opt(zr.map(|z| z.0)),
                opt(zr.map(|z| z.1)),
                opt(zr.map(|z| z.2)),
                opt(pt.s0_ratio()),
                pt.status(),
            );
        }
        out
    }

    pub fn log(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {}", self.scenario.name);
        let _ = writeln!(out, "config_sha256 {}", self.config_sha256);
        let _ = writeln!(out, "scenario_sha256 {}", self.scenario_sha256);
        for pt in &self.points {
            let _ = writeln!(
                out,
                "{} P={} T={} hold={} : {}",
                pt.spec.tag(),
                fmt_sig(pt.spec.pressure_gpa),
                fmt_sig(pt.spec.temperature_k),
                opt(pt.spec.hold_time_h),
                pt.status()
            );
            for f in &pt.fits {
                match &f.report {
                    Ok(r) => {
                        for w in &r.fit.warnings {
                            let _ = writeln!(out, "  {}: {w}", f.spec.template);
                        }
                    }
                    Err(e) => {
                        let _ = writeln!(out, "  {}: {e}", f.spec.template);
                    }
                }
            }
        }
        out
    }

    /// Bundle files as (relative path, contents), manifest excluded.
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut files = vec![
            ("config.toml".to_string(), self.config.canonical()?.into_bytes()),
            ("scenario.toml".to_string(), to_report(&self.scenario)?.into_bytes()),
        ];
        for pt in &self.points {
            let tag = pt.spec.tag();
            if let Some(text) = &pt.spectrum_text {
                files.push((format!("spectra/{tag}.txt"), text.clone().into_bytes()));
            }
            for f in &pt.fits {
                if let Ok(r) = &f.report {
                    files.push((format!("fits/{tag}_{}.toml", f.spec.template), r.to_text()?.into_bytes()));
                }
            }
        }
        files.push(("tables/frequencies.tsv".into(), self.frequencies_table().into_bytes()));
        files.push(("tables/points.tsv".into(), self.points_table().into_bytes()));
        files.push(("tables/zero_roton.csv".into(), self.zero_roton_dataset().to_csv()?.into_bytes()));
        files.push(("log.txt".into(), self.log().into_bytes()));
        Ok(files)
    }

    /// Write the bundle under `dir`; the manifest is written last.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        let files = self.files()?;
        let mut entries = Vec::with_capacity(files.len());
        for (rel, bytes) in &files {
            write_atomic(&dir.join(rel), bytes)?;
            entries.push(ManifestEntry {
                path: rel.clone(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            tool: "roton".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: format!("scenario {}", self.scenario.name),
            seed: self.config.seed,
            scenario_seed: Some(self.scenario.seed),
            config_sha256: self.config_sha256.clone(),
            inputs: vec![ManifestEntry {
                path: "scenario.toml".into(),
                sha256: self.scenario_sha256.clone(),
                bytes: to_report(&self.scenario)?.len() as u64,
            }],
            outputs: entries,
            failed_points: self.points.iter().filter(|p| p.error.is_some()).count(),
        };
        manifest.write(dir)?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl ManifestEntry {
    pub fn of(path: &str, bytes: &[u8]) -> ManifestEntry {
        ManifestEntry {
            path: path.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        }
    }
}

/// Reproduction record of a run: tool version, seed, config hash and the
/// hash of every input and output. No timestamps, so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    #[serde(default)]
    pub scenario_seed: Option<u64>,
    pub config_sha256: String,
    pub inputs: Vec<ManifestEntry>,
    pub outputs: Vec<ManifestEntry>,
    pub failed_points: usize,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.toml";

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(Self::FILE), to_report(self)?.as_bytes())
    }
}
