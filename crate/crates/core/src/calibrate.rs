//! Pressure and temperature dependence of the crystal field, calibrated
//! against measured zero-roton frequencies.
//!
//! Both the V2(P) forms and the linear temperature softening are modelling
//! choices, not forms derived from theory; every serialized model says so.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::crystalfield::{level_diagram, level_diagram_perturbative, CrystalField, LevelMethod};
use crate::error::{Error, Result};
use crate::fitkit::lm::{minimize, normal_inverse, numeric_jacobian, Bound, LmOptions, LmStatus, Residuals};
use crate::rotor::{effective_isotope, parse_composition, Isotope, IsotopeLabel};

/// First-order J = 1 zero-roton frequency per unit V2.
pub const ZERO_ROTON_PER_V2: f64 = 0.6;

pub const ARTIFACT_NOTE: &str = "V2(P) form and temperature softening are modelling choices";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum FieldForm {
    /// V2 = a·P^b.
    PowerLaw { a: f64, b: f64 },
    /// V2 = c1·P + c2·P².
    Quadratic { c1: f64, c2: f64 },
}

impl FieldForm {
    pub fn v2(&self, p: f64) -> f64 {
        match *self {
            FieldForm::PowerLaw { a, b } => {
                if p > 0.0 {
                    a * p.powf(b)
                } else {
                    0.0
                }
            }
            FieldForm::Quadratic { c1, c2 } => c1 * p + c2 * p * p,
        }
    }

    pub fn kind(&self) -> FormKind {
        match self {
            FieldForm::PowerLaw { .. } => FormKind::PowerLaw,
            FieldForm::Quadratic { .. } => FormKind::Quadratic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    #[default]
    PowerLaw,
    Quadratic,
}

impl FromStr for FormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power_law" => Ok(FormKind::PowerLaw),
            "quadratic" => Ok(FormKind::Quadratic),
            other => Err(Error::Unknown {
                kind: "field model form",
                name: other.to_string(),
                available: vec!["power_law".into(), "quadratic".into()],
            }),
        }
    }
}

/// s(T) = max(0, 1 − c_T·(T − T0)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Softening {
    pub c_t_per_k: f64,
    pub t0_k: f64,
}

impl Default for Softening {
    fn default() -> Self {
        Softening {
            c_t_per_k: 5e-4,
            t0_k: 10.0,
        }
    }
}

impl Softening {
    pub const NONE: Softening = Softening {
        c_t_per_k: 0.0,
        t0_k: 10.0,
    };

    pub fn factor(&self, temperature_k: f64) -> f64 {
        (1.0 - self.c_t_per_k * (temperature_k - self.t0_k)).max(0.0)
    }

    fn d_factor_d_ct(&self, temperature_k: f64) -> f64 {
        if self.factor(temperature_k) > 0.0 {
            -(temperature_k - self.t0_k)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldModel {
    pub form: FieldForm,
    #[serde(default)]
    pub softening: Softening,
    /// Pressure span of the data the model was fitted to, GPa.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_range: Option<[f64; 2]>,
    #[serde(default = "artifact_note")]
    pub note: String,
}

fn artifact_note() -> String {
    ARTIFACT_NOTE.to_string()
}

impl Default for FieldModel {
    /// Power law through 75 cm⁻¹ at 50 GPa and 150 cm⁻¹ at 124 GPa.
    fn default() -> Self {
        let b = 2f64.ln() / (124.0f64 / 50.0).ln();
        let a = 125.0 / 50f64.powf(b);
        FieldModel {
            form: FieldForm::PowerLaw { a, b },
            softening: Softening::default(),
            pressure_range: Some([50.0, 124.0]),
            note: artifact_note(),
        }
    }
}

impl FieldModel {
    pub fn new(form: FieldForm, softening: Softening) -> FieldModel {
        FieldModel {
            form,
            softening,
            pressure_range: None,
            note: artifact_note(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = match self.form {
            FieldForm::PowerLaw { a, b } => a.is_finite() && b.is_finite() && a >= 0.0,
            FieldForm::Quadratic { c1, c2 } => c1.is_finite() && c2.is_finite(),
        };
        if !finite {
            return Err(Error::Validation(format!("invalid field model parameters {:?}", self.form)));
        }
        if !self.softening.c_t_per_k.is_finite() || !self.softening.t0_k.is_finite() {
            return Err(Error::Validation("softening parameters must be finite".into()));
        }
        Ok(())
    }

    /// V2 at P before softening.
    pub fn v2(&self, pressure_gpa: f64) -> f64 {
        self.form.v2(pressure_gpa)
    }

    /// Effective V2 at (P, T).
    pub fn v2_at(&self, pressure_gpa: f64, temperature_k: f64) -> f64 {
        self.v2(pressure_gpa) * self.softening.factor(temperature_k)
    }

    pub fn field_at(&self, pressure_gpa: f64, temperature_k: f64) -> CrystalField {
        CrystalField::new(self.v2_at(pressure_gpa, temperature_k))
    }

    pub fn is_extrapolated(&self, pressure_gpa: f64) -> bool {
        match self.pressure_range {
            Some([lo, hi]) => pressure_gpa < lo || pressure_gpa > hi,
            None => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroRotonPrediction {
    pub frequency_cm1: f64,
    pub extrapolated: bool,
}

/// (3/5)·V2(P)·s(T). The rotor is accepted for interface symmetry only: at
/// first order the J = 1 splitting carries no rotational constant.
pub fn predict_zero_roton(
    model: &FieldModel,
    pressure_gpa: f64,
    temperature_k: f64,
    _isotope: IsotopeLabel,
) -> ZeroRotonPrediction {
    ZeroRotonPrediction {
        frequency_cm1: ZERO_ROTON_PER_V2 * model.v2_at(pressure_gpa, temperature_k),
        extrapolated: model.is_extrapolated(pressure_gpa),
    }
}

/// J = 1 zero-roton frequency |E(1,0) − E(1,1)| from exact diagonalization.
pub fn exact_zero_roton(iso: &Isotope, v2: f64) -> Result<f64> {
    let d = level_diagram(iso, &CrystalField::new(v2), LevelMethod::Exact, 1)?;
    let e0 = d.energy(1, 0).unwrap_or(0.0);
    let e1 = d.energy(1, 1).unwrap_or(0.0);
    Ok((e0 - e1).abs())
}

/// Lowest S₀(0) component at first order: min over |m| of E(2,m) − E(0,0).
fn s0_lower_component(iso: &Isotope, v2: f64) -> f64 {
    let d = level_diagram_perturbative(iso, &CrystalField::new(v2), 2);
    let e00 = d.energy(0, 0).unwrap_or(0.0);
    d.manifold(2).map(|l| l.energy - e00).fold(f64::INFINITY, f64::min)
}

/// Lowest pressure where zero roton + 2·fwhm reaches the lower S₀(0) edge
/// minus 2·fwhm, bisected to 0.1 GPa; `None` when no crossing below `p_max`.
pub fn overlap_pressure(
    model: &FieldModel,
    iso: &Isotope,
    fwhm: f64,
    temperature_k: f64,
    p_max: f64,
) -> Option<f64> {
    let gap = |p: f64| {
        let v2 = model.v2_at(p, temperature_k);
        let iso_p = iso.at_pressure(p);
        (ZERO_ROTON_PER_V2 * v2 + 2.0 * fwhm) - (s0_lower_component(&iso_p, v2) - 2.0 * fwhm)
    };
    if gap(0.0) >= 0.0 {
        return Some(0.0);
    }
    let step = 1.0;
    let mut lo = 0.0;
    let mut hi = None;
    let mut p = step;
    while p <= p_max + 1e-9 {
        if gap(p) >= 0.0 {
            hi = Some(p);
            break;
        }
        lo = p;
        p += step;
    }
    let mut hi = hi?;
    while hi - lo > 0.1 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyRow {
    pub pressure_gpa: f64,
    pub temperature_k: f64,
    /// Isotope or mixture label, e.g. `H2`, `D2`, `H2+D2`.
    pub sample: String,
    pub phase: String,
    pub frequency_cm1: f64,
    pub uncertainty_cm1: f64,
    #[serde(default)]
    pub site: Option<u32>,
}

impl FrequencyRow {
    pub fn validate(&self) -> Result<()> {
        if !(self.pressure_gpa > 0.0) || !(self.temperature_k > 0.0) {
            return Err(Error::Validation(format!(
                "row at P={} T={}: pressure and temperature must be > 0",
                self.pressure_gpa, self.temperature_k
            )));
        }
        if !(self.frequency_cm1 >= 0.0) || !(self.uncertainty_cm1 > 0.0) {
            return Err(Error::Validation(format!(
                "row at P={}: frequency must be >= 0 and uncertainty > 0",
                self.pressure_gpa
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrequencyDataset {
    pub rows: Vec<FrequencyRow>,
}

impl FrequencyDataset {
    pub fn validate(&self) -> Result<()> {
        self.rows.iter().try_for_each(FrequencyRow::validate)
    }

    pub fn read(reader: impl Read, source: &str) -> Result<FrequencyDataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<FrequencyRow>() {
            let row = rec.map_err(|e| Error::Parse {
                path: source.to_string(),
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            rows.push(row);
        }
        let data = FrequencyDataset { rows };
        data.validate()?;
        Ok(data)
    }

    pub fn load(path: &Path) -> Result<FrequencyDataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        FrequencyDataset::read(file, &path.display().to_string())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Validation(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mapping {
    /// ω = (3/5)·V2·s(T).
    #[default]
    FirstOrder,
    /// ω from exact diagonalization with the sample's rotational constant.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationOptions {
    pub form: FormKind,
    /// Hold the power-law exponent at this value.
    #[serde(default)]
    pub fixed_exponent: Option<f64>,
    #[serde(default)]
    pub softening: Softening,
    /// Fit c_T instead of holding it.
    #[serde(default)]
    pub fit_softening: bool,
    #[serde(default)]
    pub mapping: Mapping,
    #[serde(default)]
    pub lm: LmOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            form: FormKind::PowerLaw,
            fixed_exponent: None,
            softening: Softening::default(),
            fit_softening: false,
            mapping: Mapping::FirstOrder,
            lm: LmOptions::default(),
        }
    }
}

/// First-order and exact predictions for one data row under a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingDiagnostic {
    pub pressure_gpa: f64,
    pub temperature_k: f64,
    pub sample: String,
    pub first_order_cm1: f64,
    pub exact_cm1: f64,
    pub difference_cm1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: FieldModel,
    pub mapping: Mapping,
    pub parameters: Vec<String>,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub dof: usize,
    pub residuals: Vec<f64>,
    pub pulls: Vec<f64>,
    pub warnings: Vec<String>,
    pub diagnostics: Vec<MappingDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteFit {
    pub site: u32,
    pub fit: ModelFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Fit to the rows without a site index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<ModelFit>,
    /// One fit per site index, for multi-site phases.
    #[serde(default)]
    pub sites: Vec<SiteFit>,
}

impl Calibration {
    pub fn model(&self) -> Result<&FieldModel> {
        self.global
            .as_ref()
            .map(|f| &f.model)
            .ok_or_else(|| Error::InsufficientData("dataset has no site-free rows".into()))
    }
}

struct CalProblem<'a> {
    rows: &'a [FrequencyRow],
    rotors: Vec<Option<Isotope>>,
    opts: &'a CalibrationOptions,
}

impl CalProblem<'_> {
    fn n_form(&self) -> usize {
        match (self.opts.form, self.opts.fixed_exponent) {
            (FormKind::PowerLaw, Some(_)) => 1,
            _ => 2,
        }
    }

    fn model(&self, p: &DVector<f64>) -> FieldModel {
        let form = match (self.opts.form, self.opts.fixed_exponent) {
            (FormKind::PowerLaw, Some(b)) => FieldForm::PowerLaw { a: p[0], b },
            (FormKind::PowerLaw, None) => FieldForm::PowerLaw { a: p[0], b: p[1] },
            (FormKind::Quadratic, _) => FieldForm::Quadratic { c1: p[0], c2: p[1] },
        };
        let mut softening = self.opts.softening;
        if self.opts.fit_softening {
            softening.c_t_per_k = p[self.n_form()];
        }
        FieldModel::new(form, softening)
    }

    fn predict(&self, model: &FieldModel, k: usize) -> f64 {
        let r = &self.rows[k];
        let v2 = model.v2_at(r.pressure_gpa, r.temperature_k);
        match (self.opts.mapping, &self.rotors[k]) {
            (Mapping::Exact, Some(iso)) => {
                exact_zero_roton(&iso.at_pressure(r.pressure_gpa), v2).unwrap_or(f64::NAN)
            }
            _ => ZERO_ROTON_PER_V2 * v2,
        }
    }
}

impl Residuals for CalProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.rows.len()
    }

    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let m = self.model(p);
        DVector::from_iterator(
            self.rows.len(),
            (0..self.rows.len()).map(|k| {
                let r = &self.rows[k];
                (r.frequency_cm1 - self.predict(&m, k)) / r.uncertainty_cm1
            }),
        )
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        if self.opts.mapping == Mapping::Exact {
            return numeric_jacobian(self, p, 1e-6);
        }
        let m = self.model(p);
        let n = p.len();
        let mut j = DMatrix::zeros(self.rows.len(), n);
        for (k, r) in self.rows.iter().enumerate() {
            let (pr, t) = (r.pressure_gpa, r.temperature_k);
            let s = m.softening.factor(t);
            let scale = -ZERO_ROTON_PER_V2 / r.uncertainty_cm1;
            let dv2: Vec<f64> = match m.form {
                FieldForm::PowerLaw { a, b } => {
                    let pb = pr.powf(b);
                    if self.opts.fixed_exponent.is_some() {
                        vec![pb]
                    } else {
                        vec![pb, a * pb * pr.ln()]
                    }
                }
                FieldForm::Quadratic { .. } => vec![pr, pr * pr],
            };
            for (c, d) in dv2.iter().enumerate() {
                j[(k, c)] = scale * s * d;
            }
            if self.opts.fit_softening {
                j[(k, n - 1)] = scale * m.v2(pr) * m.softening.d_factor_d_ct(t);
            }
        }
        j
    }
}

fn initial_guess(rows: &[FrequencyRow], opts: &CalibrationOptions) -> Vec<f64> {
    let target: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| {
            let s = opts.softening.factor(r.temperature_k).max(1e-6);
            (r.pressure_gpa, r.frequency_cm1 / (ZERO_ROTON_PER_V2 * s), r.uncertainty_cm1)
        })
        .collect();
    let mut guess = match (opts.form, opts.fixed_exponent) {
        (FormKind::PowerLaw, Some(b)) => {
            let (num, den) = target
                .iter()
                .fold((0.0, 0.0), |(n, d), (p, v, _)| (n + v * p.powf(b), d + p.powf(2.0 * b)));
            vec![(num / den).max(1e-6)]
        }
        (FormKind::PowerLaw, None) => {
            let pts: Vec<(f64, f64)> = target
                .iter()
                .filter(|(_, v, _)| *v > 0.0)
                .map(|(p, v, _)| (p.ln(), v.ln()))
                .collect();
            let n = pts.len() as f64;
            let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
            let sxx: f64 = pts.iter().map(|(x, _)| (x - sx / n).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|(x, y)| (x - sx / n) * (y - sy / n)).sum();
            let b = if sxx > 0.0 { (sxy / sxx).clamp(0.1, 4.0) } else { 1.0 };
            let a = if n > 0.0 { (sy / n - b * sx / n).exp() } else { 1.0 };
            vec![a, b]
        }
        (FormKind::Quadratic, _) => {
            let a = DMatrix::from_fn(target.len(), 2, |i, c| target[i].0.powi(c as i32 + 1) / target[i].2);
            let y = DVector::from_iterator(target.len(), target.iter().map(|t| t.1 / t.2));
            let sol = a.svd(true, true).solve(&y, 1e-14).map(|v| vec![v[0], v[1]]);
            sol.unwrap_or_else(|_| vec![1.0, 0.0])
        }
    };
    if opts.fit_softening {
        guess.push(opts.softening.c_t_per_k.max(1e-5));
    }
    guess
}

fn fit_rows(rows: &[FrequencyRow], opts: &CalibrationOptions) -> Result<ModelFit> {
    let rotors: Vec<Option<Isotope>> = rows
        .iter()
        .map(|r| parse_composition(&r.sample).ok().map(|c| effective_isotope(&c)))
        .collect();
    if opts.mapping == Mapping::Exact {
        if let Some(k) = rotors.iter().position(Option::is_none) {
            return Err(Error::Validation(format!(
                "exact mapping needs a known sample; row {k} has '{}'",
                rows[k].sample
            )));
        }
    }
    let problem = CalProblem { rows, rotors, opts };
    let n_params = problem.n_form() + usize::from(opts.fit_softening);
    if rows.len() < n_params.max(if opts.fixed_exponent.is_some() { 1 } else { 2 }) {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot determine {n_params} parameters",
            rows.len()
        )));
    }
    let mut names: Vec<String> = match (opts.form, opts.fixed_exponent) {
        (FormKind::PowerLaw, Some(_)) => vec!["a".into()],
        (FormKind::PowerLaw, None) => vec!["a".into(), "b".into()],
        (FormKind::Quadratic, _) => vec!["c1".into(), "c2".into()],
    };
    let mut bounds = match (opts.form, opts.fixed_exponent) {
        (FormKind::PowerLaw, Some(_)) => vec![Bound::new(0.0, f64::INFINITY)],
        (FormKind::PowerLaw, None) => vec![Bound::new(0.0, f64::INFINITY), Bound::new(0.01, 5.0)],
        (FormKind::Quadratic, _) => vec![Bound::FREE, Bound::FREE],
    };
    if opts.fit_softening {
        names.push("c_t_per_k".into());
        bounds.push(Bound::new(0.0, 1.0));
    }
    let p0 = DVector::from_vec(initial_guess(rows, opts));
    let outcome = minimize(&problem, &p0, &bounds, &opts.lm);
    let (cov, singular) = normal_inverse(&problem.jacobian(&outcome.params));

    let mut model = problem.model(&outcome.params);
    let (p_lo, p_hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.pressure_gpa), hi.max(r.pressure_gpa))
    });
    model.pressure_range = Some([p_lo, p_hi]);

    let mut warnings = Vec::new();
    if outcome.status != LmStatus::Converged {
        warnings.push(format!("optimizer stopped with status {:?}", outcome.status));
    }
    if singular {
        warnings.push("parameters not separately determined; covariance is a pseudo-inverse".into());
    }
    let phases: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.phase.as_str()).collect();
    if phases.len() > 1 {
        warnings.push(format!(
            "rows span several phases ({}); fitted as one curve",
            phases.into_iter().collect::<Vec<_>>().join(", ")
        ));
    }
    let samples: Vec<f64> = (0..=64).map(|i| p_lo + (p_hi - p_lo) * i as f64 / 64.0).collect();
    let v2s: Vec<f64> = samples.iter().map(|p| model.v2(*p)).collect();
    if v2s.windows(2).any(|w| w[1] < w[0]) {
        warnings.push("fitted V2(P) is not monotonic over the data range".into());
    }
    if v2s.iter().any(|v| *v < 0.0) {
        warnings.push("fitted V2(P) is negative inside the data range".into());
    }

    let pulls: Vec<f64> = problem.residuals(&outcome.params).iter().copied().collect();
    let residuals: Vec<f64> = pulls.iter().zip(rows).map(|(p, r)| p * r.uncertainty_cm1).collect();
    let mut diagnostics = Vec::new();
    for (r, iso) in rows.iter().zip(&problem.rotors) {
        if let Some(iso) = iso {
            let v2 = model.v2_at(r.pressure_gpa, r.temperature_k);
            let first = ZERO_ROTON_PER_V2 * v2;
            match exact_zero_roton(&iso.at_pressure(r.pressure_gpa), v2) {
                Ok(exact) => diagnostics.push(MappingDiagnostic {
                    pressure_gpa: r.pressure_gpa,
                    temperature_k: r.temperature_k,
                    sample: r.sample.clone(),
                    first_order_cm1: first,
                    exact_cm1: exact,
                    difference_cm1: exact - first,
                }),
                Err(e) => warnings.push(format!("exact mapping at P={}: {e}", r.pressure_gpa)),
            }
        }
    }
    let n = outcome.params.len();
    Ok(ModelFit {
        model,
        mapping: opts.mapping,
        parameters: names,
        values: outcome.params.iter().copied().collect(),
        sigma: (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        covariance: (0..n).map(|i| (0..n).map(|j| cov[(i, j)]).collect()).collect(),
        chi2: outcome.chi2,
        dof: rows.len().saturating_sub(n),
        residuals,
        pulls,
        warnings,
        diagnostics,
    })
}

/// Weighted least-squares fit of ω(P, T) = (3/5)·V2(P)·s(T) (or its exact
/// counterpart). Rows with a site index are fitted separately per site.
pub fn fit_field_model(data: &FrequencyDataset, opts: &CalibrationOptions) -> Result<Calibration> {
    data.validate()?;
    if let Some(b) = opts.fixed_exponent {
        if !(b > 0.0) || opts.form != FormKind::PowerLaw {
            return Err(Error::Validation("fixed exponent needs a power law with b > 0".into()));
        }
    }
    let global_rows: Vec<FrequencyRow> = data.rows.iter().filter(|r| r.site.is_none()).cloned().collect();
    let mut by_site: BTreeMap<u32, Vec<FrequencyRow>> = BTreeMap::new();
    for r in &data.rows {
        if let Some(s) = r.site {
            by_site.entry(s).or_default().push(r.clone());
        }
    }
    if global_rows.is_empty() && by_site.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    let global = if global_rows.is_empty() {
        None
    } else {
        Some(fit_rows(&global_rows, opts)?)
    };
    let sites = by_site
        .into_iter()
        .map(|(site, rows)| Ok(SiteFit { site, fit: fit_rows(&rows, opts)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration { global, sites })
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mapping::FirstOrder => "first_order",
            Mapping::Exact => "exact",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn row(p: f64, t: f64, sample: &str, phase: &str, f: f64, u: f64) -> FrequencyRow {
        FrequencyRow {
            pressure_gpa: p,
            temperature_k: t,
            sample: sample.into(),
            phase: phase.into(),
            frequency_cm1: f,
            uncertainty_cm1: u,
            site: None,
        }
    }

    fn no_softening() -> CalibrationOptions {
        CalibrationOptions {
            softening: Softening::NONE,
            ..CalibrationOptions::default()
        }
    }

    #[test]
    fn single_anchor_with_fixed_exponent() {
        let data = FrequencyDataset {
            rows: vec![row(50.0, 10.0, "H2+D2", "I", 75.0, 1.0)],
        };
        let opts = CalibrationOptions {
            fixed_exponent: Some(0.8),
            ..no_softening()
        };
        let cal = fit_field_model(&data, &opts).unwrap();
        assert!((cal.model().unwrap().v2(50.0) - 125.0).abs() < 1e-6);
    }

    #[test]
    fn two_anchors_power_law() {
        let data = FrequencyDataset {
            rows: vec![
                row(50.0, 10.0, "H2+D2", "I", 75.0, 1.0),
                row(124.0, 10.0, "H2", "II", 150.0, 1.0),
            ],
        };
        let cal = fit_field_model(&data, &no_softening()).unwrap();
        let m = cal.model().unwrap();
        assert!((m.v2(50.0) - 125.0).abs() < 1e-4);
        assert!((m.v2(124.0) - 250.0).abs() < 1e-4);
        let FieldForm::PowerLaw { b, .. } = m.form else { panic!() };
        assert!((b - 2f64.ln() / (124.0f64 / 50.0).ln()).abs() < 1e-6);
        assert!(cal.global.as_ref().unwrap().warnings.iter().any(|w| w.contains("phases")));
    }

    #[test]
    fn insufficient_rows_refused() {
        let data = FrequencyDataset {
            rows: vec![row(50.0, 10.0, "H2", "I", 75.0, 1.0)],
        };
        assert!(matches!(
            fit_field_model(&data, &no_softening()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn synthetic_power_law_recovered_within_two_sigma() {
        let truth = FieldForm::PowerLaw { a: 6.3, b: 0.76 };
        let noise = Normal::new(0.0, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let rows = (0..20)
            .map(|i| {
                let p = 20.0 + 6.0 * i as f64;
                row(p, 10.0, "D2", "I", 0.6 * truth.v2(p) + noise.sample(&mut rng), 1.5)
            })
            .collect();
        let cal = fit_field_model(&FrequencyDataset { rows }, &no_softening()).unwrap();
        let fit = cal.global.unwrap();
        assert!((fit.values[0] - 6.3).abs() <= 2.0 * fit.sigma[0], "{:?}", fit.values);
        assert!((fit.values[1] - 0.76).abs() <= 2.0 * fit.sigma[1]);
    }

    #[test]
    fn quadratic_form_is_exact_for_quadratic_data() {
        let rows = (1..6)
            .map(|i| {
                let p = 10.0 * i as f64;
                row(p, 10.0, "H2", "I", 0.6 * (1.5 * p + 0.01 * p * p), 0.5)
            })
            .collect();
        let opts = CalibrationOptions {
            form: FormKind::Quadratic,
            ..no_softening()
        };
        let cal = fit_field_model(&FrequencyDataset { rows }, &opts).unwrap();
        let v = &cal.global.unwrap().values;
        assert!((v[0] - 1.5).abs() < 1e-8 && (v[1] - 0.01).abs() < 1e-10);
    }

    #[test]
    fn softening_can_be_fitted() {
        let s = Softening { c_t_per_k: 2e-3, t0_k: 10.0 };
        let m = FieldModel::new(FieldForm::PowerLaw { a: 6.3, b: 0.76 }, s);
        let rows = [(31.0, 10.0), (31.0, 50.0), (31.0, 90.0), (60.0, 10.0), (60.0, 80.0)]
            .iter()
            .map(|&(p, t)| row(p, t, "H2+D2", "I", 0.6 * m.v2_at(p, t), 0.2))
            .collect();
        let opts = CalibrationOptions {
            fit_softening: true,
            ..CalibrationOptions::default()
        };
        let cal = fit_field_model(&FrequencyDataset { rows }, &opts).unwrap();
        assert!((cal.global.unwrap().values[2] - 2e-3).abs() < 1e-8);
    }

    #[test]
    fn sites_fitted_separately() {
        let mut rows = Vec::new();
        for (site, a) in [(0u32, 5.0), (1, 6.0)] {
            for p in [40.0, 60.0, 80.0] {
                let mut r = row(p, 10.0, "D2", "II", 0.6 * a * p.powf(0.8), 0.1);
                r.site = Some(site);
                rows.push(r);
            }
        }
        let opts = CalibrationOptions {
            fixed_exponent: Some(0.8),
            ..no_softening()
        };
        let cal = fit_field_model(&FrequencyDataset { rows }, &opts).unwrap();
        assert!(cal.global.is_none());
        assert_eq!(cal.sites.len(), 2);
        assert!((cal.sites[1].fit.values[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn exact_mapping_fit_and_diagnostic() {
        let iso = Isotope::d2();
        let truth = FieldModel::new(FieldForm::PowerLaw { a: 6.3, b: 0.76 }, Softening::NONE);
        let rows: Vec<FrequencyRow> = [30.0, 50.0, 70.0, 90.0]
            .iter()
            .map(|&p| row(p, 10.0, "D2", "I", exact_zero_roton(&iso, truth.v2(p)).unwrap(), 0.5))
            .collect();
        let opts = CalibrationOptions {
            mapping: Mapping::Exact,
            ..no_softening()
        };
        let fit = fit_field_model(&FrequencyDataset { rows: rows.clone() }, &opts).unwrap().global.unwrap();
        assert!((fit.values[0] - 6.3).abs() < 1e-5 && (fit.values[1] - 0.76).abs() < 1e-6);
        let first = fit_field_model(&FrequencyDataset { rows }, &no_softening()).unwrap().global.unwrap();
        assert!(first.diagnostics.iter().all(|d| d.difference_cm1.abs() > 0.0));
    }

    #[test]
    fn prediction_is_mass_free_and_vanishes_at_zero_pressure() {
        let m = FieldModel::default();
        for p in [0.0, 10.0, 22.5, 50.0, 124.0, 200.0] {
            for t in [5.0, 10.0, 150.0] {
                let h = predict_zero_roton(&m, p, t, IsotopeLabel::H2);
                let d = predict_zero_roton(&m, p, t, IsotopeLabel::D2);
                assert_eq!(h.frequency_cm1.to_bits(), d.frequency_cm1.to_bits());
            }
        }
        assert_eq!(predict_zero_roton(&m, 0.0, 10.0, IsotopeLabel::H2).frequency_cm1, 0.0);
        assert!(predict_zero_roton(&m, 200.0, 10.0, IsotopeLabel::H2).extrapolated);
        assert!(!predict_zero_roton(&m, 80.0, 10.0, IsotopeLabel::H2).extrapolated);
    }

    #[test]
    fn softening_lowers_frequency() {
        let m = FieldModel::default();
        assert_eq!(m.softening.factor(m.softening.t0_k), 1.0);
        let mut last = f64::INFINITY;
        for t in [10.0, 50.0, 100.0, 200.0] {
            let w = predict_zero_roton(&m, 31.0, t, IsotopeLabel::H2).frequency_cm1;
            assert!(w <= last);
            last = w;
        }
    }

    #[test]
    fn overlap_ordering() {
        let m = FieldModel::default();
        let d2 = overlap_pressure(&m, &Isotope::d2(), 25.0, 10.0, 300.0).unwrap();
        let mix = overlap_pressure(&m, &effective_isotope(&parse_composition("H2+D2").unwrap()), 25.0, 10.0, 300.0)
            .unwrap();
        let h2 = overlap_pressure(&m, &Isotope::h2(), 25.0, 10.0, 300.0).unwrap();
        assert!(d2 < mix && mix < h2, "{d2} {mix} {h2}");
        let zero = FieldModel::new(FieldForm::PowerLaw { a: 0.0, b: 1.0 }, Softening::NONE);
        assert_eq!(overlap_pressure(&zero, &Isotope::h2(), 25.0, 10.0, 300.0), None);
    }

    #[test]
    fn dataset_csv_roundtrip_and_errors() {
        let text = "pressure_gpa,temperature_k,sample,phase,frequency_cm1,uncertainty_cm1,site\n\
                    # comment\n\
                    50,10,H2+D2,I,75,1,\n\
                    60,10,D2,II,80,1,2\n";
        let d = FrequencyDataset::read(text.as_bytes(), "mem").unwrap();
        assert_eq!(d.rows.len(), 2);
        assert_eq!(d.rows[1].site, Some(2));
        let back = FrequencyDataset::read(d.to_csv().unwrap().as_bytes(), "mem").unwrap();
        assert_eq!(back, d);

        let bad = "pressure_gpa,temperature_k,sample,phase,frequency_cm1,uncertainty_cm1\n50,10,H2,I,abc,1\n";
        match FrequencyDataset::read(bad.as_bytes(), "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let neg = "pressure_gpa,temperature_k,sample,phase,frequency_cm1,uncertainty_cm1\n-5,10,H2,I,1,1\n";
        assert!(matches!(FrequencyDataset::read(neg.as_bytes(), "mem"), Err(Error::Validation(_))));
    }

    #[test]
    fn model_toml_roundtrip() {
        let m = FieldModel::default();
        let text = toml::to_string(&m).unwrap();
        assert!(text.contains("modelling choices"));
        let back: FieldModel = toml::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
