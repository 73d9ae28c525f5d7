use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{covariance, minimize, Bound, LmOptions, LmStatus, Residuals};
use super::model::{Layout, PeakModelSpec, PeakParam, Slot};
use crate::error::{Error, Result};
use crate::lineshape::{pseudo_voigt, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIter,
    Singular,
    Unresolved,
}

impl std::fmt::Display for FitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitStatus::Converged => "converged",
            FitStatus::MaxIter => "max_iter",
            FitStatus::Singular => "singular",
            FitStatus::Unresolved => "unresolved",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedParam {
    pub value: f64,
    pub sigma: f64,
    pub at_bound: bool,
    /// Row of the covariance matrix; absent for fixed parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPeak {
    /// Position of the peak in the model that produced it.
    pub model_index: usize,
    #[serde(default)]
    pub name: String,
    pub center: FittedParam,
    pub amplitude: FittedParam,
    pub fwhm: FittedParam,
    pub eta: FittedParam,
}

impl FittedPeak {
    pub fn param(&self, which: PeakParam) -> &FittedParam {
        match which {
            PeakParam::Center => &self.center,
            PeakParam::Amplitude => &self.amplitude,
            PeakParam::Fwhm => &self.fwhm,
            PeakParam::Eta => &self.eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub lambda: f64,
    pub optimizer: LmStatus,
}

/// Baseline is Σ cₖ·tᵏ with t = (ν − origin)/scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub origin: f64,
    pub scale: f64,
    pub coefficients: Vec<FittedParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub label: String,
    pub status: FitStatus,
    pub chi2: f64,
    pub reduced_chi2: f64,
    pub n_samples: usize,
    pub dof: usize,
    pub window: [f64; 2],
    pub convergence: Convergence,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Sorted by ascending center.
    pub peaks: Vec<FittedPeak>,
    pub baseline: Baseline,
    pub parameter_names: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
}

impl FitResult {
    pub fn centers(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.center.value).collect()
    }

    /// Covariance between two fitted parameters; zero when either is fixed.
    pub fn cov(&self, a: &FittedParam, b: &FittedParam) -> f64 {
        match (a.free_index, b.free_index) {
            (Some(i), Some(j)) => self.covariance[i][j],
            _ => 0.0,
        }
    }

    /// Model intensity at ν.
    pub fn evaluate(&self, nu: f64) -> f64 {
        let t = (nu - self.baseline.origin) / self.baseline.scale;
        let base: f64 = self
            .baseline
            .coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| c.value * t.powi(k as i32))
            .sum();
        base + self
            .peaks
            .iter()
            .map(|p| p.amplitude.value * pseudo_voigt(nu - p.center.value, p.fwhm.value, p.eta.value).value)
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    #[serde(default)]
    pub lm: LmOptions,
}

pub(crate) struct PeakProblem<'a> {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub layout: &'a Layout,
    pub origin: f64,
    pub scale: f64,
}

impl PeakProblem<'_> {
    fn value(slot: Slot, p: &DVector<f64>) -> f64 {
        match slot {
            Slot::Free(i) => p[i],
            Slot::Fixed(v) => v,
        }
    }
}

impl Residuals for PeakProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let l = self.layout;
        DVector::from_iterator(
            self.x.len(),
            self.x.iter().zip(&self.y).map(|(&nu, &y)| {
                let t = (nu - self.origin) / self.scale;
                let mut f = 0.0;
                for c in 0..l.n_baseline {
                    f += p[l.baseline_offset + c] * t.powi(c as i32);
                }
                for slots in &l.peak_slots {
                    let [c, a, w, e] = slots.map(|s| Self::value(s, p));
                    f += a * pseudo_voigt(nu - c, w, e).value;
                }
                y - f
            }),
        )
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout;
        let mut jac = DMatrix::zeros(self.x.len(), l.n_free());
        for (i, &nu) in self.x.iter().enumerate() {
            let t = (nu - self.origin) / self.scale;
            for c in 0..l.n_baseline {
                jac[(i, l.baseline_offset + c)] = -t.powi(c as i32);
            }
            for slots in &l.peak_slots {
                let [c, a, w, e] = slots.map(|s| Self::value(s, p));
                let pv = pseudo_voigt(nu - c, w, e);
                let grads = [-a * pv.d_offset, pv.value, a * pv.d_fwhm, a * pv.d_eta];
                for (slot, g) in slots.iter().zip(grads) {
                    if let Slot::Free(k) = slot {
                        jac[(i, *k)] -= g;
                    }
                }
            }
        }
        jac
    }
}

/// Bounded multi-peak least squares over the unmasked samples in the window.
pub fn fit_peaks(spectrum: &Spectrum, model: &PeakModelSpec, options: &FitOptions) -> Result<FitResult> {
    model.validate()?;
    let cutoff = spectrum.meta.cutoff_cm1.max(model.mask_cutoff.unwrap_or(0.0));
    let (lo, hi) = match model.window {
        Some([lo, hi]) => (lo, hi),
        None => (
            spectrum.grid.first().copied().unwrap_or(0.0),
            spectrum.grid.last().copied().unwrap_or(0.0),
        ),
    };
    let mut x = Vec::new();
    let mut y = Vec::new();
    for ((&nu, &v), &ok) in spectrum.grid.iter().zip(&spectrum.intensity).zip(&spectrum.valid) {
        if ok && nu >= lo && nu <= hi && nu.abs() >= cutoff {
            x.push(nu);
            y.push(v);
        }
    }
    let mut layout = model.layout();
    let n_free = layout.n_free();
    if x.len() <= n_free {
        return Err(Error::InsufficientData(format!(
            "model '{}' has {n_free} free parameters but only {} unmasked samples",
            model.label,
            x.len()
        )));
    }
    let (xmin, xmax) = (x[0], x[x.len() - 1]);
    let origin = 0.5 * (xmin + xmax);
    let scale = (0.5 * (xmax - xmin)).max(1.0);

    // Start the baseline at the lower envelope of the data.
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    layout.init[layout.baseline_offset] = sorted[sorted.len() / 10];

    let problem = PeakProblem {
        x,
        y,
        layout: &layout,
        origin,
        scale,
    };
    let p0 = DVector::from_vec(layout.init.clone());
    let outcome = minimize(&problem, &p0, &layout.bounds, &options.lm);
    let dof = problem.x.len() - n_free;
    let jac = problem.jacobian(&outcome.params);
    let (cov, singular) = covariance(&jac, outcome.chi2, dof);

    let fitted = |slot: Slot, bound: Option<Bound>| -> FittedParam {
        match slot {
            Slot::Free(i) => FittedParam {
                value: outcome.params[i],
                sigma: cov[(i, i)].max(0.0).sqrt(),
                at_bound: bound.is_some_and(|b| b.at_bound(outcome.params[i])),
                free_index: Some(i),
            },
            Slot::Fixed(v) => FittedParam {
                value: v,
                sigma: 0.0,
                at_bound: false,
                free_index: None,
            },
        }
    };

    let mut peaks: Vec<FittedPeak> = layout
        .peak_slots
        .iter()
        .enumerate()
        .map(|(k, slots)| {
            let spec = &model.peaks[k];
            let get = |which: PeakParam| {
                let slot = slots[which.index()];
                let bound = match slot {
                    Slot::Free(i) => Some(layout.bounds[i]),
                    Slot::Fixed(_) => None,
                };
                fitted(slot, bound)
            };
            FittedPeak {
                model_index: k,
                name: spec.name.clone(),
                center: get(PeakParam::Center),
                amplitude: get(PeakParam::Amplitude),
                fwhm: get(PeakParam::Fwhm),
                eta: get(PeakParam::Eta),
            }
        })
        .collect();
    peaks.sort_by(|a, b| a.center.value.total_cmp(&b.center.value).then(a.model_index.cmp(&b.model_index)));

    let baseline = Baseline {
        origin,
        scale,
        coefficients: (0..layout.n_baseline)
            .map(|c| fitted(Slot::Free(layout.baseline_offset + c), None))
            .collect(),
    };

    let mut warnings = Vec::new();
    for w in peaks.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let width = 0.5 * (a.fwhm.value + b.fwhm.value);
        if b.center.value - a.center.value < width / 4.0 {
            warnings.push(format!(
                "peaks {} and {} closer than fwhm/4",
                a.model_index, b.model_index
            ));
        }
    }
    let mut masked = false;
    for p in &peaks {
        let c = &p.center;
        if c.value.abs() < cutoff {
            masked = true;
            warnings.push(format!("peak {} center {} inside the masked region", p.model_index, c.value));
        }
        if c.free_index.is_some() && c.at_bound {
            warnings.push(format!("peak {} center pinned at a bound", p.model_index));
        }
        if c.free_index.is_some() && !(c.sigma <= 0.5 * p.fwhm.value) {
            warnings.push(format!(
                "peak {} center uncertainty {} exceeds fwhm/2",
                p.model_index, c.sigma
            ));
        }
    }

    // A peak with no unmasked support also makes the Jacobian singular; the
    // mask is the cause, so it is reported as unresolved.
    let status = if masked {
        FitStatus::Unresolved
    } else if singular || outcome.status == LmStatus::Singular {
        FitStatus::Singular
    } else if !warnings.is_empty() {
        FitStatus::Unresolved
    } else if outcome.status == LmStatus::MaxIter {
        FitStatus::MaxIter
    } else {
        FitStatus::Converged
    };

    Ok(FitResult {
        label: model.label.clone(),
        status,
        chi2: outcome.chi2,
        reduced_chi2: outcome.chi2 / dof as f64,
        n_samples: problem.x.len(),
        dof,
        window: [xmin, xmax],
        convergence: Convergence {
            iterations: outcome.iterations,
            gradient_norm: outcome.gradient_norm,
            lambda: outcome.lambda,
            optimizer: outcome.status,
        },
        warnings,
        peaks,
        baseline,
        parameter_names: layout.names.clone(),
        covariance: (0..n_free).map(|i| (0..n_free).map(|j| cov[(i, j)]).collect()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitkit::lm::numeric_jacobian;
    use crate::fitkit::model::{Link, Param, PeakSpec};
    use crate::lineshape::{apply_elastic_mask, broaden, add_noise, Grid, Noise, PeakProfile};

    fn peak(c: f64, a: f64, w: f64, eta: f64) -> PeakSpec {
        PeakSpec {
            name: String::new(),
            center: Param::bounded(c, c - 15.0, c + 15.0),
            amplitude: Param::bounded(a, -10.0 * a.abs().max(1.0), 10.0 * a.abs().max(1.0)),
            fwhm: Param::bounded(w, 0.5, 30.0),
            eta: Param::bounded(eta, 0.0, 1.0),
        }
    }

    fn model(peaks: Vec<PeakSpec>, order: u32) -> PeakModelSpec {
        PeakModelSpec {
            label: "test".into(),
            baseline_order: order,
            window: None,
            mask_cutoff: None,
            ordered_centers: false,
            peaks,
            links: vec![],
        }
    }

    fn grid() -> Vec<f64> {
        Grid { start: 0.0, stop: 200.0, step: 0.5 }.points()
    }

    #[test]
    fn noiseless_single_peak_roundtrip() {
        let truth = (100.0, 3.0, 6.0, 0.3);
        let s = broaden(&[(truth.0, truth.1)], &PeakProfile::new(truth.2, truth.3).unwrap(), &grid()).unwrap();
        let m = model(vec![peak(100.0 * 1.1, 3.0 * 0.85, 6.0 * 1.2, 0.3 * 0.8)], 0);
        let r = fit_peaks(&s, &m, &FitOptions::default()).unwrap();
        assert_eq!(r.status, FitStatus::Converged, "{:?}", r.warnings);
        let p = &r.peaks[0];
        for (got, want) in [
            (p.center.value, truth.0),
            (p.amplitude.value, truth.1),
            (p.fwhm.value, truth.2),
            (p.eta.value, truth.3),
        ] {
            assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let s = broaden(&[(60.0, 2.0), (90.0, 1.0)], &PeakProfile::default(), &grid()).unwrap();
        let mut m = model(vec![peak(58.0, 1.5, 5.0, 0.4), peak(93.0, 1.2, 7.0, 0.2)], 2);
        m.links.push(Link { param: PeakParam::Eta, peaks: vec![0, 1] });
        let layout = m.layout();
        let problem = PeakProblem {
            x: s.grid.clone(),
            y: s.intensity.clone(),
            layout: &layout,
            origin: 100.0,
            scale: 100.0,
        };
        let mut p = DVector::from_vec(layout.init.clone());
        p[layout.baseline_offset + 1] = 0.01;
        let a = problem.jacobian(&p);
        let n = numeric_jacobian(&problem, &p, 1e-6);
        for k in 0..a.ncols() {
            let scale = a.column(k).amax().max(1e-12);
            let err = (a.column(k) - n.column(k)).amax() / scale;
            assert!(err < 1e-6, "column {k}: {err}");
        }
    }

    #[test]
    fn masked_samples_are_ignored() {
        let p = PeakProfile::new(5.0, 0.2).unwrap();
        let clean = broaden(&[(80.0, 2.0)], &p, &grid()).unwrap();
        let mut spiked = clean.clone();
        for (nu, y) in spiked.grid.iter().zip(spiked.intensity.iter_mut()) {
            if *nu < 20.0 {
                *y += 50.0;
            }
        }
        let spiked = apply_elastic_mask(&spiked, 25.0).unwrap();
        let m = model(vec![peak(78.0, 1.5, 6.0, 0.3)], 0);
        let r = fit_peaks(&spiked, &m, &FitOptions::default()).unwrap();
        assert!((r.peaks[0].center.value - 80.0).abs() < 1e-6);
    }

    #[test]
    fn zero_amplitude_peak_consistent_with_zero() {
        let p = PeakProfile::new(5.0, 0.2).unwrap();
        let mut s = broaden(&[(80.0, 2.0)], &p, &grid()).unwrap();
        add_noise(&mut s, &Noise { relative_amplitude: 0.01, seed: 3 }).unwrap();
        let mut ghost = peak(130.0, 0.2, 5.0, 0.2);
        ghost.amplitude = Param::bounded(0.2, -2.0, 2.0);
        let m = model(vec![peak(79.0, 1.8, 5.5, 0.2), ghost.clone()], 0);
        let r = fit_peaks(&s, &m, &FitOptions::default()).unwrap();
        let g = r.peaks.iter().find(|q| q.model_index == 1).unwrap();
        assert!(g.amplitude.value.abs() <= 2.0 * g.amplitude.sigma, "{:?}", g.amplitude);
        assert!(ghost.center.bound().contains(g.center.value));
    }

    #[test]
    fn too_few_samples_rejected() {
        let s = Spectrum::new(vec![1.0, 2.0, 3.0], vec![0.0; 3]).unwrap();
        let m = model(vec![peak(2.0, 1.0, 1.0, 0.5)], 1);
        assert!(matches!(fit_peaks(&s, &m, &FitOptions::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn coincident_peaks_flagged() {
        let s = broaden(&[(100.0, 2.0)], &PeakProfile::default(), &grid()).unwrap();
        let m = model(vec![peak(99.0, 1.0, 6.0, 0.3), peak(101.0, 1.0, 6.0, 0.3)], 0);
        let r = fit_peaks(&s, &m, &FitOptions::default()).unwrap();
        assert!(matches!(r.status, FitStatus::Unresolved | FitStatus::Singular));
    }

    #[test]
    fn result_toml_roundtrip() {
        let s = broaden(&[(100.0, 2.0)], &PeakProfile::default(), &grid()).unwrap();
        let r = fit_peaks(&s, &model(vec![peak(98.0, 1.0, 5.0, 0.3)], 1), &FitOptions::default()).unwrap();
        let text = toml::to_string(&r).unwrap();
        let back: FitResult = toml::from_str(&text).unwrap();
        assert_eq!(back.peaks.len(), 1);
        assert_eq!(back.status, r.status);
    }
}
