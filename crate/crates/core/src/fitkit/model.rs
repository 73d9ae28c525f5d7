//! Declarative multi-peak models: bounded parameters, sharing links, baseline.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::lm::Bound;
use crate::error::{Error, Result};

fn yes() -> bool {
    true
}

fn linear() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Param {
    pub init: f64,
    pub min: f64,
    pub max: f64,
    #[serde(default = "yes")]
    pub vary: bool,
}

impl Param {
    pub fn bounded(init: f64, min: f64, max: f64) -> Param {
        Param {
            init,
            min,
            max,
            vary: true,
        }
    }

    pub fn fixed(value: f64) -> Param {
        Param {
            init: value,
            min: value,
            max: value,
            vary: false,
        }
    }

    pub fn bound(&self) -> Bound {
        Bound::new(self.min, self.max)
    }

    /// Free only when `vary` is set and the interval is not degenerate.
    pub fn is_free(&self) -> bool {
        self.vary && self.max > self.min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakParam {
    Center,
    Amplitude,
    Fwhm,
    Eta,
}

impl PeakParam {
    pub const ALL: [PeakParam; 4] = [PeakParam::Center, PeakParam::Amplitude, PeakParam::Fwhm, PeakParam::Eta];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PeakParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeakParam::Center => "center",
            PeakParam::Amplitude => "amplitude",
            PeakParam::Fwhm => "fwhm",
            PeakParam::Eta => "eta",
        })
    }
}

/// One pseudo-Voigt component. `amplitude` is the integrated area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakSpec {
    #[serde(default)]
    pub name: String,
    pub center: Param,
    pub amplitude: Param,
    pub fwhm: Param,
    pub eta: Param,
}

impl PeakSpec {
    pub fn param(&self, which: PeakParam) -> &Param {
        match which {
            PeakParam::Center => &self.center,
            PeakParam::Amplitude => &self.amplitude,
            PeakParam::Fwhm => &self.fwhm,
            PeakParam::Eta => &self.eta,
        }
    }
}

/// Every listed peak takes the value of the first one for `param`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub param: PeakParam,
    pub peaks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakModelSpec {
    pub label: String,
    #[serde(default = "linear")]
    pub baseline_order: u32,
    /// Fit only samples inside [lo, hi].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Extra elastic-line cutoff on top of the spectrum's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_cutoff: Option<f64>,
    /// Require successive center bounds not to overlap.
    #[serde(default)]
    pub ordered_centers: bool,
    pub peaks: Vec<PeakSpec>,
    #[serde(default)]
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Slot {
    Free(usize),
    Fixed(f64),
}

/// Resolved mapping from model parameters to the free-parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub peak_slots: Vec<[Slot; 4]>,
    pub baseline_offset: usize,
    pub n_baseline: usize,
    pub names: Vec<String>,
    pub bounds: Vec<Bound>,
    pub init: Vec<f64>,
}

impl Layout {
    pub fn n_free(&self) -> usize {
        self.init.len()
    }
}

impl PeakModelSpec {
    pub fn n_peaks(&self) -> usize {
        self.peaks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.peaks.is_empty() {
            return Err(Error::Validation(format!("model '{}' has no peaks", self.label)));
        }
        if self.baseline_order > 2 {
            return Err(Error::Validation(format!(
                "baseline order must be 0, 1 or 2, got {}",
                self.baseline_order
            )));
        }
        if let Some([lo, hi]) = self.window {
            if !(hi > lo) {
                return Err(Error::Validation(format!("fit window [{lo}, {hi}] is empty")));
            }
        }
        if let Some(c) = self.mask_cutoff {
            if !(c >= 0.0) {
                return Err(Error::Validation(format!("mask cutoff must be >= 0, got {c}")));
            }
        }
        for (k, peak) in self.peaks.iter().enumerate() {
            for which in PeakParam::ALL {
                let p = peak.param(which);
                if !(p.min <= p.max) || p.init.is_nan() || !p.bound().contains(p.init) {
                    return Err(Error::Validation(format!(
                        "peak {k} {which}: init {} outside [{}, {}]",
                        p.init, p.min, p.max
                    )));
                }
                if p.is_free() && !(p.min.is_finite() && p.max.is_finite()) && which != PeakParam::Amplitude {
                    return Err(Error::Validation(format!("peak {k} {which}: bounds must be finite")));
                }
            }
            if !(peak.fwhm.min > 0.0) {
                return Err(Error::Validation(format!("peak {k}: fwhm lower bound must be > 0")));
            }
            if !(peak.eta.min >= 0.0 && peak.eta.max <= 1.0) {
                return Err(Error::Validation(format!("peak {k}: eta bounds must lie in [0, 1]")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for link in &self.links {
            if link.peaks.len() < 2 {
                return Err(Error::Validation(format!("link on {} needs at least two peaks", link.param)));
            }
            for &k in &link.peaks {
                if k >= self.peaks.len() {
                    return Err(Error::Validation(format!(
                        "link on {} references peak {k}, model has {}",
                        link.param,
                        self.peaks.len()
                    )));
                }
                if !seen.insert((link.param, k)) {
                    return Err(Error::Validation(format!("peak {k} {} linked twice", link.param)));
                }
            }
        }
        if self.ordered_centers {
            for (k, w) in self.peaks.windows(2).enumerate() {
                if w[0].center.max > w[1].center.min {
                    return Err(Error::Validation(format!(
                        "ordered centers: peak {k} upper bound {} exceeds peak {} lower bound {}",
                        w[0].center.max,
                        k + 1,
                        w[1].center.min
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        let mut follower = vec![[None::<usize>; 4]; self.peaks.len()];
        for link in &self.links {
            let leader = link.peaks[0];
            for &k in &link.peaks[1..] {
                follower[k][link.param.index()] = Some(leader);
            }
        }
        let mut names = Vec::new();
        let mut bounds = Vec::new();
        let mut init = Vec::new();
        let mut peak_slots = vec![[Slot::Fixed(0.0); 4]; self.peaks.len()];
        for (k, peak) in self.peaks.iter().enumerate() {
            for which in PeakParam::ALL {
                if follower[k][which.index()].is_some() {
                    continue;
                }
                let p = peak.param(which);
                peak_slots[k][which.index()] = if p.is_free() {
                    names.push(format!("peak{k}.{which}"));
                    bounds.push(p.bound());
                    init.push(p.init);
                    Slot::Free(init.len() - 1)
                } else {
                    Slot::Fixed(p.init)
                };
            }
        }
        for k in 0..self.peaks.len() {
            for which in PeakParam::ALL {
                if let Some(leader) = follower[k][which.index()] {
                    peak_slots[k][which.index()] = peak_slots[leader][which.index()];
                }
            }
        }
        let baseline_offset = init.len();
        let n_baseline = self.baseline_order as usize + 1;
        for c in 0..n_baseline {
            names.push(format!("baseline.c{c}"));
            bounds.push(Bound::FREE);
            init.push(0.0);
        }
        Layout {
            peak_slots,
            baseline_offset,
            n_baseline,
            names,
            bounds,
            init,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peak(c: f64) -> PeakSpec {
        PeakSpec {
            name: String::new(),
            center: Param::bounded(c, c - 5.0, c + 5.0),
            amplitude: Param::bounded(1.0, 0.0, 10.0),
            fwhm: Param::bounded(3.0, 0.5, 10.0),
            eta: Param::bounded(0.3, 0.0, 1.0),
        }
    }

    fn model() -> PeakModelSpec {
        PeakModelSpec {
            label: "test".into(),
            baseline_order: 1,
            window: None,
            mask_cutoff: None,
            ordered_centers: false,
            peaks: vec![peak(10.0), peak(30.0), peak(50.0)],
            links: vec![Link {
                param: PeakParam::Eta,
                peaks: vec![0, 1, 2],
            }],
        }
    }

    #[test]
    fn links_share_one_free_slot() {
        let m = model();
        m.validate().unwrap();
        let l = m.layout();
        // 3×(center, amplitude, fwhm) + shared eta + 2 baseline
        assert_eq!(l.n_free(), 3 * 3 + 1 + 2);
        assert_eq!(l.peak_slots[0][3], l.peak_slots[2][3]);
    }

    #[test]
    fn rejects_bad_models() {
        let mut m = model();
        m.peaks[0].center.init = 100.0;
        assert!(m.validate().is_err());
        let mut m = model();
        m.links.push(Link {
            param: PeakParam::Fwhm,
            peaks: vec![0, 7],
        });
        assert!(m.validate().is_err());
        let mut m = model();
        m.baseline_order = 3;
        assert!(m.validate().is_err());
        let mut m = model();
        m.ordered_centers = true;
        m.peaks[1].center.min = 14.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let m = model();
        let text = toml::to_string(&m).unwrap();
        let back: PeakModelSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = toml::to_string(&model()).unwrap();
        text.insert_str(0, "bogus = 1\n");
        assert!(toml::from_str::<PeakModelSpec>(&text).is_err());
    }
}
