//! Run configuration: every physical default in one TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::FieldModel;
use crate::crystalfield::LevelMethod;
use crate::error::{Error, Result};
use crate::fitkit::FitOptions;
use crate::io::{sha256_hex, to_report};
use crate::lineshape::{Grid, PeakProfile};
use crate::population::ConversionKinetics;
use crate::rotor::{Isotope, IsotopeLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsotopeTable {
    #[serde(rename = "H2")]
    pub h2: Isotope,
    #[serde(rename = "D2")]
    pub d2: Isotope,
    #[serde(rename = "HD")]
    pub hd: Isotope,
}

impl Default for IsotopeTable {
    fn default() -> Self {
        IsotopeTable {
            h2: Isotope::h2(),
            d2: Isotope::d2(),
            hd: Isotope::hd(),
        }
    }
}

impl IsotopeTable {
    pub fn get(&self, label: IsotopeLabel) -> &Isotope {
        match label {
            IsotopeLabel::H2 => &self.h2,
            IsotopeLabel::D2 => &self.d2,
            IsotopeLabel::HD => &self.hd,
        }
    }

    /// Mole-fraction-weighted rotor for a mixture.
    pub fn effective(&self, composition: &[(IsotopeLabel, f64)]) -> Isotope {
        let mut iso = self.get(composition[0].0).clone();
        iso.b = composition.iter().map(|(l, x)| x * self.get(*l).b).sum();
        iso.db_dp = composition.iter().map(|(l, x)| x * self.get(*l).db_dp).sum();
        iso
    }

    fn validate(&self) -> Result<()> {
        for (label, iso) in [
            (IsotopeLabel::H2, &self.h2),
            (IsotopeLabel::D2, &self.d2),
            (IsotopeLabel::HD, &self.hd),
        ] {
            if iso.label != label {
                return Err(Error::Config(format!(
                    "isotopes.{label} carries label {}",
                    iso.label
                )));
            }
            iso.validate().map_err(|e| Error::Config(format!("isotopes.{label}: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapConfig {
    /// Line width used for the zero-roton / S₀(0) overlap criterion, cm⁻¹.
    pub fwhm_cm1: f64,
    pub p_max_gpa: f64,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig {
            fwhm_cm1: 25.0,
            p_max_gpa: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub mask_cutoff_cm1: f64,
    /// Noise standard deviation relative to the peak intensity of synthesized spectra.
    pub noise_relative: f64,
    pub level_method: LevelMethod,
    pub isotopes: IsotopeTable,
    pub kinetics: ConversionKinetics,
    pub field_model: FieldModel,
    pub profile: PeakProfile,
    pub grid: Grid,
    pub overlap: OverlapConfig,
    pub fit: FitOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            mask_cutoff_cm1: 25.0,
            noise_relative: 0.01,
            level_method: LevelMethod::Perturbative,
            isotopes: IsotopeTable::default(),
            kinetics: ConversionKinetics::default(),
            field_model: FieldModel::default(),
            profile: PeakProfile::default(),
            grid: Grid::default(),
            overlap: OverlapConfig::default(),
            fit: FitOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, source: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |what: &str, r: Result<()>| r.map_err(|e| Error::Config(format!("{what}: {e}")));
        if !(self.mask_cutoff_cm1 >= 0.0) {
            return Err(Error::Config(format!(
                "mask_cutoff_cm1 must be >= 0, got {}",
                self.mask_cutoff_cm1
            )));
        }
        if !(self.noise_relative >= 0.0) {
            return Err(Error::Config("noise_relative must be >= 0".into()));
        }
        self.isotopes.validate()?;
        wrap("kinetics", self.kinetics.validate())?;
        wrap("field_model", self.field_model.validate())?;
        wrap("profile", self.profile.validate())?;
        wrap("grid", self.grid.validate())?;
        if !(self.overlap.fwhm_cm1 > 0.0 && self.overlap.p_max_gpa > 0.0) {
            return Err(Error::Config("overlap.fwhm_cm1 and overlap.p_max_gpa must be > 0".into()));
        }
        Ok(())
    }

    /// Canonical serialization, the input of `hash`.
    pub fn canonical(&self) -> Result<String> {
        to_report(self)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.canonical()?.as_bytes()))
    }
}
