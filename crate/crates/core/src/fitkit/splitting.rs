use serde::{Deserialize, Serialize};

use super::fit::{FitResult, FitStatus, FittedPeak};
use super::templates::TemplateName;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splitting {
    /// e.g. "|0|-|2|": center of the |m| = 0 component minus that of |m| = 2.
    pub label: String,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingReport {
    pub template: String,
    pub splittings: Vec<Splitting>,
}

impl SplittingReport {
    pub fn get(&self, label: &str) -> Option<&Splitting> {
        self.splittings.iter().find(|s| s.label == label)
    }
}

fn component(fit: &FitResult, m: u32) -> Result<&FittedPeak> {
    let name = format!("m{m}");
    fit.peaks
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Validation(format!("fit has no peak named '{name}'")))
}

/// Center differences of the S₀(0) triplet components with propagated
/// one-sigma uncertainties, using the full covariance.
pub fn splitting_report(fit: &FitResult, template_label: &str) -> Result<SplittingReport> {
    if template_label != TemplateName::S0Triplet.as_str() || fit.label != template_label {
        return Err(Error::Validation(format!(
            "splitting report needs an {} fit, got template '{template_label}' and fit '{}'",
            TemplateName::S0Triplet,
            fit.label
        )));
    }
    if fit.status != FitStatus::Converged {
        return Err(Error::NotConverged {
            status: fit.status.to_string(),
            message: fit.warnings.join("; "),
        });
    }
    let diff = |a: u32, b: u32| -> Result<Splitting> {
        let (pa, pb) = (component(fit, a)?, component(fit, b)?);
        let var = fit.cov(&pa.center, &pa.center) + fit.cov(&pb.center, &pb.center)
            - 2.0 * fit.cov(&pa.center, &pb.center);
        Ok(Splitting {
            label: format!("|{a}|-|{b}|"),
            value: pa.center.value - pb.center.value,
            sigma: var.max(0.0).sqrt(),
        })
    };
    Ok(SplittingReport {
        template: template_label.to_string(),
        splittings: vec![diff(0, 2)?, diff(0, 1)?, diff(1, 2)?],
    })
}
