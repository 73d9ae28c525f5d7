use nalgebra::{DMatrix, DVector};
use roton::crystalfield::CrystalField;
use roton::fitkit::{
    fit_peaks, splitting_report, template, FitOptions, FitStatus, Param, PeakModelSpec, PeakSpec, TemplateName,
    TemplateSeed,
};
use roton::lineshape::{
    add_noise, apply_elastic_mask, broaden, pseudo_voigt, synth, Component, Grid, Noise, PeakProfile, SiteModel,
    Spectrum, SynthOptions,
};
use roton::rotor::Isotope;

fn h2_spectrum(v2: f64, profile: &PeakProfile, noise: Option<Noise>) -> Spectrum {
    let comp = Component {
        isotope: Isotope::h2(),
        mole_fraction: 1.0,
        sites: SiteModel::single(CrystalField::new(v2)),
        frozen_ortho: Some(0.75),
    };
    let opts = SynthOptions {
        noise,
        ..SynthOptions::default()
    };
    synth(&[comp], 50.0, 10.0, profile, &Grid::default().points(), &opts).unwrap()
}

#[test]
fn triplet_splitting_recovers_four_sevenths_v2() {
    let profile = PeakProfile::new(6.0, 0.3).unwrap();
    let s = h2_spectrum(125.0, &profile, None);
    let seed = TemplateSeed::new(Isotope::h2(), CrystalField::new(115.0), 7.0);
    let model = template(TemplateName::S0Triplet, &seed, &s).unwrap();
    let fit = fit_peaks(&s, &model, &FitOptions::default()).unwrap();
    assert_eq!(fit.status, FitStatus::Converged, "{:?}", fit.warnings);
    let report = splitting_report(&fit, "S0_0_triplet").unwrap();
    let d02 = report.get("|0|-|2|").unwrap();
    // Wings of lines outside the window leave a small model error.
    let err = (d02.value - 4.0 / 7.0 * 125.0).abs();
    assert!(err <= 2.0 * d02.sigma && err < 1e-3, "{d02:?}");
}

#[test]
fn zero_roton_over_splitting_is_21_over_20() {
    let profile = PeakProfile::new(6.0, 0.3).unwrap();
    let s = h2_spectrum(125.0, &profile, Some(Noise { relative_amplitude: 0.005, seed: 5 }));
    let seed = TemplateSeed::new(Isotope::h2(), CrystalField::new(120.0), 6.0);
    let tri = fit_peaks(&s, &template(TemplateName::S0Triplet, &seed, &s).unwrap(), &FitOptions::default()).unwrap();
    let zr = fit_peaks(&s, &template(TemplateName::ZeroRotonSingle, &seed, &s).unwrap(), &FitOptions::default()).unwrap();
    assert_eq!(zr.status, FitStatus::Converged, "{:?}", zr.warnings);
    let d = splitting_report(&tri, "S0_0_triplet").unwrap().get("|0|-|2|").unwrap().clone();
    let z = &zr.peaks[0].center;
    let ratio = z.value / d.value;
    let sigma = ratio * ((z.sigma / z.value).powi(2) + (d.sigma / d.value).powi(2)).sqrt();
    assert!((ratio - 21.0 / 20.0).abs() <= 3.0 * sigma, "ratio {ratio} ± {sigma}");
}

#[test]
fn permuted_initial_order_gives_same_sorted_result() {
    let profile = PeakProfile::new(5.0, 0.2).unwrap();
    let grid = Grid { start: 0.0, stop: 200.0, step: 0.5 }.points();
    let s = broaden(&[(60.0, 1.0), (95.0, 2.0), (140.0, 1.5)], &profile, &grid).unwrap();
    let peak = |c: f64| PeakSpec {
        name: String::new(),
        center: Param::bounded(c, c - 12.0, c + 12.0),
        amplitude: Param::bounded(1.2, 0.0, 20.0),
        fwhm: Param::bounded(6.0, 1.0, 20.0),
        eta: Param::bounded(0.4, 0.0, 1.0),
    };
    let inits = [57.0, 98.0, 136.0];
    let mk = |order: [usize; 3]| PeakModelSpec {
        label: "perm".into(),
        baseline_order: 1,
        window: None,
        mask_cutoff: None,
        ordered_centers: false,
        peaks: order.iter().map(|&k| peak(inits[k])).collect(),
        links: vec![],
    };
    let a = fit_peaks(&s, &mk([0, 1, 2]), &FitOptions::default()).unwrap();
    let b = fit_peaks(&s, &mk([2, 0, 1]), &FitOptions::default()).unwrap();
    for (p, q) in a.peaks.iter().zip(&b.peaks) {
        assert!((p.center.value - q.center.value).abs() < 1e-6);
        assert!((p.amplitude.value - q.amplitude.value).abs() < 1e-6);
        assert!((p.fwhm.value - q.fwhm.value).abs() < 1e-6);
    }
}

#[test]
fn amplitude_uncertainties_match_closed_form_wls() {
    let profile = PeakProfile::new(5.0, 0.3).unwrap();
    let grid = Grid { start: 0.0, stop: 200.0, step: 0.5 }.points();
    let centers = [70.0, 90.0, 130.0];
    let mut s = broaden(&[(70.0, 1.0), (90.0, 0.6), (130.0, 2.0)], &profile, &grid).unwrap();
    add_noise(&mut s, &Noise { relative_amplitude: 0.02, seed: 9 }).unwrap();
    let model = PeakModelSpec {
        label: "linear".into(),
        baseline_order: 0,
        window: None,
        mask_cutoff: None,
        ordered_centers: false,
        peaks: centers
            .iter()
            .map(|&c| PeakSpec {
                name: String::new(),
                center: Param::fixed(c),
                amplitude: Param::bounded(0.5, f64::NEG_INFINITY, f64::INFINITY),
                fwhm: Param::fixed(5.0),
                eta: Param::fixed(0.3),
            })
            .collect(),
        links: vec![],
    };
    let fit = fit_peaks(&s, &model, &FitOptions::default()).unwrap();

    // Oracle: ordinary least squares on the design matrix [profiles | 1].
    let n = grid.len();
    let a = DMatrix::from_fn(n, 4, |i, k| {
        if k < 3 {
            pseudo_voigt(grid[i] - centers[k], 5.0, 0.3).value
        } else {
            1.0
        }
    });
    let y = DVector::from_vec(s.intensity.clone());
    let ata_inv = (a.transpose() * &a).try_inverse().unwrap();
    let beta = &ata_inv * a.transpose() * &y;
    let rss = (&y - &a * &beta).norm_squared();
    let s2 = rss / (n - 4) as f64;
    let mut by_center = fit.peaks.clone();
    by_center.sort_by(|p, q| p.center.value.total_cmp(&q.center.value));
    for k in 0..3 {
        let sigma = (s2 * ata_inv[(k, k)]).sqrt();
        let got = by_center[k].amplitude.sigma;
        assert!(((got - sigma) / sigma).abs() < 1e-8, "{got} vs {sigma}");
        assert!(((by_center[k].amplitude.value - beta[k]) / beta[k]).abs() < 1e-8);
    }
}

#[test]
fn masked_zero_roton_is_unresolved() {
    let profile = PeakProfile::new(6.0, 0.3).unwrap();
    let v2 = 20.0 / 0.6;
    let s = apply_elastic_mask(&h2_spectrum(v2, &profile, Some(Noise { relative_amplitude: 0.01, seed: 1 })), 25.0)
        .unwrap();
    let seed = TemplateSeed::new(Isotope::h2(), CrystalField::new(v2), 6.0);
    let model = template(TemplateName::ZeroRotonSingle, &seed, &s).unwrap();
    let fit = fit_peaks(&s, &model, &FitOptions::default()).unwrap();
    assert_ne!(fit.status, FitStatus::Converged, "{fit:?}");
}

#[test]
fn splitting_refuses_unconverged_fit() {
    let profile = PeakProfile::new(6.0, 0.3).unwrap();
    let s = h2_spectrum(125.0, &profile, None);
    let seed = TemplateSeed::new(Isotope::h2(), CrystalField::new(125.0), 6.0);
    let mut fit = fit_peaks(&s, &template(TemplateName::S0Triplet, &seed, &s).unwrap(), &FitOptions::default()).unwrap();
    fit.status = FitStatus::MaxIter;
    let err = splitting_report(&fit, "S0_0_triplet").unwrap_err();
    assert!(err.to_string().contains("max_iter"));
}

#[test]
fn duplicated_peaks_give_zero_splitting() {
    let profile = PeakProfile::new(6.0, 0.3).unwrap();
    let s = h2_spectrum(125.0, &profile, Some(Noise { relative_amplitude: 0.01, seed: 2 }));
    let seed = TemplateSeed::new(Isotope::h2(), CrystalField::new(125.0), 6.0);
    let mut fit = fit_peaks(&s, &template(TemplateName::S0Triplet, &seed, &s).unwrap(), &FitOptions::default()).unwrap();
    assert_eq!(fit.status, FitStatus::Converged);
    // Copy the |m| = 0 component onto |m| = 2, including its covariance row.
    let m0 = fit.peaks.iter().find(|p| p.name == "m0").unwrap().clone();
    let k2 = fit.peaks.iter().position(|p| p.name == "m2").unwrap();
    fit.peaks[k2].center = m0.center;
    let r = splitting_report(&fit, "S0_0_triplet").unwrap();
    let d = r.get("|0|-|2|").unwrap();
    assert_eq!(d.value, 0.0);
    assert_eq!(d.sigma, 0.0);
    let d01 = r.get("|0|-|1|").unwrap();
    assert!(d01.sigma > 0.0);
}
