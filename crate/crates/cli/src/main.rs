//! Command-line front end for the roton library.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use roton::calibrate::{fit_field_model, overlap_pressure, CalibrationOptions, FormKind, FrequencyDataset, Mapping};
use roton::config::RunConfig;
use roton::crystalfield::{level_diagram, CrystalField, LevelDiagram, LevelMethod};
use roton::fitkit::{fit_peaks, FitStatus, PeakModelSpec, TemplateName};
use roton::io::{format_spectrum, load_spectrum, sha256_hex, to_report, write_atomic};
use roton::lineshape::{apply_elastic_mask, synth, Component, Noise, SiteModel, SynthOptions};
use roton::population::{evolve_ortho_para, populate_levels, thermal_j_max, PopulationState};
use roton::raman::{enumerate_transitions, CountConvention, SelectionRules, Transition};
use roton::rotor::{parse_composition, IsotopeLabel};
use roton::scenario::{fit_point, high_temperature_ortho, FitRequest, Manifest, ManifestEntry, Scenario};
use roton::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "roton", version, about = "Crystal-field rotational Raman spectra of dense hydrogens")]
struct Cli {
    /// Run configuration (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Crystal-field level diagram for one rotor.
    Levels(LevelsArgs),
    /// Raman transitions of one J manifold under both counting conventions.
    Transitions(TransitionsArgs),
    /// Synthesize a masked spectrum.
    Synth(SynthArgs),
    /// Fit a template or a custom peak model to a spectrum file.
    Fit(FitArgs),
    /// Fit a V2(P) field model to a zero-roton frequency dataset.
    Calibrate(CalibrateArgs),
    /// Ortho fraction versus hold time at fixed pressure.
    Kinetics(KineticsArgs),
    /// Run a named scenario (or a scenario file) into a bundle directory.
    Scenario(ScenarioArgs),
}

#[derive(Args, Debug)]
struct FieldArgs {
    /// Crystal-field strength V2, cm^-1; overrides the field model.
    #[arg(long)]
    v2: Option<f64>,
    /// Pressure, GPa; sets V2 through the config field model.
    #[arg(long)]
    pressure: Option<f64>,
    /// Temperature, K; scales the field-model V2 through softening.
    #[arg(long, default_value_t = 10.0)]
    temperature: f64,
}

impl FieldArgs {
    /// (pressure used for B(P), V2).
    fn resolve(&self, cfg: &RunConfig) -> (f64, f64) {
        let pressure = self.pressure.unwrap_or(0.0);
        let v2 = match (self.v2, self.pressure) {
            (Some(v), _) => v,
            (None, Some(p)) => cfg.field_model.v2_at(p, self.temperature),
            // Start of the calibrated range, so the result is a physical field.
            (None, None) => cfg
                .field_model
                .v2_at(cfg.field_model.pressure_range.map_or(1.0, |r| r[0]), self.temperature),
        };
        (pressure, v2)
    }
}

#[derive(Args, Debug)]
struct OutputArg {
    /// Write the report here (plus a sibling manifest) instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LevelsArgs {
    #[arg(long, default_value = "H2")]
    isotope: IsotopeLabel,
    #[command(flatten)]
    field: FieldArgs,
    #[arg(long, default_value_t = 4)]
    j_max: u32,
    /// perturbative or exact; config value when absent.
    #[arg(long)]
    method: Option<LevelMethod>,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Args, Debug)]
struct TransitionsArgs {
    #[arg(long = "J", alias = "j")]
    j: u32,
    #[arg(long, default_value = "H2")]
    isotope: IsotopeLabel,
    #[command(flatten)]
    field: FieldArgs,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// e.g. H2, D2, H2:0.5+D2:0.5
    #[arg(long, default_value = "H2")]
    composition: String,
    #[arg(long)]
    pressure: f64,
    #[arg(long, default_value_t = 10.0)]
    temperature: f64,
    /// Explicit V2; otherwise the field model at (P, T).
    #[arg(long)]
    v2: Option<f64>,
    /// Frozen ortho fraction of every homonuclear species; spin statistics when absent.
    #[arg(long, conflicts_with = "thermal")]
    ortho: Option<f64>,
    /// Full thermal equilibrium, no frozen spin isomers.
    #[arg(long)]
    thermal: bool,
    #[arg(long)]
    anti_stokes: bool,
    /// Relative noise level; config value when absent.
    #[arg(long)]
    noise: Option<f64>,
    /// Noise seed; config seed when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Template name; mutually exclusive with --model.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    template: Option<TemplateName>,
    /// Custom peak model (TOML).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Rotor for template placement; from the spectrum composition when absent.
    #[arg(long)]
    isotope: Option<IsotopeLabel>,
    #[arg(long)]
    v2: Option<f64>,
    /// Per-site V2 multipliers, comma separated.
    #[arg(long, value_delimiter = ',')]
    site_scales: Vec<f64>,
    /// Template line width; config profile width when absent.
    #[arg(long)]
    fwhm: Option<f64>,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormArg {
    PowerLaw,
    Quadratic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MappingArg {
    FirstOrder,
    Exact,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// CSV dataset: pressure_gpa, temperature_k, sample, phase, frequency_cm1, uncertainty_cm1[, site]
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "power-law")]
    form: FormArg,
    #[arg(long)]
    fixed_exponent: Option<f64>,
    #[arg(long)]
    fit_softening: bool,
    #[arg(long, value_enum, default_value = "first-order")]
    mapping: MappingArg,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Args, Debug)]
struct KineticsArgs {
    #[arg(long, default_value = "H2")]
    composition: String,
    #[arg(long)]
    pressure: f64,
    #[arg(long, default_value_t = 10.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1.0)]
    hours: f64,
    #[arg(long, default_value_t = 0.25)]
    step: f64,
    /// Initial ortho fraction; spin statistics when absent.
    #[arg(long)]
    ortho: Option<f64>,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Built-in scenario name or path to a scenario file.
    name: Option<String>,
    /// Bundle directory; `<output_dir>/<name>` from the config when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// List the built-in scenarios.
    #[arg(long)]
    list: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut ctx = Context {
        cfg,
        config_path: cli.config.clone(),
        inputs: Vec::new(),
    };
    match cli.command {
        Command::Levels(a) => levels(&mut ctx, a),
        Command::Transitions(a) => transitions(&mut ctx, a),
        Command::Synth(a) => synth_cmd(&mut ctx, a),
        Command::Fit(a) => fit_cmd(&mut ctx, a),
        Command::Calibrate(a) => calibrate_cmd(&mut ctx, a),
        Command::Kinetics(a) => kinetics_cmd(&mut ctx, a),
        Command::Scenario(a) => scenario_cmd(&mut ctx, a),
    }
}

struct Context {
    cfg: RunConfig,
    config_path: Option<PathBuf>,
    inputs: Vec<ManifestEntry>,
}

impl Context {
    fn read_input(&mut self, path: &Path) -> Result<String> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(ManifestEntry::of(&path.display().to_string(), text.as_bytes()));
        Ok(text)
    }

    fn command_line() -> String {
        std::env::args().skip(1).collect::<Vec<_>>().join(" ")
    }

    /// Print `text`, or write it atomically with a manifest beside it.
    fn emit(&mut self, out: &OutputArg, text: &str, seed: Option<u64>) -> Result<()> {
        let Some(path) = &out.output else {
            print!("{text}");
            return Ok(());
        };
        self.guard_inputs(path)?;
        write_atomic(path, text.as_bytes())?;
        let mut inputs = self.inputs.clone();
        if let Some(c) = &self.config_path {
            let bytes = std::fs::read(c).map_err(|e| Error::io(c, e))?;
            inputs.push(ManifestEntry::of(&c.display().to_string(), &bytes));
        }
        let manifest = Manifest {
            tool: "roton".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: Self::command_line(),
            seed: seed.unwrap_or(self.cfg.seed),
            scenario_seed: None,
            config_sha256: self.cfg.hash()?,
            inputs,
            outputs: vec![ManifestEntry::of(&path.display().to_string(), text.as_bytes())],
            failed_points: 0,
        };
        let mpath = manifest_path(path);
        write_atomic(&mpath, to_report(&manifest)?.as_bytes())
    }

    fn guard_inputs(&self, out: &Path) -> Result<()> {
        let out_abs = std::path::absolute(out).map_err(|e| Error::io(out, e))?;
        for i in &self.inputs {
            let p = Path::new(&i.path);
            if std::path::absolute(p).map_err(|e| Error::io(p, e))? == out_abs {
                return Err(Error::Validation(format!(
                    "refusing to overwrite input file {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.toml");
    output.with_file_name(name)
}

#[derive(Serialize)]
struct LevelRow {
    j: u32,
    abs_m: u32,
    energy_cm1: f64,
    degeneracy: u32,
}

#[derive(Serialize)]
struct SplittingRow {
    j: u32,
    /// Spread of the manifold, max minus min sublevel energy.
    width_cm1: f64,
    /// E(J, |m|) − E(J, lowest |m| in energy order), per |m|.
    relative_cm1: Vec<f64>,
}

#[derive(Serialize)]
struct LevelsReport {
    isotope: IsotopeLabel,
    b_cm1: f64,
    pressure_gpa: f64,
    v2_cm1: f64,
    method: LevelMethod,
    /// |E(1,0) − E(1,1)|, the J = 1 zero-roton frequency.
    splitting_j1_cm1: f64,
    splittings: Vec<SplittingRow>,
    levels: Vec<LevelRow>,
}

fn levels(ctx: &mut Context, a: LevelsArgs) -> Result<()> {
    let (pressure, v2) = a.field.resolve(&ctx.cfg);
    let iso = ctx.cfg.isotopes.get(a.isotope).at_pressure(pressure);
    let method = a.method.unwrap_or(ctx.cfg.level_method);
    let d: LevelDiagram = level_diagram(&iso, &CrystalField::new(v2), method, a.j_max)?;
    let splittings = (1..=d.max_j())
        .map(|j| {
            let e: Vec<f64> = d.manifold(j).map(|l| l.energy).collect();
            let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            SplittingRow {
                j,
                width_cm1: hi - lo,
                relative_cm1: e.iter().map(|x| x - lo).collect(),
            }
        })
        .collect();
    let report = LevelsReport {
        isotope: iso.label,
        b_cm1: iso.b,
        pressure_gpa: pressure,
        v2_cm1: v2,
        method,
        splitting_j1_cm1: d.splitting(1, 0, 1).map_or(0.0, f64::abs),
        splittings,
        levels: d
            .entries
            .iter()
            .map(|l| LevelRow {
                j: l.j,
                abs_m: l.abs_m,
                energy_cm1: l.energy,
                degeneracy: l.degeneracy,
            })
            .collect(),
    };
    ctx.emit(&a.out, &to_report(&report)?, None)
}

#[derive(Serialize)]
struct LineRow {
    branch: String,
    from_j: u32,
    from_abs_m: u32,
    to_j: u32,
    to_abs_m: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    signed_m: Option<[i32; 2]>,
    shift_cm1: f64,
}

#[derive(Serialize)]
struct ConventionReport {
    /// ΔJ = 0 lines inside the J manifold.
    zero_roton_count: usize,
    /// ΔJ = +2 lines starting in the J manifold.
    s0_count: usize,
    lines: Vec<LineRow>,
}

#[derive(Serialize)]
struct TransitionsReport {
    j: u32,
    isotope: IsotopeLabel,
    v2_cm1: f64,
    level_pairs: ConventionReport,
    state_pairs: ConventionReport,
}

fn convention_report(d: &LevelDiagram, j: u32, c: CountConvention) -> ConventionReport {
    let rules = SelectionRules::default().with_convention(c);
    let lines: Vec<Transition> = enumerate_transitions(d, &rules)
        .into_iter()
        .filter(|t| t.from.j == j)
        .collect();
    ConventionReport {
        zero_roton_count: lines.iter().filter(|t| t.is_zero_roton()).count(),
        s0_count: lines.iter().filter(|t| t.to.j == j + 2).count(),
        lines: lines
            .iter()
            .map(|t| LineRow {
                branch: t.branch.to_string(),
                from_j: t.from.j,
                from_abs_m: t.from.abs_m,
                to_j: t.to.j,
                to_abs_m: t.to.abs_m,
                signed_m: t.signed_m.map(|(a, b)| [a, b]),
                shift_cm1: t.shift,
            })
            .collect(),
    }
}

fn transitions(ctx: &mut Context, a: TransitionsArgs) -> Result<()> {
    let (pressure, v2) = a.field.resolve(&ctx.cfg);
    if v2 == 0.0 {
        return Err(Error::Domain("zero-roton lines need V2 != 0".into()));
    }
    let iso = ctx.cfg.isotopes.get(a.isotope).at_pressure(pressure);
    let d = level_diagram(&iso, &CrystalField::new(v2), ctx.cfg.level_method, a.j + 2)?;
    let report = TransitionsReport {
        j: a.j,
        isotope: iso.label,
        v2_cm1: v2,
        level_pairs: convention_report(&d, a.j, CountConvention::LevelPairs),
        state_pairs: convention_report(&d, a.j, CountConvention::StatePairs),
    };
    ctx.emit(&a.out, &to_report(&report)?, None)
}

fn synth_cmd(ctx: &mut Context, a: SynthArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let v2 = a.v2.unwrap_or_else(|| cfg.field_model.v2_at(a.pressure, a.temperature));
    let seed = a.seed.unwrap_or(cfg.seed);
    let comps: Vec<Component> = parse_composition(&a.composition)?
        .into_iter()
        .map(|(l, x)| {
            let isotope = cfg.isotopes.get(l).clone();
            let frozen = if a.thermal {
                None
            } else {
                high_temperature_ortho(&isotope).map(|x0| a.ortho.unwrap_or(x0))
            };
            Component {
                isotope,
                mole_fraction: x,
                sites: SiteModel::single(CrystalField::new(v2)),
                frozen_ortho: frozen,
            }
        })
        .collect();
    let amplitude = a.noise.unwrap_or(cfg.noise_relative);
    let opts = SynthOptions {
        level_method: cfg.level_method,
        include_anti_stokes: a.anti_stokes,
        noise: (amplitude > 0.0).then_some(Noise {
            relative_amplitude: amplitude,
            seed,
        }),
        ..SynthOptions::default()
    };
    let s = synth(&comps, a.pressure, a.temperature, &cfg.profile, &cfg.grid.points(), &opts)?;
    let s = apply_elastic_mask(&s, cfg.mask_cutoff_cm1)?;
    ctx.emit(&a.out, &format_spectrum(&s), Some(seed))
}

fn fit_cmd(ctx: &mut Context, a: FitArgs) -> Result<()> {
    ctx.read_input(&a.input)?;
    let spectrum = load_spectrum(&a.input)?;
    let (text, status) = match (&a.template, &a.model) {
        (Some(t), _) => {
            let req = FitRequest {
                template: *t,
                isotope: a.isotope,
                site_scales: a.site_scales.clone(),
                fwhm: a.fwhm.unwrap_or(ctx.cfg.profile.fwhm),
                v2_cm1: a.v2,
            };
            let report = fit_point(&spectrum, &req, &ctx.cfg)?;
            (report.to_text()?, report.fit.status)
        }
        (None, Some(path)) => {
            let src = ctx.read_input(path)?;
            let mut model: PeakModelSpec =
                toml::from_str(&src).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if model.mask_cutoff.is_none() {
                model.mask_cutoff = Some(ctx.cfg.mask_cutoff_cm1);
            }
            let fit = fit_peaks(&spectrum, &model, &ctx.cfg.fit)?;
            (to_report(&fit)?, fit.status)
        }
        (None, None) => unreachable!("clap requires --template or --model"),
    };
    ctx.emit(&a.out, &text, None)?;
    if status != FitStatus::Converged {
        return Err(Error::NotConverged {
            status: status.to_string(),
            message: "report written; results are not a converged optimum".into(),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct OverlapRow {
    sample: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pressure_gpa: Option<f64>,
}

#[derive(Serialize)]
struct CalibrationReport {
    calibration: roton::calibrate::Calibration,
    /// Pressure where the zero roton meets the lower S0(0) component, fitted model.
    overlap: Vec<OverlapRow>,
    overlap_fwhm_cm1: f64,
}

fn calibrate_cmd(ctx: &mut Context, a: CalibrateArgs) -> Result<()> {
    let text = ctx.read_input(&a.data)?;
    let data = FrequencyDataset::read(text.as_bytes(), &a.data.display().to_string())?;
    let opts = CalibrationOptions {
        form: match a.form {
            FormArg::PowerLaw => FormKind::PowerLaw,
            FormArg::Quadratic => FormKind::Quadratic,
        },
        fixed_exponent: a.fixed_exponent,
        softening: ctx.cfg.field_model.softening,
        fit_softening: a.fit_softening,
        mapping: match a.mapping {
            MappingArg::FirstOrder => Mapping::FirstOrder,
            MappingArg::Exact => Mapping::Exact,
        },
        lm: ctx.cfg.fit.lm,
    };
    let calibration = fit_field_model(&data, &opts)?;
    let overlap = match calibration.global.as_ref() {
        Some(g) => ["D2", "H2:0.5+D2:0.5", "H2"]
            .iter()
            .map(|s| {
                let iso = ctx.cfg.isotopes.effective(&parse_composition(s)?);
                Ok(OverlapRow {
                    sample: s.to_string(),
                    pressure_gpa: overlap_pressure(&g.model, &iso, ctx.cfg.overlap.fwhm_cm1, 10.0, ctx.cfg.overlap.p_max_gpa),
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let report = CalibrationReport {
        calibration,
        overlap,
        overlap_fwhm_cm1: ctx.cfg.overlap.fwhm_cm1,
    };
    ctx.emit(&a.out, &to_report(&report)?, None)
}

#[derive(Serialize)]
struct KineticsRow {
    time_h: f64,
    ortho: Vec<f64>,
}

#[derive(Serialize)]
struct KineticsReport {
    composition: String,
    pressure_gpa: f64,
    temperature_k: f64,
    /// Species carrying an ortho fraction, in `ortho` column order.
    species: Vec<IsotopeLabel>,
    rate_per_hour: Vec<f64>,
    series: Vec<KineticsRow>,
}

fn kinetics_cmd(ctx: &mut Context, a: KineticsArgs) -> Result<()> {
    if !(a.step > 0.0 && a.hours >= 0.0) {
        return Err(Error::Validation("--step must be > 0 and --hours >= 0".into()));
    }
    let cfg = &ctx.cfg;
    let comp = parse_composition(&a.composition)?;
    let field = CrystalField::new(cfg.field_model.v2_at(a.pressure, a.temperature));
    let mut species = Vec::new();
    for (l, x) in &comp {
        let iso = cfg.isotopes.get(*l).at_pressure(a.pressure);
        let levels = level_diagram(&iso, &field, cfg.level_method, thermal_j_max(&iso, a.temperature))?;
        let x0 = high_temperature_ortho(&iso).map(|h| a.ortho.unwrap_or(h));
        let mut s = populate_levels(&iso, &levels, a.temperature, x0)?;
        s.mole_fraction = *x;
        species.push(s);
    }
    let mut state = PopulationState {
        temperature_k: a.temperature,
        species,
    };
    let tracked: Vec<usize> = (0..state.species.len())
        .filter(|k| state.species[*k].ortho_fraction.is_some())
        .collect();
    let labels: Vec<IsotopeLabel> = tracked.iter().map(|k| state.species[*k].isotope.label).collect();
    let in_mixture = state.is_mixture();
    let rates = labels
        .iter()
        .map(|l| cfg.kinetics.rate_for(*l, in_mixture, a.pressure))
        .collect();
    let n = (a.hours / a.step).round() as usize;
    let mut series = Vec::with_capacity(n + 1);
    let mut t_prev = 0.0;
    for i in 0..=n {
        let t = (i as f64 * a.step).min(a.hours);
        state = evolve_ortho_para(&state, &cfg.kinetics, a.pressure, a.temperature, t - t_prev)?;
        t_prev = t;
        series.push(KineticsRow {
            time_h: t,
            ortho: tracked
                .iter()
                .map(|k| state.species[*k].ortho_fraction.unwrap_or(0.0))
                .collect(),
        });
    }
    let report = KineticsReport {
        composition: a.composition.clone(),
        pressure_gpa: a.pressure,
        temperature_k: a.temperature,
        species: labels,
        rate_per_hour: rates,
        series,
    };
    ctx.emit(&a.out, &to_report(&report)?, None)
}

fn scenario_cmd(ctx: &mut Context, a: ScenarioArgs) -> Result<()> {
    if a.list {
        for n in roton::scenario::builtin_names() {
            println!("{n}");
        }
        return Ok(());
    }
    let name = a
        .name
        .ok_or_else(|| Error::Validation("scenario name required (or --list)".into()))?;
    let scn = Scenario::resolve(&name)?;
    let dir = a.out.unwrap_or_else(|| ctx.cfg.output_dir.join(&scn.name));
    let run = roton::scenario::run_scenario(&scn, &ctx.cfg)?;
    let manifest = run.write(&dir)?;
    print!("{}", run.points_table());
    if manifest.failed_points > 0 {
        eprintln!("{} point(s) failed; see {}", manifest.failed_points, dir.join("log.txt").display());
    }
    eprintln!("bundle written to {} (manifest sha256 {})", dir.display(), {
        let bytes = std::fs::read(dir.join(Manifest::FILE)).map_err(|e| Error::io(dir.join(Manifest::FILE), e))?;
        sha256_hex(&bytes)
    });
    Ok(())
}
