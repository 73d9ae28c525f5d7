//! Text formats: spectra, structured reports, atomic file output.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lineshape::{Spectrum, SpectrumMeta};

/// Significant digits of every number written by this crate.
pub const SIG_DIGITS: usize = 9;

/// Round to `SIG_DIGITS` significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    let r: f64 = format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x);
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Shortest text that reads back as `round_sig(x)`.
pub fn fmt_sig(x: f64) -> String {
    let r = round_sig(x);
    if r.is_nan() {
        "nan".into()
    } else if r.is_infinite() {
        if r > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{r}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub min_samples: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { min_samples: 8 }
    }
}

fn parse_f64(text: &str, source: &str, line: usize, what: &str) -> Result<f64> {
    text.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: source.to_string(),
        line,
        message: format!("{what} '{}' is not a number", text.trim()),
    })
}

/// Parse a two-column spectrum with `# key: value` metadata comments.
pub fn parse_spectrum(text: &str, source: &str, opts: &LoadOptions) -> Result<Spectrum> {
    let mut meta = SpectrumMeta::default();
    let mut masked: Vec<(f64, f64)> = Vec::new();
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let Some((key, value)) = comment.split_once(':') else {
                continue;
            };
            let value = value.trim();
            match key.trim() {
                "pressure_gpa" => meta.pressure_gpa = Some(parse_f64(value, source, line_no, "pressure")?),
                "temperature_k" => meta.temperature_k = Some(parse_f64(value, source, line_no, "temperature")?),
                "composition" => meta.composition = Some(value.to_string()),
                "cutoff_cm1" => meta.cutoff_cm1 = parse_f64(value, source, line_no, "cutoff")?,
                "warning" => meta.warnings.push(value.to_string()),
                "masked_runs" => {
                    for run in value.split(',').map(str::trim).filter(|r| !r.is_empty()) {
                        let (lo, hi) = run.split_once("..").ok_or_else(|| Error::Parse {
                            path: source.to_string(),
                            line: line_no,
                            message: format!("masked run '{run}' is not 'lo..hi'"),
                        })?;
                        masked.push((
                            parse_f64(lo, source, line_no, "masked run bound")?,
                            parse_f64(hi, source, line_no, "masked run bound")?,
                        ));
                    }
                }
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: source.to_string(),
                line: line_no,
                message: format!("expected 2 columns, found {}", fields.len()),
            });
        }
        rows.push((
            parse_f64(fields[0], source, line_no, "wavenumber")?,
            parse_f64(fields[1], source, line_no, "intensity")?,
        ));
    }
    if rows.len() < opts.min_samples {
        return Err(Error::Validation(format!(
            "{source}: {} samples, at least {} required",
            rows.len(),
            opts.min_samples
        )));
    }
    if rows.windows(2).any(|w| w[1].0 < w[0].0) {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        meta.warnings.push("input was not sorted by wavenumber; re-sorted on load".into());
    }
    let (grid, intensity): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let mut spectrum = Spectrum::new(grid, intensity)
        .map_err(|e| Error::Validation(format!("{source}: {e}")))?;
    for (nu, v) in spectrum.grid.iter().zip(spectrum.valid.iter_mut()) {
        if masked.iter().any(|(lo, hi)| *nu >= *lo && *nu <= *hi) {
            *v = false;
        }
    }
    spectrum.meta = meta;
    Ok(spectrum)
}

pub fn load_spectrum_with(path: &Path, opts: &LoadOptions) -> Result<Spectrum> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spectrum(&text, &path.display().to_string(), opts)
}

pub fn load_spectrum(path: &Path) -> Result<Spectrum> {
    load_spectrum_with(path, &LoadOptions::default())
}

/// Canonical text form of a spectrum.
pub fn format_spectrum(s: &Spectrum) -> String {
    let mut out = String::new();
    let m = &s.meta;
    if let Some(p) = m.pressure_gpa {
        let _ = writeln!(out, "# pressure_gpa: {}", fmt_sig(p));
    }
    if let Some(t) = m.temperature_k {
        let _ = writeln!(out, "# temperature_k: {}", fmt_sig(t));
    }
    if let Some(c) = &m.composition {
        let _ = writeln!(out, "# composition: {c}");
    }
    let _ = writeln!(out, "# cutoff_cm1: {}", fmt_sig(m.cutoff_cm1));
    let runs = s.masked_runs();
    if !runs.is_empty() {
        let text: Vec<String> = runs
            .iter()
            .map(|(a, b)| format!("{}..{}", fmt_sig(s.grid[*a]), fmt_sig(s.grid[*b])))
            .collect();
        let _ = writeln!(out, "# masked_runs: {}", text.join(", "));
    }
    for w in &m.warnings {
        let _ = writeln!(out, "# warning: {w}");
    }
    out.push_str("# columns: shift_cm1 intensity\n");
    for (x, y) in s.grid.iter().zip(&s.intensity) {
        let _ = writeln!(out, "{} {}", fmt_sig(*x), fmt_sig(*y));
    }
    out
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_spectrum(path: &Path, s: &Spectrum) -> Result<()> {
    write_atomic(path, format_spectrum(s).as_bytes())
}

fn round_value(v: &mut toml::Value) {
    match v {
        toml::Value::Float(f) => *f = round_sig(*f),
        toml::Value::Array(a) => a.iter_mut().for_each(round_value),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, x)| round_value(x)),
        _ => {}
    }
}

/// Structured report: TOML with sorted keys and floats rounded to
/// `SIG_DIGITS` significant digits.
pub fn to_report<T: Serialize>(value: &T) -> Result<String> {
    let mut v = toml::Value::try_from(value).map_err(|e| Error::Validation(format!("report: {e}")))?;
    round_value(&mut v);
    toml::to_string(&v).map_err(|e| Error::Validation(format!("report: {e}")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineshape::apply_elastic_mask;

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig(0.1 + 0.2), "0.3");
        assert_eq!(fmt_sig(123456789.987), "123456790");
        assert_eq!(fmt_sig(-0.0), "0");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(round_sig(round_sig(2.0f64.sqrt())), round_sig(2.0f64.sqrt()));
    }

    #[test]
    fn minimal_two_row_file() {
        let s = parse_spectrum("1 2\n3 4\n", "mem", &LoadOptions { min_samples: 2 }).unwrap();
        assert_eq!(s.len(), 2);
        assert!(parse_spectrum("1 2\n3 4\n", "mem", &LoadOptions::default()).is_err());
    }

    #[test]
    fn header_metadata() {
        let text = "# pressure_gpa: 31\n# temperature_k: 10\n\n# free comment\n1,2\n2;3\n3\t4\n";
        let s = parse_spectrum(text, "mem", &LoadOptions { min_samples: 2 }).unwrap();
        assert_eq!(s.meta.pressure_gpa, Some(31.0));
        assert_eq!(s.meta.temperature_k, Some(10.0));
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "# c\n1 2\n2 x\n";
        match parse_spectrum(text, "f.txt", &LoadOptions { min_samples: 1 }) {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "f.txt");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsorted_input_is_sorted_with_warning() {
        let s = parse_spectrum("3 1\n1 2\n2 3\n", "mem", &LoadOptions { min_samples: 2 }).unwrap();
        assert_eq!(s.grid, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.intensity, vec![2.0, 3.0, 1.0]);
        assert_eq!(s.meta.warnings.len(), 1);
    }

    #[test]
    fn write_load_roundtrip_is_canonical() {
        let grid: Vec<f64> = (0..40).map(|i| 3.0 + 1.1 * i as f64).collect();
        let y = grid.iter().map(|x| (x / 7.0).sin() / 3.0).collect();
        let mut s = Spectrum::new(grid, y).unwrap();
        s.meta.pressure_gpa = Some(31.0);
        s.meta.composition = Some("H2:0.5+D2:0.5".into());
        let s = apply_elastic_mask(&s, 25.0).unwrap();
        let first = format_spectrum(&s);
        let loaded = parse_spectrum(&first, "mem", &LoadOptions::default()).unwrap();
        assert_eq!(loaded.valid, s.valid);
        assert_eq!(format_spectrum(&loaded), first);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
    }

    #[test]
    fn reports_are_rounded_and_sorted() {
        #[derive(Serialize)]
        struct R {
            z: f64,
            a: Vec<f64>,
        }
        let text = to_report(&R { z: 1.0 / 3.0, a: vec![0.1 + 0.2] }).unwrap();
        assert_eq!(text, "a = [0.3]\nz = 0.333333333\n");
    }
}
