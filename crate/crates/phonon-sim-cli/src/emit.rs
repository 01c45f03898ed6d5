//! Deterministic CSV/JSON writers. Floating-point values are always written
//! with 17 significant digits so that re-ingestion reproduces them bitwise;
//! nothing time-dependent enters these files (timestamps live in the
//! run-metadata sidecar only).

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use phonon_sim::{
    CountingBand, CountingReport, DensityMatrix, PulseAreaReport, ReadoutTrace, Snapshot,
    SweepGrid, TimingEstimate,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// 17-significant-digit float form, identical across platforms.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn json_f64_array(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
    format!("[{}]", items.join(","))
}

pub fn write_trace(dir: &Path, name: &str, trace: &ReadoutTrace, format: Format) -> io::Result<()> {
    let path = dir.join(format!("{name}.{}", format.extension()));
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str("tau_s,R,n1,n2,leak1,leak2\n");
            for i in 0..trace.tau_s.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    fmt_f64(trace.tau_s[i]),
                    fmt_f64(trace.r[i]),
                    fmt_f64(trace.n1[i]),
                    fmt_f64(trace.n2[i]),
                    fmt_f64(trace.leak1[i]),
                    fmt_f64(trace.leak2[i]),
                );
            }
        }
        Format::Json => {
            let warnings: Vec<String> =
                trace.warnings.iter().map(|w| json_string(w)).collect();
            let _ = write!(
                out,
                "{{\"schema_version\":{SCHEMA_VERSION},\"delta_omega_hz\":{},\"eta\":{},\"n_env\":{},\
                 \"tau_s\":{},\"R\":{},\"n1\":{},\"n2\":{},\"leak1\":{},\"leak2\":{},\"warnings\":[{}]}}",
                fmt_f64(trace.delta_omega_hz),
                fmt_f64(trace.eta),
                fmt_f64(trace.n_env),
                json_f64_array(&trace.tau_s),
                json_f64_array(&trace.r),
                json_f64_array(&trace.n1),
                json_f64_array(&trace.n2),
                json_f64_array(&trace.leak1),
                json_f64_array(&trace.leak2),
                warnings.join(","),
            );
            out.push('\n');
        }
    }
    fs::write(path, out)
}

pub fn write_grid(dir: &Path, name: &str, grid: &SweepGrid, format: Format) -> io::Result<()> {
    let path = dir.join(format!("{name}.{}", format.extension()));
    let axis_names: Vec<&str> = grid.axes.iter().map(|a| a.param.name()).collect();
    let has_detuning = grid.cells.iter().any(|c| c.params.delta_over_omega1.is_some());
    let axis_value = |cell: &phonon_sim::SweepCell, name: &str| -> f64 {
        match name {
            "n_th" => cell.params.n_th,
            "p" => cell.params.p,
            "dark" => cell.params.dark,
            "jc_over_j" => cell.params.jc_over_j,
            "jh_over_j" => cell.params.jh_over_j,
            "delta_over_omega1" => cell.params.delta_over_omega1.unwrap_or(f64::NAN),
            _ => f64::NAN,
        }
    };
    let mut out = String::new();
    match format {
        Format::Csv => {
            let mut header: Vec<String> = axis_names.iter().map(|s| s.to_string()).collect();
            if has_detuning {
                header.extend(
                    ["jc_over_j", "jh_over_j", "j_normalized"].map(String::from),
                );
            }
            header.extend(["visibility", "feasible", "error"].map(String::from));
            out.push_str(&header.join(","));
            out.push('\n');
            for cell in &grid.cells {
                let mut row: Vec<String> = axis_names
                    .iter()
                    .map(|n| fmt_f64(axis_value(cell, n)))
                    .collect();
                if has_detuning {
                    row.push(fmt_f64(cell.params.jc_over_j));
                    row.push(fmt_f64(cell.params.jh_over_j));
                    row.push(fmt_f64(cell.params.j_normalized.unwrap_or(f64::NAN)));
                }
                row.push(cell.visibility.map(fmt_f64).unwrap_or_default());
                row.push(cell.feasible.to_string());
                row.push(csv_quote(cell.error.as_deref().unwrap_or("")));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        Format::Json => {
            let mut cells = Vec::new();
            for cell in &grid.cells {
                let mut fields: Vec<String> = axis_names
                    .iter()
                    .map(|n| format!("{}:{}", json_string(n), fmt_f64(axis_value(cell, n))))
                    .collect();
                fields.push(format!(
                    "\"params\":{{\"n_th\":{},\"p\":{},\"dark\":{},\"jc_over_j\":{},\"jh_over_j\":{}}}",
                    fmt_f64(cell.params.n_th),
                    fmt_f64(cell.params.p),
                    fmt_f64(cell.params.dark),
                    fmt_f64(cell.params.jc_over_j),
                    fmt_f64(cell.params.jh_over_j),
                ));
                if let Some(j) = cell.params.j_normalized {
                    fields.push(format!("\"j_normalized\":{}", fmt_f64(j)));
                }
                fields.push(format!(
                    "\"visibility\":{}",
                    cell.visibility.map(fmt_f64).unwrap_or_else(|| "null".into())
                ));
                fields.push(format!("\"feasible\":{}", cell.feasible));
                fields.push(format!(
                    "\"error\":{}",
                    cell.error
                        .as_deref()
                        .map(json_string)
                        .unwrap_or_else(|| "null".into())
                ));
                cells.push(format!("{{{}}}", fields.join(",")));
            }
            let axes: Vec<String> = grid
                .axes
                .iter()
                .map(|a| {
                    format!(
                        "{{\"param\":{},\"values\":{}}}",
                        json_string(a.param.name()),
                        json_f64_array(&a.values)
                    )
                })
                .collect();
            let _ = write!(
                out,
                "{{\"schema_version\":{SCHEMA_VERSION},\"axes\":[{}],\"cells\":[{}]}}",
                axes.join(","),
                cells.join(",")
            );
            out.push('\n');
        }
    }
    fs::write(path, out)
}

pub fn write_snapshot(
    dir: &Path,
    name: &str,
    snapshot: &Snapshot,
    format: Format,
) -> io::Result<()> {
    let path = dir.join(format!("{name}.{}", format.extension()));
    fs::write(path, render_snapshot(&snapshot.state, snapshot.tau_s, format))
}

pub fn render_snapshot(state: &DensityMatrix, tau_s: f64, format: Format) -> String {
    let basis = state.basis();
    let d = basis.dimension();
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str("row_index,col_index,row_label,col_label,re,im\n");
            for row in 0..d {
                for col in 0..d {
                    let v = state.element(row, col);
                    let _ = writeln!(
                        out,
                        "{row},{col},{},{},{},{}",
                        basis.label(row),
                        basis.label(col),
                        fmt_f64(v.re),
                        fmt_f64(v.im),
                    );
                }
            }
        }
        Format::Json => {
            let labels: Vec<String> =
                (0..d).map(|k| json_string(&basis.label(k))).collect();
            let mut re = Vec::with_capacity(d * d);
            let mut im = Vec::with_capacity(d * d);
            for row in 0..d {
                for col in 0..d {
                    let v = state.element(row, col);
                    re.push(v.re);
                    im.push(v.im);
                }
            }
            let _ = write!(
                out,
                "{{\"schema_version\":{SCHEMA_VERSION},\"tau_s\":{},\"n1_max\":{},\"n2_max\":{},\
                 \"labels\":[{}],\"re\":{},\"im\":{}}}",
                fmt_f64(tau_s),
                basis.n1_max(),
                basis.n2_max(),
                labels.join(","),
                json_f64_array(&re),
                json_f64_array(&im),
            );
            out.push('\n');
        }
    }
    out
}

pub fn write_timing(
    dir: &Path,
    estimate: &TimingEstimate,
    counting: Option<&CountingReport>,
    format: Format,
) -> io::Result<()> {
    let path = dir.join(format!("timing.{}", format.extension()));
    let mut out = String::new();
    let hours = estimate.exact_s / 3600.0;
    let days = estimate.exact_s / 86400.0;
    match format {
        Format::Csv => {
            out.push_str("exact_s,approx_s,hours,days,counting_product,counting_band\n");
            let (product, band) = counting
                .map(|c| (fmt_f64(c.product), band_name(c.band).to_string()))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt_f64(estimate.exact_s),
                fmt_f64(estimate.approx_s),
                fmt_f64(hours),
                fmt_f64(days),
                product,
                band,
            );
        }
        Format::Json => {
            let counting_json = counting
                .map(|c| {
                    format!(
                        ",\"counting\":{{\"product\":{},\"band\":{}}}",
                        fmt_f64(c.product),
                        json_string(band_name(c.band))
                    )
                })
                .unwrap_or_default();
            let _ = write!(
                out,
                "{{\"schema_version\":{SCHEMA_VERSION},\"exact_s\":{},\"approx_s\":{},\
                 \"hours\":{},\"days\":{}{}}}",
                fmt_f64(estimate.exact_s),
                fmt_f64(estimate.approx_s),
                fmt_f64(hours),
                fmt_f64(days),
                counting_json,
            );
            out.push('\n');
        }
    }
    fs::write(path, out)
}

fn band_name(band: CountingBand) -> &'static str {
    match band {
        CountingBand::Pass => "pass",
        CountingBand::Warn => "warn",
        CountingBand::Fail => "fail",
    }
}

pub fn write_pulse_report(
    dir: &Path,
    report: &PulseAreaReport,
    format: Format,
) -> io::Result<()> {
    let path = dir.join(format!("pulse.{}", format.extension()));
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str("area_rad,target_rad,pass,exponential_shape,recommend_exponential\n");
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(report.area_rad),
                fmt_f64(std::f64::consts::FRAC_PI_2),
                report.pass,
                report.exponential_shape,
                report.recommend_exponential(),
            );
        }
        Format::Json => {
            let _ = write!(
                out,
                "{{\"schema_version\":{SCHEMA_VERSION},\"area_rad\":{},\"target_rad\":{},\
                 \"pass\":{},\"exponential_shape\":{},\"recommend_exponential\":{}}}",
                fmt_f64(report.area_rad),
                fmt_f64(std::f64::consts::FRAC_PI_2),
                report.pass,
                report.exponential_shape,
                report.recommend_exponential(),
            );
            out.push('\n');
        }
    }
    fs::write(path, out)
}

/// The only file that carries a timestamp.
pub fn write_metadata(dir: &Path, subcommand: &str, config_echo: &str) -> io::Result<()> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    fs::write(dir.join("config_echo.toml"), config_echo)?;
    let body = format!(
        "{{\"schema_version\":{SCHEMA_VERSION},\"subcommand\":{},\"unix_time_s\":{stamp}}}\n",
        json_string(subcommand)
    );
    fs::write(dir.join("run_metadata.json"), body)
}
