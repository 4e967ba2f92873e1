//! Command-line front end: TOML experiment configs in, CSV/JSON tables and
//! SVG plots out.
//!
//! Config schema (unknown keys are rejected):
//!
//! ```toml
//! n_taps = 16            # required
//! sigma_x2 = 1.0         # default 1.0
//! sigma_v2 = 0.001       # default 1e-3
//! ensemble = 200         # default 200
//! seed = 1               # default 1
//! sweep_grid = [0.0, 0.5, 0.9375]   # optional, used by `sweep`
//!
//! [[phases]]             # at least one
//! n_active = 1
//! duration = 1000
//! magnitude = 1.0        # default 1.0
//! sign_pattern = "alternating"   # alternating | all-positive | random
//!
//! [[algorithms]]         # at least one, names unique
//! name = "gc-lms"        # lms | za-lms | gc-lms
//! mu = 0.05
//! rho = 0.0005           # default 0
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::experiments::{
    self, run_ensemble, sparsity_sweep, theory_vs_sim_report, EnsembleOptions, EnsembleStats, SweepRow, SystemShape,
    TheoryReport, Window,
};
use crate::filters::{Algorithm, FilterParams};
use crate::signals::{make_sparse_system, Scenario, SignPattern, SystemPhase};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::InvalidArgument(_) => EXIT_PARSE,
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Io(_) => EXIT_IO,
        _ => 1,
    }
}

/// Default 11-point sparsity grid 0, 0.1, ..., 1.
pub fn default_sweep_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpec {
    pub n_active: usize,
    pub magnitude: f64,
    pub duration: usize,
    pub sign_pattern: SignPattern,
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_taps: usize,
    pub sigma_x2: f64,
    pub sigma_v2: f64,
    pub ensemble: usize,
    pub seed: u64,
    pub phases: Vec<PhaseSpec>,
    pub algorithms: Vec<FilterParams>,
    pub sweep_grid: Option<Vec<f64>>,
}

impl ExperimentConfig {
    fn desk_with(phases: Vec<PhaseSpec>) -> Self {
        ExperimentConfig {
            n_taps: experiments::DESK_TAPS,
            sigma_x2: experiments::DESK_SIGMA_X2,
            sigma_v2: experiments::DESK_SIGMA_V2,
            ensemble: experiments::DESK_ENSEMBLE,
            seed: experiments::DESK_SEED,
            phases,
            algorithms: experiments::desk_algorithms(experiments::DESK_RHO),
            sweep_grid: None,
        }
    }

    fn unit_phase(n_active: usize, duration: usize) -> PhaseSpec {
        PhaseSpec { n_active, magnitude: 1.0, duration, sign_pattern: SignPattern::Alternating }
    }

    /// Three 1000-iteration phases with 1, 8 and 16 active taps.
    pub fn fig1() -> Self {
        Self::desk_with([1, 8, 16].iter().map(|&k| Self::unit_phase(k, 1000)).collect())
    }

    /// One static system of `n_active` unit taps.
    pub fn desk(n_active: usize, duration: usize) -> Self {
        Self::desk_with(vec![Self::unit_phase(n_active, duration)])
    }

    /// Builds the scenario; random sign patterns draw from a stream of `seed`.
    pub fn scenario(&self) -> Result<Scenario> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        let phases = self
            .phases
            .iter()
            .map(|p| {
                Ok(SystemPhase {
                    w0: make_sparse_system(self.n_taps, p.n_active, p.magnitude, p.sign_pattern, &mut rng)?,
                    duration: p.duration,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sc = Scenario {
            n_taps: self.n_taps,
            sigma_x2: self.sigma_x2,
            sigma_v2: self.sigma_v2,
            phases,
            ensemble: self.ensemble,
            seed: self.seed,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// TOML text that [`parse_config`] reads back to an equal config.
    pub fn render(&self) -> String {
        let raw = RenderConfig {
            n_taps: self.n_taps as i64,
            sigma_x2: self.sigma_x2,
            sigma_v2: self.sigma_v2,
            ensemble: self.ensemble as i64,
            seed: self.seed as i64,
            sweep_grid: self.sweep_grid.clone(),
            phases: self
                .phases
                .iter()
                .map(|p| RenderPhase {
                    n_active: p.n_active as i64,
                    magnitude: p.magnitude,
                    duration: p.duration as i64,
                    sign_pattern: p.sign_pattern,
                })
                .collect(),
            algorithms: self
                .algorithms
                .iter()
                .map(|a| RenderAlgorithm { name: a.algorithm.name().to_string(), mu: a.mu, rho: a.rho })
                .collect(),
        };
        toml::to_string(&raw).expect("plain data always serializes")
    }
}

#[derive(Serialize)]
struct RenderConfig {
    n_taps: i64,
    sigma_x2: f64,
    sigma_v2: f64,
    ensemble: i64,
    seed: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep_grid: Option<Vec<f64>>,
    phases: Vec<RenderPhase>,
    algorithms: Vec<RenderAlgorithm>,
}

#[derive(Serialize)]
struct RenderPhase {
    n_active: i64,
    magnitude: f64,
    duration: i64,
    sign_pattern: SignPattern,
}

#[derive(Serialize)]
struct RenderAlgorithm {
    name: String,
    mu: f64,
    rho: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n_taps: Spanned<i64>,
    sigma_x2: Option<Spanned<f64>>,
    sigma_v2: Option<Spanned<f64>>,
    ensemble: Option<Spanned<i64>>,
    seed: Option<Spanned<i64>>,
    sweep_grid: Option<Spanned<Vec<f64>>>,
    phases: Spanned<Vec<RawPhase>>,
    algorithms: Spanned<Vec<RawAlgorithm>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    n_active: Spanned<i64>,
    duration: Spanned<i64>,
    magnitude: Option<Spanned<f64>>,
    sign_pattern: Option<Spanned<SignPattern>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithm {
    name: Spanned<String>,
    mu: Spanned<f64>,
    rho: Option<Spanned<f64>>,
}

struct LineIndex<'a>(&'a str);

impl LineIndex<'_> {
    fn line(&self, offset: usize) -> usize {
        self.0.as_bytes()[..offset.min(self.0.len())].iter().filter(|&&b| b == b'\n').count() + 1
    }

    fn err<T>(&self, value: &Spanned<T>, message: impl Into<String>) -> Error {
        Error::Parse { line: self.line(value.span().start), message: message.into() }
    }
}

fn non_negative_int(lines: &LineIndex<'_>, v: &Spanned<i64>, what: &str, min: i64) -> Result<usize> {
    if *v.get_ref() < min {
        return Err(lines.err(v, format!("{what} must be >= {min}, got {}", v.get_ref())));
    }
    Ok(*v.get_ref() as usize)
}

/// Parses and validates a config; errors carry the offending line.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let lines = LineIndex(text);
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map(|s| lines.line(s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;

    let n_taps = non_negative_int(&lines, &raw.n_taps, "n_taps", 1)?;
    let sigma_x2 = match &raw.sigma_x2 {
        Some(v) if !(*v.get_ref() > 0.0 && v.get_ref().is_finite()) => {
            return Err(lines.err(v, format!("sigma_x2 must be > 0, got {}", v.get_ref())))
        }
        Some(v) => *v.get_ref(),
        None => experiments::DESK_SIGMA_X2,
    };
    let sigma_v2 = match &raw.sigma_v2 {
        Some(v) if !(*v.get_ref() >= 0.0 && v.get_ref().is_finite()) => {
            return Err(lines.err(v, format!("sigma_v2 must be >= 0, got {}", v.get_ref())))
        }
        Some(v) => *v.get_ref(),
        None => experiments::DESK_SIGMA_V2,
    };
    let ensemble = match &raw.ensemble {
        Some(v) => non_negative_int(&lines, v, "ensemble", 1)?,
        None => experiments::DESK_ENSEMBLE,
    };
    let seed = match &raw.seed {
        Some(v) => non_negative_int(&lines, v, "seed", 0)? as u64,
        None => experiments::DESK_SEED,
    };
    let sweep_grid = match &raw.sweep_grid {
        Some(v) => {
            let grid = v.get_ref();
            if grid.is_empty() || grid.iter().any(|s| !(*s >= 0.0 && *s <= 1.0)) {
                return Err(lines.err(v, "sweep_grid entries must lie in [0, 1]"));
            }
            if grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(lines.err(v, "sweep_grid must be strictly increasing"));
            }
            Some(grid.clone())
        }
        None => None,
    };

    if raw.phases.get_ref().is_empty() {
        return Err(lines.err(&raw.phases, "at least one phase is required"));
    }
    let mut phases = Vec::new();
    for p in raw.phases.get_ref() {
        let n_active = non_negative_int(&lines, &p.n_active, "n_active", 0)?;
        if n_active > n_taps {
            return Err(lines.err(&p.n_active, format!("n_active {n_active} exceeds n_taps {n_taps}")));
        }
        let duration = non_negative_int(&lines, &p.duration, "duration", 1)?;
        let magnitude = match &p.magnitude {
            Some(m) if !(*m.get_ref() > 0.0 && m.get_ref().is_finite()) => {
                return Err(lines.err(m, format!("magnitude must be > 0, got {}", m.get_ref())))
            }
            Some(m) => *m.get_ref(),
            None => 1.0,
        };
        let sign_pattern = p.sign_pattern.as_ref().map(|s| *s.get_ref()).unwrap_or_default();
        phases.push(PhaseSpec { n_active, magnitude, duration, sign_pattern });
    }

    if raw.algorithms.get_ref().is_empty() {
        return Err(lines.err(&raw.algorithms, "at least one algorithm is required"));
    }
    let mut algorithms: Vec<FilterParams> = Vec::new();
    for a in raw.algorithms.get_ref() {
        let algorithm: Algorithm = a.name.get_ref().parse().map_err(|e: Error| lines.err(&a.name, e.to_string()))?;
        if algorithms.iter().any(|p| p.algorithm == algorithm) {
            return Err(lines.err(&a.name, format!("duplicate algorithm '{algorithm}'")));
        }
        let rho = a.rho.as_ref().map(|r| *r.get_ref()).unwrap_or(0.0);
        let params = FilterParams { mu: *a.mu.get_ref(), rho, algorithm };
        if let Err(e) = params.validate() {
            let span_of = if *a.mu.get_ref() > 0.0 { a.rho.as_ref().map(|r| r.span()) } else { Some(a.mu.span()) };
            let line = span_of.map(|s| lines.line(s.start)).unwrap_or_else(|| lines.line(a.name.span().start));
            return Err(Error::Parse { line, message: e.to_string() });
        }
        algorithms.push(params);
    }

    Ok(ExperimentConfig { n_taps, sigma_x2, sigma_v2, ensemble, seed, phases, algorithms, sweep_grid })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn db(v: f64) -> Option<f64> {
    (v > 0.0).then(|| 10.0 * v.log10())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

const CURVE_ORDER: [Algorithm; 3] = [Algorithm::Lms, Algorithm::ZaLms, Algorithm::GcLms];

/// Learning-curve table; values print in shortest round-trip form and the
/// dB column is left empty where the MSE is exactly zero.
pub fn learning_curve_csv(stats: &EnsembleStats) -> Result<String> {
    if stats.algorithms.is_empty() || stats.iterations == 0 {
        return Err(Error::arg("no learning curve to write"));
    }
    let columns: Vec<Option<&[f64]>> = CURVE_ORDER.iter().map(|&a| stats.get(a).map(|s| s.mse.as_slice())).collect();
    let mut out = String::from("iter,mse_lms,mse_zalms,mse_gclms,mse_lms_db,mse_zalms_db,mse_gclms_db\n");
    for n in 0..stats.iterations {
        let vals: Vec<Option<f64>> = columns.iter().map(|c| c.map(|m| m[n])).collect();
        let _ = writeln!(
            out,
            "{n},{},{},{},{},{},{}",
            fmt_opt(vals[0]),
            fmt_opt(vals[1]),
            fmt_opt(vals[2]),
            fmt_opt(vals[0].and_then(db)),
            fmt_opt(vals[1].and_then(db)),
            fmt_opt(vals[2].and_then(db)),
        );
    }
    Ok(out)
}

pub fn emit_learning_curve_csv(stats: &EnsembleStats, path: &Path) -> Result<()> {
    write_file(path, &learning_curve_csv(stats)?)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::arg("no sweep rows to write"));
    }
    let mut out = String::from("sparsity,emse_lms_meas,emse_za_meas,emse_gc_meas,emse_za_pred,emse_gc_pred,beta2_sign\n");
    for r in rows {
        let m = |a| r.measured.get(&a).map(|e| e.emse);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.sparsity,
            fmt_opt(m(Algorithm::Lms)),
            fmt_opt(m(Algorithm::ZaLms)),
            fmt_opt(m(Algorithm::GcLms)),
            fmt_opt(r.predicted_za),
            fmt_opt(r.predicted_gc),
            r.beta2_sign().map(|s| s.to_string()).unwrap_or_default(),
        );
    }
    Ok(out)
}

pub fn emit_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_file(path, &sweep_csv(rows)?)
}

pub fn report_csv(report: &TheoryReport) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::arg("no report rows to write"));
    }
    let mut out = String::from(
        "algorithm,sparsity,mu,rho,emse_meas,emse_meas_se,emse_pred,rel_gap,attractor_energy,l1_excess,l1_excess_sign,rho_window_upper,rho_in_window,corollary2_lhs,corollary2_rhs,corollary2_holds,flag\n",
    );
    for r in &report.rows {
        let c2 = match (r.algorithm, report.corollary2) {
            (Algorithm::GcLms, Some(c)) => format!("{},{},{}", c.lhs, c.rhs, c.holds),
            _ => ",,".to_string(),
        };
        let sign = r.l1_excess.map(|v| if v > 0.0 { "1" } else if v < 0.0 { "-1" } else { "0" }).unwrap_or("");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.algorithm,
            report.sparsity,
            r.mu,
            r.rho,
            r.measured,
            r.measured_std_err,
            fmt_opt(r.predicted),
            fmt_opt(r.relative_gap),
            fmt_opt(r.attractor_energy),
            fmt_opt(r.l1_excess),
            sign,
            fmt_opt(r.rho_window_upper),
            r.rho_in_window.map(|b| b.to_string()).unwrap_or_default(),
            c2,
            r.flag.as_deref().unwrap_or("").replace(',', ";"),
        );
    }
    Ok(out)
}

pub fn emit_report_csv(report: &TheoryReport, path: &Path) -> Result<()> {
    write_file(path, &report_csv(report)?)
}

pub fn emit_report_json(report: &TheoryReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::arg(e.to_string()))?;
    write_file(path, &(json + "\n"))
}

/// One labelled series for [`svg_plot`].
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

fn color_of(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Lms => "#1f4fd1",
        Algorithm::ZaLms => "#d1261f",
        Algorithm::GcLms => "#1f9e3a",
    }
}

pub fn learning_curves(stats: &EnsembleStats) -> Vec<Curve> {
    CURVE_ORDER
        .iter()
        .filter_map(|&a| stats.get(a))
        .map(|s| Curve {
            label: s.params.algorithm.to_string(),
            color: color_of(s.params.algorithm),
            points: s.mse.iter().enumerate().map(|(n, m)| (n as f64, *m)).collect(),
        })
        .collect()
}

pub fn sweep_curves(rows: &[SweepRow]) -> Vec<Curve> {
    CURVE_ORDER
        .iter()
        .filter(|a| rows.iter().any(|r| r.measured.contains_key(a)))
        .map(|&a| Curve {
            label: a.to_string(),
            color: color_of(a),
            points: rows.iter().filter_map(|r| r.measured.get(&a).map(|e| (r.sparsity, e.emse))).collect(),
        })
        .collect()
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 480.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

/// Self-contained SVG line plot with a log-scaled y axis. Non-positive y
/// values are skipped.
pub fn svg_plot(curves: &[Curve], title: &str, x_label: &str, y_label: &str) -> Result<String> {
    let pts: Vec<(f64, f64)> =
        curves.iter().flat_map(|c| c.points.iter().copied()).filter(|(_, y)| *y > 0.0 && y.is_finite()).collect();
    if pts.is_empty() {
        return Err(Error::arg("nothing to plot"));
    }
    let (mut x0, mut x1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), (x, _)| (a.min(*x), b.max(*x)));
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let (ly0, ly1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), (_, y)| (a.min(y.log10()), b.max(y.log10())));
    let (d0, d1) = (ly0.floor(), if ly1.ceil() > ly0.floor() { ly1.ceil() } else { ly0.floor() + 1.0 });
    let pw = SVG_W - MARGIN_L - MARGIN_R;
    let ph = SVG_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (d1 - y.log10()) / (d1 - d0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, MARGIN_L + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let mut decade = d0;
    while decade <= d1 + 1e-9 {
        let y = sy(10f64.powf(decade));
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{decade}</text>"##,
            MARGIN_L + pw,
            MARGIN_L - 6.0,
            y + 4.0
        );
        decade += 1.0;
    }
    for k in 0..=4 {
        let xv = x0 + (x1 - x0) * k as f64 / 4.0;
        let x = sx(xv);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_T + ph + 18.0,
            trim_num(xv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        SVG_H - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let coords: Vec<String> = c
            .points
            .iter()
            .filter(|(_, y)| *y > 0.0 && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            c.color,
            coords.join(" ")
        );
        let ly = MARGIN_T + 16.0 + 20.0 * i as f64;
        let lx = MARGIN_L + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            c.color,
            lx + 30.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn trim_num(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_svg(curves: &[Curve], title: &str, x_label: &str, y_label: &str, path: &Path) -> Result<()> {
    write_file(path, &svg_plot(curves, title, x_label, y_label)?)
}

#[derive(Debug, Parser)]
#[command(name = "gclms", version, about = "Sparse-system identification with LMS, ZA-LMS and GC-LMS")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learning curves for the three-phase scenario or a custom config.
    Run(CommonArgs),
    /// Steady-state EMSE as a function of system sparsity.
    Sweep(CommonArgs),
    /// Measured versus predicted steady-state EMSE.
    Report(CommonArgs),
    /// Parse and validate a config without running it.
    Validate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub plots: bool,
}

/// Resolved inputs of one CLI invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub config_path: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    pub output_dir: PathBuf,
    pub emit_plots: bool,
    pub seed_override: Option<u64>,
}

impl RunConfig {
    /// Reads `--config` (or takes `default`) and applies `--seed`.
    pub fn resolve(args: &CommonArgs, default: ExperimentConfig) -> Result<Self> {
        let mut experiment = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                parse_config(&text)?
            }
            None => default,
        };
        if let Some(seed) = args.seed {
            experiment.seed = seed;
        }
        Ok(RunConfig {
            config_path: args.config.clone(),
            experiment,
            output_dir: args.out.clone(),
            emit_plots: args.plots,
            seed_override: args.seed,
        })
    }

    fn warn_unstable(&self) {
        for p in &self.experiment.algorithms {
            if let Some(w) = p.stability_warning(self.experiment.sigma_x2) {
                eprintln!("warning: {w}");
            }
        }
    }
}

/// Executes a parsed command, returning the files written.
pub fn execute(command: &Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::Run(args) => cmd_run(&RunConfig::resolve(args, ExperimentConfig::fig1())?),
        Command::Sweep(args) => cmd_sweep(&RunConfig::resolve(args, ExperimentConfig::desk(1, 5000))?),
        Command::Report(args) => cmd_report(&RunConfig::resolve(args, ExperimentConfig::desk(1, 5000))?),
        Command::Validate(args) => {
            let Some(path) = &args.config else {
                return Err(Error::arg("validate needs --config"));
            };
            let cfg = RunConfig::resolve(args, ExperimentConfig::fig1())?;
            let sc = cfg.experiment.scenario()?;
            cfg.warn_unstable();
            println!(
                "{}: ok ({} taps, {} phases, {} iterations, {} algorithms, ensemble {})",
                path.display(),
                sc.n_taps,
                sc.phases.len(),
                sc.total_duration(),
                cfg.experiment.algorithms.len(),
                sc.ensemble
            );
            Ok(vec![])
        }
    }
}

fn cmd_run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.warn_unstable();
    let sc = cfg.experiment.scenario()?;
    let stats = run_ensemble(&sc, &cfg.experiment.algorithms, EnsembleOptions { collect_samples: false, ..Default::default() })?;
    let mut written = vec![cfg.output_dir.join("learning_curve.csv")];
    emit_learning_curve_csv(&stats, &written[0])?;
    for k in 0..sc.phases.len() {
        let w = Window::steady_of_phase(&sc, k);
        let cells: Vec<String> = stats
            .algorithms
            .iter()
            .map(|a| {
                let mse = a.run_window_mse(w).iter().sum::<f64>() / stats.runs() as f64;
                format!("{}={:.4e}", a.params.algorithm, mse)
            })
            .collect();
        println!("phase {} (sparsity {:.4}) steady MSE: {}", k + 1, sc.phases[k].w0.sparsity(), cells.join("  "));
    }
    if cfg.emit_plots {
        let path = cfg.output_dir.join("learning_curve.svg");
        emit_svg(&learning_curves(&stats), "Ensemble MSE", "iteration", "MSE", &path)?;
        written.push(path);
    }
    Ok(written)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.warn_unstable();
    let base = cfg.experiment.scenario()?;
    let grid = cfg.experiment.sweep_grid.clone().unwrap_or_else(default_sweep_grid);
    let magnitude = cfg.experiment.phases.last().map(|p| p.magnitude).unwrap_or(1.0);
    let sign_pattern = cfg.experiment.phases.last().map(|p| p.sign_pattern).unwrap_or_default();
    let rows = sparsity_sweep(&base, &grid, &cfg.experiment.algorithms, SystemShape { magnitude, sign_pattern })?;
    let mut written = vec![cfg.output_dir.join("sweep.csv")];
    emit_sweep_csv(&rows, &written[0])?;
    for r in &rows {
        let cells: Vec<String> = r.measured.iter().map(|(a, e)| format!("{a}={:.4e}", e.emse)).collect();
        println!("sparsity {:.4}: {}", r.sparsity, cells.join("  "));
    }
    if cfg.emit_plots {
        let path = cfg.output_dir.join("sweep.svg");
        emit_svg(&sweep_curves(&rows), "Steady-state EMSE vs sparsity", "sparsity", "EMSE", &path)?;
        written.push(path);
    }
    Ok(written)
}

fn cmd_report(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.warn_unstable();
    let sc = cfg.experiment.scenario()?;
    let stats = run_ensemble(&sc, &cfg.experiment.algorithms, EnsembleOptions::default())?;
    let report = theory_vs_sim_report(&stats, &sc)?;
    let csv = cfg.output_dir.join("report.csv");
    let json = cfg.output_dir.join("report.json");
    emit_report_csv(&report, &csv)?;
    emit_report_json(&report, &json)?;
    for r in &report.rows {
        println!(
            "{:7} measured {:.4e} ± {:.1e}  predicted {}  gap {}",
            r.algorithm.to_string(),
            r.measured,
            r.measured_std_err,
            r.predicted.map(|p| format!("{p:.4e}")).unwrap_or_else(|| "-".into()),
            r.relative_gap.map(|g| format!("{:+.1}%", 100.0 * g)).unwrap_or_else(|| "-".into()),
        );
    }
    if let Some(c) = report.corollary2 {
        println!("corollary check: sum|s| = {:.4} vs sum|b| = {:.4} -> {}", c.lhs, c.rhs, c.holds);
    }
    Ok(vec![csv, json])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{desk_algorithms, desk_scenario, EmseEstimate};
    use std::collections::BTreeMap;

    const MINIMAL: &str = "n_taps = 4\n\n[[phases]]\nn_active = 1\nduration = 200\n\n[[algorithms]]\nname = \"lms\"\nmu = 0.05\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.n_taps, 4);
        assert_eq!(c.sigma_x2, 1.0);
        assert_eq!(c.sigma_v2, 1e-3);
        assert_eq!(c.ensemble, 200);
        assert_eq!(c.phases[0].magnitude, 1.0);
        assert_eq!(c.phases[0].sign_pattern, SignPattern::Alternating);
        assert_eq!(c.algorithms[0].rho, 0.0);
        let sc = c.scenario().unwrap();
        assert_eq!(sc.phases[0].w0.0, vec![1.0, 0.0, 0.0, 0.0]);
    }

    fn line_of(err: Error) -> usize {
        match err {
            Error::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn negative_step_size_cites_its_line() {
        let text = MINIMAL.replace("mu = 0.05", "mu = -0.1");
        let err = parse_config(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mu"), "{msg}");
        assert_eq!(line_of(err), 9);
    }

    #[test]
    fn duplicate_algorithms_rejected() {
        let text = format!("{MINIMAL}\n[[algorithms]]\nname = \"LMS\"\nmu = 0.01\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        assert_eq!(line_of(err), 12);
    }

    #[test]
    fn unknown_and_missing_keys_rejected() {
        let err = parse_config(&format!("bogus = 1\n{MINIMAL}")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = parse_config("sigma_x2 = 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = parse_config(&MINIMAL.replace("n_active = 1", "n_active = 9")).unwrap_err();
        assert_eq!(line_of(err), 4);
        let err = parse_config(&MINIMAL.replace("n_taps = 4", "n_taps = \"four\"")).unwrap_err();
        assert_eq!(line_of(err), 1);
    }

    #[test]
    fn render_round_trips() {
        let mut c = ExperimentConfig::fig1();
        c.sweep_grid = Some(vec![0.0, 0.25, 0.9375]);
        c.phases[1].sign_pattern = SignPattern::Random;
        c.sigma_v2 = 1.0 / 3.0;
        assert_eq!(parse_config(&c.render()).unwrap(), c);
    }

    fn tiny_stats() -> EnsembleStats {
        let mut sc = desk_scenario(1, 20).unwrap();
        sc.ensemble = 2;
        run_ensemble(&sc, &desk_algorithms(5e-4), EnsembleOptions { collect_samples: false, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn learning_curve_layout() {
        let stats = tiny_stats();
        let csv = learning_curve_csv(&stats).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 21);
        assert_eq!(lines[0], "iter,mse_lms,mse_zalms,mse_gclms,mse_lms_db,mse_zalms_db,mse_gclms_db");
        let cells: Vec<&str> = lines[5].split(',').collect();
        assert_eq!(cells.len(), 7);
        let v: f64 = cells[1].parse().unwrap();
        assert_eq!(v, stats.algorithms[0].mse[4]);
    }

    #[test]
    fn db_column_and_missing_algorithms() {
        let mut stats = tiny_stats();
        stats.algorithms.truncate(1);
        stats.algorithms[0].mse[0] = 0.001;
        stats.algorithms[0].mse[1] = 0.0;
        let csv = learning_curve_csv(&stats).unwrap();
        let row1: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row1[1], "0.001");
        assert!((row1[4].parse::<f64>().unwrap() + 30.0).abs() < 1e-12);
        assert_eq!(row1[2], "");
        assert_eq!(row1[6], "");
        let row2: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(row2[1], "0");
        assert_eq!(row2[4], "");
    }

    fn fake_rows(k: usize) -> Vec<SweepRow> {
        (0..k)
            .map(|i| {
                let mut measured = BTreeMap::new();
                for a in Algorithm::ALL {
                    measured.insert(a, EmseEstimate { emse: 1e-4 * (i + 1) as f64, std_err: 1e-6, converged: true });
                }
                SweepRow {
                    sparsity: i as f64 / (k - 1).max(1) as f64,
                    n_active: k - i,
                    measured,
                    predicted_za: Some(2e-4),
                    predicted_gc: None,
                    alpha2: Some(0.1),
                    beta2: Some(-0.01),
                }
            })
            .collect()
    }

    #[test]
    fn sweep_csv_layout() {
        let csv = sweep_csv(&fake_rows(11)).unwrap();
        assert_eq!(csv.lines().count(), 12);
        assert!(csv.starts_with("sparsity,emse_lms_meas,emse_za_meas,emse_gc_meas,emse_za_pred,emse_gc_pred,beta2_sign\n"));
        let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
        assert_eq!(last[5], "");
        assert_eq!(last[6], "-1");
    }

    #[test]
    fn empty_inputs_never_write_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        assert!(emit_sweep_csv(&[], &path).is_err());
        assert!(!path.exists());
        assert!(emit_svg(&[], "t", "x", "y", &dir.path().join("p.svg")).is_err());
    }

    #[test]
    fn identical_columns_give_identical_polylines() {
        let rows = fake_rows(5);
        let svg = svg_plot(&sweep_curves(&rows), "t", "x", "y").unwrap();
        let polys: Vec<&str> = svg
            .lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| l.split("points=").nth(1).unwrap())
            .collect();
        assert_eq!(polys.len(), 3);
        assert!(polys.iter().all(|p| *p == polys[0]));
        assert!(svg.starts_with("<svg xmlns"));
        assert!(!svg.contains("href"));
    }

    #[test]
    fn full_precision_values() {
        let mut stats = tiny_stats();
        stats.algorithms[0].mse[0] = 1.0 / 3.0;
        let csv = learning_curve_csv(&stats).unwrap();
        let v: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 1.0 / 3.0);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Parse { line: 1, message: String::new() }), EXIT_PARSE);
        assert_eq!(exit_code(&Error::Diverged { iteration: 3 }), EXIT_DIVERGED);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), EXIT_IO);
    }
}
