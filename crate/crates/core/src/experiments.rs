//! Monte Carlo ensembles over a [`Scenario`], the sparsity sweep and the
//! theory-versus-simulation report.
//!
//! Within one run index every algorithm consumes the same realization
//! (common random numbers). Runs execute in parallel but are merged in run
//! order, so results do not depend on the thread schedule.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::{run_filter_observed, Algorithm, FilterParams, RunOptions};
use crate::signals::{make_sparse_system, Scenario, SignPattern, Support, SystemPhase, WeightVector};
use crate::stats::{slope_t_test, MeanSe};
use crate::theory::{
    self, b_vector, corollary2_check, estimate_gc_moments, estimate_za_moments, gc_emse, lms_emse, s_vector,
    za_emse, Corollary2Report, SpectrumModel, SteadyStateSamples,
};

/// Step size of the desk-scale configuration.
pub const DESK_MU: f64 = 0.05;
/// Attractor strength of the desk-scale configuration.
pub const DESK_RHO: f64 = 5e-4;
pub const DESK_TAPS: usize = 16;
pub const DESK_SIGMA_X2: f64 = 1.0;
pub const DESK_SIGMA_V2: f64 = 1e-3;
pub const DESK_ENSEMBLE: usize = 200;
pub const DESK_SEED: u64 = 1;
/// Fraction of a phase, counted from its end, treated as steady state.
pub const STEADY_FRACTION: f64 = 0.2;
/// Minimum steady-state window length in iterations.
pub const MIN_WINDOW: usize = 100;
/// Length of the tail used for the zero-slope convergence test.
pub const CONVERGENCE_TAIL: usize = 200;

/// The three algorithms at the desk step size with attractor strength `rho`.
pub fn desk_algorithms(rho: f64) -> Vec<FilterParams> {
    Algorithm::ALL
        .iter()
        .map(|&algorithm| FilterParams { mu: DESK_MU, rho: if algorithm == Algorithm::Lms { 0.0 } else { rho }, algorithm })
        .collect()
}

/// Desk-scale scenario with one static system of `n_active` unit taps.
pub fn desk_scenario(n_active: usize, duration: usize) -> Result<Scenario> {
    let w0 = make_sparse_system(DESK_TAPS, n_active, 1.0, SignPattern::Alternating, &mut ChaCha20Rng::seed_from_u64(0))?;
    Ok(Scenario {
        n_taps: DESK_TAPS,
        sigma_x2: DESK_SIGMA_X2,
        sigma_v2: DESK_SIGMA_V2,
        phases: vec![SystemPhase { w0, duration }],
        ensemble: DESK_ENSEMBLE,
        seed: DESK_SEED,
    })
}

/// Sparse, semi-sparse and fully dense systems for 1000 iterations each.
pub fn phase_scenario_fig1() -> Scenario {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let phases = [1usize, 8, 16]
        .iter()
        .map(|&n_active| SystemPhase {
            w0: make_sparse_system(DESK_TAPS, n_active, 1.0, SignPattern::Alternating, &mut rng)
                .expect("static desk layout is valid"),
            duration: 1000,
        })
        .collect();
    Scenario {
        n_taps: DESK_TAPS,
        sigma_x2: DESK_SIGMA_X2,
        sigma_v2: DESK_SIGMA_V2,
        phases,
        ensemble: DESK_ENSEMBLE,
        seed: DESK_SEED,
    }
}

/// Half-open iteration range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, n: usize) -> bool {
        n >= self.start && n < self.end
    }

    /// Last `STEADY_FRACTION` of phase `k`.
    pub fn steady_of_phase(scenario: &Scenario, k: usize) -> Window {
        let (start, end) = scenario.phase_bounds(k);
        let len = ((end - start) as f64 * STEADY_FRACTION).round() as usize;
        Window { start: end - len.max(1), end }
    }

    pub fn steady_of_final_phase(scenario: &Scenario) -> Window {
        Window::steady_of_phase(scenario, scenario.phases.len() - 1)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EnsembleOptions {
    /// Where to collect steady-state samples; `None` means the final-phase window.
    pub sample_window: Option<Window>,
    pub collect_samples: bool,
    /// Stride of ensemble-mean weight snapshots.
    pub snapshot_stride: Option<usize>,
    /// Drop diverged runs instead of failing the ensemble.
    pub exclude_divergent: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions { sample_window: None, collect_samples: true, snapshot_stride: None, exclude_divergent: false }
    }
}

/// Everything recorded for one algorithm over the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmStats {
    pub params: FilterParams,
    /// Ensemble-mean squared error per iteration.
    pub mse: Vec<f64>,
    /// `e²(n)` per run (outer index follows `EnsembleStats::run_indices`).
    pub run_sq_err: Vec<Vec<f64>>,
    /// Ensemble-mean weights at the snapshot stride.
    pub mean_snapshots: Vec<(usize, WeightVector)>,
    pub samples: Option<SteadyStateSamples>,
    /// Realization digest per run, for common-random-number checks.
    pub digests: Vec<u64>,
}

impl AlgorithmStats {
    /// Per-run mean of `e²` over `window`.
    pub fn run_window_mse(&self, window: Window) -> Vec<f64> {
        self.run_sq_err
            .iter()
            .map(|r| r[window.start..window.end].iter().sum::<f64>() / window.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub algorithms: Vec<AlgorithmStats>,
    pub sample_window: Window,
    /// Runs that contributed, in ascending order.
    pub run_indices: Vec<usize>,
    /// `(run, iteration)` of excluded divergent runs.
    pub diverged: Vec<(usize, usize)>,
    pub iterations: usize,
}

impl EnsembleStats {
    pub fn runs(&self) -> usize {
        self.run_indices.len()
    }

    pub fn get(&self, algorithm: Algorithm) -> Option<&AlgorithmStats> {
        self.algorithms.iter().find(|a| a.params.algorithm == algorithm)
    }
}

struct RunOutput {
    sq_err: Vec<f64>,
    snapshots: Vec<(usize, WeightVector)>,
    samples: Option<SteadyStateSamples>,
    digest: u64,
}

fn run_one(
    scenario: &Scenario,
    run: usize,
    params: &[FilterParams],
    window: Window,
    opts: &EnsembleOptions,
) -> Result<Vec<RunOutput>> {
    let real = scenario.realize(run)?;
    let digest = real.digest();
    params
        .iter()
        .map(|p| {
            let mut samples = opts.collect_samples.then(|| SteadyStateSamples::new(scenario.n_taps));
            let tr = run_filter_observed(
                p,
                &real,
                WeightVector::zeros(scenario.n_taps),
                RunOptions { snapshot_stride: opts.snapshot_stride },
                |n, state, rec| {
                    if let Some(s) = samples.as_mut() {
                        if window.contains(n) {
                            s.push(run, &state.w, rec.gate.as_ref().map(|g| g.0.as_slice()), rec.e);
                        }
                    }
                },
            )?;
            Ok(RunOutput { sq_err: tr.sq_err, snapshots: tr.snapshots, samples, digest })
        })
        .collect()
}

/// Runs every algorithm on `scenario.ensemble` shared realizations.
pub fn run_ensemble(scenario: &Scenario, params: &[FilterParams], opts: EnsembleOptions) -> Result<EnsembleStats> {
    scenario.validate()?;
    if params.is_empty() {
        return Err(Error::arg("at least one algorithm is required"));
    }
    for p in params {
        p.validate()?;
    }
    let window = opts.sample_window.unwrap_or_else(|| Window::steady_of_final_phase(scenario));
    let iterations = scenario.total_duration();
    if window.end > iterations || window.is_empty() {
        return Err(Error::arg(format!("sample window {window:?} outside 0..{iterations}")));
    }

    let outputs: Vec<Result<Vec<RunOutput>>> =
        (0..scenario.ensemble).into_par_iter().map(|run| run_one(scenario, run, params, window, &opts)).collect();

    let mut run_indices = Vec::new();
    let mut diverged = Vec::new();
    let mut kept = Vec::new();
    for (run, out) in outputs.into_iter().enumerate() {
        match out {
            Ok(o) => {
                run_indices.push(run);
                kept.push(o);
            }
            Err(Error::Diverged { iteration }) if opts.exclude_divergent => diverged.push((run, iteration)),
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Err(Error::arg("every run diverged"));
    }

    let n_runs = kept.len() as f64;
    let mut algorithms = Vec::with_capacity(params.len());
    for (a, p) in params.iter().enumerate() {
        let mut mse = vec![0.0; iterations];
        let mut run_sq_err = Vec::with_capacity(kept.len());
        let mut digests = Vec::with_capacity(kept.len());
        let mut samples = opts.collect_samples.then(|| SteadyStateSamples::new(scenario.n_taps));
        let mut snap_sums: Vec<(usize, Vec<f64>)> = Vec::new();
        for run_out in kept.iter_mut() {
            let o = &mut run_out[a];
            for (m, e2) in mse.iter_mut().zip(&o.sq_err) {
                *m += e2;
            }
            if snap_sums.is_empty() {
                snap_sums = o.snapshots.iter().map(|(n, _)| (*n, vec![0.0; scenario.n_taps])).collect();
            }
            for ((_, acc), (_, w)) in snap_sums.iter_mut().zip(&o.snapshots) {
                for (s, wi) in acc.iter_mut().zip(w.iter()) {
                    *s += wi;
                }
            }
            if let (Some(all), Some(mine)) = (samples.as_mut(), o.samples.take()) {
                all.extend(&mine);
            }
            digests.push(o.digest);
            run_sq_err.push(std::mem::take(&mut o.sq_err));
        }
        mse.iter_mut().for_each(|m| *m /= n_runs);
        let mean_snapshots =
            snap_sums.into_iter().map(|(n, s)| (n, WeightVector(s.into_iter().map(|v| v / n_runs).collect()))).collect();
        algorithms.push(AlgorithmStats { params: *p, mse, run_sq_err, mean_snapshots, samples, digests });
    }

    Ok(EnsembleStats { algorithms, sample_window: window, run_indices, diverged, iterations })
}

/// Measured steady-state excess MSE with its standard error across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmseEstimate {
    pub emse: f64,
    pub std_err: f64,
    /// Zero-slope t-test on the ensemble MSE over the window tail did not reject.
    pub converged: bool,
}

/// `mean(e²) - σv²` over `window`, runs treated as independent replicates.
pub fn steady_state_emse(stats: &AlgorithmStats, window: Window, sigma_v2: f64) -> Result<EmseEstimate> {
    if window.len() < MIN_WINDOW {
        return Err(Error::arg(format!("steady-state window of {} iterations is shorter than {MIN_WINDOW}", window.len())));
    }
    if window.end > stats.mse.len() {
        return Err(Error::arg("window extends past the recorded iterations"));
    }
    let per_run = MeanSe::from_samples(&stats.run_window_mse(window));
    let tail_start = window.end.saturating_sub(CONVERGENCE_TAIL).max(window.start);
    let (_, _, rejects) = slope_t_test(&stats.mse[tail_start..window.end], 0.05);
    Ok(EmseEstimate { emse: per_run.mean - sigma_v2, std_err: per_run.std_err, converged: !rejects })
}

/// Paired per-run difference `MSE_a - MSE_b` over `window`.
pub fn paired_mse_difference(a: &AlgorithmStats, b: &AlgorithmStats, window: Window) -> MeanSe {
    let da = a.run_window_mse(window);
    let db = b.run_window_mse(window);
    let diff: Vec<f64> = da.iter().zip(&db).map(|(x, y)| x - y).collect();
    MeanSe::from_samples(&diff)
}

fn samples_of(stats: &AlgorithmStats) -> Result<&SteadyStateSamples> {
    stats
        .samples
        .as_ref()
        .ok_or_else(|| Error::arg(format!("{} has no steady-state samples", stats.params.algorithm)))
}

/// Per-tap residual `w̄ - [w0 - (ρ/μ) Λ⁻¹ E[D sgn w]]` with run-level standard
/// errors; both the weights and the attractor direction come from each run.
pub fn mean_limit_residuals(stats: &AlgorithmStats, spectrum: &SpectrumModel, w0: &[f64]) -> Result<Vec<MeanSe>> {
    let samples = samples_of(stats)?;
    let p = stats.params;
    spectrum.check_step(p.mu)?;
    let gate_use = match p.algorithm {
        Algorithm::GcLms => theory::GateUse::Recorded,
        _ => theory::GateUse::Identity,
    };
    let rho = if p.algorithm == Algorithm::Lms { 0.0 } else { p.rho };
    let n = w0.len();
    let lam = spectrum.lambdas().to_vec();
    let per_run = samples.per_run_means(n, |s, out| {
        for i in 0..n {
            let d = match gate_use {
                theory::GateUse::Recorded => s.gate[i],
                theory::GateUse::Identity => 1.0,
            };
            let v = d * s.w[i].signum() * f64::from(s.w[i] != 0.0);
            out[i] = s.w[i] - w0[i] + rho / p.mu * v / lam[i];
        }
    });
    Ok((0..n).map(|i| MeanSe::from_samples(&per_run.iter().map(|r| r[i]).collect::<Vec<_>>())).collect())
}

/// Run-level margin `Σ_NZ |b_i| - Σ_NZ |s_i|` from matched ZA-LMS and GC-LMS
/// windows, linearised around the pooled signs.
pub fn corollary2_margin(
    gc: &AlgorithmStats,
    za: &AlgorithmStats,
    spectrum: &SpectrumModel,
    w0: &[f64],
) -> Result<(Corollary2Report, MeanSe)> {
    let gs = samples_of(gc)?;
    let zs = samples_of(za)?;
    let mu = gc.params.mu;
    let s = s_vector(spectrum, &estimate_gc_moments(gs, spectrum, mu, w0)?.mean_direction)?;
    let b = b_vector(spectrum, &estimate_za_moments(zs, spectrum, za.params.mu, w0)?.mean_direction)?;
    let nz = Support::of(w0).nonzero;
    let report = corollary2_check(&s, &b, &nz);
    let n = w0.len();
    let lam = spectrum.lambdas();
    let dir = |gated: bool| {
        move |r: &theory::SampleRef<'_>, out: &mut [f64]| {
            for i in 0..n {
                let d = if gated { r.gate[i] } else { 1.0 };
                out[i] = d * r.w[i].signum() * f64::from(r.w[i] != 0.0) / lam[i];
            }
        }
    };
    let s_runs = gs.per_run_means(n, dir(true));
    let b_runs = zs.per_run_means(n, dir(false));
    let margins: Vec<f64> = s_runs
        .iter()
        .zip(&b_runs)
        .map(|(sr, br)| nz.iter().map(|&i| b[i].signum() * br[i] - s[i].signum() * sr[i]).sum())
        .collect();
    Ok((report, MeanSe::from_samples(&margins)))
}

/// Predicted steady-state EMSE for one algorithm from its own window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub total: f64,
    pub attractor: Option<theory::EmsePrediction>,
    pub moments: Option<theory::AttractorMoments>,
}

/// Theory prediction for `stats` given the final-phase system `w0`.
pub fn predict(stats: &AlgorithmStats, scenario: &Scenario, w0: &[f64]) -> Result<Prediction> {
    let spectrum = SpectrumModel::white(scenario.n_taps, scenario.sigma_x2)?;
    let p = stats.params;
    let eta = theory::eta(p.mu, &spectrum)?;
    match p.algorithm {
        Algorithm::Lms => Ok(Prediction { total: lms_emse(eta, scenario.sigma_v2)?, attractor: None, moments: None }),
        Algorithm::ZaLms => {
            let m = estimate_za_moments(samples_of(stats)?, &spectrum, p.mu, w0)?;
            let pred = za_emse(eta, scenario.sigma_v2, m.energy, m.l1_excess, p.rho, p.mu)?;
            Ok(Prediction { total: pred.total, attractor: Some(pred), moments: Some(m) })
        }
        Algorithm::GcLms => {
            let m = estimate_gc_moments(samples_of(stats)?, &spectrum, p.mu, w0)?;
            let pred = gc_emse(eta, scenario.sigma_v2, m.energy, m.l1_excess, p.rho, p.mu)?;
            Ok(Prediction { total: pred.total, attractor: Some(pred), moments: Some(m) })
        }
    }
}

/// Sign and magnitude layout of the systems generated by the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemShape {
    pub magnitude: f64,
    pub sign_pattern: SignPattern,
}

impl Default for SystemShape {
    fn default() -> Self {
        SystemShape { magnitude: 1.0, sign_pattern: SignPattern::Alternating }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Realized fraction of zero taps.
    pub sparsity: f64,
    pub n_active: usize,
    pub measured: BTreeMap<Algorithm, EmseEstimate>,
    pub predicted_za: Option<f64>,
    pub predicted_gc: Option<f64>,
    pub alpha2: Option<f64>,
    pub beta2: Option<f64>,
}

impl SweepRow {
    pub fn beta2_sign(&self) -> Option<i8> {
        self.beta2.map(|b| if b > 0.0 { 1 } else if b < 0.0 { -1 } else { 0 })
    }
}

/// The number of active taps realizing sparsity `s` on `n_taps` taps.
pub fn active_taps_for(s: f64, n_taps: usize) -> usize {
    ((1.0 - s) * n_taps as f64).round() as usize
}

/// One static-system ensemble per grid point; the base scenario supplies
/// tap count, powers, ensemble size, seed and duration.
pub fn sparsity_sweep(
    base: &Scenario,
    s_grid: &[f64],
    params: &[FilterParams],
    shape: SystemShape,
) -> Result<Vec<SweepRow>> {
    base.validate()?;
    if s_grid.is_empty() {
        return Err(Error::arg("sparsity grid is empty"));
    }
    if let Some(bad) = s_grid.iter().find(|s| !(**s >= 0.0 && **s <= 1.0)) {
        return Err(Error::arg(format!("sparsity {bad} outside [0, 1]")));
    }
    let n = base.n_taps;
    let actives: Vec<usize> = s_grid.iter().map(|&s| active_taps_for(s, n)).collect();
    if actives.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::arg(format!("sparsity grid must map to strictly increasing sparsity on {n} taps")));
    }
    let duration = base.total_duration();
    let mut rows = Vec::with_capacity(s_grid.len());
    for &n_active in &actives {
        let mut rng = base.run_rng(usize::MAX >> 2, 3);
        let w0 = make_sparse_system(n, n_active, shape.magnitude, shape.sign_pattern, &mut rng)?;
        let scenario = base.with_static_system(w0.clone(), duration);
        let stats = run_ensemble(&scenario, params, EnsembleOptions::default())?;
        let window = stats.sample_window;
        let mut row = SweepRow {
            sparsity: w0.sparsity(),
            n_active,
            measured: BTreeMap::new(),
            predicted_za: None,
            predicted_gc: None,
            alpha2: None,
            beta2: None,
        };
        for a in &stats.algorithms {
            row.measured.insert(a.params.algorithm, steady_state_emse(a, window, scenario.sigma_v2)?);
            let pred = match predict(a, &scenario, &w0) {
                Ok(p) => p,
                Err(Error::DegenerateEstimator { .. }) => continue,
                Err(e) => return Err(e),
            };
            let l1 = pred.moments.as_ref().map(|m| m.l1_excess);
            match a.params.algorithm {
                Algorithm::ZaLms => {
                    row.predicted_za = Some(pred.total);
                    row.alpha2 = l1;
                }
                Algorithm::GcLms => {
                    row.predicted_gc = Some(pred.total);
                    row.beta2 = l1;
                }
                Algorithm::Lms => {}
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// One line of the theory-versus-simulation comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub algorithm: Algorithm,
    pub mu: f64,
    pub rho: f64,
    pub measured: f64,
    pub measured_std_err: f64,
    pub predicted: Option<f64>,
    pub relative_gap: Option<f64>,
    /// α1 or β1.
    pub attractor_energy: Option<f64>,
    /// α2 or β2.
    pub l1_excess: Option<f64>,
    pub rho_window_upper: Option<f64>,
    pub rho_in_window: Option<bool>,
    /// Set when the estimators could not produce a prediction.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub sparsity: f64,
    pub rows: Vec<ReportRow>,
    /// Present when both ZA-LMS and GC-LMS were run.
    pub corollary2: Option<Corollary2Report>,
}

/// Compares measured and predicted steady-state EMSE for every algorithm in
/// `stats`, using the final phase of `scenario` as the reference system.
pub fn theory_vs_sim_report(stats: &EnsembleStats, scenario: &Scenario) -> Result<TheoryReport> {
    let w0 = &scenario.phases.last().expect("validated scenario").w0;
    let window = stats.sample_window;
    let mut rows = Vec::new();
    for a in &stats.algorithms {
        let measured = steady_state_emse(a, window, scenario.sigma_v2)?;
        let mut row = ReportRow {
            algorithm: a.params.algorithm,
            mu: a.params.mu,
            rho: a.params.rho,
            measured: measured.emse,
            measured_std_err: measured.std_err,
            predicted: None,
            relative_gap: None,
            attractor_energy: None,
            l1_excess: None,
            rho_window_upper: None,
            rho_in_window: None,
            flag: None,
        };
        match predict(a, scenario, w0) {
            Ok(pred) => {
                row.predicted = Some(pred.total);
                row.relative_gap = Some((measured.emse - pred.total) / pred.total);
                if let Some(att) = pred.attractor {
                    row.attractor_energy = Some(att.attractor_energy);
                    row.l1_excess = Some(att.l1_excess);
                    row.rho_window_upper = Some(att.rho_window_upper);
                    row.rho_in_window = Some(a.params.rho > 0.0 && a.params.rho < att.rho_window_upper);
                }
            }
            Err(e @ (Error::DegenerateEstimator { .. } | Error::MeanSquareInstability { .. } | Error::Stability { .. })) => {
                row.flag = Some(e.to_string())
            }
            Err(e) => return Err(e),
        }
        rows.push(row);
    }
    let corollary2 = match (stats.get(Algorithm::GcLms), stats.get(Algorithm::ZaLms)) {
        (Some(gc), Some(za)) if gc.samples.is_some() && za.samples.is_some() => {
            let spectrum = SpectrumModel::white(scenario.n_taps, scenario.sigma_x2)?;
            Some(corollary2_margin(gc, za, &spectrum, w0)?.0)
        }
        _ => None,
    };
    Ok(TheoryReport { sparsity: w0.sparsity(), rows, corollary2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_active: usize, sigma_v2: f64, duration: usize, ensemble: usize) -> Scenario {
        let mut sc = desk_scenario(n_active, duration).unwrap();
        sc.sigma_v2 = sigma_v2;
        sc.ensemble = ensemble;
        sc
    }

    #[test]
    fn fig1_scenario_layout() {
        let sc = phase_scenario_fig1();
        assert_eq!(sc.phases.iter().map(|p| p.duration).collect::<Vec<_>>(), vec![1000, 1000, 1000]);
        assert_eq!(sc.phases[0].w0.count_nonzero(), 1);
        assert_eq!(sc.phases[1].w0.sparsity(), 0.5);
        assert_eq!(sc.phases[2].w0.count_nonzero(), 16);
        sc.validate().unwrap();
    }

    #[test]
    fn noiseless_single_run_converges() {
        let sc = small(4, 0.0, 3000, 1);
        let stats = run_ensemble(&sc, &desk_algorithms(0.0)[..1], EnsembleOptions::default()).unwrap();
        assert!(*stats.algorithms[0].mse.last().unwrap() < 1e-10);
        let e = steady_state_emse(&stats.algorithms[0], stats.sample_window, 0.0).unwrap();
        assert!(e.emse.abs() < 1e-8);
    }

    #[test]
    fn zero_rho_columns_identical_and_streams_shared() {
        let sc = small(3, 1e-3, 800, 8);
        let stats = run_ensemble(&sc, &desk_algorithms(0.0), EnsembleOptions::default()).unwrap();
        let lms = &stats.algorithms[0];
        for other in &stats.algorithms[1..] {
            assert_eq!(lms.mse, other.mse);
            assert_eq!(lms.digests, other.digests);
        }
        assert!(lms.digests.windows(2).all(|d| d[0] != d[1]));
    }

    #[test]
    fn ensemble_is_deterministic() {
        let sc = small(2, 1e-3, 600, 6);
        let opts = EnsembleOptions { snapshot_stride: Some(100), ..Default::default() };
        let a = run_ensemble(&sc, &desk_algorithms(DESK_RHO), opts).unwrap();
        let b = run_ensemble(&sc, &desk_algorithms(DESK_RHO), opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.algorithms[2].mean_snapshots.len(), 7);
    }

    #[test]
    fn window_too_short() {
        let sc = small(2, 1e-3, 300, 2);
        let stats = run_ensemble(&sc, &desk_algorithms(0.0)[..1], EnsembleOptions::default()).unwrap();
        assert_eq!(stats.sample_window, Window { start: 240, end: 300 });
        assert!(steady_state_emse(&stats.algorithms[0], stats.sample_window, 1e-3).is_err());
    }

    #[test]
    fn constant_error_gives_its_square() {
        let c = 0.3;
        let stats = AlgorithmStats {
            params: desk_algorithms(0.0)[0],
            mse: vec![c * c; 500],
            run_sq_err: vec![vec![c * c; 500]; 4],
            mean_snapshots: vec![],
            samples: None,
            digests: vec![0; 4],
        };
        let e = steady_state_emse(&stats, Window { start: 100, end: 500 }, 0.0).unwrap();
        assert!((e.emse - c * c).abs() < 1e-15);
        assert_eq!(e.std_err, 0.0);
        assert!(e.converged);
    }

    #[test]
    fn divergence_aborts_or_is_excluded() {
        let sc = small(2, 1e-3, 400, 3);
        let wild = [FilterParams { mu: 5.0, rho: 0.0, algorithm: Algorithm::Lms }];
        assert!(matches!(run_ensemble(&sc, &wild, EnsembleOptions::default()), Err(Error::Diverged { .. })));
        let opts = EnsembleOptions { exclude_divergent: true, ..Default::default() };
        assert!(run_ensemble(&sc, &wild, opts).is_err());
    }

    #[test]
    fn sweep_rejects_colliding_grid() {
        let base = small(1, 1e-3, 500, 2);
        assert!(sparsity_sweep(&base, &[0.5, 0.51], &desk_algorithms(0.0), SystemShape::default()).is_err());
        assert!(sparsity_sweep(&base, &[-0.1], &desk_algorithms(0.0), SystemShape::default()).is_err());
    }

    #[test]
    fn sweep_with_zero_rho_has_equal_columns() {
        let base = small(1, 1e-3, 600, 4);
        let rows = sparsity_sweep(&base, &[0.0, 0.5, 1.0], &desk_algorithms(0.0), SystemShape::default()).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            let m: Vec<f64> = r.measured.values().map(|e| e.emse).collect();
            assert!(m.iter().all(|&x| x == m[0]));
            // no attractor ever fires, so its energy moment is still positive but the penalty is zero
            assert_eq!(r.predicted_gc, r.predicted_za);
        }
        assert_eq!(rows.iter().map(|r| r.sparsity).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn report_rows_cover_every_algorithm() {
        let sc = small(1, 1e-3, 1000, 10);
        let stats = run_ensemble(&sc, &desk_algorithms(DESK_RHO), EnsembleOptions::default()).unwrap();
        let rep = theory_vs_sim_report(&stats, &sc).unwrap();
        assert_eq!(rep.rows.len(), 3);
        let lms = &rep.rows[0];
        let eta = theory::eta(DESK_MU, &SpectrumModel::white(16, 1.0).unwrap()).unwrap();
        assert_eq!(lms.predicted, Some(lms_emse(eta, 1e-3).unwrap()));
        assert!(rep.corollary2.is_some());
        assert!(rep.rows[2].l1_excess.is_some());
    }
}
