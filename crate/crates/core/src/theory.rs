//! Closed-form steady-state results for the three recursions and the
//! estimators that feed them.
//!
//! The attractor moments have no closed form. They are estimated from
//! [`SteadyStateSamples`], a window of `(w(n), D(n), e(n))` records taken
//! after convergence. For the gated filter the moments are
//!
//! ```text
//! β1 = E[ vᵀ (I - μR)⁻¹ v ],          v = D(∞) sgn(w(∞))
//! β2 = E[ ‖D(∞) w(∞)‖₁ ] - ‖D(∞) w0‖₁
//! ```
//!
//! and the ZA-LMS pair (α1, α2) is the same with `D ≡ I`. Input is modelled
//! through its eigenvalues only, i.e. `R = Λ` (white input has `Λ = σx² I`).

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signals::{Support, WeightVector};

/// Eigenvalues of the input autocorrelation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumModel {
    lambdas: Vec<f64>,
    white: Option<f64>,
}

impl SpectrumModel {
    pub fn white(n_taps: usize, sigma_x2: f64) -> Result<Self> {
        if n_taps == 0 {
            return Err(Error::arg("spectrum needs at least one eigenvalue"));
        }
        if !(sigma_x2 > 0.0 && sigma_x2.is_finite()) {
            return Err(Error::arg(format!("input variance must be > 0, got {sigma_x2}")));
        }
        Ok(SpectrumModel { lambdas: vec![sigma_x2; n_taps], white: Some(sigma_x2) })
    }

    pub fn from_eigenvalues(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::arg("spectrum needs at least one eigenvalue"));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::arg(format!("eigenvalues must be positive, got {bad}")));
        }
        Ok(SpectrumModel { lambdas, white: None })
    }

    /// Eigen-decomposition of a symmetric positive-definite matrix.
    pub fn from_matrix(r: &DMatrix<f64>) -> Result<Self> {
        check_square(r)?;
        let eig = r.clone().symmetric_eigen();
        Self::from_eigenvalues(eig.eigenvalues.iter().copied().collect())
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `Some(σx²)` when the model was built as white input.
    pub fn white_variance(&self) -> Option<f64> {
        self.white
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambdas.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambdas.iter().copied().fold(f64::MAX, f64::min)
    }

    /// Errors unless `μ λ_max < 1`.
    pub fn check_step(&self, mu: f64) -> Result<()> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::arg(format!("step size must be >= 0, got {mu}")));
        }
        let product = mu * self.lambda_max();
        if product >= 1.0 {
            return Err(Error::Stability { mu, product });
        }
        Ok(())
    }

    fn check_len(&self, n: usize, what: &str) -> Result<()> {
        if n != self.len() {
            return Err(Error::arg(format!("{what} has length {n}, spectrum has {}", self.len())));
        }
        Ok(())
    }
}

fn check_square(r: &DMatrix<f64>) -> Result<()> {
    if r.nrows() != r.ncols() || r.nrows() == 0 {
        return Err(Error::arg(format!("expected a non-empty square matrix, got {}x{}", r.nrows(), r.ncols())));
    }
    Ok(())
}

/// `η = Σ_k μλ_k / (1 - μλ_k)`.
pub fn eta(mu: f64, spectrum: &SpectrumModel) -> Result<f64> {
    spectrum.check_step(mu)?;
    Ok(spectrum.lambdas.iter().map(|l| mu * l / (1.0 - mu * l)).sum())
}

/// `η = Tr(μR (I - μR)⁻¹)` evaluated on the matrix itself.
pub fn eta_trace(mu: f64, r: &DMatrix<f64>) -> Result<f64> {
    check_square(r)?;
    SpectrumModel::from_matrix(r)?.check_step(mu)?;
    let n = r.nrows();
    let mu_r = r * mu;
    let resolvent = (DMatrix::<f64>::identity(n, n) - &mu_r)
        .lu()
        .solve(&mu_r)
        .ok_or_else(|| Error::arg("I - mu R is singular"))?;
    Ok(resolvent.trace())
}

/// Excess MSE of plain LMS, `η σv² / (2 - η)`.
pub fn lms_emse(eta: f64, sigma_v2: f64) -> Result<f64> {
    if !(eta >= 0.0) {
        return Err(Error::arg(format!("eta must be >= 0, got {eta}")));
    }
    if eta >= 2.0 {
        return Err(Error::MeanSquareInstability { eta });
    }
    if !(sigma_v2 >= 0.0) {
        return Err(Error::arg(format!("noise variance must be >= 0, got {sigma_v2}")));
    }
    Ok(eta * sigma_v2 / (2.0 - eta))
}

/// Steady-state excess MSE split into the LMS part and the attractor penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmsePrediction {
    pub lms_term: f64,
    pub penalty_term: f64,
    pub total: f64,
    /// α1 (ZA-LMS) or β1 (GC-LMS).
    pub attractor_energy: f64,
    /// α2 (ZA-LMS) or β2 (GC-LMS).
    pub l1_excess: f64,
    /// `2 m2 / m1`: any `0 < ρ` below this bound beats plain LMS when `m2 > 0`.
    pub rho_window_upper: f64,
}

fn attractor_emse(
    what: &'static str,
    eta: f64,
    sigma_v2: f64,
    energy: f64,
    l1_excess: f64,
    rho: f64,
    mu: f64,
) -> Result<EmsePrediction> {
    let lms_term = lms_emse(eta, sigma_v2)?;
    if !(energy > 0.0) {
        return Err(Error::DegenerateEstimator { what, value: energy });
    }
    if !(mu > 0.0) {
        return Err(Error::arg(format!("step size must be > 0, got {mu}")));
    }
    if !(rho >= 0.0) {
        return Err(Error::arg(format!("rho must be >= 0, got {rho}")));
    }
    let rho_window_upper = 2.0 * l1_excess / energy;
    let penalty_term = energy * rho * (rho - rho_window_upper) / (mu * (2.0 - eta));
    Ok(EmsePrediction {
        lms_term,
        penalty_term,
        total: lms_term + penalty_term,
        attractor_energy: energy,
        l1_excess,
        rho_window_upper,
    })
}

/// ZA-LMS steady-state EMSE
/// `η σv²/(2-η) + α1 ρ (ρ - 2α2/α1) / (μ (2-η))`.
pub fn za_emse(eta: f64, sigma_v2: f64, alpha1: f64, alpha2: f64, rho: f64, mu: f64) -> Result<EmsePrediction> {
    attractor_emse("alpha1", eta, sigma_v2, alpha1, alpha2, rho, mu)
}

/// GC-LMS steady-state EMSE
/// `η σv²/(2-η) + β1 ρ (ρ - 2β2/β1) / (μ (2-η))`.
pub fn gc_emse(eta: f64, sigma_v2: f64, beta1: f64, beta2: f64, rho: f64, mu: f64) -> Result<EmsePrediction> {
    attractor_emse("beta1", eta, sigma_v2, beta1, beta2, rho, mu)
}

/// Steady-state window records, stored flat and tagged with their run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SteadyStateSamples {
    n_taps: usize,
    w: Vec<f64>,
    gate: Vec<f64>,
    e: Vec<f64>,
    run: Vec<usize>,
}

/// One borrowed record of a [`SteadyStateSamples`] window.
#[derive(Debug, Clone, Copy)]
pub struct SampleRef<'a> {
    pub run: usize,
    pub w: &'a [f64],
    pub gate: &'a [f64],
    pub e: f64,
}

impl SteadyStateSamples {
    pub fn new(n_taps: usize) -> Self {
        SteadyStateSamples { n_taps, ..Default::default() }
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    /// Appends `(w(n), D(n), e(n))`; a missing gate is stored as all ones.
    pub fn push(&mut self, run: usize, w: &[f64], gate: Option<&[f64]>, e: f64) {
        assert_eq!(w.len(), self.n_taps, "sample width mismatch");
        self.w.extend_from_slice(w);
        match gate {
            Some(g) => {
                assert_eq!(g.len(), self.n_taps, "gate width mismatch");
                self.gate.extend_from_slice(g);
            }
            None => self.gate.extend(std::iter::repeat_n(1.0, self.n_taps)),
        }
        self.e.push(e);
        self.run.push(run);
    }

    /// Appends every record of `other` (same tap count).
    pub fn extend(&mut self, other: &SteadyStateSamples) {
        assert_eq!(other.n_taps, self.n_taps, "sample width mismatch");
        self.w.extend_from_slice(&other.w);
        self.gate.extend_from_slice(&other.gate);
        self.e.extend_from_slice(&other.e);
        self.run.extend_from_slice(&other.run);
    }

    pub fn get(&self, i: usize) -> SampleRef<'_> {
        let n = self.n_taps;
        SampleRef { run: self.run[i], w: &self.w[i * n..(i + 1) * n], gate: &self.gate[i * n..(i + 1) * n], e: self.e[i] }
    }

    pub fn iter(&self) -> impl Iterator<Item = SampleRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Distinct run indices in ascending order.
    pub fn runs(&self) -> Vec<usize> {
        let mut r = self.run.clone();
        r.sort_unstable();
        r.dedup();
        r
    }

    /// Per-run sample means of a vector-valued statistic of width `width`,
    /// ordered by run index.
    pub fn per_run_means<F>(&self, width: usize, mut stat: F) -> Vec<Vec<f64>>
    where
        F: FnMut(&SampleRef<'_>, &mut [f64]),
    {
        let runs = self.runs();
        let mut sums = vec![vec![0.0; width]; runs.len()];
        let mut counts = vec![0usize; runs.len()];
        let mut buf = vec![0.0; width];
        for s in self.iter() {
            let k = runs.binary_search(&s.run).expect("run listed");
            buf.iter_mut().for_each(|b| *b = 0.0);
            stat(&s, &mut buf);
            for (acc, b) in sums[k].iter_mut().zip(&buf) {
                *acc += b;
            }
            counts[k] += 1;
        }
        for (s, c) in sums.iter_mut().zip(counts) {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
        sums
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Which gate the moment estimators apply to the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateUse {
    /// The recorded gate (GC-LMS).
    Recorded,
    /// `D ≡ I` (ZA-LMS), whatever was recorded.
    Identity,
}

impl GateUse {
    fn gate_of(self, s: &SampleRef<'_>, i: usize) -> f64 {
        match self {
            GateUse::Recorded => s.gate[i],
            GateUse::Identity => 1.0,
        }
    }
}

/// First and second attractor moments plus the mean attractor direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttractorMoments {
    /// α1 or β1.
    pub energy: f64,
    /// α2 or β2.
    pub l1_excess: f64,
    /// Sample mean of `D sgn(w)`.
    pub mean_direction: Vec<f64>,
}

fn check_window(samples: &SteadyStateSamples, w0: &[f64], spectrum: &SpectrumModel) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::arg("steady-state window is empty"));
    }
    if w0.len() != samples.n_taps() {
        return Err(Error::arg(format!("w0 has {} taps, samples have {}", w0.len(), samples.n_taps())));
    }
    spectrum.check_len(w0.len(), "w0")
}

/// Estimates (energy, l1 excess, mean direction) with the chosen gate.
pub fn estimate_moments(
    samples: &SteadyStateSamples,
    spectrum: &SpectrumModel,
    mu: f64,
    w0: &[f64],
    gate_use: GateUse,
) -> Result<AttractorMoments> {
    check_window(samples, w0, spectrum)?;
    spectrum.check_step(mu)?;
    let n = w0.len();
    let resolvent: Vec<f64> = spectrum.lambdas.iter().map(|l| 1.0 / (1.0 - mu * l)).collect();
    let mut energy = 0.0;
    let mut l1_excess = 0.0;
    let mut mean_direction = vec![0.0; n];
    for s in samples.iter() {
        for i in 0..n {
            let d = gate_use.gate_of(&s, i);
            let v = d * sign(s.w[i]);
            energy += v * v * resolvent[i];
            l1_excess += d * (s.w[i].abs() - w0[i].abs());
            mean_direction[i] += v;
        }
    }
    let count = samples.len() as f64;
    mean_direction.iter_mut().for_each(|m| *m /= count);
    Ok(AttractorMoments { energy: energy / count, l1_excess: l1_excess / count, mean_direction })
}

/// β1, β2 and `E[D sgn(w)]` from a GC-LMS window.
pub fn estimate_gc_moments(
    samples: &SteadyStateSamples,
    spectrum: &SpectrumModel,
    mu: f64,
    w0: &[f64],
) -> Result<AttractorMoments> {
    estimate_moments(samples, spectrum, mu, w0, GateUse::Recorded)
}

/// α1, α2 and `E[sgn(w)]`; the recorded gate is ignored.
pub fn estimate_za_moments(
    samples: &SteadyStateSamples,
    spectrum: &SpectrumModel,
    mu: f64,
    w0: &[f64],
) -> Result<AttractorMoments> {
    estimate_moments(samples, spectrum, mu, w0, GateUse::Identity)
}

/// Per-tap `f_k = E[(D sgn w)_k²]` and `g_k = E[(D sgn w)_k (w_k - w0_k)]`.
pub fn estimate_fg(samples: &SteadyStateSamples, w0: &[f64], gate_use: GateUse) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::arg("steady-state window is empty"));
    }
    let n = w0.len();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    for s in samples.iter() {
        for i in 0..n {
            let v = gate_use.gate_of(&s, i) * sign(s.w[i]);
            f[i] += v * v;
            g[i] += v * (s.w[i] - w0[i]);
        }
    }
    let count = samples.len() as f64;
    f.iter_mut().chain(g.iter_mut()).for_each(|x| *x /= count);
    Ok((f, g))
}

/// Measured diagonal of the weight-error covariance, `E[(w_k - w0_k)²]`.
pub fn measured_phi(samples: &SteadyStateSamples, w0: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::arg("steady-state window is empty"));
    }
    let mut phi = vec![0.0; w0.len()];
    for s in samples.iter() {
        for (p, (w, w0i)) in phi.iter_mut().zip(s.w.iter().zip(w0)) {
            *p += (w - w0i).powi(2);
        }
    }
    phi.iter_mut().for_each(|p| *p /= samples.len() as f64);
    Ok(phi)
}

/// Limit of the mean weights, `w0 - (ρ/μ) Λ⁻¹ E[D sgn(w)]`.
pub fn mean_limit(
    w0: &[f64],
    rho: f64,
    mu: f64,
    spectrum: &SpectrumModel,
    mean_direction: &[f64],
) -> Result<WeightVector> {
    spectrum.check_step(mu)?;
    if !(mu > 0.0) {
        return Err(Error::arg(format!("step size must be > 0, got {mu}")));
    }
    spectrum.check_len(w0.len(), "w0")?;
    spectrum.check_len(mean_direction.len(), "mean direction")?;
    Ok(WeightVector(
        w0.iter()
            .zip(mean_direction)
            .zip(&spectrum.lambdas)
            .map(|((w, m), l)| if rho == 0.0 { *w } else { w - rho / mu * m / l })
            .collect(),
    ))
}

/// `Λ⁻¹ v`, the per-tap scaling behind both `s` and `b`.
fn inverse_spectrum_scale(spectrum: &SpectrumModel, v: &[f64]) -> Result<Vec<f64>> {
    spectrum.check_len(v.len(), "direction vector")?;
    Ok(v.iter().zip(&spectrum.lambdas).map(|(x, l)| x / l).collect())
}

/// `s = Λ⁻¹ E[D(∞) sgn(w(∞))]`.
pub fn s_vector(spectrum: &SpectrumModel, mean_gate_sgn: &[f64]) -> Result<Vec<f64>> {
    inverse_spectrum_scale(spectrum, mean_gate_sgn)
}

/// `b = Λ⁻¹ E[sgn(w(∞))]`, the ungated counterpart of [`s_vector`].
pub fn b_vector(spectrum: &SpectrumModel, mean_sgn: &[f64]) -> Result<Vec<f64>> {
    inverse_spectrum_scale(spectrum, mean_sgn)
}

fn check_partition(support: &Support, n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in support.zero.iter().chain(&support.nonzero) {
        if i >= n || seen[i] {
            return Err(Error::arg("zero/nonzero index sets must partition the taps"));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::arg("zero/nonzero index sets must partition the taps"));
    }
    Ok(())
}

/// Gaussian-tap approximation
/// `β2 ≈ Σ_Z √(2 φ_i / π) - (ρ/μ) Σ_NZ |s_i|`.
pub fn beta2_approx(phi_diag: &[f64], s: &[f64], rho: f64, mu: f64, support: &Support) -> Result<f64> {
    if phi_diag.len() != s.len() {
        return Err(Error::arg("phi and s lengths differ"));
    }
    check_partition(support, phi_diag.len())?;
    if let Some(bad) = phi_diag.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::arg(format!("phi entries must be >= 0, got {bad}")));
    }
    if !(mu > 0.0) {
        return Err(Error::arg(format!("step size must be > 0, got {mu}")));
    }
    let zero_part: f64 = support.zero.iter().map(|&i| (2.0 / std::f64::consts::PI * phi_diag[i]).sqrt()).sum();
    let bias_part: f64 = support.nonzero.iter().map(|&i| s[i].abs()).sum();
    Ok(zero_part - rho / mu * bias_part)
}

pub const FIXED_POINT_TOL: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub phi: Vec<f64>,
    pub p_ex: f64,
    pub iterations: usize,
}

/// Iterates the diagonal covariance recursion
///
/// ```text
/// φ ← B φ + μ² σv² λ + ρ² f - 2ρ (I - μΛ) g,   B = diag(1 - 2μλ + 2μ²λ²) + μ² λ λᵀ
/// ```
///
/// until the a-posteriori error bound drops below [`FIXED_POINT_TOL`]
/// relative, and returns `φ(∞)` with `P_ex = λᵀ φ(∞)`. When `B` has a
/// stable rank-one structure the iteration starts from the Sherman-Morrison
/// solution of `(I - B) φ = c`; otherwise it starts from `φ = 0`.
pub fn phi_fixed_point(
    spectrum: &SpectrumModel,
    mu: f64,
    sigma_v2: f64,
    rho: f64,
    f_diag: &[f64],
    g_diag: &[f64],
) -> Result<FixedPoint> {
    spectrum.check_step(mu)?;
    spectrum.check_len(f_diag.len(), "f")?;
    spectrum.check_len(g_diag.len(), "g")?;
    if !(sigma_v2 >= 0.0) {
        return Err(Error::arg(format!("noise variance must be >= 0, got {sigma_v2}")));
    }
    let lam = &spectrum.lambdas;
    let n = lam.len();
    let b1: Vec<f64> = lam.iter().map(|l| 1.0 - 2.0 * mu * l + 2.0 * mu * mu * l * l).collect();
    let forcing: Vec<f64> = (0..n)
        .map(|k| {
            mu * mu * sigma_v2 * lam[k] + rho * rho * f_diag[k] - 2.0 * rho * (1.0 - mu * lam[k]) * g_diag[k]
        })
        .collect();

    let mut phi = closed_form(lam, mu, &forcing).unwrap_or_else(|| vec![0.0; n]);
    let mut next = vec![0.0; n];
    let mut prev_delta = f64::NAN;
    let mut ratio = f64::NAN;
    for iteration in 1..=FIXED_POINT_MAX_ITER {
        let p: f64 = lam.iter().zip(&phi).map(|(l, p)| l * p).sum();
        for k in 0..n {
            next[k] = b1[k] * phi[k] + mu * mu * lam[k] * p + forcing[k];
        }
        let delta = phi.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = next.iter().map(|v| v.abs()).fold(0.0, f64::max);
        std::mem::swap(&mut phi, &mut next);
        if !scale.is_finite() {
            return Err(Error::NonConvergence { iterations: iteration, spectral_radius: ratio });
        }
        if delta <= 64.0 * f64::EPSILON * scale {
            return Ok(finish(lam, phi, iteration));
        }
        if prev_delta.is_finite() && prev_delta > 0.0 {
            ratio = delta / prev_delta;
        }
        if ratio < 1.0 {
            // distance to the limit is at most delta * r / (1 - r)
            let bound = delta * ratio / (1.0 - ratio);
            if bound <= FIXED_POINT_TOL * scale {
                return Ok(finish(lam, phi, iteration));
            }
        } else if iteration > 100 && ratio >= 1.0 {
            return Err(Error::NonConvergence { iterations: iteration, spectral_radius: ratio });
        }
        prev_delta = delta;
    }
    Err(Error::NonConvergence { iterations: FIXED_POINT_MAX_ITER, spectral_radius: ratio })
}

fn closed_form(lam: &[f64], mu: f64, forcing: &[f64]) -> Option<Vec<f64>> {
    // I - B = diag(d) - μ² λ λᵀ with d = 2μλ(1 - μλ)
    let d: Vec<f64> = lam.iter().map(|l| 2.0 * mu * l * (1.0 - mu * l)).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let half_eta: f64 = lam.iter().zip(&d).map(|(l, dk)| mu * mu * l * l / dk).sum();
    if !(half_eta < 1.0) {
        return None;
    }
    let base: Vec<f64> = forcing.iter().zip(&d).map(|(c, dk)| c / dk).collect();
    let p = mu * mu * lam.iter().zip(&base).map(|(l, b)| l * b).sum::<f64>() / (1.0 - half_eta);
    Some(base.iter().zip(lam.iter().zip(&d)).map(|(b, (l, dk))| b + l / dk * p).collect())
}

fn finish(lam: &[f64], phi: Vec<f64>, iterations: usize) -> FixedPoint {
    let p_ex = lam.iter().zip(&phi).map(|(l, p)| l * p).sum();
    FixedPoint { phi, p_ex, iterations }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Corollary2Report {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares `Σ_NZ |s_i|` with `Σ_NZ |b_i|` (strict inequality).
pub fn corollary2_check(s: &[f64], b: &[f64], nonzero: &[usize]) -> Corollary2Report {
    let lhs = nonzero.iter().map(|&i| s[i].abs()).sum();
    let rhs = nonzero.iter().map(|&i| b[i].abs()).sum();
    Corollary2Report { lhs, rhs, holds: lhs < rhs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn white16() -> SpectrumModel {
        SpectrumModel::white(16, 1.0).unwrap()
    }

    #[test]
    fn eta_examples() {
        assert_eq!(eta(0.0, &white16()).unwrap(), 0.0);
        // direct summation: sixteen copies of 0.05 / 0.95
        let direct: f64 = (0..16).map(|_| 0.05 / 0.95).sum();
        assert!(rel(eta(0.05, &white16()).unwrap(), direct) < 1e-15);
        assert!((eta(0.05, &white16()).unwrap() - 0.842105263157894).abs() < 1e-12);
        assert_eq!(eta(0.5, &SpectrumModel::white(1, 1.0).unwrap()).unwrap(), 1.0);
        assert!(matches!(eta(1.0, &white16()), Err(Error::Stability { .. })));
    }

    #[test]
    fn eta_trace_matches_diagonal_case() {
        let r = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let sp = SpectrumModel::from_matrix(&r).unwrap();
        assert!(rel(eta_trace(0.1, &r).unwrap(), eta(0.1, &sp).unwrap()) < 1e-14);
        assert!(eta_trace(0.6, &r).is_err());
    }

    #[test]
    fn lms_emse_examples() {
        assert_eq!(lms_emse(0.0, 1e-3).unwrap(), 0.0);
        assert!(rel(lms_emse(1.0, 1e-3).unwrap(), 1e-3) < 1e-15);
        let e = lms_emse(0.842105, 1e-3).unwrap();
        assert!((e - 7.2727e-4).abs() < 1e-8, "{e}");
        assert!(matches!(lms_emse(2.0, 1.0), Err(Error::MeanSquareInstability { .. })));
    }

    #[test]
    fn za_emse_examples() {
        let lms = lms_emse(0.842105, 1e-3).unwrap();
        let p = za_emse(0.842105, 1e-3, 10.0, 0.05, 0.0, 0.05).unwrap();
        assert_eq!(p.total, lms);
        let p = za_emse(0.842105, 1e-3, 10.0, 0.05, 0.01, 0.05).unwrap();
        assert!((p.total - lms).abs() < 1e-18);
        assert_eq!(p.rho_window_upper, 0.01);
        // unit step size gives the bare plug-in arithmetic:
        // 10 * 0.005 * (0.005 - 0.01) / (2 - 0.842105)
        let p = za_emse(0.842105, 1e-3, 10.0, 0.05, 0.005, 1.0).unwrap();
        assert!((p.penalty_term - (-2.1591e-4)).abs() < 1e-8, "{}", p.penalty_term);
        assert!((p.total - 5.1136e-4).abs() < 1e-8, "{}", p.total);
        // the step size scales the penalty
        let q = za_emse(0.842105, 1e-3, 10.0, 0.05, 0.005, 0.05).unwrap();
        assert!(rel(q.penalty_term, p.penalty_term / 0.05) < 1e-12);
        assert!(matches!(za_emse(0.5, 1e-3, 0.0, 0.1, 0.01, 0.05), Err(Error::DegenerateEstimator { .. })));
    }

    #[test]
    fn gc_emse_examples() {
        let lms = lms_emse(0.842105, 1e-3).unwrap();
        assert_eq!(gc_emse(0.842105, 1e-3, 10.0, 0.05, 0.0, 0.05).unwrap().total, lms);
        let p = gc_emse(0.842105, 1e-3, 10.0, 0.05, 0.005, 1.0).unwrap();
        assert!((p.total - 5.1136e-4).abs() < 1e-8);
        let inside = gc_emse(0.842105, 1e-3, 10.0, 0.05, 0.004, 0.05).unwrap();
        assert!(inside.total < lms);
        assert!(matches!(gc_emse(0.5, 1e-3, -1.0, 0.1, 0.01, 0.05), Err(Error::DegenerateEstimator { .. })));
    }

    fn one_sample(w: &[f64], gate: &[f64]) -> SteadyStateSamples {
        let mut s = SteadyStateSamples::new(w.len());
        s.push(0, w, Some(gate), 0.0);
        s
    }

    #[test]
    fn dead_gate_gives_zero_moments() {
        let w = [0.3, -0.1, 0.0, 2.0];
        let s = one_sample(&w, &[0.0; 4]);
        let m = estimate_gc_moments(&s, &SpectrumModel::white(4, 1.0).unwrap(), 0.05, &[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.energy, 0.0);
        assert_eq!(m.l1_excess, 0.0);
    }

    #[test]
    fn quadratic_form_single_sample() {
        let mut w = vec![0.0; 16];
        w[0] = 0.2;
        let mut g = vec![0.0; 16];
        g[0] = 1.0;
        let s = one_sample(&w, &g);
        let m = estimate_gc_moments(&s, &white16(), 0.05, &[0.0; 16]).unwrap();
        assert!(rel(m.energy, 1.0 / 0.95) < 1e-15);

        let s = one_sample(&[0.1; 16], &[0.0; 16]);
        let a = estimate_za_moments(&s, &white16(), 0.05, &[0.0; 16]).unwrap();
        assert!(rel(a.energy, 16.0 / 0.95) < 1e-14);
    }

    #[test]
    fn l1_excess_single_sample() {
        let s = one_sample(&[0.1, -0.1], &[1.0, 1.0]);
        let m = estimate_gc_moments(&s, &SpectrumModel::white(2, 1.0).unwrap(), 0.05, &[0.0, 0.0]).unwrap();
        assert!(rel(m.l1_excess, 0.2) < 1e-15);

        let w0 = [0.5, -0.25, 0.0];
        let s = one_sample(&w0, &[0.0, 0.5, 1.0]);
        let a = estimate_za_moments(&s, &SpectrumModel::white(3, 1.0).unwrap(), 0.05, &w0).unwrap();
        assert_eq!(a.l1_excess, 0.0);
    }

    #[test]
    fn empty_window_is_rejected() {
        let s = SteadyStateSamples::new(2);
        assert!(estimate_gc_moments(&s, &SpectrumModel::white(2, 1.0).unwrap(), 0.05, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn mean_limit_examples() {
        let sp = SpectrumModel::white(2, 1.0).unwrap();
        let w0 = [1.0, 0.0];
        assert_eq!(mean_limit(&w0, 0.0, 0.05, &sp, &[0.7, -0.2]).unwrap().0, w0.to_vec());
        let m = mean_limit(&w0, 5e-4, 0.05, &sp, &[0.5, 0.0]).unwrap();
        assert!((m[0] - 0.995).abs() < 1e-15 && m[1] == 0.0);
        assert_eq!(mean_limit(&w0, 5e-4, 0.05, &sp, &[0.0, 0.0]).unwrap().0, w0.to_vec());
        assert!(matches!(mean_limit(&w0, 5e-4, 1.5, &sp, &[0.0, 0.0]), Err(Error::Stability { .. })));
    }

    #[test]
    fn s_and_b_vectors() {
        let id = SpectrumModel::white(2, 1.0).unwrap();
        assert_eq!(s_vector(&id, &[0.2, -0.1]).unwrap(), vec![0.2, -0.1]);
        let two = SpectrumModel::white(2, 2.0).unwrap();
        assert_eq!(b_vector(&two, &[1.0, 0.0]).unwrap(), vec![0.5, 0.0]);
    }

    #[test]
    fn beta2_approx_examples() {
        let all_zero = Support { zero: (0..16).collect(), nonzero: vec![] };
        let v = beta2_approx(&[1e-4; 16], &[0.0; 16], 5e-4, 0.05, &all_zero).unwrap();
        assert!((v - 0.127662).abs() < 1e-6, "{v}");
        assert!(rel(v, 16.0 * (2e-4 / std::f64::consts::PI).sqrt()) < 1e-14);

        let no_zero = Support { zero: vec![], nonzero: vec![0, 1] };
        let v = beta2_approx(&[1e-4; 2], &[0.3, -0.2], 5e-4, 0.05, &no_zero).unwrap();
        assert!(rel(v, -0.01 * 0.5) < 1e-14);
        assert_eq!(beta2_approx(&[1e-4; 2], &[0.3, -0.2], 0.0, 0.05, &no_zero).unwrap(), 0.0);

        assert!(beta2_approx(&[-1e-4, 0.0], &[0.0; 2], 0.0, 0.05, &no_zero).is_err());
        let overlap = Support { zero: vec![0], nonzero: vec![0, 1] };
        assert!(beta2_approx(&[0.0; 2], &[0.0; 2], 0.0, 0.05, &overlap).is_err());
    }

    #[test]
    fn fixed_point_examples() {
        let one = SpectrumModel::white(1, 1.0).unwrap();
        let fp = phi_fixed_point(&one, 0.1, 1.0, 0.0, &[0.0], &[0.0]).unwrap();
        let expected = (0.1 / 0.9) / (2.0 - 0.1 / 0.9);
        assert!(rel(fp.p_ex, expected) < 1e-9, "{} vs {expected}", fp.p_ex);
        assert!((fp.p_ex - 0.058824).abs() < 1e-6);

        let fp = phi_fixed_point(&white16(), 0.05, 0.0, 0.0, &[0.0; 16], &[0.0; 16]).unwrap();
        assert!(fp.phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn fixed_point_with_attractor_matches_closed_form() {
        // with f, g held fixed the fixed point solves
        // P (1 - η/2) = η σv²/2 + ρ²/(2μ) Σ f/(1-μλ) - (ρ/μ) Σ g
        let sp = SpectrumModel::from_eigenvalues(vec![1.0, 0.5, 1.5, 0.8]).unwrap();
        let (mu, sv2, rho) = (0.05, 1e-3, 5e-4);
        let f = [0.5, 1.0, 0.25, 0.0];
        let g = [0.002, -0.001, 0.004, 0.0];
        let fp = phi_fixed_point(&sp, mu, sv2, rho, &f, &g).unwrap();
        let eta_v = eta(mu, &sp).unwrap();
        let beta1: f64 = f.iter().zip(sp.lambdas()).map(|(fk, l)| fk / (1.0 - mu * l)).sum();
        let beta2: f64 = g.iter().sum();
        let closed = gc_emse(eta_v, sv2, beta1, beta2, rho, mu).unwrap();
        assert!(rel(fp.p_ex, closed.total) < 1e-9, "{} vs {}", fp.p_ex, closed.total);
    }

    #[test]
    fn fixed_point_rejects_unstable_step() {
        let sp = SpectrumModel::white(16, 1.0).unwrap();
        assert!(matches!(phi_fixed_point(&sp, 1.2, 1e-3, 0.0, &[0.0; 16], &[0.0; 16]), Err(Error::Stability { .. })));
        // μλ < 1 per tap but η > 2: the recursion itself blows up
        let err = phi_fixed_point(&sp, 0.2, 1e-3, 0.0, &[0.0; 16], &[0.0; 16]).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }), "{err:?}");
    }

    #[test]
    fn corollary2_examples() {
        let r = corollary2_check(&[0.3], &[1.0], &[0]);
        assert_eq!(r, Corollary2Report { lhs: 0.3, rhs: 1.0, holds: true });
        let r = corollary2_check(&[0.3], &[1.0], &[]);
        assert_eq!(r, Corollary2Report { lhs: 0.0, rhs: 0.0, holds: false });
    }

    #[test]
    fn per_run_means_group_by_run() {
        let mut s = SteadyStateSamples::new(1);
        s.push(3, &[1.0], None, 0.0);
        s.push(1, &[2.0], None, 0.0);
        s.push(3, &[3.0], None, 0.0);
        let m = s.per_run_means(1, |r, out| out[0] = r.w[0]);
        assert_eq!(m, vec![vec![2.0], vec![2.0]]);
        assert_eq!(s.runs(), vec![1, 3]);
    }

    proptest! {
        #[test]
        fn emse_decomposition_and_rho_window(
            eta_v in 0.01..1.9f64, sv2 in 1e-6..1e-1f64, m1 in 0.1..30.0f64, m2 in -0.1..0.1f64,
            rho in 0.0..0.02f64, mu in 0.001..0.5f64,
        ) {
            let p = gc_emse(eta_v, sv2, m1, m2, rho, mu).unwrap();
            prop_assert_eq!(p.total, p.lms_term + p.penalty_term);
            let bracket = rho - 2.0 * m2 / m1;
            if rho > 0.0 && bracket != 0.0 {
                prop_assert_eq!(p.penalty_term.signum(), bracket.signum());
            }
            if m2 > 0.0 && rho > 0.0 && rho < p.rho_window_upper {
                prop_assert!(p.total < p.lms_term);
            }
            let at_edge = gc_emse(eta_v, sv2, m1, m2, p.rho_window_upper.max(0.0), mu).unwrap();
            if m2 >= 0.0 {
                prop_assert!((at_edge.total - at_edge.lms_term).abs() <= 1e-12 * at_edge.lms_term.max(1e-300) + 1e-300);
            }
        }

        #[test]
        fn gating_shrinks_moments(
            ws in prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), -1.0..1.0f64], 6), 1..20),
            gs in prop::collection::vec(prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0]), 6), 20),
        ) {
            let mut s = SteadyStateSamples::new(6);
            for (k, w) in ws.iter().enumerate() {
                s.push(k % 3, w, Some(&gs[k]), 0.0);
            }
            let sp = SpectrumModel::white(6, 1.3).unwrap();
            let w0 = [0.0, 0.5, 0.0, -0.5, 0.0, 0.0];
            let gc = estimate_gc_moments(&s, &sp, 0.05, &w0).unwrap();
            let za = estimate_za_moments(&s, &sp, 0.05, &w0).unwrap();
            prop_assert!(gc.energy <= za.energy + 1e-12);
            for i in 0..6 {
                // per sample |D sgn w| <= |sgn w|; on averages only the sum of magnitudes is ordered
                let abs_gc: f64 = s.iter().map(|r| (r.gate[i] * sign(r.w[i])).abs()).sum();
                let abs_za: f64 = s.iter().map(|r| sign(r.w[i]).abs()).sum();
                prop_assert!(abs_gc <= abs_za);
            }
        }

        #[test]
        fn mean_limit_bias_is_bounded(
            lams in prop::collection::vec(0.2..3.0f64, 4),
            dir in prop::collection::vec(-1.0..1.0f64, 4),
            rho in 0.0..1e-3f64,
        ) {
            let sp = SpectrumModel::from_eigenvalues(lams.clone()).unwrap();
            let mu = 0.9 / sp.lambda_max();
            let w0 = [0.3, 0.0, -1.0, 0.0];
            let m = mean_limit(&w0, rho, mu, &sp, &dir).unwrap();
            let bound = rho / mu / sp.lambda_min();
            for i in 0..4 {
                prop_assert!((m[i] - w0[i]).abs() <= bound * (1.0 + 1e-12));
            }
        }
    }
}
