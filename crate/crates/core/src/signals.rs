//! Seedable generation of white Gaussian inputs, observation noise, sparse
//! unknown systems and piecewise-constant (phase) scenarios.
//!
//! Every ensemble member draws from its own ChaCha stream derived from
//! `(seed, run_index)`, so a realization does not depend on the order in
//! which runs are executed.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A length-N tap vector: either a filter estimate `w(n)` or a true system `w0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn zeros(n: usize) -> Self {
        WeightVector(vec![0.0; n])
    }

    pub fn count_nonzero(&self) -> usize {
        self.0.iter().filter(|&&w| w != 0.0).count()
    }

    /// Fraction of exactly-zero taps.
    pub fn sparsity(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        (self.len() - self.count_nonzero()) as f64 / self.len() as f64
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|w| w.abs()).sum()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|w| w.is_finite())
    }
}

impl Deref for WeightVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for WeightVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        WeightVector(v)
    }
}

/// Sign layout of the active taps of a generated sparse system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignPattern {
    #[default]
    Alternating,
    AllPositive,
    Random,
}

/// Index set split of a true system: `zero` holds taps with `w0_i == 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Support {
    pub zero: Vec<usize>,
    pub nonzero: Vec<usize>,
}

impl Support {
    pub fn of(w0: &[f64]) -> Self {
        let (nonzero, zero) = (0..w0.len()).partition(|&i| w0[i] != 0.0);
        Support { zero, nonzero }
    }

    pub fn n_taps(&self) -> usize {
        self.zero.len() + self.nonzero.len()
    }
}

/// Builds a system with `n_active` taps of magnitude `magnitude` at indices
/// `floor(j * n_taps / n_active)`, all other taps exactly zero.
pub fn make_sparse_system<R: Rng + ?Sized>(
    n_taps: usize,
    n_active: usize,
    magnitude: f64,
    sign_pattern: SignPattern,
    rng: &mut R,
) -> Result<WeightVector> {
    if n_active > n_taps {
        return Err(Error::arg(format!("n_active ({n_active}) exceeds n_taps ({n_taps})")));
    }
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(Error::arg(format!("magnitude must be positive and finite, got {magnitude}")));
    }
    let mut w = WeightVector::zeros(n_taps);
    for j in 0..n_active {
        let sign = match sign_pattern {
            SignPattern::AllPositive => 1.0,
            SignPattern::Alternating => {
                if j % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            SignPattern::Random => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        w[j * n_taps / n_active] = sign * magnitude;
    }
    Ok(w)
}

/// `count` i.i.d. zero-mean Gaussian samples with variance `sigma_x2`.
pub fn gen_input<R: Rng + ?Sized>(count: usize, sigma_x2: f64, rng: &mut R) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::arg("sample count must be at least 1"));
    }
    if !(sigma_x2 > 0.0 && sigma_x2.is_finite()) {
        return Err(Error::arg(format!("input variance must be positive, got {sigma_x2}")));
    }
    Ok(gaussian(count, sigma_x2, rng))
}

/// Observation noise; unlike [`gen_input`] a zero variance is allowed.
pub fn gen_noise<R: Rng + ?Sized>(count: usize, sigma_v2: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma_v2 >= 0.0 && sigma_v2.is_finite()) {
        return Err(Error::arg(format!("noise variance must be non-negative, got {sigma_v2}")));
    }
    if sigma_v2 == 0.0 {
        return Ok(vec![0.0; count]);
    }
    Ok(gaussian(count, sigma_v2, rng))
}

fn gaussian<R: Rng + ?Sized>(count: usize, variance: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, variance.sqrt()).expect("variance checked by caller");
    (0..count).map(|_| normal.sample(rng)).collect()
}

/// Desired response `d(n) = w0ᵀ x(n) + e0(n)`.
pub fn gen_observation(w0: &[f64], x_window: &[f64], noise_sample: f64) -> Result<f64> {
    if w0.len() != x_window.len() {
        return Err(Error::arg(format!(
            "input window length {} does not match system length {}",
            x_window.len(),
            w0.len()
        )));
    }
    Ok(w0.iter().zip(x_window).map(|(a, b)| a * b).sum::<f64>() + noise_sample)
}

/// One stretch of iterations during which the unknown system is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPhase {
    pub w0: WeightVector,
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n_taps: usize,
    pub sigma_x2: f64,
    pub sigma_v2: f64,
    pub phases: Vec<SystemPhase>,
    pub ensemble: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_taps == 0 {
            return Err(Error::arg("n_taps must be at least 1"));
        }
        if !(self.sigma_x2 > 0.0 && self.sigma_x2.is_finite()) {
            return Err(Error::arg(format!("sigma_x2 must be > 0, got {}", self.sigma_x2)));
        }
        if !(self.sigma_v2 >= 0.0 && self.sigma_v2.is_finite()) {
            return Err(Error::arg(format!("sigma_v2 must be >= 0, got {}", self.sigma_v2)));
        }
        if self.ensemble == 0 {
            return Err(Error::arg("ensemble must be at least 1"));
        }
        if self.phases.is_empty() {
            return Err(Error::arg("scenario needs at least one phase"));
        }
        for (k, p) in self.phases.iter().enumerate() {
            if p.duration == 0 {
                return Err(Error::arg(format!("phase {k} has zero duration")));
            }
            if p.w0.len() != self.n_taps {
                return Err(Error::arg(format!(
                    "phase {k} system has {} taps, scenario has {}",
                    p.w0.len(),
                    self.n_taps
                )));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> usize {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Half-open iteration range `[start, end)` covered by phase `k`.
    pub fn phase_bounds(&self, k: usize) -> (usize, usize) {
        let start: usize = self.phases[..k].iter().map(|p| p.duration).sum();
        (start, start + self.phases[k].duration)
    }

    /// A single-phase copy of this scenario holding `w0` for `duration` iterations.
    pub fn with_static_system(&self, w0: WeightVector, duration: usize) -> Scenario {
        Scenario { phases: vec![SystemPhase { w0, duration }], ..self.clone() }
    }

    /// RNG for stream `stream` of run `run_index`. Streams 0 and 1 feed the
    /// input and the noise; other values are free for callers.
    pub fn run_rng(&self, run_index: usize, stream: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream((run_index as u64) << 2 | stream);
        rng
    }

    /// Input and noise streams for one ensemble member.
    pub fn realize(&self, run_index: usize) -> Result<Realization> {
        self.validate()?;
        let n = self.n_taps;
        let total = self.total_duration();
        let inputs = gen_input(total + n - 1, self.sigma_x2, &mut self.run_rng(run_index, 0))?;
        let noise = gen_noise(total, self.sigma_v2, &mut self.run_rng(run_index, 1))?;
        Realization::from_streams(self, inputs, noise)
    }
}

/// Input stream, noise and desired response for one run.
///
/// The input holds `n_taps - 1` samples of prehistory so the very first
/// regressor is full. Regressors are tapped-delay-line windows
/// `x(n) = [u(n), u(n-1), ..., u(n-N+1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    n_taps: usize,
    // input stream stored newest-first so each regressor is a contiguous slice
    reversed_input: Vec<f64>,
    pub noise: Vec<f64>,
    pub desired: Vec<f64>,
    pub phase_of: Vec<usize>,
}

impl Realization {
    /// Builds the desired response from explicit streams. `inputs` is in time
    /// order and must have length `total + n_taps - 1`.
    pub fn from_streams(scenario: &Scenario, inputs: Vec<f64>, noise: Vec<f64>) -> Result<Self> {
        let n = scenario.n_taps;
        let total = scenario.total_duration();
        if inputs.len() != total + n - 1 || noise.len() != total {
            return Err(Error::arg(format!(
                "stream lengths (input {}, noise {}) inconsistent with {} iterations of {} taps",
                inputs.len(),
                noise.len(),
                total,
                n
            )));
        }
        let mut reversed_input = inputs;
        reversed_input.reverse();
        let mut real = Realization {
            n_taps: n,
            reversed_input,
            noise,
            desired: Vec::with_capacity(total),
            phase_of: Vec::with_capacity(total),
        };
        for (k, phase) in scenario.phases.iter().enumerate() {
            let (start, end) = scenario.phase_bounds(k);
            for it in start..end {
                let d = gen_observation(&phase.w0, real.regressor(it), real.noise[it])?;
                real.desired.push(d);
                real.phase_of.push(k);
            }
        }
        Ok(real)
    }

    pub fn len(&self) -> usize {
        self.desired.len()
    }

    pub fn is_empty(&self) -> bool {
        self.desired.is_empty()
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    /// Regressor `x(n)` for iteration `n`.
    pub fn regressor(&self, n: usize) -> &[f64] {
        let len = self.reversed_input.len();
        &self.reversed_input[len - self.n_taps - n..len - n]
    }

    /// FNV-1a digest over the input and noise bit patterns; equal digests
    /// mean two consumers saw the same streams.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.reversed_input.iter().chain(&self.noise) {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}
