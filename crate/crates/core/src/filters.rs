//! The LMS, zero-attracting LMS and gradient-comparator LMS recursions.
//!
//! All three share the update
//!
//! ```text
//! e(n)   = d(n) - w(n)ᵀ x(n)
//! w(n+1) = w(n) + μ e(n) x(n) - ρ D(n) sgn(w(n))
//! ```
//!
//! with `D(n) = 0` for LMS, `D(n) = I` for ZA-LMS and, for GC-LMS, the
//! diagonal gate `D(n)_ii = ½ |sgn(e(n) x_i(n)) - sgn(w_i(n))|`. The gate and
//! the sign are both taken on the pre-update weights of the current step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{Realization, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "lms")]
    Lms,
    #[serde(rename = "za-lms")]
    ZaLms,
    #[serde(rename = "gc-lms")]
    GcLms,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Lms, Algorithm::ZaLms, Algorithm::GcLms];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Lms => "lms",
            Algorithm::ZaLms => "za-lms",
            Algorithm::GcLms => "gc-lms",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lms" => Ok(Algorithm::Lms),
            "za-lms" | "zalms" | "za" => Ok(Algorithm::ZaLms),
            "gc-lms" | "gclms" | "gc" => Ok(Algorithm::GcLms),
            other => Err(Error::arg(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub mu: f64,
    pub rho: f64,
    pub algorithm: Algorithm,
}

impl FilterParams {
    pub fn new(algorithm: Algorithm, mu: f64, rho: f64) -> Result<Self> {
        let p = FilterParams { mu, rho, algorithm };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::arg(format!("step size mu must be > 0, got {}", self.mu)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::arg(format!("attractor strength rho must be >= 0, got {}", self.rho)));
        }
        Ok(())
    }

    /// Warning text when `μ ≥ 1/λ_max`, the bound for convergence in mean.
    pub fn stability_warning(&self, lambda_max: f64) -> Option<String> {
        (self.mu * lambda_max >= 1.0).then(|| {
            format!(
                "{}: mu = {} violates mu < 1/lambda_max = {}; the mean recursion may diverge",
                self.algorithm,
                self.mu,
                1.0 / lambda_max
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub w: WeightVector,
    pub n: usize,
}

impl FilterState {
    pub fn new(w: WeightVector) -> Self {
        FilterState { w, n: 0 }
    }

    pub fn zeros(n_taps: usize) -> Self {
        FilterState::new(WeightVector::zeros(n_taps))
    }
}

/// Diagonal of the gradient-comparator gate; entries are exactly 0, ½ or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDiagonal(pub Vec<f64>);

impl GateDiagonal {
    pub fn ones(n: usize) -> Self {
        GateDiagonal(vec![1.0; n])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub y: f64,
    pub e: f64,
    /// Present for GC-LMS only.
    pub gate: Option<GateDiagonal>,
    pub w_next: WeightVector,
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

/// Component-wise sign with exact-zero comparison.
pub fn sgn(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sign(x)).collect()
}

/// Gate diagonal `½ |sgn(e x_i) - sgn(w_i)|`.
pub fn gate(e: f64, x: &[f64], w: &[f64]) -> Result<GateDiagonal> {
    check_len(x, w)?;
    Ok(GateDiagonal(
        x.iter()
            .zip(w)
            .map(|(&xi, &wi)| 0.5 * (sign(e * xi) - sign(wi)).abs())
            .collect(),
    ))
}

fn check_len(x: &[f64], w: &[f64]) -> Result<()> {
    if x.len() != w.len() {
        return Err(Error::arg(format!(
            "regressor length {} does not match weight length {}",
            x.len(),
            w.len()
        )));
    }
    Ok(())
}

/// Shared update body. `direction_i` is the per-tap attractor direction
/// (`D_ii sgn(w_i)`), or `None` for plain LMS.
fn update(
    state: &FilterState,
    mu: f64,
    rho: f64,
    x: &[f64],
    e: f64,
    direction: Option<&dyn Fn(usize) -> f64>,
) -> Result<WeightVector> {
    let mut w_next = state.w.clone();
    for (i, wi) in w_next.iter_mut().enumerate() {
        *wi += mu * e * x[i];
        if let Some(dir) = direction {
            // an exact-zero attractor leaves the tap's bits untouched
            let pull = rho * dir(i);
            if pull != 0.0 {
                *wi -= pull;
            }
        }
    }
    if !w_next.is_finite() {
        return Err(Error::Diverged { iteration: state.n });
    }
    Ok(w_next)
}

fn output_and_error(state: &FilterState, x: &[f64], d_obs: f64) -> Result<(f64, f64)> {
    check_len(x, &state.w)?;
    let y = state.w.dot(x);
    Ok((y, d_obs - y))
}

pub fn lms_step(state: &FilterState, params: &FilterParams, x: &[f64], d_obs: f64) -> Result<StepRecord> {
    let (y, e) = output_and_error(state, x, d_obs)?;
    let w_next = update(state, params.mu, 0.0, x, e, None)?;
    Ok(StepRecord { y, e, gate: None, w_next })
}

pub fn za_lms_step(state: &FilterState, params: &FilterParams, x: &[f64], d_obs: f64) -> Result<StepRecord> {
    let (y, e) = output_and_error(state, x, d_obs)?;
    let w = &state.w;
    let w_next = update(state, params.mu, params.rho, x, e, Some(&|i| sign(w[i])))?;
    Ok(StepRecord { y, e, gate: None, w_next })
}

pub fn gc_lms_step(state: &FilterState, params: &FilterParams, x: &[f64], d_obs: f64) -> Result<StepRecord> {
    let (y, e) = output_and_error(state, x, d_obs)?;
    let w = &state.w;
    let d = gate(e, x, w)?;
    let w_next = update(state, params.mu, params.rho, x, e, Some(&|i| d.0[i] * sign(w[i])))?;
    Ok(StepRecord { y, e, gate: Some(d), w_next })
}

/// Dispatches on `params.algorithm`.
pub fn step(state: &FilterState, params: &FilterParams, x: &[f64], d_obs: f64) -> Result<StepRecord> {
    match params.algorithm {
        Algorithm::Lms => lms_step(state, params, x, d_obs),
        Algorithm::ZaLms => za_lms_step(state, params, x, d_obs),
        Algorithm::GcLms => gc_lms_step(state, params, x, d_obs),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep `w(n)` every `stride` iterations (and at the end).
    pub snapshot_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `e²(n)` for every iteration.
    pub sq_err: Vec<f64>,
    /// `(n, w(n))` pairs; `w(n)` is the weight used at iteration `n`.
    pub snapshots: Vec<(usize, WeightVector)>,
    pub final_state: FilterState,
}

/// Runs the selected recursion over a realization starting from `w_init`.
pub fn run_filter(
    params: &FilterParams,
    realization: &Realization,
    w_init: WeightVector,
    opts: RunOptions,
) -> Result<Trajectory> {
    run_filter_observed(params, realization, w_init, opts, |_, _, _| {})
}

/// Like [`run_filter`], calling `observe(n, state_before, record)` after every step.
pub fn run_filter_observed<F>(
    params: &FilterParams,
    realization: &Realization,
    w_init: WeightVector,
    opts: RunOptions,
    mut observe: F,
) -> Result<Trajectory>
where
    F: FnMut(usize, &FilterState, &StepRecord),
{
    params.validate()?;
    if w_init.len() != realization.n_taps() {
        return Err(Error::arg(format!(
            "initial weights have {} taps, realization has {}",
            w_init.len(),
            realization.n_taps()
        )));
    }
    if opts.snapshot_stride == Some(0) {
        return Err(Error::arg("snapshot stride must be positive"));
    }
    let total = realization.len();
    let mut state = FilterState::new(w_init);
    let mut sq_err = Vec::with_capacity(total);
    let mut snapshots = Vec::new();
    for it in 0..total {
        if let Some(stride) = opts.snapshot_stride {
            if it % stride == 0 {
                snapshots.push((it, state.w.clone()));
            }
        }
        let rec = step(&state, params, realization.regressor(it), realization.desired[it])?;
        sq_err.push(rec.e * rec.e);
        observe(it, &state, &rec);
        state.w = rec.w_next;
        state.n += 1;
    }
    if opts.snapshot_stride.is_some() {
        snapshots.push((total, state.w.clone()));
    }
    Ok(Trajectory { sq_err, snapshots, final_state: state })
}
