//! Spatial relevance as a function of `s_in = 1 - SDist`.
//!
//! The learned form is a monotone step function over `t + 1` uniformly spaced
//! thresholds `i / t`: crossing threshold `i` adds `softplus(w_s[i])`. The
//! frozen form stores prefix sums so inference is one table lookup.

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, softplus_inv};

/// Learnable monotone step function with `t` steps (`t + 1` weights).
#[derive(Debug, Clone, PartialEq)]
pub struct StepSpatialModel {
    steps: usize,
    raw: Vec<f64>,
    /// `softplus(w_s[i])`, kept in step with `raw`.
    increments: Vec<f64>,
    prefix: Vec<f64>,
}

impl StepSpatialModel {
    /// Every increment starts at `increment`; `increment = 1 / (t + 1)`
    /// makes the initial function a staircase approximation of `s_in`.
    pub fn new(steps: usize, increment: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::OutOfRange("step count t must be >= 1".into()));
        }
        if !(increment > 0.0) {
            return Err(Error::OutOfRange(format!("initial increment must be > 0, got {increment}")));
        }
        Self::from_raw(vec![softplus_inv(increment); steps + 1])
    }

    /// Builds from raw (pre-activation) weights; `t = raw.len() - 1`.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.len() < 2 {
            return Err(Error::OutOfRange("step model needs at least 2 weights".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("non-finite step weight".into()));
        }
        let mut m = Self {
            steps: raw.len() - 1,
            raw,
            increments: Vec::new(),
            prefix: Vec::new(),
        };
        m.freeze_prefix();
        Ok(m)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// `w_hat`: prefix sums of the activated increments.
    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    /// Recomputes `w_hat[i] = Σ_{j≤i} softplus(w_s[j])`.
    pub fn freeze_prefix(&mut self) {
        self.increments = self.raw.iter().map(|&w| softplus(w)).collect();
        let mut acc = 0.0;
        self.prefix = self
            .increments
            .iter()
            .map(|&v| {
                acc += v;
                acc
            })
            .collect();
    }

    fn threshold(&self, i: usize) -> f64 {
        i as f64 / self.steps as f64
    }

    /// Number of thresholds `i / t` with `s_in >= i / t`.
    pub fn thresholds_passed(&self, s_in: f64) -> usize {
        let (mut lo, mut hi) = (0usize, self.steps + 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if s_in >= self.threshold(mid) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Direct summation `Σ_i softplus(w_s[i]) · [s_in >= i/t]`, stopping at
    /// the first threshold not reached.
    pub fn srel_train(&self, s_in: f64) -> Result<f64> {
        check_unit(s_in)?;
        let mut sum = 0.0;
        for (i, &v) in self.increments.iter().enumerate() {
            if s_in < self.threshold(i) {
                break;
            }
            sum += v;
        }
        Ok(sum)
    }

    /// Constant-time lookup `w_hat[floor(s_in · t)]`, index clamped to
    /// `[0, t]`. The floor is nudged by one when rounding in `s_in · t`
    /// disagrees with the threshold comparison.
    #[inline]
    pub fn srel_infer(&self, s_in: f64) -> f64 {
        let t = self.steps;
        let scaled = (s_in * t as f64).floor();
        let mut idx = if scaled <= 0.0 {
            0
        } else if scaled >= t as f64 {
            t
        } else {
            scaled as usize
        };
        if idx < t && s_in >= self.threshold(idx + 1) {
            idx += 1;
        } else if idx > 0 && s_in < self.threshold(idx) {
            idx -= 1;
        }
        self.prefix[idx]
    }

    /// Training-mode value using the current prefix table; equal to
    /// [`StepSpatialModel::srel_train`] for `s_in ∈ [0, 1]`.
    #[inline]
    fn train_value(&self, passed: usize) -> f64 {
        if passed == 0 {
            0.0
        } else {
            self.prefix[passed - 1]
        }
    }

    pub(crate) fn set_raw(&mut self, raw: &[f64]) {
        self.raw.copy_from_slice(raw);
        self.freeze_prefix();
    }

    pub(crate) fn round_to_f32(&mut self) {
        for w in &mut self.raw {
            *w = *w as f32 as f64;
        }
        self.freeze_prefix();
    }
}

fn check_unit(s_in: f64) -> Result<()> {
    if (0.0..=1.0).contains(&s_in) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("s_in = {s_in} outside [0, 1]")))
    }
}

/// `softplus(a) · s_in^softplus(b)`, with `0^β = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpSpatial {
    pub a: f64,
    pub b: f64,
}

impl ExpSpatial {
    /// Starts at the identity `s_in`.
    pub fn identity() -> Self {
        let one = softplus_inv(1.0);
        Self { a: one, b: one }
    }

    pub fn value(&self, s_in: f64) -> f64 {
        if s_in <= 0.0 {
            return 0.0;
        }
        softplus(self.a) * s_in.powf(softplus(self.b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialKind {
    Step,
    Linear,
    Exp,
}

impl SpatialKind {
    pub(crate) fn code(self) -> u32 {
        match self {
            SpatialKind::Step => 0,
            SpatialKind::Linear => 1,
            SpatialKind::Exp => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(SpatialKind::Step),
            1 => Some(SpatialKind::Linear),
            2 => Some(SpatialKind::Exp),
            _ => None,
        }
    }
}

impl std::str::FromStr for SpatialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(SpatialKind::Step),
            "linear" | "linear_sin" => Ok(SpatialKind::Linear),
            "exp" | "exp_learnable" => Ok(SpatialKind::Exp),
            _ => Err(Error::OutOfRange(format!("unknown spatial kind {s:?}"))),
        }
    }
}

impl std::fmt::Display for SpatialKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpatialKind::Step => "step",
            SpatialKind::Linear => "linear",
            SpatialKind::Exp => "exp",
        })
    }
}

/// The spatial term of the relevance score: the learned step function or
/// one of the two ablation replacements.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialRelevance {
    Step(StepSpatialModel),
    /// `SRel = s_in`, no parameters.
    Linear,
    Exp(ExpSpatial),
}

/// Per-batch gradient accumulator for [`SpatialRelevance`] parameters.
///
/// For the step model, contributions are bucketed by how many thresholds
/// were passed and expanded to per-weight gradients once per batch.
#[derive(Debug, Clone)]
pub(crate) struct SpatialGrad {
    buf: Vec<f64>,
}

impl SpatialRelevance {
    pub fn kind(&self) -> SpatialKind {
        match self {
            SpatialRelevance::Step(_) => SpatialKind::Step,
            SpatialRelevance::Linear => SpatialKind::Linear,
            SpatialRelevance::Exp(_) => SpatialKind::Exp,
        }
    }

    /// The two ablation scorers: `(linear_sin, exp_learnable)`.
    pub fn ablation_scorers() -> (SpatialRelevance, SpatialRelevance) {
        (SpatialRelevance::Linear, SpatialRelevance::Exp(ExpSpatial::identity()))
    }

    /// Inference-mode value (table lookup for the step model).
    #[inline]
    pub fn infer(&self, s_in: f64) -> f64 {
        match self {
            SpatialRelevance::Step(m) => m.srel_infer(s_in),
            SpatialRelevance::Linear => s_in,
            SpatialRelevance::Exp(e) => e.value(s_in),
        }
    }

    /// Training-mode value (threshold comparisons for the step model).
    pub fn train(&self, s_in: f64) -> Result<f64> {
        check_unit(s_in)?;
        Ok(match self {
            SpatialRelevance::Step(m) => m.train_value(m.thresholds_passed(s_in)),
            SpatialRelevance::Linear => s_in,
            SpatialRelevance::Exp(e) => e.value(s_in),
        })
    }

    pub fn num_params(&self) -> usize {
        match self {
            SpatialRelevance::Step(m) => m.raw.len(),
            SpatialRelevance::Linear => 0,
            SpatialRelevance::Exp(_) => 2,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            SpatialRelevance::Step(m) => m.raw.clone(),
            SpatialRelevance::Linear => Vec::new(),
            SpatialRelevance::Exp(e) => vec![e.a, e.b],
        }
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        Error::check_dim(self.num_params(), p.len())?;
        match self {
            SpatialRelevance::Step(m) => m.set_raw(p),
            SpatialRelevance::Linear => {}
            SpatialRelevance::Exp(e) => {
                e.a = p[0];
                e.b = p[1];
            }
        }
        Ok(())
    }

    pub(crate) fn round_to_f32(&mut self) {
        match self {
            SpatialRelevance::Step(m) => m.round_to_f32(),
            SpatialRelevance::Linear => {}
            SpatialRelevance::Exp(e) => {
                e.a = e.a as f32 as f64;
                e.b = e.b as f32 as f64;
            }
        }
    }

    pub(crate) fn grad_buffer(&self) -> SpatialGrad {
        let len = match self {
            SpatialRelevance::Step(m) => m.raw.len() + 1,
            other => other.num_params(),
        };
        SpatialGrad { buf: vec![0.0; len] }
    }

    /// Adds `upstream · ∂SRel(s_in)/∂params` into `grad`.
    pub(crate) fn add_grad(&self, s_in: f64, upstream: f64, grad: &mut SpatialGrad) {
        match self {
            SpatialRelevance::Step(m) => grad.buf[m.thresholds_passed(s_in)] += upstream,
            SpatialRelevance::Linear => {}
            SpatialRelevance::Exp(e) => {
                if s_in <= 0.0 {
                    return;
                }
                let alpha = softplus(e.a);
                let beta = softplus(e.b);
                let pow = s_in.powf(beta);
                grad.buf[0] += upstream * sigmoid(e.a) * pow;
                grad.buf[1] += upstream * alpha * pow * s_in.ln() * sigmoid(e.b);
            }
        }
    }

    /// Expands an accumulator into a gradient over [`SpatialRelevance::params`].
    pub(crate) fn finish_grad(&self, grad: SpatialGrad) -> Vec<f64> {
        match self {
            SpatialRelevance::Step(m) => {
                // weight i receives every contribution that passed > i thresholds
                let mut out = vec![0.0; m.raw.len()];
                let mut tail = 0.0;
                for i in (0..m.raw.len()).rev() {
                    tail += grad.buf[i + 1];
                    out[i] = tail * sigmoid(m.raw[i]);
                }
                out
            }
            _ => grad.buf,
        }
    }
}
