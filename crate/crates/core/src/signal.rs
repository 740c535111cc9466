//! Reference inputs `r(t)` and disturbance generators.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Angular frequency in rad/s.
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

/// `value` on the open window `(start, end)` of each period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub value: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub period: f64,
    pub windows: Vec<Window>,
}

/// One input channel: constant plus sinusoids plus a periodic schedule.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Channel {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub sinusoids: Vec<Sinusoid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
}

/// Which one-sided limit to take at a discontinuity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Channel {
    /// Value at `t`; schedule windows are open intervals.
    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with(t, None)
    }

    /// One-sided limit at `t`.
    pub fn eval_limit(&self, t: f64, side: Side) -> f64 {
        self.eval_with(t, Some(side))
    }

    fn eval_with(&self, t: f64, side: Option<Side>) -> f64 {
        let mut v = self.constant;
        for s in &self.sinusoids {
            v += s.amplitude * (s.frequency * t + s.phase).sin();
        }
        if let Some(sch) = &self.schedule {
            let period = sch.period;
            // Phase in (0, period] for left limits, [0, period) otherwise.
            let tau = match side {
                Some(Side::Left) => t - period * ((t / period).ceil() - 1.0),
                _ => t.rem_euclid(period),
            };
            for w in &sch.windows {
                let inside = match side {
                    None => w.start < tau && tau < w.end,
                    Some(Side::Left) => w.start < tau && tau <= w.end,
                    Some(Side::Right) => w.start <= tau && tau < w.end,
                };
                if inside {
                    v += w.value;
                }
            }
        }
        v
    }

    /// Smallest window edge strictly after `t`.
    pub fn next_breakpoint(&self, t: f64) -> Option<f64> {
        let sch = self.schedule.as_ref()?;
        let tol = 1e-12 * t.abs().max(1.0);
        sch.windows
            .iter()
            .flat_map(|w| [w.start, w.end])
            .map(|edge| {
                let k = ((t - edge) / sch.period).floor();
                let mut b = edge + k * sch.period;
                while b <= t + tol {
                    b += sch.period;
                }
                b
            })
            .reduce(f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InputSignal {
    pub channels: Vec<Channel>,
}

impl InputSignal {
    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.channels.iter().enumerate() {
            let finite = c.constant.is_finite()
                && c.sinusoids
                    .iter()
                    .all(|s| s.amplitude.is_finite() && s.frequency.is_finite() && s.phase.is_finite());
            if !finite {
                return Err(Error::Validation(format!("input channel {i}: non-finite parameter")));
            }
            if let Some(sch) = &c.schedule {
                if !(sch.period > 0.0) {
                    return Err(Error::Validation(format!("input channel {i}: period must be > 0")));
                }
                for w in &sch.windows {
                    if !(0.0 <= w.start && w.start < w.end && w.end <= sch.period) || !w.value.is_finite() {
                        return Err(Error::Validation(format!(
                            "input channel {i}: window ({}, {}) must lie in [0, period]",
                            w.start, w.end
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.channels.len()
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.channels.len(), self.channels.iter().map(|c| c.eval(t)))
    }

    pub fn eval_limit(&self, t: f64, side: Side) -> DVector<f64> {
        DVector::from_iterator(self.channels.len(), self.channels.iter().map(|c| c.eval_limit(t, side)))
    }

    /// Next discontinuity of any channel strictly after `t`.
    pub fn next_breakpoint(&self, t: f64) -> Option<f64> {
        self.channels
            .iter()
            .filter_map(|c| c.next_breakpoint(t))
            .reduce(f64::min)
    }
}

/// Disturbance families; all are clipped to `‖d‖₂ <= d̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceKind {
    None,
    /// `d(t) = d̄ · v/‖v‖ · sin(ω t + phase)`.
    Sinusoidal {
        direction: Vec<f64>,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Piecewise constant over windows of length `hold`, each a seeded
    /// random vector of norm in `[d̄/2, d̄]`.
    BoundedRandom {
        seed: u64,
        hold: f64,
    },
    /// Supplied in code through [`Disturbance::with_hook`].
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    #[serde(flatten)]
    pub kind: DisturbanceKind,
    #[serde(default)]
    pub d_bar: f64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            kind: DisturbanceKind::None,
            d_bar: 0.0,
        }
    }
}

pub type DisturbanceHook = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A validated disturbance ready for evaluation.
#[derive(Clone)]
pub struct Disturbance {
    spec: DisturbanceSpec,
    n: usize,
    hook: Option<DisturbanceHook>,
}

impl std::fmt::Debug for Disturbance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Disturbance")
            .field("spec", &self.spec)
            .field("n", &self.n)
            .field("hook", &self.hook.is_some())
            .finish()
    }
}

impl Disturbance {
    pub fn new(spec: DisturbanceSpec, n: usize) -> Result<Self> {
        if !(spec.d_bar >= 0.0) || !spec.d_bar.is_finite() {
            return Err(Error::Validation(format!(
                "d_bar must be finite and >= 0 (got {})",
                spec.d_bar
            )));
        }
        match &spec.kind {
            DisturbanceKind::Sinusoidal {
                direction,
                frequency,
                phase,
            } => {
                if direction.len() != n {
                    return Err(Error::Dimension(format!(
                        "disturbance direction has {} entries, state has {n}",
                        direction.len()
                    )));
                }
                if direction.iter().all(|v| *v == 0.0) || !frequency.is_finite() || !phase.is_finite() {
                    return Err(Error::Validation(
                        "sinusoidal disturbance needs a non-zero direction".into(),
                    ));
                }
            }
            DisturbanceKind::BoundedRandom { hold, .. } => {
                if !(*hold > 0.0) {
                    return Err(Error::Validation("bounded-random disturbance needs hold > 0".into()));
                }
            }
            DisturbanceKind::None | DisturbanceKind::Custom => {}
        }
        Ok(Self { spec, n, hook: None })
    }

    pub fn none(n: usize) -> Self {
        Self {
            spec: DisturbanceSpec::default(),
            n,
            hook: None,
        }
    }

    pub fn with_hook(mut self, hook: DisturbanceHook) -> Self {
        self.spec.kind = DisturbanceKind::Custom;
        self.hook = Some(hook);
        self
    }

    pub fn spec(&self) -> &DisturbanceSpec {
        &self.spec
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.spec.kind, DisturbanceKind::None)
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let d_bar = self.spec.d_bar;
        let raw = match &self.spec.kind {
            DisturbanceKind::None => return Ok(DVector::zeros(self.n)),
            DisturbanceKind::Sinusoidal {
                direction,
                frequency,
                phase,
            } => {
                let v = DVector::from_column_slice(direction);
                let v = &v / v.norm();
                v * (d_bar * (frequency * t + phase).sin())
            }
            DisturbanceKind::BoundedRandom { seed, hold } => random_window(*seed, (t / hold).floor(), self.n) * d_bar,
            DisturbanceKind::Custom => {
                let hook = self
                    .hook
                    .as_ref()
                    .ok_or_else(|| Error::Validation("custom disturbance without a hook".into()))?;
                let d = hook(t, x, u);
                if d.len() != self.n {
                    return Err(Error::Dimension(format!(
                        "disturbance hook returned {} entries",
                        d.len()
                    )));
                }
                d
            }
        };
        Ok(clip_norm(raw, d_bar))
    }
}

/// Deterministic unit-bounded vector for window index `k`, independent of
/// how often or in which order windows are queried.
fn random_window(seed: u64, k: f64, n: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as i64 as u64);
    let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
    let scale = rng.gen_range(0.5..=1.0);
    let norm = v.norm();
    if norm == 0.0 {
        v
    } else {
        v * (scale / norm)
    }
}

fn clip_norm(d: DVector<f64>, d_bar: f64) -> DVector<f64> {
    let norm = d.norm();
    if norm > d_bar {
        if norm == 0.0 || d_bar == 0.0 {
            DVector::zeros(d.len())
        } else {
            d * (d_bar / norm)
        }
    } else {
        d
    }
}
