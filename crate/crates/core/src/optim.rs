//! SGD, RMSProp and Adam at every precision mode, with detection of the
//! events that make small-ε adaptive optimizers blow up in binary16.
//!
//! Each update follows a fixed evaluation order and rounds every step at
//! the update precision: binary16 for `Pure16`, binary32 for `Pure32` and
//! for the binary32 master weights of `Mixed`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::b16::round_to_half;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::{Arith, Precision};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<OptimizerKind> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Optimizer hyperparameters as configured (before rounding to the mode).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f32,
    /// RMSProp decay.
    pub beta: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { kind: OptimizerKind::Sgd, lr: 1e-3, beta: 0.9, beta1: 0.9, beta2: 0.999, eps: 1e-3 }
    }
}

impl OptimConfig {
    pub fn sgd(lr: f32) -> OptimConfig {
        OptimConfig { kind: OptimizerKind::Sgd, lr, ..Default::default() }
    }

    pub fn rmsprop(lr: f32, eps: f32) -> OptimConfig {
        OptimConfig { kind: OptimizerKind::RmsProp, lr, eps, ..Default::default() }
    }

    pub fn adam(lr: f32, eps: f32) -> OptimConfig {
        OptimConfig { kind: OptimizerKind::Adam, lr, eps, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f32| (0.0..1.0).contains(&x);
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(in_unit(self.beta) && in_unit(self.beta1) && in_unit(self.beta2)) {
            return Err(Error::Config("decay rates must lie in [0, 1)".into()));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstabilityCause {
    OverflowInf,
    NaNProduced,
    MomentUnderflowToZero,
}

impl InstabilityCause {
    pub const ALL: [InstabilityCause; 3] =
        [InstabilityCause::OverflowInf, InstabilityCause::NaNProduced, InstabilityCause::MomentUnderflowToZero];

    fn bit(self) -> u8 {
        match self {
            InstabilityCause::OverflowInf => 1,
            InstabilityCause::NaNProduced => 2,
            InstabilityCause::MomentUnderflowToZero => 4,
        }
    }
}

impl fmt::Display for InstabilityCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// First occurrence of a cause for one parameter scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstabilityEvent {
    pub step: u64,
    pub layer: usize,
    /// Parameter slot within the layer (0 = weights, 1 = bias, ...).
    pub param: usize,
    /// Flat index within the parameter tensor.
    pub index: usize,
    pub cause: InstabilityCause,
}

/// Whether `1/ε` is representable at the update precision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonProbe {
    pub eps: f32,
    /// ε after rounding to the update precision.
    pub eps_rounded: f32,
    /// `1/ε` evaluated at the update precision.
    pub reciprocal: f32,
    pub reciprocal_overflows: bool,
}

/// Hyperparameters rounded once to the update precision.
#[derive(Clone, Copy, Debug)]
struct Rounded {
    a: Arith,
    lr: f32,
    beta: f32,
    one_minus_beta: f32,
    beta1: f32,
    one_minus_beta1: f32,
    beta2: f32,
    one_minus_beta2: f32,
    eps: f32,
}

impl Rounded {
    fn new(cfg: &OptimConfig, a: Arith) -> Rounded {
        let beta = a.round(cfg.beta);
        let beta1 = a.round(cfg.beta1);
        let beta2 = a.round(cfg.beta2);
        Rounded {
            a,
            lr: a.round(cfg.lr),
            beta,
            one_minus_beta: a.sub(1.0, beta),
            beta1,
            one_minus_beta1: a.sub(1.0, beta1),
            beta2,
            one_minus_beta2: a.sub(1.0, beta2),
            eps: a.round(cfg.eps),
        }
    }
}

/// Bias-correction divisors `1 - β^t`, computed at binary32 from the
/// configured β and then rounded to the update precision.
fn bias_corrections(cfg: &OptimConfig, a: Arith, t: u64) -> (f32, f32) {
    let t = t.min(i32::MAX as u64) as i32;
    (a.round(1.0 - cfg.beta1.powi(t)), a.round(1.0 - cfg.beta2.powi(t)))
}

/// One scalar update. Returns the new weight and a cause bitmask.
#[inline]
fn update(kind: OptimizerKind, r: &Rounded, c1: f32, c2: f32, w: f32, g: f32, m: &mut f32, v: &mut f32) -> (f32, u8) {
    let a = r.a;
    let mut flags = 0u8;
    let step = match kind {
        OptimizerKind::Sgd => a.mul(r.lr, g),
        OptimizerKind::RmsProp => {
            let g2 = a.mul(g, g);
            *v = a.add(a.mul(r.beta, *v), a.mul(r.one_minus_beta, g2));
            if g != 0.0 && *v == 0.0 {
                flags |= InstabilityCause::MomentUnderflowToZero.bit();
            }
            let d = a.add(a.sqrt(*v), r.eps);
            a.mul(r.lr, a.div(g, d))
        }
        OptimizerKind::Adam => {
            let g2 = a.mul(g, g);
            *m = a.add(a.mul(r.beta1, *m), a.mul(r.one_minus_beta1, g));
            *v = a.add(a.mul(r.beta2, *v), a.mul(r.one_minus_beta2, g2));
            let m_hat = a.div(*m, c1);
            let v_hat = a.div(*v, c2);
            if g != 0.0 && v_hat == 0.0 {
                flags |= InstabilityCause::MomentUnderflowToZero.bit();
            }
            let d = a.add(a.sqrt(v_hat), r.eps);
            a.mul(r.lr, a.div(m_hat, d))
        }
    };
    let w_new = a.sub(w, step);
    if w_new.is_nan() {
        flags |= InstabilityCause::NaNProduced.bit();
    } else if w_new.is_infinite() {
        flags |= InstabilityCause::OverflowInf.bit();
    }
    (w_new, flags)
}

#[derive(Clone, Debug)]
struct Slot {
    layer: usize,
    param: usize,
    m: Vec<f32>,
    v: Vec<f32>,
    seen: Vec<u8>,
}

/// Maximum number of individual events retained (counts are always exact).
pub const EVENT_LOG_CAP: usize = 10_000;

/// Optimizer state for one model.
#[derive(Clone, Debug)]
pub struct OptimState {
    config: OptimConfig,
    precision: Precision,
    rounded: Rounded,
    t: u64,
    slots: Vec<Slot>,
    events: Vec<InstabilityEvent>,
    counts: [u64; 3],
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub new_events: u64,
    pub non_finite_weights: u64,
}

impl OptimState {
    pub fn new(config: OptimConfig, precision: Precision) -> Result<OptimState> {
        config.validate()?;
        let a = update_arith(precision);
        Ok(OptimState {
            config,
            precision,
            rounded: Rounded::new(&config, a),
            t: 0,
            slots: Vec::new(),
            events: Vec::new(),
            counts: [0; 3],
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn events(&self) -> &[InstabilityEvent] {
        &self.events
    }

    pub fn first_event(&self) -> Option<&InstabilityEvent> {
        self.events.first()
    }

    pub fn event_count(&self, cause: InstabilityCause) -> u64 {
        self.counts[cause_index(cause)]
    }

    pub fn total_events(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Moment buffers `(m, v)` for a layer parameter, once a step has run.
    pub fn moments(&self, layer: usize, param: usize) -> Option<(&[f32], &[f32])> {
        self.slots.iter().find(|s| s.layer == layer && s.param == param).map(|s| (s.m.as_slice(), s.v.as_slice()))
    }

    /// Reciprocal of ε at the update precision.
    pub fn epsilon_probe(&self) -> EpsilonProbe {
        epsilon_probe(self.config.eps, self.precision)
    }

    fn ensure_slots(&mut self, model: &Model) -> Result<()> {
        let wanted: Vec<(usize, usize, usize)> = model
            .layers()
            .iter()
            .enumerate()
            .flat_map(|(li, l)| {
                l.params().iter().enumerate().filter(|(_, p)| p.is_trainable()).map(move |(pi, p)| (li, pi, p.len()))
            })
            .collect();
        if self.slots.is_empty() {
            self.slots = wanted
                .into_iter()
                .map(|(layer, param, n)| Slot { layer, param, m: vec![0.0; n], v: vec![0.0; n], seen: vec![0; n] })
                .collect();
            return Ok(());
        }
        let same = self.slots.len() == wanted.len()
            && self.slots.iter().zip(&wanted).all(|(s, &(l, p, n))| s.layer == l && s.param == p && s.m.len() == n);
        if !same {
            return Err(Error::contract("optimizer state does not match the model's parameters"));
        }
        Ok(())
    }

    /// Apply one update to every trainable parameter from its gradient.
    pub fn step(&mut self, model: &mut Model) -> Result<StepReport> {
        if model.precision() != self.precision {
            return Err(Error::PrecisionMismatch { op: "optimizer step" });
        }
        self.ensure_slots(model)?;
        self.t += 1;
        let (c1, c2) = bias_corrections(&self.config, self.rounded.a, self.t);
        let kind = self.config.kind;
        let r = self.rounded;
        let mut report = StepReport::default();
        let layers = model.layers_mut();
        for slot in &mut self.slots {
            let p = &mut layers[slot.layer].params_mut()[slot.param];
            let grad = p.grad().to_vec();
            let values = p.values_mut();
            for (i, (w, &g)) in values.iter_mut().zip(&grad).enumerate() {
                let (w_new, flags) = update(kind, &r, c1, c2, *w, g, &mut slot.m[i], &mut slot.v[i]);
                *w = w_new;
                if !w_new.is_finite() {
                    report.non_finite_weights += 1;
                }
                let fresh = flags & !slot.seen[i];
                if fresh != 0 {
                    slot.seen[i] |= fresh;
                    for cause in InstabilityCause::ALL {
                        if fresh & cause.bit() != 0 {
                            self.counts[cause_index(cause)] += 1;
                            report.new_events += 1;
                            if self.events.len() < EVENT_LOG_CAP {
                                self.events.push(InstabilityEvent {
                                    step: self.t,
                                    layer: slot.layer,
                                    param: slot.param,
                                    index: i,
                                    cause,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(report)
    }
}

fn cause_index(c: InstabilityCause) -> usize {
    match c {
        InstabilityCause::OverflowInf => 0,
        InstabilityCause::NaNProduced => 1,
        InstabilityCause::MomentUnderflowToZero => 2,
    }
}

fn update_arith(p: Precision) -> Arith {
    Arith::new(p == Precision::Pure16)
}

pub fn epsilon_probe(eps: f32, precision: Precision) -> EpsilonProbe {
    let a = update_arith(precision);
    let eps_rounded = a.round(eps);
    let reciprocal = a.div(1.0, eps_rounded);
    EpsilonProbe { eps, eps_rounded, reciprocal, reciprocal_overflows: reciprocal.is_infinite() }
}

/// Result of a single scalar update.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarStep {
    pub w: f32,
    pub m: f32,
    pub v: f32,
    pub causes: Vec<InstabilityCause>,
}

/// Update a single scalar at step `t` with moments `(m, v)`, exactly as
/// [`OptimState::step`] would update one parameter element.
pub fn scalar_step(cfg: &OptimConfig, precision: Precision, t: u64, w: f32, g: f32, m: f32, v: f32) -> ScalarStep {
    let a = update_arith(precision);
    let r = Rounded::new(cfg, a);
    let (c1, c2) = bias_corrections(cfg, a, t.max(1));
    let (mut m, mut v) = (m, v);
    let (w, flags) = update(cfg.kind, &r, c1, c2, w, g, &mut m, &mut v);
    let causes = InstabilityCause::ALL.into_iter().filter(|c| flags & c.bit() != 0).collect();
    ScalarStep { w, m, v, causes }
}

/// Ratio of the first-step update magnitude from zero state to `|η·g|`,
/// both taken at binary64 from the configured η and the given gradient.
pub fn first_step_amplification(cfg: &OptimConfig, precision: Precision, g: f32) -> f64 {
    let s = scalar_step(cfg, precision, 1, 0.0, g, 0.0, 0.0);
    (s.w as f64).abs() / (cfg.lr as f64 * (g as f64).abs())
}

/// Round a hyperparameter the way a `Pure16` optimizer stores it.
pub fn half_hyperparameter(x: f32) -> f32 {
    round_to_half(x as f64).to_f32()
}
