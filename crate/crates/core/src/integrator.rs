//! Time stepping of the Galerkin system and trajectory recording.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{Event, EventKind, ObservableSet, TimeAverages, TrajectoryRecord};
use crate::error::{invalid, Result, SpeError};
use crate::noise::{NoiseEnvelope, NoiseRecord, WienerIncrement};
use crate::operators::{DriftTerms, PrimitiveEquations};
use crate::rng::NoiseStream;
use crate::spectral::{Spectrum, Transform};
use crate::state::{PhysicalParams, StateY};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `(1 + dt A) Y+ = Y + dt N(Y) + Psi xi`.
    #[default]
    SemiImplicitEm,
    /// `Y+ = Y + dt (-A Y + N(Y)) + Psi xi`; needs `dt mu_max < 2`.
    ExplicitEm,
    /// Exponential integrator: exact for the linear part, with the
    /// Ornstein-Uhlenbeck weighting on the noise.
    ExponentialEm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Evaluate products on the alias-free grid.
    #[serde(default = "yes")]
    pub dealias: bool,
}

fn yes() -> bool {
    true
}

impl StepperConfig {
    pub fn new(dt: f64, scheme: Scheme) -> Self {
        Self { dt, scheme, dealias: true }
    }

    pub fn validate(&self, mu_max: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {}", self.dt)));
        }
        if self.scheme == Scheme::ExplicitEm && self.dt * mu_max >= 2.0 {
            return Err(invalid(format!(
                "explicit scheme is unstable: dt * mu_max = {:.3} >= 2 (dt must be below {:.3e})",
                self.dt * mu_max,
                2.0 / mu_max
            )));
        }
        Ok(())
    }
}

/// `||Y||^2` above which a step is declared a blow-up.
pub const BLOWUP_NORM_SQ: f64 = 1e16;

/// One-step map `Y_j -> Y_{j+1}` together with its linearization.
#[derive(Clone, Debug)]
pub struct Stepper {
    model: PrimitiveEquations,
    config: StepperConfig,
    envelope: Option<NoiseEnvelope>,
    gain_y: Vec<f64>,
    gain_n: Vec<f64>,
    gain_noise: Vec<f64>,
}

impl Stepper {
    pub fn new(model: PrimitiveEquations, config: StepperConfig, envelope: Option<NoiseEnvelope>) -> Result<Self> {
        let spectrum = model.spectrum();
        config.validate(spectrum.mu_max())?;
        if let Some(env) = &envelope {
            if env.len() != spectrum.len() {
                return Err(invalid(format!("envelope has {} values but the spectrum has {} modes", env.len(), spectrum.len())));
            }
        }
        let dt = config.dt;
        let table = spectrum.truncation().eigenvalue_table();
        let (mut gy, mut gn, mut gw) = (Vec::new(), Vec::new(), Vec::new());
        for &mu in &table {
            let (a, b, c) = match config.scheme {
                Scheme::SemiImplicitEm => {
                    let d = 1.0 / (1.0 + mu * dt);
                    (d, dt * d, d)
                }
                Scheme::ExplicitEm => (1.0 - mu * dt, dt, 1.0),
                Scheme::ExponentialEm if mu > 0.0 => {
                    let x = mu * dt;
                    ((-x).exp(), -(-x).exp_m1() / mu, (-(-2.0 * x).exp_m1() / (2.0 * x)).sqrt())
                }
                Scheme::ExponentialEm => (1.0, dt, 1.0),
            };
            gy.push(a);
            gn.push(b);
            gw.push(c);
        }
        Ok(Self { model, config, envelope, gain_y: gy, gain_n: gn, gain_noise: gw })
    }

    /// Builds the model on the grid selected by `config.dealias`.
    pub fn build(
        spectrum: Arc<Spectrum>,
        params: PhysicalParams,
        terms: DriftTerms,
        config: StepperConfig,
        envelope: Option<NoiseEnvelope>,
    ) -> Result<Self> {
        let trunc = spectrum.truncation();
        let transform = if config.dealias { Transform::dealiased(trunc) } else { Transform::aliased(trunc) };
        let model = PrimitiveEquations::with_transform(spectrum, Arc::new(transform), params)?.with_terms(terms);
        Self::new(model, config, envelope)
    }

    pub fn model(&self) -> &PrimitiveEquations {
        &self.model
    }

    pub fn config(&self) -> StepperConfig {
        self.config
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn envelope(&self) -> Option<&NoiseEnvelope> {
        self.envelope.as_ref()
    }

    fn has_nonlinear(&self) -> bool {
        let t = self.model.terms();
        t.advection || t.coupling
    }

    fn combine(&self, y: &StateY, n: Option<&StateY>, w: Option<&StateY>) -> StateY {
        let mut out = StateY::zeros(y.truncation());
        let src_y = y.fields();
        let src_n = n.map(|n| n.fields());
        let src_w = w.map(|w| w.fields());
        for (c, dst) in out.fields_mut().into_iter().enumerate() {
            let d = dst.data_mut();
            let yy = src_y[c].data();
            for i in 0..d.len() {
                let mut v = self.gain_y[i] * yy[i];
                if let Some(n) = &src_n {
                    v += self.gain_n[i] * n[c].data()[i];
                }
                if let Some(w) = &src_w {
                    v += self.gain_noise[i] * w[c].data()[i];
                }
                d[i] = v;
            }
        }
        out.constrained()
    }

    fn guard(&self, y: StateY, step: u64) -> Result<StateY> {
        if !y.is_finite() || y.norm_sq() > BLOWUP_NORM_SQ {
            return Err(SpeError::BlowUp { last_finite_time: step as f64 * self.config.dt, step: step + 1 });
        }
        Ok(y)
    }

    /// Advances `y` from grid time `step * dt` by one step with the given
    /// increment. `None` means no noise.
    pub fn step(&self, y: &StateY, step: u64, increment: Option<&WienerIncrement>) -> Result<StateY> {
        let n = if self.has_nonlinear() { Some(self.model.explicit_drift(y)?) } else { None };
        let w = match (increment, &self.envelope) {
            (Some(inc), Some(env)) => {
                if inc.xi.len() != env.len() {
                    return Err(invalid("increment length does not match the spectrum"));
                }
                let c: Vec<f64> = env.values().iter().zip(&inc.xi).map(|(p, x)| p * x).collect();
                Some(StateY::from_modal(self.model.spectrum(), &c))
            }
            _ => None,
        };
        self.guard(self.combine(y, n.as_ref(), w.as_ref()), step)
    }

    /// One step driven by `stream` at its `step` address.
    pub fn step_stream(&self, y: &StateY, step: u64, stream: &NoiseStream) -> Result<StateY> {
        if self.envelope.is_none() {
            return self.step(y, step, None);
        }
        let inc = crate::noise::sample_increment(stream, step, self.model.spectrum().len(), self.config.dt)?;
        self.step(y, step, Some(&inc))
    }

    /// The derivative of one step at `y` applied to `beta`. The noise is
    /// additive, so it drops out.
    pub fn step_tangent(&self, y: &StateY, beta: &StateY) -> Result<StateY> {
        let n = if self.has_nonlinear() { Some(self.model.tangent_explicit_drift(y, beta)?) } else { None };
        Ok(self.combine(beta, n.as_ref(), None))
    }

    /// Content hash of everything that determines a trajectory besides the
    /// initial state.
    pub fn fingerprint(&self, stream: &NoiseStream) -> String {
        let spec = self.model.spectrum();
        let t = spec.truncation();
        let mut h = Sha256::new();
        h.update(format!(
            "{}:{}:{}:{:?}:{:?}:{:?}:{}:{:?}",
            t.nh,
            t.nz,
            self.model.transform().is_dealiased(),
            self.model.params(),
            self.model.terms(),
            self.config,
            stream.root_seed,
            stream.stream_id
        ));
        if let Some(env) = &self.envelope {
            for v in env.values() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Window over which time averages are accumulated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageWindow {
    pub burn_in: f64,
    pub thinning: u64,
}

/// What to keep while integrating.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordOptions {
    pub observables: ObservableSet,
    /// Record every `stride`-th step; the last step is always kept.
    pub stride: u64,
    pub record_noise: bool,
    pub averages: Option<AverageWindow>,
    /// Emit a stopping-time event the first time the cumulative `H_3`
    /// integral reaches `k0 + 1`.
    pub stopping_k0: Option<f64>,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self { observables: ObservableSet::default(), stride: 1, record_noise: true, averages: None, stopping_k0: None }
    }
}

/// Where a segment starts: global step index and the `H_3` integral so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentStart {
    pub step: u64,
    pub cumulative_h3: f64,
}

/// Number of steps of size `dt` that reach `horizon`.
pub fn steps_for(horizon: f64, dt: f64) -> Result<u64> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be non-negative, got {horizon}")));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(dt) {
        return Err(invalid(format!("horizon {horizon} is not a multiple of dt = {dt}")));
    }
    Ok(n as u64)
}

/// Integrates from `t = 0` to `horizon`.
pub fn integrate(stepper: &Stepper, y0: &StateY, horizon: f64, stream: NoiseStream, options: &RecordOptions) -> Result<TrajectoryRecord> {
    let steps = steps_for(horizon, stepper.dt())?;
    integrate_segment(stepper, y0, SegmentStart::default(), steps, stream, options)
}

/// Integrates `steps` steps starting at `start`. The grid time of global
/// step `j` is `j * dt`, so a resumed segment reproduces the uninterrupted
/// run bit for bit.
pub fn integrate_segment(
    stepper: &Stepper,
    y0: &StateY,
    start: SegmentStart,
    steps: u64,
    stream: NoiseStream,
    options: &RecordOptions,
) -> Result<TrajectoryRecord> {
    let dt = stepper.dt();
    let spectrum = stepper.model().spectrum().clone();
    let stride = options.stride.max(1);
    let capacity = (steps / stride + 2) as usize;
    let mut rec = TrajectoryRecord {
        first_step: start.step,
        times: Vec::with_capacity(capacity),
        sq_norms: Vec::with_capacity(capacity),
        observable_names: options.observables.names(),
        observables: Vec::new(),
        cumulative_h3: Vec::with_capacity(capacity),
        events: Vec::new(),
        fingerprint: stepper.fingerprint(&stream),
        noise: None,
        averages: None,
        final_state: y0.clone(),
    };
    let mut averages = options.averages.map(|_| TimeAverages::default());
    let mut y = y0.clone();
    let mut sq = y.norm_ladder_sq();
    let mut cumulative = start.cumulative_h3;
    let mut stopped = options.stopping_k0.is_some_and(|k0| cumulative >= k0 + 1.0);

    let visit = |j: u64, y: &StateY, sq: &[f64; 4], cumulative: f64, rec: &mut TrajectoryRecord, averages: &mut Option<TimeAverages>| {
        let want_obs = !options.observables.is_empty();
        let local = j - start.step;
        let keep = local % stride == 0 || local == steps;
        let sample = options
            .averages
            .is_some_and(|w| j as f64 * dt >= w.burn_in - 1e-12 * dt && j % w.thinning.max(1) == 0);
        let obs = if want_obs && (keep || sample) { options.observables.evaluate(y, &spectrum, sq[0]) } else { Vec::new() };
        if keep {
            rec.times.push(j as f64 * dt);
            rec.sq_norms.push(*sq);
            rec.cumulative_h3.push(cumulative);
            if want_obs {
                rec.observables.push(obs.clone());
            }
        }
        if sample {
            if let Some(acc) = averages.as_mut() {
                acc.accumulate(&y.to_modal(&spectrum), sq, &obs);
            }
        }
    };

    visit(start.step, &y, &sq, cumulative, &mut rec, &mut averages);
    for j in start.step..start.step + steps {
        y = stepper.step_stream(&y, j, &stream)?;
        let next = y.norm_ladder_sq();
        cumulative += 0.5 * dt * (sq[3] + next[3]);
        sq = next;
        if let (false, Some(k0)) = (stopped, options.stopping_k0) {
            if cumulative >= k0 + 1.0 {
                stopped = true;
                rec.events.push(Event { step: j + 1, time: (j + 1) as f64 * dt, kind: EventKind::StoppingTime { k0 } });
            }
        }
        visit(j + 1, &y, &sq, cumulative, &mut rec, &mut averages);
    }
    if options.record_noise && stepper.envelope().is_some() {
        rec.noise = Some(NoiseRecord { stream, dt, first_step: start.step, steps });
    }
    rec.averages = averages.map(TimeAverages::finish);
    rec.final_state = y;
    Ok(rec)
}
