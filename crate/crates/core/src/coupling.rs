//! Two-chain coupling on the time grid `Upsilon * N`.
//!
//! At each grid step the regime is fixed by the state at the step start:
//! equal states move together, two states inside the small `H_3` ball make a
//! coupling attempt, and anything else moves with independent noise. The
//! attempt uses synchronous noise (both chains driven by the first chain's
//! stream) and identifies the chains once they are within `coupling_tol` in
//! `L^2`. This is a computable stand-in for a maximal coupling, so measured
//! coupling probabilities are lower bounds.
//!
//! Chain 1 always uses its own stream, so component 1 of a chain is the same
//! path as a plain trajectory with that stream.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diagnostics::fit_decay_rate;
use crate::error::{invalid, Result, SpeError};
use crate::integrator::Stepper;
use crate::rng::NoiseStream;
use crate::state::StateY;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Identical,
    Attempt,
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub upsilon: f64,
    /// Radius squared of the `H_3` ball; `+inf` puts every state inside.
    pub delta: f64,
    pub coupling_tol: f64,
    pub inner_steps: u64,
    pub max_grid_steps: u64,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self { upsilon: 0.25, delta: f64::INFINITY, coupling_tol: 1e-8, inner_steps: 250, max_grid_steps: 10_000 }
    }
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.upsilon > 0.0 && self.upsilon < 1.0) {
            return Err(invalid(format!("Upsilon must lie in (0, 1), got {}", self.upsilon)));
        }
        if !(self.delta > 0.0) {
            return Err(invalid(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.coupling_tol >= 0.0) {
            return Err(invalid("coupling tolerance must be non-negative"));
        }
        if self.inner_steps == 0 || self.max_grid_steps == 0 {
            return Err(invalid("inner_steps and max_grid_steps must be positive"));
        }
        Ok(())
    }

    /// The inner time step `Upsilon / inner_steps`.
    pub fn dt(&self) -> f64 {
        self.upsilon / self.inner_steps as f64
    }
}

/// `delta = kappa Upsilon^3`.
pub fn delta_from_kappa(kappa: f64, upsilon: f64) -> f64 {
    kappa * upsilon.powi(3)
}

/// Empirical `q`-quantile of `||Y||_3^2` at grid times after `burn_in`, from
/// one pilot trajectory.
pub fn pilot_delta(stepper: &Stepper, y0: &StateY, stream: NoiseStream, cfg: &CouplingConfig, burn_in_steps: u64, samples: usize, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) || samples == 0 {
        return Err(invalid("pilot quantile must lie in [0, 1] with at least one sample"));
    }
    let mut y = y0.clone();
    let mut values = Vec::with_capacity(samples);
    let mut j = 0u64;
    let total = burn_in_steps + samples as u64;
    for g in 0..total {
        for _ in 0..cfg.inner_steps {
            y = stepper.step_stream(&y, j, &stream)?;
            j += 1;
        }
        if g >= burn_in_steps {
            values.push(y.sobolev_norm_sq(3.0));
        }
    }
    values.sort_by(f64::total_cmp);
    let pos = ((values.len() - 1) as f64 * q).round() as usize;
    Ok(values[pos])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ChainEvent {
    /// Both chains inside the ball at this grid index.
    BallEntry { grid_index: u64 },
    Coupled { grid_index: u64 },
}

/// One row of the chain log, describing the step that ended at `grid_index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub chain_id: u64,
    pub grid_index: u64,
    /// Regime used for the step that ended here.
    pub regime: Regime,
    pub h3_sq: [f64; 2],
    pub l2_sq: [f64; 2],
    pub distance: f64,
    pub coupled_since: Option<u64>,
    pub events: Vec<ChainEvent>,
}

#[derive(Clone, Debug)]
pub struct CouplingChain {
    pub id: u64,
    pub config: CouplingConfig,
    pub stream1: NoiseStream,
    pub stream2: NoiseStream,
    pub grid_index: u64,
    pub y1: StateY,
    pub y2: StateY,
    pub coupled_since: Option<u64>,
    pub log: Vec<GridEntry>,
    ball_indices: Vec<u64>,
}

impl CouplingChain {
    /// Chain `id` of root seed `seed`: chain 1 uses trajectory stream `id`,
    /// chain 2 its partner.
    pub fn new(id: u64, seed: u64, config: CouplingConfig, y1: StateY, y2: StateY) -> Result<Self> {
        config.validate()?;
        let stream1 = NoiseStream::trajectory(seed, id);
        let coupled_since = y1.bit_equal(&y2).then_some(0);
        Ok(Self { id, config, stream1, stream2: stream1.partner(), grid_index: 0, y1, y2, coupled_since, log: Vec::new(), ball_indices: Vec::new() })
    }

    pub fn time(&self) -> f64 {
        self.grid_index as f64 * self.config.upsilon
    }

    fn in_ball(&self, y: &StateY) -> bool {
        self.config.delta.is_infinite() || y.sobolev_norm_sq(3.0) <= self.config.delta
    }

    /// The regime for the next step, as a function of the current states.
    pub fn regime(&self) -> Regime {
        if self.y1.bit_equal(&self.y2) {
            Regime::Identical
        } else if self.in_ball(&self.y1) && self.in_ball(&self.y2) {
            Regime::Attempt
        } else {
            Regime::Independent
        }
    }

    fn check_stepper(&self, stepper: &Stepper) -> Result<()> {
        let dt = self.config.dt();
        if (stepper.dt() - dt).abs() > 1e-12 * dt {
            return Err(invalid(format!("stepper dt {} differs from Upsilon / inner_steps = {dt}", stepper.dt())));
        }
        Ok(())
    }

    /// Advances both chains by one grid step `Upsilon`.
    pub fn coupling_step(&mut self, stepper: &Stepper) -> Result<Regime> {
        self.check_stepper(stepper)?;
        let regime = self.regime();
        let first = self.grid_index * self.config.inner_steps;
        let context = |e: SpeError, which: u8| match e {
            SpeError::BlowUp { last_finite_time, step } => {
                invalid(format!("chain {} component {which} blew up at step {step} (last finite time {last_finite_time})", self.id))
            }
            other => other,
        };
        let mut y1 = self.y1.clone();
        let mut y2 = self.y2.clone();
        for j in first..first + self.config.inner_steps {
            y1 = stepper.step_stream(&y1, j, &self.stream1).map_err(|e| context(e, 1))?;
            match regime {
                Regime::Identical => y2 = y1.clone(),
                Regime::Attempt => y2 = stepper.step_stream(&y2, j, &self.stream1).map_err(|e| context(e, 2))?,
                Regime::Independent => y2 = stepper.step_stream(&y2, j, &self.stream2).map_err(|e| context(e, 2))?,
            }
        }
        self.grid_index += 1;
        let mut events = Vec::new();
        if regime == Regime::Attempt && y1.sub(&y2).norm_sq().sqrt() <= self.config.coupling_tol {
            y2 = y1.clone();
            self.coupled_since = Some(self.grid_index);
            events.push(ChainEvent::Coupled { grid_index: self.grid_index });
        }
        self.y1 = y1;
        self.y2 = y2;
        if self.in_ball(&self.y1) && self.in_ball(&self.y2) {
            self.ball_indices.push(self.grid_index);
            events.insert(0, ChainEvent::BallEntry { grid_index: self.grid_index });
        }
        self.log.push(GridEntry {
            chain_id: self.id,
            grid_index: self.grid_index,
            regime,
            h3_sq: [self.y1.sobolev_norm_sq(3.0), self.y2.sobolev_norm_sq(3.0)],
            l2_sq: [self.y1.norm_sq(), self.y2.norm_sq()],
            distance: self.y1.sub(&self.y2).norm_sq().sqrt(),
            coupled_since: self.coupled_since,
            events,
        });
        Ok(regime)
    }

    /// Runs `n` grid steps.
    pub fn run(&mut self, stepper: &Stepper, n: u64) -> Result<()> {
        for _ in 0..n {
            self.coupling_step(stepper)?;
        }
        Ok(())
    }

    /// Runs until both chains are in the ball (or the censoring horizon).
    pub fn run_until_return(&mut self, stepper: &Stepper) -> Result<ReturnTime> {
        while self.ball_indices.is_empty() && self.grid_index < self.config.max_grid_steps {
            self.coupling_step(stepper)?;
        }
        Ok(self.return_time())
    }

    /// Runs until coupled (or the censoring horizon).
    pub fn run_until_coupled(&mut self, stepper: &Stepper) -> Result<Option<u64>> {
        while self.coupled_since.is_none() && self.grid_index < self.config.max_grid_steps {
            self.coupling_step(stepper)?;
        }
        Ok(self.coupled_since)
    }

    pub fn return_time(&self) -> ReturnTime {
        return_time_tau(&self.summary())
    }

    pub fn summary(&self) -> ChainSummary {
        ChainSummary {
            chain_id: self.id,
            upsilon: self.config.upsilon,
            grid_steps: self.grid_index,
            max_grid_steps: self.config.max_grid_steps,
            ball_indices: self.ball_indices.clone(),
            coupled_since: self.coupled_since,
        }
    }
}

/// The part of a chain needed for return and coupling times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain_id: u64,
    pub upsilon: f64,
    pub grid_steps: u64,
    pub max_grid_steps: u64,
    /// Positive grid indices at which both chains were in the ball.
    pub ball_indices: Vec<u64>,
    pub coupled_since: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "time", rename_all = "snake_case")]
pub enum ReturnTime {
    Hit(f64),
    /// Not reached within the simulated span, which ends at this time.
    NotHit(f64),
}

impl ReturnTime {
    pub fn value(&self) -> f64 {
        match self {
            ReturnTime::Hit(t) | ReturnTime::NotHit(t) => *t,
        }
    }

    pub fn is_hit(&self) -> bool {
        matches!(self, ReturnTime::Hit(_))
    }
}

/// First positive grid time with both chains in the ball.
pub fn return_time_tau(chain: &ChainSummary) -> ReturnTime {
    match chain.ball_indices.first() {
        Some(&g) => ReturnTime::Hit(g as f64 * chain.upsilon),
        None => ReturnTime::NotHit(chain.grid_steps as f64 * chain.upsilon),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMoment {
    pub estimate: f64,
    pub se: f64,
    /// Samples counted at their censoring horizon.
    pub censored: usize,
}

/// Sample mean of `e^{alpha tau}`; censored samples enter at the horizon.
pub fn exp_moment(samples: &[ReturnTime], alpha: f64) -> Result<ExpMoment> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha must be a non-negative number, got {alpha}")));
    }
    if samples.is_empty() {
        return Err(SpeError::EmptyEnsemble);
    }
    let censored = samples.iter().filter(|s| !s.is_hit()).count();
    if censored == samples.len() {
        return Err(SpeError::InsufficientData("every return time is censored".into()));
    }
    let x: Vec<f64> = samples.iter().map(|s| (alpha * s.value()).exp()).collect();
    let (mean, var) = crate::diagnostics::mean_and_variance(&x);
    Ok(ExpMoment { estimate: mean, se: (var / x.len() as f64).sqrt(), censored })
}

/// `alpha = 0.5 log(1 / P(tau > Upsilon)) / Upsilon`, from the samples.
pub fn suggested_alpha(samples: &[ReturnTime], upsilon: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(SpeError::EmptyEnsemble);
    }
    let tail = samples.iter().filter(|s| s.value() > upsilon * (1.0 + 1e-9) || !s.is_hit()).count() as f64 / samples.len() as f64;
    if tail == 0.0 {
        return Err(SpeError::InsufficientData("no return time exceeds Upsilon; the rate is unbounded".into()));
    }
    Ok(0.5 * (1.0 / tail).ln() / upsilon)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub chain_id: u64,
    /// `tau_1, tau_2, ...` up to and including `tau_{k0}`.
    pub taus: Vec<f64>,
    pub k0: Option<usize>,
    pub tau_k0: Option<f64>,
    /// No coupling was observed inside the simulated span.
    pub censored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub entries: Vec<LadderEntry>,
    /// `(n, P(k0 > n))` for `n = 0, 1, ...` up to the largest observed `k0`.
    pub survival: Vec<(usize, f64)>,
    /// Fitted `q` in `P(k0 > n) ~ q^n`, when enough points are positive.
    pub geometric_ratio: Option<f64>,
}

/// Extracts the return-time ladder and `k0` of each chain.
pub fn coupling_time_ladder(chains: &[ChainSummary]) -> LadderReport {
    let entries: Vec<LadderEntry> = chains
        .iter()
        .map(|c| {
            let k0 = c.coupled_since.and_then(|g| c.ball_indices.iter().position(|&b| b + 1 == g)).map(|p| p + 1);
            let upto = k0.unwrap_or(c.ball_indices.len());
            let taus: Vec<f64> = c.ball_indices[..upto].iter().map(|&g| g as f64 * c.upsilon).collect();
            let tau_k0 = k0.map(|k| taus[k - 1]);
            LadderEntry { chain_id: c.chain_id, taus, k0, tau_k0, censored: k0.is_none() }
        })
        .collect();
    let n = entries.len() as f64;
    let max_k = entries.iter().filter_map(|e| e.k0).max().unwrap_or(0);
    let survival: Vec<(usize, f64)> = (0..=max_k)
        .map(|k| (k, entries.iter().filter(|e| e.k0.is_none_or(|k0| k0 > k)).count() as f64 / n))
        .collect();
    let (ts, ps): (Vec<f64>, Vec<f64>) = survival.iter().map(|&(k, p)| (k as f64, p)).unzip();
    let geometric_ratio = fit_decay_rate(&ts, &ps).ok().map(|f| (-f.gamma).exp());
    LadderReport { entries, survival, geometric_ratio }
}

/// One JSON object per grid entry.
pub fn write_log_jsonl<W: Write>(chains: &[CouplingChain], mut out: W) -> Result<()> {
    for c in chains {
        for e in &c.log {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Summary CSV: one row per chain.
pub fn write_summary_csv<W: Write>(chains: &[ChainSummary], out: W) -> Result<()> {
    let ladder = coupling_time_ladder(chains);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["chain_id", "tau", "tau_censored", "k0", "tau_k0", "coupled_since", "grid_steps"]).map_err(csv_error)?;
    for (c, l) in chains.iter().zip(&ladder.entries) {
        let tau = return_time_tau(c);
        w.write_record([
            c.chain_id.to_string(),
            tau.value().to_string(),
            (!tau.is_hit()).to_string(),
            l.k0.map(|k| k.to_string()).unwrap_or_default(),
            l.tau_k0.map(|t| t.to_string()).unwrap_or_default(),
            c.coupled_since.map(|g| g.to_string()).unwrap_or_default(),
            c.grid_steps.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> SpeError {
    SpeError::Io(std::io::Error::other(e.to_string()))
}
