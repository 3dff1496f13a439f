//! Trajectory records and the path functionals computed from them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpeError};
use crate::noise::NoiseRecord;
use crate::spectral::{ModeIndex, Spectrum};
use crate::state::StateY;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// The cumulative `H_3` integral reached `K0 + 1`.
    StoppingTime { k0: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Post-burn-in time averages along one trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeAverages {
    pub samples: u64,
    /// Mean of `y_n^2` per eigenmode, spectrum order.
    pub mode_second_moments: Vec<f64>,
    pub l2_sq: f64,
    pub h1_sq: f64,
    pub observables: Vec<f64>,
}

impl TimeAverages {
    pub(crate) fn accumulate(&mut self, modal: &[f64], sq: &[f64; 4], obs: &[f64]) {
        if self.mode_second_moments.is_empty() {
            self.mode_second_moments = vec![0.0; modal.len()];
            self.observables = vec![0.0; obs.len()];
        }
        for (a, y) in self.mode_second_moments.iter_mut().zip(modal) {
            *a += y * y;
        }
        for (a, o) in self.observables.iter_mut().zip(obs) {
            *a += o;
        }
        self.l2_sq += sq[0];
        self.h1_sq += sq[1];
        self.samples += 1;
    }

    pub(crate) fn finish(mut self) -> Self {
        if self.samples > 0 {
            let n = self.samples as f64;
            self.mode_second_moments.iter_mut().for_each(|a| *a /= n);
            self.observables.iter_mut().for_each(|a| *a /= n);
            self.l2_sq /= n;
            self.h1_sq /= n;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub first_step: u64,
    pub times: Vec<f64>,
    /// `(||Y||_0^2, ||Y||_1^2, ||Y||_2^2, ||Y||_3^2)` per recorded time.
    pub sq_norms: Vec<[f64; 4]>,
    pub observable_names: Vec<String>,
    pub observables: Vec<Vec<f64>>,
    /// Trapezoidal `int_0^t ||Y||_3^2 ds`, accumulated at every step.
    pub cumulative_h3: Vec<f64>,
    pub events: Vec<Event>,
    pub fingerprint: String,
    pub noise: Option<NoiseRecord>,
    pub averages: Option<TimeAverages>,
    pub final_state: StateY,
}

impl TrajectoryRecord {
    /// A record built from a norm series alone, for synthetic tests and
    /// post-processing of external data.
    pub fn from_series(times: Vec<f64>, sq_norms: Vec<[f64; 4]>, final_state: StateY) -> Result<Self> {
        if times.len() != sq_norms.len() || times.is_empty() {
            return Err(invalid("times and norms must be non-empty and of equal length"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("times must be strictly increasing"));
        }
        let mut cumulative = vec![0.0; times.len()];
        for i in 1..times.len() {
            cumulative[i] = cumulative[i - 1] + 0.5 * (times[i] - times[i - 1]) * (sq_norms[i][3] + sq_norms[i - 1][3]);
        }
        Ok(Self {
            first_step: 0,
            times,
            sq_norms,
            observable_names: Vec::new(),
            observables: Vec::new(),
            cumulative_h3: cumulative,
            events: Vec::new(),
            fingerprint: String::new(),
            noise: None,
            averages: None,
            final_state,
        })
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("records are never empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.end().abs().max(1.0);
        if t < self.start() - slack || t > self.end() + slack {
            return Err(SpeError::OutsideRecord { t, start: self.start(), end: self.end() });
        }
        Ok(())
    }

    /// Linear interpolation of a per-time series at `t`.
    fn interpolate(&self, t: f64, f: impl Fn(usize) -> f64) -> Result<f64> {
        self.check_time(t)?;
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return Ok(f(0));
        }
        if i >= self.times.len() {
            return Ok(f(self.times.len() - 1));
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        Ok((1.0 - w) * f(i - 1) + w * f(i))
    }

    /// Index of the recorded time closest to `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        let i = self.times.partition_point(|&s| s < t);
        if i == 0 {
            return Ok(0);
        }
        if i >= self.times.len() {
            return Ok(self.times.len() - 1);
        }
        Ok(if (self.times[i] - t).abs() < (t - self.times[i - 1]).abs() { i } else { i - 1 })
    }

    /// `int_0^t ||Y||_3^2 ds`, interpolated between grid times.
    pub fn h3_integral(&self, t: f64) -> Result<f64> {
        self.interpolate(t, |i| self.cumulative_h3[i])
    }
}

/// `E^{H_2}(t) = ||Y(t)||_2^2 + int_0^t ||Y||_3^2 ds`.
pub fn energy_h2(record: &TrajectoryRecord, t: f64) -> Result<f64> {
    let h2 = record.interpolate(t, |i| record.sq_norms[i][2])?;
    Ok(h2 + record.h3_integral(t)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "time", rename_all = "snake_case")]
pub enum StoppingTime {
    Hit(f64),
    NotHit,
}

fn check_upsilon(record: &TrajectoryRecord, upsilon: f64) -> Result<()> {
    if !(upsilon > 0.0) {
        return Err(invalid("Upsilon must be positive"));
    }
    if upsilon > record.end() * (1.0 + 1e-12) {
        return Err(SpeError::OutsideRecord { t: upsilon, start: record.start(), end: record.end() });
    }
    Ok(())
}

/// First grid time in `(0, Upsilon)` at which the cumulative `H_3` integral
/// reaches `K0 + 1`. `K0 = +inf` never triggers.
pub fn stopping_sigma(record: &TrajectoryRecord, upsilon: f64, k0: f64) -> Result<StoppingTime> {
    check_upsilon(record, upsilon)?;
    if k0.is_infinite() && k0 > 0.0 {
        return Ok(StoppingTime::NotHit);
    }
    for (t, c) in record.times.iter().zip(&record.cumulative_h3) {
        if *t <= 0.0 {
            continue;
        }
        if *t >= upsilon {
            break;
        }
        if *c >= k0 + 1.0 {
            return Ok(StoppingTime::Hit(*t));
        }
    }
    Ok(StoppingTime::NotHit)
}

/// The cubic smoothstep cutoff: 1 below `K0`, 0 above `K0 + 1`.
pub fn smooth_cutoff(x: f64, k0: f64) -> f64 {
    let u = (x - k0).clamp(0.0, 1.0);
    1.0 - 3.0 * u * u + 2.0 * u * u * u
}

/// `sup |psi'|` of [`smooth_cutoff`].
pub const CUTOFF_SLOPE_BOUND: f64 = 1.5;

/// The cutoff evaluated at `int_0^Upsilon ||Y||_3^2 ds`.
pub fn cutoff_psi(record: &TrajectoryRecord, upsilon: f64, k0: f64) -> Result<f64> {
    check_upsilon(record, upsilon)?;
    Ok(smooth_cutoff(record.h3_integral(upsilon.min(record.end()))?, k0))
}

/// Default threshold `K0 = 10 kappa / mu_1`.
pub fn default_k0(kappa: f64, mu1: f64) -> f64 {
    10.0 * kappa / mu1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub c: f64,
    pub r_squared: f64,
    pub used: usize,
    pub dropped: usize,
    pub reliable: bool,
}

/// Fits below this coefficient of determination are flagged unreliable.
pub const RELIABLE_R2: f64 = 0.9;

/// Least-squares fit of `log d = log C - gamma t` over the positive entries.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(invalid("times and values differ in length"));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, d)| **d > 0.0 && d.is_finite())
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    let dropped = times.len() - pts.len();
    if pts.len() < 3 {
        return Err(SpeError::InsufficientData(format!("{} positive points, need at least 3", pts.len())));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if stt == 0.0 {
        return Err(SpeError::InsufficientData("all fitted times coincide".into()));
    }
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let flat = syy <= 1e-24 * n * my.abs().max(1.0).powi(2);
    let r_squared = if flat { 1.0 } else { 1.0 - ss_res / syy };
    let gamma = if flat { 0.0 } else { -slope };
    Ok(DecayFit { gamma, c: intercept.exp(), r_squared, used: pts.len(), dropped, reliable: r_squared >= RELIABLE_R2 })
}

/// Length of the leading stretch on which `gap > factor * se`.
pub fn significant_prefix(gaps: &[f64], ses: &[f64], factor: f64) -> usize {
    gaps.iter().zip(ses).take_while(|(g, s)| **g > factor * **s).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub gap: f64,
    pub se: f64,
}

/// Sample mean and unbiased variance; a constant sample gives exactly
/// `(x_0, 0)`.
pub fn mean_and_variance(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, 0.0);
    }
    if x.iter().all(|v| v.to_bits() == x[0].to_bits()) {
        return (x[0], 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 { x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// `|mean a - mean b|` with pooled standard error `sqrt(var_a/n_a + var_b/n_b)`.
pub fn gap_from_samples(a: &[f64], b: &[f64]) -> Result<Gap> {
    if a.is_empty() || b.is_empty() {
        return Err(SpeError::EmptyEnsemble);
    }
    let (ma, va) = mean_and_variance(a);
    let (mb, vb) = mean_and_variance(b);
    Ok(Gap { gap: (ma - mb).abs(), se: (va / a.len() as f64 + vb / b.len() as f64).sqrt() })
}

/// Per-observable gaps between two ensembles at the recorded index nearest `t`.
pub fn observable_gap(a: &[TrajectoryRecord], b: &[TrajectoryRecord], t: f64) -> Result<Vec<Gap>> {
    if a.is_empty() || b.is_empty() {
        return Err(SpeError::EmptyEnsemble);
    }
    let ia = a[0].index_of(t)?;
    let ib = b[0].index_of(t)?;
    let n_obs = a[0].observable_names.len();
    (0..n_obs)
        .map(|o| {
            let xa: Vec<f64> = a.iter().map(|r| r.observables[ia][o]).collect();
            let xb: Vec<f64> = b.iter().map(|r| r.observables[ib][o]).collect();
            gap_from_samples(&xa, &xb)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// `tanh(y_n / scale)` for one eigenmode coordinate.
    ModeTanh { mode: ModeIndex, scale: f64 },
    /// `y_n^2 / (y_n^2 + scale^2)`, sensitive to the mode's variance.
    ModeSquare { mode: ModeIndex, scale: f64 },
    /// `|Y|^2 / (|Y|^2 + scale)`.
    RadialRational { scale: f64 },
    /// `exp(-|Y|^2 / scale)`.
    RadialGaussian { scale: f64 },
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::ModeTanh { mode, .. } => {
                format!("tanh_{:?}_k{}_{}_m{}", mode.channel, mode.k[0], mode.k[1], mode.m).to_lowercase()
            }
            Observable::ModeSquare { mode, .. } => {
                format!("square_{:?}_k{}_{}_m{}", mode.channel, mode.k[0], mode.k[1], mode.m).to_lowercase()
            }
            Observable::RadialRational { scale } => format!("radial_rational_{scale}"),
            Observable::RadialGaussian { scale } => format!("radial_gaussian_{scale}"),
        }
    }

    pub fn evaluate(&self, y: &StateY, spectrum: &Spectrum, l2_sq: f64) -> f64 {
        match self {
            Observable::ModeTanh { mode, scale } => (y.mode_coefficient(spectrum, mode).unwrap_or(0.0) / scale).tanh(),
            Observable::ModeSquare { mode, scale } => {
                let y = y.mode_coefficient(spectrum, mode).unwrap_or(0.0);
                y * y / (y * y + scale * scale)
            }
            Observable::RadialRational { scale } => l2_sq / (l2_sq + scale),
            Observable::RadialGaussian { scale } => (-l2_sq / scale).exp(),
        }
    }
}

/// Bounded test functions of the state, each with sup norm at most 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    pub items: Vec<Observable>,
}

impl ObservableSet {
    pub fn new(items: Vec<Observable>) -> Result<Self> {
        for o in &items {
            let scale = match o {
                Observable::ModeTanh { scale, .. }
                | Observable::ModeSquare { scale, .. }
                | Observable::RadialRational { scale }
                | Observable::RadialGaussian { scale } => *scale,
            };
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(invalid(format!("observable {} needs a positive scale", o.name())));
            }
        }
        Ok(Self { items })
    }

    /// `tanh` of the leading `leading` eigen-coordinates plus two radial functions.
    pub fn standard(spectrum: &Spectrum, leading: usize, scale: f64) -> Self {
        let mut items: Vec<Observable> = spectrum
            .modes()
            .iter()
            .take(leading)
            .map(|m| Observable::ModeTanh { mode: m.index, scale })
            .collect();
        items.push(Observable::RadialRational { scale: scale * scale });
        items.push(Observable::RadialGaussian { scale: scale * scale });
        Self { items }
    }

    pub fn names(&self) -> Vec<String> {
        self.items.iter().map(|o| o.name()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn evaluate(&self, y: &StateY, spectrum: &Spectrum, l2_sq: f64) -> Vec<f64> {
        self.items.iter().map(|o| o.evaluate(y, spectrum, l2_sq)).collect()
    }
}
