//! Monte Carlo ensembles: stationary estimates, mixing curves and
//! consistency across initial laws and truncations.
//!
//! Every trajectory `i` draws its noise from `NoiseStream::trajectory(seed, i)`
//! and, for random initial laws, its initial state from the `InitialState`
//! stream with the same index. Work is spread over a fixed-size pool and
//! collected in index order, so results do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    fit_decay_rate, gap_from_samples, mean_and_variance, significant_prefix, DecayFit, Gap, ObservableSet, TrajectoryRecord,
};
use crate::error::{invalid, Result, SpeError};
use crate::integrator::{integrate, AverageWindow, RecordOptions, Stepper};
use crate::rng::{NoiseStream, Purpose};
use crate::state::{random_smooth_state, StateY};

/// Evaluates `f(0..n)` on a pool of `workers` threads, in index order.
pub fn parallel_map<T, F>(workers: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers <= 1 {
        return Ok((0..n).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    Dirac(StateY),
    /// Independent draws per trajectory; see [`random_smooth_state`].
    RandomSmooth { decay: f64, amplitude: f64 },
}

impl InitialLaw {
    pub fn sample(&self, stepper: &Stepper, root_seed: u64, index: u64) -> StateY {
        match self {
            InitialLaw::Dirac(y) => y.clone(),
            InitialLaw::RandomSmooth { decay, amplitude } => {
                let stream = NoiseStream::new(root_seed, Purpose::InitialState, index);
                random_smooth_state(stepper.model().spectrum(), &stream, *decay, *amplitude)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub count: usize,
    pub initial: InitialLaw,
    pub horizon: f64,
    pub burn_in: f64,
    pub thinning: u64,
    pub root_seed: u64,
    pub workers: usize,
    /// First trajectory index; ensembles that must be independent of each
    /// other use disjoint index ranges.
    pub first_index: u64,
}

impl EnsembleSpec {
    pub fn new(count: usize, initial: InitialLaw, horizon: f64, root_seed: u64) -> Self {
        Self { count, initial, horizon, burn_in: 0.0, thinning: 1, root_seed, workers: 1, first_index: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(SpeError::EmptyEnsemble);
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!("ensemble horizon must be positive, got {}", self.horizon)));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return Err(invalid(format!("burn-in {} must lie in [0, horizon = {})", self.burn_in, self.horizon)));
        }
        if self.thinning == 0 {
            return Err(invalid("thinning stride must be at least 1"));
        }
        Ok(())
    }
}

/// Default burn-in `5 / mu_1`.
pub fn default_burn_in(mu1: f64) -> f64 {
    5.0 / mu1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: u64,
    pub message: String,
    pub last_finite_time: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    /// Trajectory index of each successful record.
    pub ids: Vec<u64>,
    pub records: Vec<TrajectoryRecord>,
    pub failures: Vec<Failure>,
}

impl EnsembleResult {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs `spec.count` independent trajectories. Failed trajectories are listed
/// in the failure manifest; the remaining records are still returned.
pub fn run_ensemble(stepper: &Stepper, spec: &EnsembleSpec, options: &RecordOptions) -> Result<EnsembleResult> {
    spec.validate()?;
    let mut options = options.clone();
    if options.averages.is_none() && spec.burn_in > 0.0 {
        options.averages = Some(AverageWindow { burn_in: spec.burn_in, thinning: spec.thinning });
    }
    let outcomes = parallel_map(spec.workers, spec.count, |i| {
        let id = spec.first_index + i as u64;
        let y0 = spec.initial.sample(stepper, spec.root_seed, id);
        (id, integrate(stepper, &y0, spec.horizon, NoiseStream::trajectory(spec.root_seed, id), &options))
    })?;
    let mut result = EnsembleResult { ids: Vec::new(), records: Vec::new(), failures: Vec::new() };
    for (id, out) in outcomes {
        match out {
            Ok(r) => {
                result.ids.push(id);
                result.records.push(r);
            }
            Err(e) => {
                let last_finite_time = match &e {
                    SpeError::BlowUp { last_finite_time, .. } => Some(*last_finite_time),
                    _ => None,
                };
                result.failures.push(Failure { id, message: e.to_string(), last_finite_time });
            }
        }
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryEstimate {
    pub trajectories: usize,
    pub samples_per_trajectory: u64,
    pub observable_names: Vec<String>,
    pub observable_means: Vec<f64>,
    pub observable_ses: Vec<f64>,
    pub l2_sq: f64,
    pub l2_sq_se: f64,
    pub h1_sq: f64,
    pub h1_sq_se: f64,
    /// Per-mode second moments in spectrum order.
    pub mode_second_moments: Vec<f64>,
    pub mode_ses: Vec<f64>,
    /// Soft-check messages; never fatal.
    pub warnings: Vec<String>,
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let (m, v) = mean_and_variance(x);
    (m, (v / x.len() as f64).sqrt())
}

/// Combines the post-burn-in time averages of each record; standard errors
/// come from the spread across trajectories. `kappa` enables the soft check
/// `int ||y||_1^2 dmu <= kappa`.
pub fn estimate_stationary(records: &[TrajectoryRecord], kappa: Option<f64>) -> Result<StationaryEstimate> {
    if records.is_empty() {
        return Err(SpeError::EmptyEnsemble);
    }
    let mut avgs = Vec::with_capacity(records.len());
    for r in records {
        match &r.averages {
            Some(a) if a.samples > 0 => avgs.push(a),
            _ => return Err(SpeError::InsufficientData("no post-burn-in samples; the burn-in consumes the horizon".into())),
        }
    }
    let column = |f: &dyn Fn(&crate::diagnostics::TimeAverages) -> f64| -> (f64, f64) {
        let x: Vec<f64> = avgs.iter().map(|a| f(a)).collect();
        mean_se(&x)
    };
    let mut warnings = Vec::new();
    if records.len() < 2 {
        warnings.push("a single trajectory gives no standard error; SEs are reported as 0".into());
    }
    let n_obs = avgs[0].observables.len();
    let n_modes = avgs[0].mode_second_moments.len();
    let (observable_means, observable_ses) = (0..n_obs).map(|o| column(&|a| a.observables[o])).unzip();
    let (mode_second_moments, mode_ses) = (0..n_modes).map(|n| column(&|a| a.mode_second_moments[n])).unzip();
    let (l2_sq, l2_sq_se) = column(&|a| a.l2_sq);
    let (h1_sq, h1_sq_se) = column(&|a| a.h1_sq);
    if let Some(k) = kappa {
        if h1_sq > k + 3.0 * h1_sq_se {
            warnings.push(format!("stationary <||y||_1^2> = {h1_sq:.4e} exceeds kappa = {k:.4e} by more than 3 SE"));
        }
    }
    Ok(StationaryEstimate {
        trajectories: records.len(),
        samples_per_trajectory: avgs[0].samples,
        observable_names: records[0].observable_names.clone(),
        observable_means,
        observable_ses,
        l2_sq,
        l2_sq_se,
        h1_sq,
        h1_sq_se,
        mode_second_moments,
        mode_ses,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixingSpec {
    pub count: usize,
    pub horizon: f64,
    pub root_seed: u64,
    pub workers: usize,
    /// Record every `stride`-th step.
    pub stride: u64,
    /// Drive both ensembles with the same streams instead of independent ones.
    pub shared_seeds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub times: Vec<f64>,
    pub observable_names: Vec<String>,
    /// `gaps[t][g]`.
    pub gaps: Vec<Vec<Gap>>,
    pub max_gap: Vec<f64>,
    /// SE of the observable attaining the max.
    pub max_gap_se: Vec<f64>,
    /// Leading number of times with `max_gap > 3 SE`.
    pub window: usize,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    pub failures: Vec<Failure>,
}

/// Runs ensembles from `y1` and `y2` and fits the decay of the largest
/// observable gap over the window where it is significant.
pub fn mixing_experiment(stepper: &Stepper, y1: &StateY, y2: &StateY, spec: &MixingSpec, observables: &ObservableSet) -> Result<MixingReport> {
    if observables.is_empty() {
        return Err(invalid("mixing needs at least one observable"));
    }
    let options = RecordOptions { observables: observables.clone(), stride: spec.stride, record_noise: false, ..RecordOptions::default() };
    let mk = |y: &StateY, first_index: u64| EnsembleSpec {
        count: spec.count,
        initial: InitialLaw::Dirac(y.clone()),
        horizon: spec.horizon,
        burn_in: 0.0,
        thinning: 1,
        root_seed: spec.root_seed,
        workers: spec.workers,
        first_index,
    };
    let a = run_ensemble(stepper, &mk(y1, 0), &options)?;
    let b = run_ensemble(stepper, &mk(y2, if spec.shared_seeds { 0 } else { spec.count as u64 }), &options)?;
    let mut failures = a.failures.clone();
    failures.extend(b.failures.iter().cloned());
    if a.records.is_empty() || b.records.is_empty() {
        return Err(SpeError::EmptyEnsemble);
    }
    let times = a.records[0].times.clone();
    let n_obs = observables.len();
    let mut gaps = Vec::with_capacity(times.len());
    let mut max_gap = Vec::with_capacity(times.len());
    let mut max_gap_se = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let row: Vec<Gap> = (0..n_obs)
            .map(|o| {
                let xa: Vec<f64> = a.records.iter().map(|r| r.observables[i][o]).collect();
                let xb: Vec<f64> = b.records.iter().map(|r| r.observables[i][o]).collect();
                gap_from_samples(&xa, &xb)
            })
            .collect::<Result<_>>()?;
        let best = row.iter().copied().fold(Gap { gap: -1.0, se: 0.0 }, |m, g| if g.gap > m.gap { g } else { m });
        max_gap.push(best.gap);
        max_gap_se.push(best.se);
        gaps.push(row);
    }
    let window = significant_prefix(&max_gap, &max_gap_se, 3.0);
    let (fit, fit_error) = match fit_decay_rate(&times[..window], &max_gap[..window]) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(MixingReport { times, observable_names: observables.names(), gaps, max_gap, max_gap_se, window, fit, fit_error, failures })
}

/// One arm of an invariance check: a model and an initial law.
#[derive(Clone, Debug)]
pub struct Variant {
    pub label: String,
    pub stepper: Stepper,
    pub initial: InitialLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub gaps: Vec<Gap>,
    /// Names of observables whose means differ by more than 3 SE.
    pub flagged: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub labels: Vec<String>,
    pub estimates: Vec<StationaryEstimate>,
    pub pairs: Vec<PairComparison>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.pairs.iter().all(|p| p.flagged.is_empty())
    }
}

/// Estimates stationary observable means for every variant and compares all
/// pairs. Observables must make sense on each variant's truncation.
pub fn invariance_consistency(variants: &[Variant], spec: &EnsembleSpec, observables: &ObservableSet) -> Result<InvarianceReport> {
    if variants.len() < 2 {
        return Err(invalid("invariance needs at least two variants"));
    }
    let options = RecordOptions {
        observables: observables.clone(),
        stride: u64::MAX,
        record_noise: false,
        averages: Some(AverageWindow { burn_in: spec.burn_in, thinning: spec.thinning }),
        stopping_k0: None,
    };
    let mut estimates = Vec::new();
    for v in variants {
        let s = EnsembleSpec { initial: v.initial.clone(), ..spec.clone() };
        let res = run_ensemble(&v.stepper, &s, &options)?;
        if let Some(f) = res.failures.first() {
            return Err(invalid(format!("variant {}: trajectory {} failed: {}", v.label, f.id, f.message)));
        }
        estimates.push(estimate_stationary(&res.records, None)?);
    }
    let names = observables.names();
    let mut pairs = Vec::new();
    for i in 0..variants.len() {
        for j in i + 1..variants.len() {
            let (ea, eb) = (&estimates[i], &estimates[j]);
            let gaps: Vec<Gap> = (0..names.len())
                .map(|o| Gap {
                    gap: (ea.observable_means[o] - eb.observable_means[o]).abs(),
                    se: (ea.observable_ses[o].powi(2) + eb.observable_ses[o].powi(2)).sqrt(),
                })
                .collect();
            let flagged = gaps.iter().zip(&names).filter(|(g, _)| g.gap > 3.0 * g.se).map(|(_, n)| n.clone()).collect();
            pairs.push(PairComparison { a: variants[i].label.clone(), b: variants[j].label.clone(), gaps, flagged });
        }
    }
    Ok(InvarianceReport { labels: variants.iter().map(|v| v.label.clone()).collect(), estimates, pairs })
}
