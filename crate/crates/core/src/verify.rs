//! Property checks on a configured model: operator identities, structure
//! preservation, energy bounds and the tangent flow.
//!
//! Each check returns the worst observed value next to its tolerance so that
//! callers can both report and gate on it.

use serde::{Deserialize, Serialize};

use crate::diagnostics::mean_and_variance;
use crate::ensemble::{parallel_map, run_ensemble, EnsembleSpec, InitialLaw};
use crate::error::{invalid, Result};
use crate::integrator::{steps_for, RecordOptions, Stepper};
use crate::operators::PrimitiveEquations;
use crate::rng::{NoiseStream, Purpose};
use crate::state::{random_smooth_state, StateY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Worst normalized deviation; the check passes when it is at most the
    /// tolerance.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, worst: f64, tolerance: f64) -> Self {
        Self { name: name.into(), worst, tolerance, passed: worst <= tolerance }
    }
}

/// A random constrained state with algebraically decaying spectrum.
pub fn random_state(model: &PrimitiveEquations, seed: u64, index: u64) -> StateY {
    random_smooth_state(model.spectrum(), &NoiseStream::new(seed, Purpose::Synthetic, index), 1.0, 1.0)
}

/// Worst-case identity residuals over `states` random pairs:
///
/// * `|(B(Y, Y1), Y1)| / (1 + |Y| ||Y1||_1^2)`, tolerance `1e-10`;
/// * `|(AY, Z) - (Y, AZ)|` and `|(AY, Y) - ||Y||_1^2|`, relative to the size
///   of the pairing, tolerance `1e-12`;
/// * `|(G(Y), Y) - reduced formula| / (1 + |Y|^2)`, tolerance `1e-10`.
pub fn operator_identities(model: &PrimitiveEquations, states: usize, seed: u64) -> Result<Vec<Check>> {
    if states == 0 {
        return Err(invalid("need at least one state"));
    }
    let rows = parallel_map(1, states, |i| -> Result<[f64; 4]> {
        let y = random_state(model, seed, 2 * i as u64);
        let z = random_state(model, seed, 2 * i as u64 + 1);
        let b = model.apply_b(&y, &z)?.dot(&z).abs() / (1.0 + y.norm_sq().sqrt() * z.sobolev_norm_sq(1.0));
        let (ay, az) = (model.apply_a(&y), model.apply_a(&z));
        let sym = (ay.dot(&z) - y.dot(&az)).abs() / (1.0 + ay.norm_sq().sqrt() * z.norm_sq().sqrt());
        let h1 = y.sobolev_norm_sq(1.0);
        let energy = (ay.dot(&y) - h1).abs() / (1.0 + h1);
        let g = (model.apply_g(&y)?.dot(&y) - model.g_pairing_reduced(&y)?).abs() / (1.0 + y.norm_sq());
        Ok([b, sym, energy, g])
    })?;
    let mut worst = [0.0f64; 4];
    for r in rows {
        let r = r?;
        for (w, v) in worst.iter_mut().zip(r) {
            *w = w.max(v);
        }
    }
    let t = model.spectrum().truncation();
    let tag = format!("({}, {})", t.nh, t.nz);
    Ok(vec![
        Check::new(format!("advection cancellation {tag}"), worst[0], 1e-10),
        Check::new(format!("A symmetric {tag}"), worst[1], 1e-12),
        Check::new(format!("A energy pairing {tag}"), worst[2], 1e-12),
        Check::new(format!("coupling pairing {tag}"), worst[3], 1e-10),
    ])
}

/// Largest constraint residuals along `steps` noisy steps from `y0`.
pub fn structure_preservation(stepper: &Stepper, y0: &StateY, steps: u64, stream: &NoiseStream) -> Result<Vec<Check>> {
    let tr = stepper.model().transform();
    let mut worst = [0.0f64; 3];
    let mut y = y0.clone();
    for j in 0..steps {
        y = stepper.step_stream(&y, j, stream)?;
        let r = y.constraint_report(tr);
        for (w, v) in worst.iter_mut().zip([r.divergence, r.mean, r.parity]) {
            *w = w.max(v);
        }
    }
    Ok(vec![
        Check::new("depth-averaged divergence", worst[0], 1e-12),
        Check::new("temperature mean", worst[1], 1e-12),
        Check::new("parity leakage", worst[2], 1e-12),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub kappa: f64,
    pub mu1: f64,
    pub trajectories: usize,
    pub times: Vec<f64>,
    pub mean_l2_sq: Vec<f64>,
    pub se_l2_sq: Vec<f64>,
    /// `e^{-mu1 t} |y0|^2 + kappa / mu1`.
    pub bound: Vec<f64>,
    /// Largest `mean - bound - 3 SE`; non-positive when the decay bound holds.
    pub decay_excess: f64,
    /// Largest `mean(dE + dt ||Y||_1^2) - kappa dt - 3 SE` over steps.
    pub step_excess: f64,
    pub checks: Vec<Check>,
}

/// Ensemble check of the mean energy decay bound and the per-step energy
/// inequality. `Y_{j+1}` carries the dissipation term of step `j`, matching
/// the implicit treatment of `A`.
pub fn energy_bounds(stepper: &Stepper, y0: &StateY, count: usize, horizon: f64, seed: u64, workers: usize, kappa: f64) -> Result<EnergyReport> {
    steps_for(horizon, stepper.dt())?;
    let mut spec = EnsembleSpec::new(count, InitialLaw::Dirac(y0.clone()), horizon, seed);
    spec.workers = workers;
    let opts = RecordOptions { record_noise: false, ..RecordOptions::default() };
    let result = run_ensemble(stepper, &spec, &opts)?;
    if !result.is_complete() {
        return Err(invalid(format!("{} trajectories failed: {}", result.failures.len(), result.failures[0].message)));
    }
    let records = &result.records;
    let n = records.len() as f64;
    let dt = stepper.dt();
    let mu1 = stepper.model().spectrum().mu1();
    let y0_sq = y0.norm_sq();
    let times = records[0].times.clone();
    let (mut mean_l2_sq, mut se_l2_sq, mut bound) = (Vec::new(), Vec::new(), Vec::new());
    let mut decay_excess = f64::NEG_INFINITY;
    for (i, &t) in times.iter().enumerate() {
        let xs: Vec<f64> = records.iter().map(|r| r.sq_norms[i][0]).collect();
        let (m, v) = mean_and_variance(&xs);
        let se = (v / n).sqrt();
        let b = (-mu1 * t).exp() * y0_sq + kappa / mu1;
        decay_excess = decay_excess.max(m - b - 3.0 * se);
        mean_l2_sq.push(m);
        se_l2_sq.push(se);
        bound.push(b);
    }
    let mut step_excess = f64::NEG_INFINITY;
    for i in 1..times.len() {
        let xs: Vec<f64> = records.iter().map(|r| r.sq_norms[i][0] - r.sq_norms[i - 1][0] + dt * r.sq_norms[i][1]).collect();
        let (m, v) = mean_and_variance(&xs);
        step_excess = step_excess.max(m - kappa * dt - 3.0 * (v / n).sqrt());
    }
    let checks = vec![Check::new("mean energy decay bound", decay_excess, 0.0), Check::new("per-step energy inequality", step_excess, 0.0)];
    Ok(EnergyReport { kappa, mu1, trajectories: records.len(), times, mean_l2_sq, se_l2_sq, bound, decay_excess, step_excess, checks })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentReport {
    pub eps: Vec<f64>,
    /// `|(Y^eps - Y) / eps - beta| / |beta|` at the horizon.
    pub relative_errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log eps`.
    pub slope: f64,
}

/// Compares the propagated tangent `beta(t)` with difference quotients of
/// trajectories started at `y0 + eps beta0`, all driven by the same noise.
pub fn tangent_check(stepper: &Stepper, y0: &StateY, beta0: &StateY, horizon: f64, stream: &NoiseStream, eps: &[f64]) -> Result<TangentReport> {
    if eps.len() < 2 || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(invalid("need at least two positive eps values"));
    }
    let steps = steps_for(horizon, stepper.dt())?;
    let run = |start: &StateY| -> Result<StateY> {
        let mut y = start.clone();
        for j in 0..steps {
            y = stepper.step_stream(&y, j, stream)?;
        }
        Ok(y)
    };
    let mut y = y0.clone();
    let mut beta = beta0.clone();
    for j in 0..steps {
        beta = stepper.step_tangent(&y, &beta)?;
        y = stepper.step_stream(&y, j, stream)?;
    }
    let base = run(y0)?;
    let scale = beta.norm_sq().sqrt();
    let mut relative_errors = Vec::with_capacity(eps.len());
    for &e in eps {
        let mut start = y0.clone();
        start.axpy(e, beta0);
        let mut fd = run(&start)?.sub(&base);
        fd.scale(1.0 / e);
        relative_errors.push(fd.sub(&beta).norm_sq().sqrt() / scale);
    }
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = relative_errors.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / lx.len() as f64, ly.iter().sum::<f64>() / ly.len() as f64);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(TangentReport { eps: eps.to_vec(), relative_errors, slope: sxy / sxx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{Scheme, StepperConfig};
    use crate::noise::NoiseEnvelope;
    use crate::spectral::Spectrum;
    use crate::state::PhysicalParams;
    use std::sync::Arc;

    fn stepper(dt: f64) -> Stepper {
        let s = Arc::new(Spectrum::new(2, 2).unwrap());
        let env = NoiseEnvelope::power_law(&s, 3.8).unwrap();
        let m = PrimitiveEquations::new(s, PhysicalParams::default()).unwrap();
        Stepper::new(m, StepperConfig::new(dt, Scheme::SemiImplicitEm), Some(env)).unwrap()
    }

    #[test]
    fn identities_hold_at_small_truncation() {
        let st = stepper(1e-3);
        for c in operator_identities(st.model(), 10, 3).unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn identities_catch_an_aliased_grid() {
        let s = Arc::new(Spectrum::new(3, 3).unwrap());
        let tr = Arc::new(crate::spectral::Transform::aliased(s.truncation()));
        let m = PrimitiveEquations::with_transform(s, tr, PhysicalParams::default()).unwrap();
        let checks = operator_identities(&m, 5, 1).unwrap();
        assert!(!checks[0].passed);
    }

    #[test]
    fn structure_is_preserved() {
        let st = stepper(1e-3);
        let y0 = random_state(st.model(), 1, 0);
        for c in structure_preservation(&st, &y0, 50, &NoiseStream::trajectory(1, 0)).unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn energy_bound_violation_is_detected() {
        let st = stepper(1e-2);
        let y0 = random_state(st.model(), 1, 0);
        let ok = energy_bounds(&st, &y0, 16, 0.2, 3, 1, 10.0).unwrap();
        assert!(ok.checks.iter().all(|c| c.passed), "{:?}", ok.checks);
        assert_eq!(ok.times.len(), 21);
        // From rest with no noise budget, the first step injects energy that
        // nothing accounts for.
        let zero = StateY::zeros(y0.truncation());
        let bad = energy_bounds(&st, &zero, 16, 0.2, 3, 1, 0.0).unwrap();
        assert!(!bad.checks[1].passed);
    }

    #[test]
    fn tangent_errors_scale_linearly() {
        let st = stepper(1e-2);
        let y0 = random_state(st.model(), 1, 0);
        let b0 = random_state(st.model(), 1, 1);
        let r = tangent_check(&st, &y0, &b0, 0.1, &NoiseStream::trajectory(2, 0), &[1e-3, 1e-4]).unwrap();
        assert!(r.relative_errors[1] < 1e-3 && (r.slope - 1.0).abs() < 0.2, "{r:?}");
    }
}
