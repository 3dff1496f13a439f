use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::json;
use spe_core::checkpoint::Checkpoint;
use spe_core::config::{DeltaRule, DeltaSpec, RunConfig};
use spe_core::coupling::{
    coupling_time_ladder, delta_from_kappa, exp_moment, pilot_delta, return_time_tau, suggested_alpha, write_log_jsonl, write_summary_csv,
    CouplingChain, ReturnTime,
};
use spe_core::ensemble::{default_burn_in, estimate_stationary, parallel_map, run_ensemble, EnsembleSpec, InitialLaw, MixingSpec};
use spe_core::integrator::{integrate_segment, steps_for, RecordOptions, SegmentStart, Stepper};
use spe_core::io::{write_jsonl, write_table, write_trajectory_csv, Manifest, TrajectoryCsv};
use spe_core::noise::{certify_h1, H1Certificate};
use spe_core::rng::{NoiseStream, Purpose};
use spe_core::verify::{energy_bounds, operator_identities, random_state, structure_preservation, tangent_check, Check};
use spe_core::SpeError;

use crate::Common;

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, message: msg.into() }
    }
    fn scientific(msg: impl Into<String>) -> Self {
        Self { code: 2, message: msg.into() }
    }
}

impl From<SpeError> for Failure {
    fn from(e: SpeError) -> Self {
        let code = match e {
            SpeError::Config(_) | SpeError::Checkpoint(_) | SpeError::InvalidParameter(_) | SpeError::Resolution { .. } => 1,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: 3, message: e.to_string() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self { code: 3, message: e.to_string() }
    }
}

type Outcome = Result<(), Failure>;

/// A loaded config with command-line overrides applied.
struct Run {
    cfg: RunConfig,
    warnings: Vec<String>,
    seed: u64,
    workers: usize,
    out: PathBuf,
    force: bool,
}

impl Run {
    fn load(c: &Common) -> Result<Self, Failure> {
        let (mut cfg, warnings) = RunConfig::load(&c.config)?;
        if let Some(s) = c.seed {
            cfg.integrator.seed = s;
        }
        if let Some(w) = c.workers {
            if w == 0 {
                return Err(Failure::usage("--workers must be at least 1"));
            }
            cfg.ensemble.workers = w;
        }
        if let Some(o) = &c.out {
            cfg.output.dir = o.clone();
        }
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        std::fs::create_dir_all(&cfg.output.dir)?;
        Ok(Self {
            seed: cfg.integrator.seed,
            workers: cfg.ensemble.workers,
            out: cfg.output.dir.clone(),
            force: c.force,
            cfg,
            warnings,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn certificate(&self) -> Result<Option<H1Certificate>, Failure> {
        let spectrum = self.cfg.spectrum()?;
        match self.cfg.envelope(&spectrum)? {
            Some(env) => Ok(Some(certify_h1(&env, self.cfg.noise.epsilon0, &spectrum)?)),
            None => Ok(None),
        }
    }

    fn manifest(&self, command: &str, results: serde_json::Value) -> Result<(), Failure> {
        let mut m = Manifest::new(command, &self.cfg.dynamics_hash(), self.seed, self.cfg.to_toml()?, self.warnings.clone());
        m.certificate = self.certificate()?.map(|c| serde_json::to_value(c)).transpose()?;
        m.results = results;
        m.write(&self.path("manifest.json"))?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    std::io::Write::write_all(&mut f, b"\n")?;
    Ok(())
}

fn blow_up_failure(e: SpeError, what: &str) -> Failure {
    match e {
        SpeError::BlowUp { last_finite_time, step } => {
            Failure { code: 3, message: format!("{what} blew up at step {step}; last finite time t = {last_finite_time}") }
        }
        other => other.into(),
    }
}

pub fn certify(c: &Common) -> Outcome {
    let run = Run::load(c)?;
    let cert = run.certificate()?.ok_or_else(|| Failure::usage("noise kind `none` has nothing to certify"))?;
    println!("{}", serde_json::to_string_pretty(&cert)?);
    write_json(&run.path("certificate.json"), &cert)?;
    run.manifest("certify", json!({ "verdict": cert.verdict }))?;
    if cert.passed() {
        Ok(())
    } else {
        Err(Failure::scientific(format!("certificate failed: {}", cert.reason)))
    }
}

fn record_options(run: &Run, stepper: &Stepper) -> RecordOptions {
    RecordOptions {
        observables: run.cfg.mixing.observables(stepper.model().spectrum()),
        stride: run.cfg.integrator.stride,
        record_noise: false,
        ..RecordOptions::default()
    }
}

pub fn simulate(c: &Common, resume: Option<&Path>) -> Outcome {
    let run = Run::load(c)?;
    if run.cfg.ensemble.count > 1 {
        if resume.is_some() {
            return Err(Failure::usage("--resume applies to single-trajectory runs"));
        }
        return simulate_ensemble(&run);
    }
    let stepper = run.cfg.stepper()?;
    let spectrum = stepper.model().spectrum().clone();
    let dt = stepper.dt();
    let total = steps_for(run.cfg.integrator.horizon, dt)?;
    let hash = run.cfg.dynamics_hash();
    let (mut y, mut start, stream) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p, &hash, run.force)?;
            if ck.state.truncation() != spectrum.truncation() {
                return Err(Failure::usage("checkpoint truncation differs from the config"));
            }
            (ck.state, SegmentStart { step: ck.step, cumulative_h3: ck.cumulative_h3 }, ck.stream)
        }
        None => (run.cfg.initial.build(&spectrum, run.seed)?, SegmentStart::default(), NoiseStream::trajectory(run.seed, 0)),
    };
    if start.step > total {
        return Err(Failure::usage(format!("checkpoint step {} lies beyond the horizon ({total} steps)", start.step)));
    }
    let opts = record_options(&run, &stepper);
    let every = run.cfg.integrator.checkpoint_every;
    let mut csv = TrajectoryCsv::new(create(&run.path("trajectory.csv"))?);
    let mut events = Vec::new();
    let mut first = true;
    let mut outcome = Ok(());
    loop {
        let target = if every > 0 { (start.step / every + 1) * every } else { total };
        let n = target.min(total) - start.step;
        let rec = match integrate_segment(&stepper, &y, start, n, stream, &opts) {
            Ok(r) => r,
            Err(e) => {
                outcome = Err(blow_up_failure(e, "trajectory"));
                break;
            }
        };
        csv.append(&rec, if first { 0 } else { 1 })?;
        events.extend(rec.events.iter().cloned());
        first = false;
        start = SegmentStart { step: start.step + n, cumulative_h3: *rec.cumulative_h3.last().expect("segment records its end") };
        y = rec.final_state;
        let ck = Checkpoint { config_hash: hash, time: start.step as f64 * dt, step: start.step, stream, cumulative_h3: start.cumulative_h3, state: y.clone() };
        if every > 0 && n > 0 && start.step % every == 0 {
            ck.save(&run.path(&format!("ckpt_{:010}.ckpt", start.step)))?;
        }
        if start.step >= total {
            ck.save(&run.path("final.ckpt"))?;
            break;
        }
    }
    csv.flush()?;
    write_jsonl(&events, create(&run.path("events.jsonl"))?)?;
    let results = match &outcome {
        Ok(()) => json!({ "steps": total, "final_time": total as f64 * dt, "fingerprint": stepper.fingerprint(&stream) }),
        Err(f) => json!({ "failure": f.message, "completed_steps": start.step }),
    };
    run.manifest("simulate", results)?;
    outcome
}

fn simulate_ensemble(run: &Run) -> Outcome {
    let cfg = &run.cfg;
    let stepper = cfg.stepper()?;
    let spectrum = stepper.model().spectrum().clone();
    let initial = if cfg.ensemble.random_initial {
        InitialLaw::RandomSmooth { decay: cfg.initial.decay, amplitude: cfg.initial.amplitude }
    } else {
        InitialLaw::Dirac(cfg.initial.build(&spectrum, run.seed)?)
    };
    let mut spec = EnsembleSpec::new(cfg.ensemble.count, initial, cfg.integrator.horizon, run.seed);
    spec.workers = run.workers;
    spec.thinning = cfg.ensemble.thinning;
    if cfg.ensemble.averages {
        spec.burn_in = cfg.ensemble.burn_in.unwrap_or_else(|| default_burn_in(spectrum.mu1()));
    }
    let result = run_ensemble(&stepper, &spec, &record_options(run, &stepper))?;
    let dir = run.path("trajectories");
    std::fs::create_dir_all(&dir)?;
    for (id, rec) in result.ids.iter().zip(&result.records) {
        write_trajectory_csv(rec, create(&dir.join(format!("traj_{id:05}.csv")))?)?;
    }
    write_jsonl(&result.failures, create(&run.path("failures.jsonl"))?)?;
    let mut results = json!({ "trajectories": result.records.len(), "failures": result.failures.len() });
    if cfg.ensemble.averages && !result.records.is_empty() {
        let kappa = run.certificate()?.map(|c| c.kappa);
        let est = estimate_stationary(&result.records, kappa)?;
        for w in &est.warnings {
            eprintln!("warning: {w}");
        }
        write_json(&run.path("stationary.json"), &est)?;
        results["l2_sq"] = json!(est.l2_sq);
    }
    run.manifest("simulate", results)?;
    match result.failures.first() {
        None => Ok(()),
        Some(f) => Err(Failure {
            code: 3,
            message: format!(
                "{} of {} trajectories failed; first: trajectory {} ({}), last finite time {:?}",
                result.failures.len(),
                cfg.ensemble.count,
                f.id,
                f.message,
                f.last_finite_time
            ),
        }),
    }
}

pub fn couple(c: &Common) -> Outcome {
    let run = Run::load(c)?;
    let cfg = &run.cfg;
    let cs = &cfg.coupling;
    let stepper = cfg.stepper()?;
    let spectrum = stepper.model().spectrum().clone();
    let y1 = cfg.initial.build(&spectrum, run.seed)?;
    let y2 = cs.initial_b.build(&spectrum, run.seed)?;
    let delta = match cs.delta {
        DeltaSpec::Value(d) => d,
        DeltaSpec::Rule(DeltaRule::Infinite) => f64::INFINITY,
        DeltaSpec::Rule(DeltaRule::KappaUpsilonCubed) => {
            let cert = run.certificate()?.ok_or_else(|| Failure::usage("kappa_upsilon_cubed needs a noise envelope"))?;
            delta_from_kappa(cert.kappa, cs.upsilon)
        }
        DeltaSpec::Rule(DeltaRule::Pilot) => pilot_delta(
            &stepper,
            &y1,
            NoiseStream::new(run.seed, Purpose::Pilot, 0),
            &cs.chain_config(f64::INFINITY),
            cs.pilot_burn_in,
            cs.pilot_samples,
            cs.delta_quantile,
        )
        .map_err(|e| blow_up_failure(e, "pilot run"))?,
    };
    let chain_cfg = cs.chain_config(delta);
    let chains = parallel_map(run.workers, cs.chains, |i| -> Result<CouplingChain, SpeError> {
        let mut ch = CouplingChain::new(i as u64, run.seed, chain_cfg, y1.clone(), y2.clone())?;
        if cs.until_coupled {
            ch.run_until_coupled(&stepper)?;
        } else {
            ch.run_until_return(&stepper)?;
        }
        Ok(ch)
    })
    .map_err(Failure::from)?
    .into_iter()
    .enumerate()
    .map(|(i, r)| r.map_err(|e| blow_up_failure(e, &format!("chain {i}"))))
    .collect::<Result<Vec<_>, _>>()?;
    write_log_jsonl(&chains, create(&run.path("chains.jsonl"))?)?;
    let summaries: Vec<_> = chains.iter().map(|c| c.summary()).collect();
    write_summary_csv(&summaries, create(&run.path("summary.csv"))?)?;
    let taus: Vec<ReturnTime> = summaries.iter().map(return_time_tau).collect();
    let censored = taus.iter().filter(|t| !t.is_hit()).count();
    let alpha = suggested_alpha(&taus, cs.upsilon).ok();
    let moment = alpha.and_then(|a| exp_moment(&taus, a).ok());
    let ladder = cs.until_coupled.then(|| coupling_time_ladder(&summaries));
    let report = json!({
        "delta": if delta.is_finite() { json!(delta) } else { json!("infinite") },
        "upsilon": cs.upsilon,
        "taus": taus,
        "censored": censored,
        "alpha": alpha,
        "exp_moment": moment,
        "ladder": ladder,
    });
    write_json(&run.path("coupling.json"), &report)?;
    let mean_tau = taus.iter().map(|t| t.value()).sum::<f64>() / taus.len() as f64;
    println!("chains {}  delta {delta}  mean tau {mean_tau}  censored {censored}", chains.len());
    run.manifest("couple", report)?;
    Ok(())
}

pub fn mixing(c: &Common) -> Outcome {
    let run = Run::load(c)?;
    let cfg = &run.cfg;
    let m = &cfg.mixing;
    let stepper = cfg.stepper()?;
    let spectrum = stepper.model().spectrum().clone();
    let ya = m.initial_a.build(&spectrum, run.seed)?;
    let yb = m.initial_b.build(&spectrum, run.seed)?;
    let spec = MixingSpec { count: m.count, horizon: m.horizon, root_seed: run.seed, workers: run.workers, stride: m.stride, shared_seeds: m.shared_seeds };
    let report = spe_core::ensemble::mixing_experiment(&stepper, &ya, &yb, &spec, &m.observables(&spectrum))?;
    let mut header = vec!["t".to_string(), "max_gap".into(), "max_gap_se".into()];
    header.extend(report.observable_names.iter().map(|n| format!("gap_{n}")));
    let rows = (0..report.times.len()).map(|i| {
        let mut r = vec![report.times[i], report.max_gap[i], report.max_gap_se[i]];
        r.extend(report.gaps[i].iter().map(|g| g.gap));
        r
    });
    write_table(&header, rows, create(&run.path("gaps.csv"))?)?;
    write_json(&run.path("mixing.json"), &report)?;
    match (&report.fit, &report.fit_error) {
        (Some(f), _) => println!("gamma {}  r2 {}  window {}", f.gamma, f.r_squared, report.window),
        (None, Some(e)) => println!("no decay fit: {e}"),
        _ => {}
    }
    run.manifest("mixing", json!({ "window": report.window, "fit": report.fit, "failures": report.failures.len() }))?;
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: 3, message: format!("{} trajectories failed", report.failures.len()) })
    }
}

pub fn verify(c: &Common) -> Outcome {
    let run = Run::load(c)?;
    let cfg = &run.cfg;
    let v = &cfg.verify;
    let stepper = cfg.stepper()?;
    let spectrum = stepper.model().spectrum().clone();
    let mut checks: Vec<Check> = operator_identities(stepper.model(), v.states, run.seed)?;
    let y0 = cfg.initial.build(&spectrum, run.seed)?;
    checks.extend(structure_preservation(&stepper, &y0, v.steps, &NoiseStream::trajectory(run.seed, 0)).map_err(|e| blow_up_failure(e, "structure run"))?);
    let cert = run.certificate()?;
    let kappa = cert.as_ref().map_or(0.0, |c| c.kappa);
    let energy = energy_bounds(&stepper, &y0, v.count, v.horizon, run.seed, run.workers, kappa)?;
    checks.extend(energy.checks.iter().cloned());
    let beta0 = random_state(stepper.model(), run.seed, u32::MAX as u64);
    let tangent_horizon = 100.0 * stepper.dt();
    let tangent = tangent_check(&stepper, &y0, &beta0, tangent_horizon, &NoiseStream::trajectory(run.seed, 1), &[1e-3, 1e-4, 1e-5])?;
    checks.push(Check::new("tangent relative error", *tangent.relative_errors.last().expect("three eps values"), 1e-3));
    checks.push(Check::new("tangent first-order slope", (tangent.slope - 1.0).abs(), 0.2));
    if let Some(cert) = &cert {
        checks.push(Check::new("noise certificate", if cert.passed() { 0.0 } else { 1.0 }, 0.0));
    }
    for ch in &checks {
        println!("{} {:<36} worst {:.3e}  tol {:.1e}", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.worst, ch.tolerance);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let report = json!({ "checks": checks, "energy": energy, "tangent": tangent });
    write_json(&run.path("verify.json"), &report)?;
    run.manifest("verify", json!({ "failed": failed, "checks": checks.len() }))?;
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::scientific(format!("{failed} of {} checks failed", checks.len())))
    }
}
