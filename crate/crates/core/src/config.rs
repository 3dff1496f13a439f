//! TOML run configuration.
//!
//! Every section is optional and falls back to the documented defaults. All
//! cross-field constraints are checked by [`RunConfig::validate`], which
//! `load` and `from_toml` call.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::CouplingConfig;
use crate::diagnostics::ObservableSet;
use crate::error::{Result, SpeError};
use crate::integrator::{Scheme, Stepper, StepperConfig};
use crate::noise::NoiseEnvelope;
use crate::operators::{DriftTerms, PrimitiveEquations};
use crate::spectral::{eigenvalue, ModeIndex, Spectrum, Transform, Truncation};
use crate::rng::{NoiseStream, Purpose};
use crate::state::{make_initial_state, normalized, random_smooth_state, InitialKind, PhysicalParams, StateY};

fn config_error(msg: impl Into<String>) -> SpeError {
    SpeError::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub nh: usize,
    pub nz: usize,
    /// Physical points per axis are `ceil(grid_factor * 2K) + 1` for maximal
    /// wavenumber `K`; 1.5 is the smallest alias-free choice.
    pub grid_factor: f64,
    /// `false` evaluates products on the smallest grid, with aliasing.
    pub dealias: bool,
}

impl Default for Geometry {
    fn default() -> Self {
        Self { nh: 4, nz: 4, grid_factor: 1.5, dealias: true }
    }
}

impl Geometry {
    pub fn grid(&self) -> [usize; 3] {
        let axis = |k: usize| (self.grid_factor * 2.0 * k as f64 - 1e-9).ceil() as usize + 1;
        [axis(self.nh), axis(self.nh), axis(self.nz)]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    PowerLaw,
    Custom,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub beta: f64,
    pub epsilon0: f64,
    /// Overall factor on the envelope.
    pub amplitude: f64,
    /// Whitespace-separated per-mode values in spectrum order (custom kind).
    pub table: Option<PathBuf>,
    pub tail_exponent: Option<f64>,
    pub declared_kappa1: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { kind: NoiseKind::PowerLaw, beta: 3.8, epsilon0: 0.1, amplitude: 1.0, table: None, tail_exponent: None, declared_kappa1: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub horizon: f64,
    pub seed: u64,
    pub advection: bool,
    pub coupling: bool,
    /// Record every `stride`-th step.
    pub stride: u64,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { dt: 1e-3, scheme: Scheme::SemiImplicitEm, horizon: 1.0, seed: 0, advection: true, coupling: true, stride: 1, checkpoint_every: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialName {
    Zero,
    SingleMode,
    #[default]
    RandomSmooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: InitialName,
    /// Stream index under the root seed for random states.
    pub index: u64,
    pub decay: f64,
    pub amplitude: f64,
    pub mode: Option<ModeIndex>,
    /// Rescale the drawn state to this `L^2` norm.
    pub norm: Option<f64>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { kind: InitialName::RandomSmooth, index: 1, decay: 2.0, amplitude: 1.0, mode: None, norm: Some(1.0) }
    }
}

impl InitialConfig {
    pub fn build(&self, spectrum: &Spectrum, root_seed: u64) -> Result<StateY> {
        let y = match self.kind {
            InitialName::Zero => make_initial_state(spectrum, &InitialKind::Zero),
            InitialName::SingleMode => {
                let mode = self.mode.ok_or_else(|| config_error("single_mode initial state needs `mode`"))?;
                make_initial_state(spectrum, &InitialKind::SingleMode { mode, amplitude: self.amplitude })
            }
            InitialName::RandomSmooth => {
                let stream = NoiseStream::new(root_seed, Purpose::NamedState, self.index);
                random_smooth_state(spectrum, &stream, self.decay, self.amplitude)
            }
        };
        Ok(match self.norm {
            Some(n) => normalized(y, n),
            None => y,
        })
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.kind == InitialName::SingleMode {
            match self.mode {
                Some(m) if m.is_admissible() => {}
                _ => return Err(config_error(format!("{name}: single_mode needs an admissible `mode`"))),
            }
        }
        if let Some(n) = self.norm {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(config_error(format!("{name}: norm must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub count: usize,
    pub workers: usize,
    /// Defaults to `5 / mu_1` when time averages are requested.
    pub burn_in: Option<f64>,
    pub thinning: u64,
    pub averages: bool,
    /// Draw a fresh random initial state per trajectory instead of sharing one.
    pub random_initial: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { count: 1, workers: 1, burn_in: None, thinning: 1, averages: false, random_initial: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    /// Quantile of `||Y||_3^2` on a pilot run.
    Pilot,
    /// `kappa Upsilon^3`.
    KappaUpsilonCubed,
    Infinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Value(f64),
    Rule(DeltaRule),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    pub upsilon: f64,
    pub inner_steps: u64,
    pub delta: DeltaSpec,
    pub delta_quantile: f64,
    pub pilot_burn_in: u64,
    pub pilot_samples: usize,
    pub coupling_tol: f64,
    pub max_grid_steps: u64,
    pub chains: usize,
    /// Keep stepping until coupled rather than stopping at the return time.
    pub until_coupled: bool,
    pub initial_b: InitialConfig,
}

impl Default for CouplingSection {
    fn default() -> Self {
        let c = CouplingConfig::default();
        Self {
            upsilon: c.upsilon,
            inner_steps: c.inner_steps,
            delta: DeltaSpec::Rule(DeltaRule::Pilot),
            delta_quantile: 0.25,
            pilot_burn_in: 8,
            pilot_samples: 64,
            coupling_tol: c.coupling_tol,
            max_grid_steps: c.max_grid_steps,
            chains: 16,
            until_coupled: false,
            initial_b: InitialConfig { index: 2, ..InitialConfig::default() },
        }
    }
}

impl CouplingSection {
    /// The chain configuration with a resolved `delta`.
    pub fn chain_config(&self, delta: f64) -> CouplingConfig {
        CouplingConfig {
            upsilon: self.upsilon,
            delta,
            coupling_tol: self.coupling_tol,
            inner_steps: self.inner_steps,
            max_grid_steps: self.max_grid_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingSection {
    pub count: usize,
    pub horizon: f64,
    pub stride: u64,
    pub shared_seeds: bool,
    pub initial_a: InitialConfig,
    pub initial_b: InitialConfig,
    /// Number of leading eigen-coordinates observed through `tanh`.
    pub leading_modes: usize,
    pub scale: f64,
}

impl Default for MixingSection {
    fn default() -> Self {
        Self {
            count: 64,
            horizon: 0.5,
            stride: 10,
            shared_seeds: false,
            initial_a: InitialConfig { index: 1, ..InitialConfig::default() },
            initial_b: InitialConfig { index: 2, ..InitialConfig::default() },
            leading_modes: 8,
            scale: 0.1,
        }
    }
}

impl MixingSection {
    pub fn observables(&self, spectrum: &Spectrum) -> ObservableSet {
        ObservableSet::standard(spectrum, self.leading_modes, self.scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Random states per operator identity.
    pub states: usize,
    /// Noisy steps for the constraint check.
    pub steps: u64,
    /// Trajectories and horizon of the energy-bound ensemble.
    pub count: usize,
    pub horizon: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { states: 100, steps: 1000, count: 32, horizon: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub physics: PhysicalParams,
    pub noise: NoiseConfig,
    pub integrator: IntegratorConfig,
    pub initial: InitialConfig,
    pub ensemble: EnsembleConfig,
    pub coupling: CouplingSection,
    pub mixing: MixingSection,
    pub verify: VerifySection,
    pub output: OutputConfig,
}

/// The part of the configuration that determines the dynamics.
#[derive(Serialize)]
struct DynamicsKey<'a> {
    geometry: &'a Geometry,
    physics: &'a PhysicalParams,
    noise: &'a NoiseConfig,
    dt: f64,
    scheme: Scheme,
    advection: bool,
    coupling: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<(Self, Vec<String>)> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        let warnings = cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let (mut cfg, warnings) = Self::from_toml(&text)?;
        if let (Some(t), Some(dir)) = (&cfg.noise.table, path.parent()) {
            if t.is_relative() {
                cfg.noise.table = Some(dir.join(t));
            }
        }
        Ok((cfg, warnings))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_error(e.to_string()))
    }

    pub fn truncation(&self) -> Result<Truncation> {
        Truncation::new(self.geometry.nh, self.geometry.nz).map_err(|e| config_error(e.to_string()))
    }

    /// Largest eigenvalue of the truncation, `pi^2 (8 nh^2 + nz^2)`.
    pub fn mu_max(&self) -> f64 {
        let n = self.geometry.nh as i32;
        eigenvalue([n, n], self.geometry.nz as u32)
    }

    /// Checks every constraint; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let g = &self.geometry;
        if g.nh == 0 || g.nz == 0 {
            return Err(config_error("geometry: nh and nz must be at least 1"));
        }
        if g.dealias && !(g.grid_factor >= 1.5) {
            return Err(config_error(format!("geometry: grid_factor {} is below the alias-free minimum 1.5", g.grid_factor)));
        }
        self.physics.validate().map_err(|e| config_error(format!("physics: {e}")))?;
        let n = &self.noise;
        match n.kind {
            NoiseKind::PowerLaw => {
                if !n.beta.is_finite() {
                    return Err(config_error("noise: beta must be finite"));
                }
                if !(n.beta > 3.5 && n.beta <= 4.0) {
                    warnings.push(format!("noise: beta = {} lies outside the certified window (7/2, 4]", n.beta));
                }
            }
            NoiseKind::Custom => {
                if n.table.is_none() {
                    return Err(config_error("noise: custom kind needs a `table` path"));
                }
            }
            NoiseKind::None => {}
        }
        if !(n.epsilon0 > 0.0) {
            return Err(config_error("noise: epsilon0 must be positive"));
        }
        if !(n.amplitude > 0.0 && n.amplitude.is_finite()) {
            return Err(config_error("noise: amplitude must be positive"));
        }
        let i = &self.integrator;
        StepperConfig { dt: i.dt, scheme: i.scheme, dealias: g.dealias }
            .validate(self.mu_max())
            .map_err(|e| config_error(format!("integrator: {e}")))?;
        crate::integrator::steps_for(i.horizon, i.dt).map_err(|e| config_error(format!("integrator: {e}")))?;
        if i.stride == 0 {
            return Err(config_error("integrator: stride must be at least 1"));
        }
        if i.checkpoint_every % i.stride != 0 {
            return Err(config_error("integrator: checkpoint_every must be a multiple of stride"));
        }
        self.initial.validate("initial")?;
        let e = &self.ensemble;
        if e.count == 0 || e.workers == 0 || e.thinning == 0 {
            return Err(config_error("ensemble: count, workers and thinning must be at least 1"));
        }
        if let Some(b) = e.burn_in {
            if !(b >= 0.0 && b < i.horizon) {
                return Err(config_error(format!("ensemble: burn_in {b} must lie in [0, horizon = {})", i.horizon)));
            }
        }
        let c = &self.coupling;
        let delta = match c.delta {
            DeltaSpec::Value(d) => d,
            _ => 1.0,
        };
        c.chain_config(delta).validate().map_err(|e| config_error(format!("coupling: {e}")))?;
        let coupling_dt = c.upsilon / c.inner_steps as f64;
        if (coupling_dt - i.dt).abs() > 1e-12 * i.dt {
            return Err(config_error(format!(
                "coupling: Upsilon / inner_steps = {coupling_dt} must equal integrator dt = {}",
                i.dt
            )));
        }
        if !(0.0..=1.0).contains(&c.delta_quantile) || c.pilot_samples == 0 || c.chains == 0 {
            return Err(config_error("coupling: delta_quantile must lie in [0, 1]; pilot_samples and chains must be positive"));
        }
        c.initial_b.validate("coupling.initial_b")?;
        let m = &self.mixing;
        if m.count == 0 || m.stride == 0 || !(m.scale > 0.0) {
            return Err(config_error("mixing: count, stride and scale must be positive"));
        }
        crate::integrator::steps_for(m.horizon, i.dt).map_err(|e| config_error(format!("mixing: {e}")))?;
        m.initial_a.validate("mixing.initial_a")?;
        m.initial_b.validate("mixing.initial_b")?;
        if self.verify.count < 2 || self.verify.states == 0 {
            return Err(config_error("verify: count must be at least 2 and states positive"));
        }
        crate::integrator::steps_for(self.verify.horizon, i.dt).map_err(|e| config_error(format!("verify: {e}")))?;
        Ok(warnings)
    }

    pub fn spectrum(&self) -> Result<Arc<Spectrum>> {
        Ok(Arc::new(Spectrum::new(self.geometry.nh, self.geometry.nz).map_err(|e| config_error(e.to_string()))?))
    }

    pub fn transform(&self) -> Result<Transform> {
        let t = self.truncation()?;
        if self.geometry.dealias {
            Transform::with_grid(t, self.geometry.grid())
        } else {
            Ok(Transform::aliased(t))
        }
    }

    pub fn terms(&self) -> DriftTerms {
        DriftTerms { advection: self.integrator.advection, coupling: self.integrator.coupling }
    }

    /// The configured envelope, or `None` for noiseless runs.
    pub fn envelope(&self, spectrum: &Spectrum) -> Result<Option<NoiseEnvelope>> {
        let n = &self.noise;
        let env = match n.kind {
            NoiseKind::None => return Ok(None),
            NoiseKind::PowerLaw => NoiseEnvelope::power_law(spectrum, n.beta)?,
            NoiseKind::Custom => {
                let path = n.table.as_ref().ok_or_else(|| config_error("noise: custom kind needs a `table` path"))?;
                let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
                let values = text
                    .split_whitespace()
                    .map(|w| w.parse::<f64>().map_err(|e| config_error(format!("noise table entry {w:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                if values.len() != spectrum.len() {
                    return Err(config_error(format!("noise table has {} values, the spectrum has {} modes", values.len(), spectrum.len())));
                }
                NoiseEnvelope::custom(values, n.tail_exponent.unwrap_or(n.beta), n.declared_kappa1)?
            }
        };
        Ok(Some(env.scaled(n.amplitude)?))
    }

    /// The stepper at the configured or an overriding time step.
    pub fn stepper_with_dt(&self, dt: f64) -> Result<Stepper> {
        let spectrum = self.spectrum()?;
        let model = PrimitiveEquations::with_transform(spectrum.clone(), Arc::new(self.transform()?), self.physics)?.with_terms(self.terms());
        let cfg = StepperConfig { dt, scheme: self.integrator.scheme, dealias: self.geometry.dealias };
        Stepper::new(model, cfg, self.envelope(&spectrum)?)
    }

    pub fn stepper(&self) -> Result<Stepper> {
        self.stepper_with_dt(self.integrator.dt)
    }

    /// SHA-256 of the dynamics-relevant settings (geometry, physics, noise,
    /// time step, scheme and drift terms).
    pub fn dynamics_hash(&self) -> [u8; 32] {
        let key = DynamicsKey {
            geometry: &self.geometry,
            physics: &self.physics,
            noise: &self.noise,
            dt: self.integrator.dt,
            scheme: self.integrator.scheme,
            advection: self.integrator.advection,
            coupling: self.integrator.coupling,
        };
        let text = serde_json::to_string(&key).expect("plain data serializes");
        Sha256::digest(text.as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let (cfg, warnings) = RunConfig::from_toml("").unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
        let text = cfg.to_toml().unwrap();
        let (again, _) = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.to_toml().unwrap(), text);
    }

    #[test]
    fn partial_file_round_trips() {
        let src = r#"
            [geometry]
            nh = 2
            nz = 3
            [noise]
            beta = 3.9
            [coupling]
            delta = 0.5
            [mixing]
            initial_b = { kind = "single_mode", amplitude = 0.3, mode = { k = [1, 0], m = 1, parity = "EvenInZ", channel = "V1" } }
        "#;
        let (cfg, _) = RunConfig::from_toml(src).unwrap();
        assert_eq!(cfg.geometry.nz, 3);
        assert_eq!(cfg.coupling.delta, DeltaSpec::Value(0.5));
        let (again, _) = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        let (c2, _) = RunConfig::from_toml("[coupling]\ndelta = \"infinite\"").unwrap();
        assert_eq!(c2.coupling.delta, DeltaSpec::Rule(DeltaRule::Infinite));
    }

    #[test]
    fn constraints_are_checked() {
        let bad = [
            "[physics]\nc0 = 0.5",
            "[geometry]\ngrid_factor = 1.2",
            "[integrator]\nscheme = \"explicit_em\"\ndt = 0.01",
            "[integrator]\nhorizon = 0.0015",
            "[coupling]\ninner_steps = 100",
            "[noise]\nkind = \"custom\"",
            "[ensemble]\nburn_in = 2.0",
            "[bogus]\nx = 1",
            "[initial]\nkind = \"single_mode\"",
            "[integrator]\nstride = 4\ncheckpoint_every = 10",
        ];
        for b in bad {
            assert!(matches!(RunConfig::from_toml(b), Err(SpeError::Config(_))), "{b}");
        }
        let (_, w) = RunConfig::from_toml("[noise]\nbeta = 3.4").unwrap();
        assert_eq!(w.len(), 1);
        let ok = RunConfig::from_toml("[geometry]\ngrid_factor = 1.2\ndealias = false");
        assert!(ok.is_ok());
    }

    #[test]
    fn named_states_follow_the_root_seed() {
        let (cfg, _) = RunConfig::from_toml("[geometry]\nnh = 2\nnz = 2").unwrap();
        let s = cfg.spectrum().unwrap();
        let a = cfg.initial.build(&s, 5).unwrap();
        assert!(a.bit_equal(&cfg.initial.build(&s, 5).unwrap()));
        assert!(!a.bit_equal(&cfg.initial.build(&s, 6).unwrap()));
        assert!((a.norm_sq() - 1.0).abs() < 1e-12);
        assert!(!a.bit_equal(&cfg.mixing.initial_b.build(&s, 5).unwrap()));
    }

    #[test]
    fn grid_and_stepper() {
        let (cfg, _) = RunConfig::from_toml("[geometry]\nnh = 2\nnz = 2").unwrap();
        assert_eq!(cfg.geometry.grid(), Transform::required_grid(cfg.truncation().unwrap()));
        let st = cfg.stepper().unwrap();
        assert_eq!(st.model().spectrum().len(), cfg.spectrum().unwrap().len());
        assert!((cfg.mu_max() - st.model().spectrum().mu_max()).abs() < 1e-9);
        let (quiet, _) = RunConfig::from_toml("[geometry]\nnh = 2\nnz = 2\n[noise]\nkind = \"none\"").unwrap();
        assert!(quiet.stepper().unwrap().envelope().is_none());
    }

    #[test]
    fn dynamics_hash_ignores_output_and_horizon() {
        let (a, _) = RunConfig::from_toml("").unwrap();
        let (b, _) = RunConfig::from_toml("[output]\ndir = \"x\"\n[integrator]\nhorizon = 2.0").unwrap();
        let (c, _) = RunConfig::from_toml("[noise]\nbeta = 3.9").unwrap();
        assert_eq!(a.dynamics_hash(), b.dynamics_hash());
        assert_ne!(a.dynamics_hash(), c.dynamics_hash());
    }

    #[test]
    fn custom_table_is_read_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let (probe, _) = RunConfig::from_toml("[geometry]\nnh = 1\nnz = 1").unwrap();
        let n = probe.spectrum().unwrap().len();
        let table: String = (0..n).map(|i| format!("{}\n", 1.0 / (i + 1) as f64)).collect();
        std::fs::write(dir.path().join("psi.txt"), table).unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[geometry]\nnh = 1\nnz = 1\n[noise]\nkind = \"custom\"\ntable = \"psi.txt\"\ntail_exponent = 3.8\n").unwrap();
        let (cfg, _) = RunConfig::load(&path).unwrap();
        let env = cfg.envelope(&cfg.spectrum().unwrap()).unwrap().unwrap();
        assert_eq!(env.len(), n);
        assert_eq!(env.values()[1], 0.5);
        assert!(matches!(RunConfig::load(&dir.path().join("missing.toml")), Err(SpeError::Config(_))));
    }
}
