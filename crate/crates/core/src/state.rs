//! The state `Y = (v, S)` on the Galerkin truncation, its constraints, and
//! the diagnostic fields built from it.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpeError};
use crate::rng::{NoiseStream, Purpose};
use crate::spectral::{weighted_norm_sq, ModeIndex, Parity, SpectralField, Spectrum, Transform, Truncation};

/// Smallest admissible temperature scaling, `8 / lambda_1` with `lambda_1 = pi^2`.
pub const C0_MIN: f64 = 8.0 / (PI * PI);

/// Relative tolerance on the depth-averaged divergence accepted by
/// [`vertical_velocity`].
pub const DIVERGENCE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct StateY {
    pub v1: SpectralField,
    pub v2: SpectralField,
    pub s: SpectralField,
}

impl StateY {
    pub fn zeros(trunc: Truncation) -> Self {
        Self {
            v1: SpectralField::zeros(trunc, Parity::EvenInZ),
            v2: SpectralField::zeros(trunc, Parity::EvenInZ),
            s: SpectralField::zeros(trunc, Parity::OddInZ),
        }
    }

    pub fn truncation(&self) -> Truncation {
        self.v1.truncation()
    }

    pub fn fields(&self) -> [&SpectralField; 3] {
        [&self.v1, &self.v2, &self.s]
    }

    pub fn fields_mut(&mut self) -> [&mut SpectralField; 3] {
        [&mut self.v1, &mut self.v2, &mut self.s]
    }

    /// The `L^2` pairing `(Y, Z)`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.v1.dot(&other.v1) + self.v2.dot(&other.v2) + self.s.dot(&other.s)
    }

    /// `|Y|^2`.
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// `||Y||_s^2 = sum mu_n^s y_n^2`.
    pub fn sobolev_norm_sq(&self, s: f64) -> f64 {
        let t = self.truncation();
        self.fields().iter().map(|f| weighted_norm_sq(&t, f.data(), s)).sum()
    }

    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.sobolev_norm_sq(s).sqrt()
    }

    /// `(||Y||_0^2, ||Y||_1^2, ||Y||_2^2, ||Y||_3^2)` in one pass.
    pub fn norm_ladder_sq(&self) -> [f64; 4] {
        let t = self.truncation();
        let side = t.side();
        let nh = t.nh as i32;
        let mut acc = [0.0; 4];
        for f in self.fields() {
            for (i, x) in f.data().iter().enumerate() {
                if *x == 0.0 {
                    continue;
                }
                let k2 = (i % side) as i32 - nh;
                let k1 = ((i / side) % side) as i32 - nh;
                let m = (i / (side * side)) as u32;
                let mu = crate::spectral::eigenvalue([k1, k2], m);
                let x2 = x * x;
                acc[0] += x2;
                acc[1] += mu * x2;
                acc[2] += mu * mu * x2;
                acc[3] += mu * mu * mu * x2;
            }
        }
        acc
    }

    pub fn scale(&mut self, c: f64) {
        for f in self.fields_mut() {
            f.scale(c);
        }
    }

    pub fn axpy(&mut self, a: f64, x: &Self) {
        self.v1.axpy(a, &x.v1);
        self.v2.axpy(a, &x.v2);
        self.s.axpy(a, &x.s);
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|f| f.data().iter().all(|x| x.is_finite()))
    }

    /// Bitwise equality of every coefficient.
    pub fn bit_equal(&self, other: &Self) -> bool {
        self.fields()
            .iter()
            .zip(other.fields())
            .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }

    /// `A^s Y`, coefficient-wise multiplication by `mu_n^s`.
    pub fn apply_fractional_power(&self, s: f64) -> Self {
        if s == 0.0 {
            return self.clone();
        }
        let t = self.truncation();
        let mu = t.eigenvalue_table();
        let mut out = self.clone();
        for f in out.fields_mut() {
            for (x, m) in f.data_mut().iter_mut().zip(&mu) {
                if *x != 0.0 {
                    *x *= m.powf(s);
                }
            }
        }
        out
    }

    /// Coordinates on the eigenbasis, in spectrum order.
    pub fn to_modal(&self, spectrum: &Spectrum) -> Vec<f64> {
        let t = spectrum.truncation();
        let fields = self.fields();
        spectrum
            .modes()
            .iter()
            .map(|mode| {
                let (fp, n) = mode.footprint(&t);
                fp[..n].iter().map(|&(slot, idx, w)| w * fields[slot].data()[idx]).sum()
            })
            .collect()
    }

    /// The state with eigenbasis coordinates `coeffs`.
    pub fn from_modal(spectrum: &Spectrum, coeffs: &[f64]) -> Self {
        let t = spectrum.truncation();
        let mut out = Self::zeros(t);
        for (mode, &c) in spectrum.modes().iter().zip(coeffs) {
            let (fp, n) = mode.footprint(&t);
            let fields = out.fields_mut();
            for &(slot, idx, w) in &fp[..n] {
                fields[slot].data_mut()[idx] += w * c;
            }
        }
        out
    }

    /// The eigenbasis coordinate of a single mode.
    pub fn mode_coefficient(&self, spectrum: &Spectrum, index: &ModeIndex) -> Option<f64> {
        let n = spectrum.position(index)?;
        let t = spectrum.truncation();
        let (fp, len) = spectrum.modes()[n].footprint(&t);
        let fields = self.fields();
        Some(fp[..len].iter().map(|&(slot, idx, w)| w * fields[slot].data()[idx]).sum())
    }

    /// `P_N` onto another truncation: shared coefficients are copied, the rest
    /// are dropped or zero-filled.
    pub fn project(&self, target: Truncation) -> Self {
        let src = self.truncation();
        let mut out = Self::zeros(target);
        let nh = target.nh.min(src.nh) as i32;
        let nz = target.nz.min(src.nz);
        for (o, f) in out.fields_mut().into_iter().zip(self.fields()) {
            for m in 0..=nz {
                for k1 in -nh..=nh {
                    for k2 in -nh..=nh {
                        o.set([k1, k2], m, f.get([k1, k2], m));
                    }
                }
            }
        }
        out
    }

    /// Leray projection of the depth-averaged velocity and removal of the
    /// excluded slots. Idempotent and `L^2`-orthogonal.
    pub fn enforce_constraints(&mut self) {
        let t = self.truncation();
        let s2 = t.side() * t.side();
        let (v1, v2) = (self.v1.data_mut(), self.v2.data_mut());
        for idx in 0..s2 {
            let (k, _) = t.wavenumber(idx);
            if k == [0, 0] {
                v1[idx] = 0.0;
                v2[idx] = 0.0;
                continue;
            }
            let (kx, ky) = (k[0] as f64, k[1] as f64);
            let proj = (kx * v1[idx] + ky * v2[idx]) / (kx * kx + ky * ky);
            v1[idx] -= kx * proj;
            v2[idx] -= ky * proj;
        }
        self.s.data_mut()[..s2].iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn constrained(mut self) -> Self {
        self.enforce_constraints();
        self
    }

    /// Largest coefficient of the depth-averaged horizontal divergence.
    pub fn divergence_residual(&self) -> f64 {
        let div = horizontal_divergence(&self.v1, &self.v2);
        let s2 = self.truncation().side().pow(2);
        div.data()[..s2].iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    /// Largest spatial mean over the three channels. The odd channel's `m = 0`
    /// layer is included since it would carry a nonzero `z`-average.
    pub fn mean_residual(&self) -> f64 {
        let t = self.truncation();
        let c = t.index([0, 0], 0);
        let s2 = t.side() * t.side();
        let odd = self.s.data()[..s2].iter().fold(0.0f64, |a, x| a.max(x.abs()));
        self.v1.data()[c].abs().max(self.v2.data()[c].abs()).max(odd)
    }

    /// Largest deviation from `v(z) = v(-z)`, `S(z) = -S(-z)` on the grid.
    pub fn parity_leakage(&self, transform: &Transform) -> f64 {
        let (p1, p2) = transform.inverse_pair(&self.v1, &self.v2);
        let ps = transform.inverse(&self.s);
        transform
            .parity_defect(&p1, Parity::EvenInZ)
            .max(transform.parity_defect(&p2, Parity::EvenInZ))
            .max(transform.parity_defect(&ps, Parity::OddInZ))
    }

    pub fn constraint_report(&self, transform: &Transform) -> ConstraintReport {
        ConstraintReport {
            divergence: self.divergence_residual(),
            mean: self.mean_residual(),
            parity: self.parity_leakage(transform),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub divergence: f64,
    pub mean: f64,
    pub parity: f64,
}

impl ConstraintReport {
    pub fn worst(&self) -> f64 {
        self.divergence.max(self.mean).max(self.parity)
    }
}

/// Sign of the buoyancy feedback in the `S` equation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuoyancyFeedback {
    /// `-Phi(v) / sqrt(C0)`: the adjoint of the baroclinic term, so the
    /// coupling `G` is energy neutral.
    #[default]
    Balanced,
    /// `+Phi(v)` without scaling.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    /// Coriolis parameter.
    pub f: f64,
    /// Temperature scaling, `S = sqrt(C0) T`.
    pub c0: f64,
    pub buoyancy: BuoyancyFeedback,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self { f: 1.0, c0: C0_MIN, buoyancy: BuoyancyFeedback::Balanced }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        if !self.f.is_finite() {
            return Err(invalid("Coriolis parameter must be finite"));
        }
        if !(self.c0.is_finite() && self.c0 >= C0_MIN * (1.0 - 1e-15)) {
            return Err(invalid(format!("C0 = {} is below the admissible minimum 8/pi^2 = {C0_MIN}", self.c0)));
        }
        Ok(())
    }
}

pub fn horizontal_divergence(v1: &SpectralField, v2: &SpectralField) -> SpectralField {
    let mut div = v1.dx();
    div.axpy(1.0, &v2.dy());
    div
}

/// `Phi(v) = -int_{-1}^z div_H v dz'`, odd in `z`.
pub fn vertical_velocity(v1: &SpectralField, v2: &SpectralField) -> Result<SpectralField> {
    let div = horizontal_divergence(v1, v2);
    let (mut phi, residual) = div.integrate_from_bottom();
    let scale = div.data().iter().fold(1.0f64, |a, x| a.max(x.abs()));
    if residual > DIVERGENCE_TOL * scale {
        return Err(SpeError::ConstraintViolated { residual, tolerance: DIVERGENCE_TOL * scale });
    }
    phi.scale(-1.0);
    Ok(phi)
}

/// `(1/sqrt(C0)) int_{-1}^z grad_H S dz'`, even in `z`.
pub fn baroclinic_gradient(s: &SpectralField, c0: f64) -> (SpectralField, SpectralField) {
    let w = 1.0 / c0.sqrt();
    let (mut gx, _) = s.dx().integrate_from_bottom();
    let (mut gy, _) = s.dy().integrate_from_bottom();
    gx.scale(w);
    gy.scale(w);
    (gx, gy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialKind {
    Zero,
    SingleMode { mode: ModeIndex, amplitude: f64 },
    /// Independent Gaussian eigen-coordinates with standard deviation
    /// `amplitude * mu_n^(-decay/2)`.
    RandomSmooth { seed: u64, decay: f64, amplitude: f64 },
}

pub fn make_initial_state(spectrum: &Spectrum, kind: &InitialKind) -> StateY {
    let t = spectrum.truncation();
    match kind {
        InitialKind::Zero => StateY::zeros(t),
        InitialKind::SingleMode { mode, amplitude } => {
            let mut c = vec![0.0; spectrum.len()];
            if let Some(n) = spectrum.position(mode) {
                c[n] = *amplitude;
            }
            StateY::from_modal(spectrum, &c)
        }
        InitialKind::RandomSmooth { seed, decay, amplitude } => {
            random_smooth_state(spectrum, &NoiseStream::new(*seed, Purpose::InitialState, 0), *decay, *amplitude)
        }
    }
}

/// Gaussian eigen-coordinates with standard deviation
/// `amplitude * mu_n^(-decay/2)`, drawn from `stream` at step 0.
pub fn random_smooth_state(spectrum: &Spectrum, stream: &NoiseStream, decay: f64, amplitude: f64) -> StateY {
    let mut rng = stream.rng_at(0);
    let c: Vec<f64> = spectrum
        .modes()
        .iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(&mut rng);
            amplitude * m.eigenvalue.powf(-decay / 2.0) * z
        })
        .collect();
    StateY::from_modal(spectrum, &c).constrained()
}

/// Rescales `y` so that `|y| = target`; the zero state is returned unchanged.
pub fn normalized(mut y: StateY, target: f64) -> StateY {
    let n = y.norm_sq().sqrt();
    if n > 0.0 {
        y.scale(target / n);
    }
    y
}
