//! The evolution operators `A`, `B` and `G` of the Galerkin system.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::spectral::{Parity, PhysicalField, SpectralField, Spectrum, Transform};
use crate::state::{baroclinic_gradient, vertical_velocity, BuoyancyFeedback, PhysicalParams, StateY};

/// Switches for the non-diagonal drift terms. With both off the system is a
/// family of independent Ornstein-Uhlenbeck modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftTerms {
    pub advection: bool,
    pub coupling: bool,
}

impl Default for DriftTerms {
    fn default() -> Self {
        Self { advection: true, coupling: true }
    }
}

impl DriftTerms {
    pub const LINEAR: DriftTerms = DriftTerms { advection: false, coupling: false };
}

#[derive(Clone, Debug)]
pub struct PrimitiveEquations {
    spectrum: Arc<Spectrum>,
    transform: Arc<Transform>,
    params: PhysicalParams,
    terms: DriftTerms,
}

fn pointwise(dims: [usize; 3], terms: &[(&PhysicalField, &PhysicalField)]) -> PhysicalField {
    let mut out = PhysicalField::zeros(dims);
    for (a, b) in terms {
        for ((o, x), y) in out.data.iter_mut().zip(&a.data).zip(&b.data) {
            *o += x * y;
        }
    }
    out
}

impl PrimitiveEquations {
    /// Full system on the alias-free grid.
    pub fn new(spectrum: Arc<Spectrum>, params: PhysicalParams) -> Result<Self> {
        let transform = Arc::new(Transform::dealiased(spectrum.truncation()));
        Self::with_transform(spectrum, transform, params)
    }

    pub fn with_transform(spectrum: Arc<Spectrum>, transform: Arc<Transform>, params: PhysicalParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { spectrum, transform, params, terms: DriftTerms::default() })
    }

    pub fn with_terms(mut self, terms: DriftTerms) -> Self {
        self.terms = terms;
        self
    }

    pub fn spectrum(&self) -> &Arc<Spectrum> {
        &self.spectrum
    }

    pub fn transform(&self) -> &Arc<Transform> {
        &self.transform
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn terms(&self) -> DriftTerms {
        self.terms
    }

    /// `A Y`, multiplication by `mu_n`.
    pub fn apply_a(&self, y: &StateY) -> StateY {
        y.apply_fractional_power(1.0)
    }

    /// `P_N B(Y, Y1)`: `(v . grad_H) v1 + Phi(v) dz v1` and
    /// `(v . grad_H) S1 + Phi(v) dz S1`, evaluated pseudo-spectrally in
    /// advective form.
    pub fn apply_b(&self, y: &StateY, y1: &StateY) -> Result<StateY> {
        let tr = &*self.transform;
        let dims = tr.dims();
        let phi = vertical_velocity(&y.v1, &y.v2)?;
        let (v1, v2) = tr.inverse_pair(&y.v1, &y.v2);
        let (w, a_x) = tr.inverse_pair(&phi, &y1.v1.dx());
        let (a_y, a_z) = tr.inverse_pair(&y1.v1.dy(), &y1.v1.dz());
        let (b_x, b_y) = tr.inverse_pair(&y1.v2.dx(), &y1.v2.dy());
        let (b_z, s_x) = tr.inverse_pair(&y1.v2.dz(), &y1.s.dx());
        let (s_y, s_z) = tr.inverse_pair(&y1.s.dy(), &y1.s.dz());
        let r1 = pointwise(dims, &[(&v1, &a_x), (&v2, &a_y), (&w, &a_z)]);
        let r2 = pointwise(dims, &[(&v1, &b_x), (&v2, &b_y), (&w, &b_z)]);
        let rs = pointwise(dims, &[(&v1, &s_x), (&v2, &s_y), (&w, &s_z)]);
        let (f1, f2) = tr.forward_pair(&r1, &r2, Parity::EvenInZ, Parity::EvenInZ)?;
        let fs = tr.forward(&rs, Parity::OddInZ)?;
        Ok(StateY { v1: f1, v2: f2, s: fs }.constrained())
    }

    /// `P_N G(Y)`: Coriolis and baroclinic pressure on `v` (the surface
    /// pressure is the Leray multiplier), buoyancy feedback on `S`.
    pub fn apply_g(&self, y: &StateY) -> Result<StateY> {
        let p = &self.params;
        let (gx, gy) = baroclinic_gradient(&y.s, p.c0);
        let mut v1 = y.v2.clone();
        v1.scale(-p.f);
        v1.axpy(-1.0, &gx);
        let mut v2 = y.v1.clone();
        v2.scale(p.f);
        v2.axpy(-1.0, &gy);
        let mut s = vertical_velocity(&y.v1, &y.v2)?;
        match p.buoyancy {
            BuoyancyFeedback::Balanced => s.scale(-1.0 / p.c0.sqrt()),
            BuoyancyFeedback::Literal => {}
        }
        Ok(StateY { v1, v2, s }.constrained())
    }

    /// `-(1/sqrt(C0)) [ (int grad_H S, v) + (Phi(v), S) ]`.
    pub fn g_pairing_reduced(&self, y: &StateY) -> Result<f64> {
        let (gx, gy) = baroclinic_gradient(&y.s, 1.0);
        let phi = vertical_velocity(&y.v1, &y.v2)?;
        let pressure = gx.dot(&y.v1) + gy.dot(&y.v2);
        Ok(-(pressure + phi.dot(&y.s)) / self.params.c0.sqrt())
    }

    /// The explicit part of the drift, `-P_N B(Y, Y) - P_N G(Y)`, honouring
    /// the term switches.
    pub fn explicit_drift(&self, y: &StateY) -> Result<StateY> {
        let mut out = StateY::zeros(y.truncation());
        if self.terms.advection {
            out.axpy(-1.0, &self.apply_b(y, y)?);
        }
        if self.terms.coupling {
            out.axpy(-1.0, &self.apply_g(y)?);
        }
        Ok(out)
    }

    /// `-A Y - P_N B(Y, Y) - P_N G(Y)`.
    pub fn galerkin_drift(&self, y: &StateY) -> Result<StateY> {
        let mut out = self.explicit_drift(y)?;
        out.axpy(-1.0, &self.apply_a(y));
        Ok(out)
    }

    /// Linearization of [`explicit_drift`](Self::explicit_drift) at `y` in
    /// the direction `beta`: `-B(Y, beta) - B(beta, Y) - G(beta)`.
    pub fn tangent_explicit_drift(&self, y: &StateY, beta: &StateY) -> Result<StateY> {
        let mut out = StateY::zeros(y.truncation());
        if self.terms.advection {
            out.axpy(-1.0, &self.apply_b(y, beta)?);
            out.axpy(-1.0, &self.apply_b(beta, y)?);
        }
        if self.terms.coupling {
            out.axpy(-1.0, &self.apply_g(beta)?);
        }
        Ok(out)
    }
}

/// `(f k x v, v)`, zero pointwise.
pub fn coriolis_pairing(v1: &SpectralField, v2: &SpectralField, f: f64) -> f64 {
    f * (-v2.dot(v1) + v1.dot(v2))
}
