//! Truncated eigenbasis of the Stokes-type operator `A` on `T^2 x (-1, 1)`.
//!
//! The horizontal box has period 1 and the extended vertical interval has
//! period 2, so a mode with horizontal wavenumber `k` and vertical index `m`
//! has eigenvalue `4 pi^2 |k|^2 + pi^2 m^2`.
//!
//! Fields are stored as real coefficients on an orthonormal real basis
//! `h_k(x, y) * V_m(z)`:
//!
//! * `h_0 = 1`, `h_k = sqrt(2) cos(2 pi k.x)` for `k` in the upper half plane
//!   (`k1 > 0`, or `k1 == 0 && k2 > 0`), and `h_k = sqrt(2) sin(2 pi |k|.x)`
//!   with `|k| = -k` for `k` in the lower half plane.
//! * Even fields use `V_0 = 1/sqrt(2)`, `V_m = cos(pi m z)`; odd fields use
//!   `V_m = sin(pi m z)`, `m >= 1`.
//!
//! With this convention `d/dx h_k = -2 pi k1 h_{-k}`, which keeps every
//! horizontal derivative a signed permutation of the coefficient array.

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpeError};

/// Box truncation: `|k_i| <= nh` per horizontal axis and `m <= nz`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Truncation {
    pub nh: usize,
    pub nz: usize,
}

impl Truncation {
    pub fn new(nh: usize, nz: usize) -> Result<Self> {
        if nh == 0 || nz == 0 {
            return Err(invalid(format!("truncation must satisfy nh >= 1 and nz >= 1, got ({nh}, {nz})")));
        }
        Ok(Self { nh, nz })
    }

    /// Number of horizontal wavenumbers per axis, `2 nh + 1`.
    #[inline]
    pub fn side(&self) -> usize {
        2 * self.nh + 1
    }

    /// Length of a coefficient array.
    #[inline]
    pub fn len(&self) -> usize {
        self.side() * self.side() * (self.nz + 1)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn contains(&self, k: [i32; 2], m: usize) -> bool {
        let nh = self.nh as i32;
        k[0].abs() <= nh && k[1].abs() <= nh && m <= self.nz
    }

    #[inline]
    pub fn index(&self, k: [i32; 2], m: usize) -> usize {
        let s = self.side();
        let nh = self.nh as i32;
        (m * s + (k[0] + nh) as usize) * s + (k[1] + nh) as usize
    }

    #[inline]
    pub fn wavenumber(&self, idx: usize) -> ([i32; 2], usize) {
        let s = self.side();
        let nh = self.nh as i32;
        let k2 = (idx % s) as i32 - nh;
        let k1 = ((idx / s) % s) as i32 - nh;
        let m = idx / (s * s);
        ([k1, k2], m)
    }

    /// Index of the coefficient with horizontal wavenumber `-k` and the same `m`.
    #[inline]
    pub fn negated(&self, idx: usize) -> usize {
        let (k, m) = self.wavenumber(idx);
        self.index([-k[0], -k[1]], m)
    }

    /// Eigenvalue attached to every coefficient slot, in storage order.
    pub fn eigenvalue_table(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let (k, m) = self.wavenumber(i);
                eigenvalue(k, m as u32)
            })
            .collect()
    }
}

/// Integer key `4|k|^2 + m^2`; the eigenvalue is `pi^2` times this.
#[inline]
pub fn eigen_key(k: [i32; 2], m: u32) -> i64 {
    4 * (k[0] as i64 * k[0] as i64 + k[1] as i64 * k[1] as i64) + (m as i64) * (m as i64)
}

#[inline]
pub fn eigenvalue(k: [i32; 2], m: u32) -> f64 {
    PI * PI * eigen_key(k, m) as f64
}

/// `true` when `h_k` is a cosine (upper half plane), `false` for a sine.
#[inline]
pub fn is_cosine(k: [i32; 2]) -> bool {
    k[0] > 0 || (k[0] == 0 && k[1] > 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parity {
    EvenInZ,
    OddInZ,
}

impl Parity {
    pub fn flip(self) -> Self {
        match self {
            Parity::EvenInZ => Parity::OddInZ,
            Parity::OddInZ => Parity::EvenInZ,
        }
    }
}

/// Which scalar slot of `Y = (v, S)` a mode excites.
///
/// For `m = 0` the depth-averaged velocity must be horizontally
/// divergence-free, so only one velocity mode exists per `k`: it is labelled
/// `V1` and points along `k_perp / |k|` (see [`Mode::solenoidal`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    V1,
    V2,
    S,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeIndex {
    pub k: [i32; 2],
    pub m: u32,
    pub parity: Parity,
    pub channel: Channel,
}

impl ModeIndex {
    pub fn velocity(k: [i32; 2], m: u32, channel: Channel) -> Self {
        Self { k, m, parity: Parity::EvenInZ, channel }
    }

    pub fn temperature(k: [i32; 2], m: u32) -> Self {
        Self { k, m, parity: Parity::OddInZ, channel: Channel::S }
    }

    /// Checks the symmetry-class and mean-zero rules.
    pub fn is_admissible(&self) -> bool {
        let parity_ok = match self.channel {
            Channel::V1 | Channel::V2 => self.parity == Parity::EvenInZ,
            Channel::S => self.parity == Parity::OddInZ,
        };
        let not_constant = !(self.k == [0, 0] && self.m == 0);
        let odd_ok = self.parity == Parity::EvenInZ || self.m >= 1;
        let barotropic_ok = !(self.m == 0 && self.channel == Channel::V2);
        parity_ok && not_constant && odd_ok && barotropic_ok
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub index: ModeIndex,
    pub eigenvalue: f64,
    /// Depth-averaged velocity mode along `k_perp / |k|` (the Leray tag).
    pub solenoidal: bool,
}

impl Mode {
    /// `(slot, coefficient index, weight)` pairs spanning this eigenmode in
    /// field storage. Slot 0/1/2 is `v1`/`v2`/`S`.
    pub fn footprint(&self, trunc: &Truncation) -> ([(usize, usize, f64); 2], usize) {
        let ix = self.index;
        let idx = trunc.index(ix.k, ix.m as usize);
        if self.solenoidal {
            let norm = ((ix.k[0] * ix.k[0] + ix.k[1] * ix.k[1]) as f64).sqrt();
            (
                [(0, idx, -(ix.k[1] as f64) / norm), (1, idx, ix.k[0] as f64 / norm)],
                2,
            )
        } else {
            let slot = match ix.channel {
                Channel::V1 => 0,
                Channel::V2 => 1,
                Channel::S => 2,
            };
            ([(slot, idx, 1.0), (0, 0, 0.0)], 1)
        }
    }
}

/// The ordered truncated eigenbasis `{e_n, mu_n}` of `A` on `P_N H`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    trunc: Truncation,
    modes: Vec<Mode>,
    lookup: HashMap<ModeIndex, usize>,
}

/// Enumerates every admissible mode of the truncation, sorted by eigenvalue
/// with a lexicographic `(m, k1, k2, channel)` tiebreak.
pub fn build_spectrum(trunc: Truncation) -> Spectrum {
    let nh = trunc.nh as i32;
    let mut modes = Vec::new();
    for m in 0..=trunc.nz as u32 {
        for k1 in -nh..=nh {
            for k2 in -nh..=nh {
                let k = [k1, k2];
                if k == [0, 0] && m == 0 {
                    continue;
                }
                let mu = eigenvalue(k, m);
                if m == 0 {
                    modes.push(Mode { index: ModeIndex::velocity(k, 0, Channel::V1), eigenvalue: mu, solenoidal: true });
                } else {
                    for ch in [Channel::V1, Channel::V2] {
                        modes.push(Mode { index: ModeIndex::velocity(k, m, ch), eigenvalue: mu, solenoidal: false });
                    }
                    modes.push(Mode { index: ModeIndex::temperature(k, m), eigenvalue: mu, solenoidal: false });
                }
            }
        }
    }
    modes.sort_by_key(|md| {
        let ix = md.index;
        (eigen_key(ix.k, ix.m), ix.m, ix.k[0], ix.k[1], ix.channel)
    });
    let lookup = modes.iter().enumerate().map(|(n, md)| (md.index, n)).collect();
    Spectrum { trunc, modes, lookup }
}

impl Spectrum {
    pub fn new(nh: usize, nz: usize) -> Result<Self> {
        Ok(build_spectrum(Truncation::new(nh, nz)?))
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn eigenvalues(&self) -> impl Iterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.eigenvalue)
    }

    /// Smallest eigenvalue `mu_1 = pi^2`.
    pub fn mu1(&self) -> f64 {
        self.modes[0].eigenvalue
    }

    pub fn mu_max(&self) -> f64 {
        self.modes.last().map(|m| m.eigenvalue).unwrap_or(0.0)
    }

    pub fn position(&self, index: &ModeIndex) -> Option<usize> {
        self.lookup.get(index).copied()
    }

    /// Number of modes with eigenvalue at most `lambda`.
    pub fn count_below(&self, lambda: f64) -> usize {
        self.modes.partition_point(|m| m.eigenvalue <= lambda)
    }
}

/// A scalar field on the truncation with a fixed vertical parity.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    parity: Parity,
    trunc: Truncation,
    data: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(trunc: Truncation, parity: Parity) -> Self {
        Self { parity, trunc, data: vec![0.0; trunc.len()] }
    }

    /// Builds a field from raw coefficients, zeroing the slots that the parity
    /// class or the mean-zero condition excludes.
    pub fn from_data(trunc: Truncation, parity: Parity, data: Vec<f64>) -> Result<Self> {
        if data.len() != trunc.len() {
            return Err(invalid(format!("coefficient array has length {}, expected {}", data.len(), trunc.len())));
        }
        let mut f = Self { parity, trunc, data };
        f.clear_excluded();
        Ok(f)
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, k: [i32; 2], m: usize) -> f64 {
        self.data[self.trunc.index(k, m)]
    }

    /// Sets one coefficient. Writes to excluded slots are dropped.
    pub fn set(&mut self, k: [i32; 2], m: usize, value: f64) {
        if self.slot_allowed(k, m) {
            let i = self.trunc.index(k, m);
            self.data[i] = value;
        }
    }

    pub fn slot_allowed(&self, k: [i32; 2], m: usize) -> bool {
        match self.parity {
            Parity::EvenInZ => !(k == [0, 0] && m == 0),
            Parity::OddInZ => m >= 1,
        }
    }

    fn clear_excluded(&mut self) {
        let s2 = self.trunc.side() * self.trunc.side();
        match self.parity {
            Parity::EvenInZ => {
                let c = self.trunc.index([0, 0], 0);
                self.data[c] = 0.0;
            }
            Parity::OddInZ => self.data[..s2].iter_mut().for_each(|x| *x = 0.0),
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.trunc, other.trunc);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// `sum mu^s |a|^2` over the coefficient slots.
    pub fn sobolev_norm_sq(&self, s: f64) -> f64 {
        weighted_norm_sq(&self.trunc, &self.data, s)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert_eq!(self.parity, x.parity);
        self.data.iter_mut().zip(&x.data).for_each(|(y, x)| *y += a * x);
    }

    /// `d/dx`, a signed permutation `(dx f)_j = 2 pi j1 f_{-j}`.
    pub fn dx(&self) -> Self {
        self.horizontal_derivative(0)
    }

    pub fn dy(&self) -> Self {
        self.horizontal_derivative(1)
    }

    fn horizontal_derivative(&self, axis: usize) -> Self {
        let mut out = Self::zeros(self.trunc, self.parity);
        for j in 0..self.data.len() {
            let (k, _) = self.trunc.wavenumber(j);
            if k[axis] != 0 {
                out.data[j] = 2.0 * PI * k[axis] as f64 * self.data[self.trunc.negated(j)];
            }
        }
        out
    }

    /// `d/dz`, mapping cosines to sines and back.
    pub fn dz(&self) -> Self {
        let mut out = Self::zeros(self.trunc, self.parity.flip());
        let s2 = self.trunc.side() * self.trunc.side();
        for (i, x) in self.data.iter().enumerate().skip(s2) {
            let m = (i / s2) as f64;
            out.data[i] = match self.parity {
                Parity::EvenInZ => -PI * m * x,
                Parity::OddInZ => PI * m * x,
            };
        }
        out
    }

    /// The vertical antiderivative `int_{-1}^{z} f dz'`, computed exactly in
    /// coefficient space.
    ///
    /// For an even field the `m = 0` layer must vanish (otherwise the result
    /// is not periodic); its residual is returned alongside the result.
    pub fn integrate_from_bottom(&self) -> (Self, f64) {
        let t = self.trunc;
        let s2 = t.side() * t.side();
        let mut out = Self::zeros(t, self.parity.flip());
        match self.parity {
            Parity::EvenInZ => {
                let residual = self.data[..s2].iter().fold(0.0f64, |a, x| a.max(x.abs()));
                for (i, x) in self.data.iter().enumerate().skip(s2) {
                    let m = (i / s2) as f64;
                    out.data[i] = x / (PI * m);
                }
                (out, residual)
            }
            Parity::OddInZ => {
                // int sin(pi m z') = -(cos(pi m z) - cos(pi m)) / (pi m); the constant
                // term lands on V_0 = 1/sqrt(2).
                for (i, x) in self.data.iter().enumerate().skip(s2) {
                    let m = i / s2;
                    let pm = PI * m as f64;
                    out.data[i] = -x / pm;
                    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                    out.data[i % s2] += std::f64::consts::SQRT_2 * sign * x / pm;
                }
                out.clear_excluded();
                (out, 0.0)
            }
        }
    }
}

pub(crate) fn weighted_norm_sq(trunc: &Truncation, data: &[f64], s: f64) -> f64 {
    let side = trunc.side();
    let nh = trunc.nh as i32;
    let mut acc = 0.0;
    let integral = s.fract() == 0.0 && s.abs() <= 16.0;
    for (i, x) in data.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        let k2 = (i % side) as i32 - nh;
        let k1 = ((i / side) % side) as i32 - nh;
        let m = (i / (side * side)) as u32;
        let mu = eigenvalue([k1, k2], m);
        let w = if integral { mu.powi(s as i32) } else { mu.powf(s) };
        acc += w * x * x;
    }
    acc
}

/// Values of a real field on the uniform grid `x_j = j / Mx`, `y_j = j / My`,
/// `z_l = 2 l / Mz` (one period of the extended vertical interval).
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl PhysicalField {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_fn(dims: [usize; 3], f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(dims);
        for ix in 0..dims[0] {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    let (x, y, z) = grid_point(dims, [ix, iy, iz]);
                    out.data[(ix * dims[1] + iy) * dims[2] + iz] = f(x, y, z);
                }
            }
        }
        out
    }

    /// `int f^2` over the domain of volume 2 (exact for band-limited products).
    pub fn l2_norm_sq(&self) -> f64 {
        2.0 * self.data.iter().map(|x| x * x).sum::<f64>() / self.data.len() as f64
    }

    pub fn at(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.data[(ix * self.dims[1] + iy) * self.dims[2] + iz]
    }
}

pub fn grid_point(dims: [usize; 3], idx: [usize; 3]) -> (f64, f64, f64) {
    (
        idx[0] as f64 / dims[0] as f64,
        idx[1] as f64 / dims[1] as f64,
        2.0 * idx[2] as f64 / dims[2] as f64,
    )
}

#[derive(Clone, Copy, Debug)]
struct Term {
    /// Flat position of the wavenumber in the complex grid.
    pos: usize,
    /// Flat position of the negated wavenumber.
    neg: usize,
    weight: Complex64,
}

#[derive(Clone, Debug, Default)]
struct TermList {
    terms: [Option<Term>; 4],
}

/// Pseudo-spectral transform between coefficient space and the physical grid,
/// built on 3D complex FFTs that skip the zero lines outside the truncation.
///
/// Immutable once built; shareable across threads.
#[derive(Clone)]
pub struct Transform {
    trunc: Truncation,
    dims: [usize; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
    fwd: [Arc<dyn Fft<f64>>; 3],
    even_terms: Vec<TermList>,
    odd_terms: Vec<TermList>,
    band_x: Vec<usize>,
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform").field("trunc", &self.trunc).field("dims", &self.dims).finish()
    }
}

impl Transform {
    /// Smallest grid free of aliasing for quadratic products: `3K + 1` points
    /// per axis for a maximal wavenumber `K`.
    pub fn required_grid(trunc: Truncation) -> [usize; 3] {
        [3 * trunc.nh + 1, 3 * trunc.nh + 1, 3 * trunc.nz + 1]
    }

    /// Smallest grid that represents the truncation without aliasing on linear data.
    pub fn minimal_grid(trunc: Truncation) -> [usize; 3] {
        [2 * trunc.nh + 1, 2 * trunc.nh + 1, 2 * trunc.nz + 1]
    }

    pub fn dealiased(trunc: Truncation) -> Self {
        Self::build(trunc, Self::required_grid(trunc))
    }

    /// Builds a transform on an explicit grid; fails if it cannot hold
    /// quadratic products without aliasing.
    pub fn with_grid(trunc: Truncation, dims: [usize; 3]) -> Result<Self> {
        let required = Self::required_grid(trunc);
        if dims.iter().zip(&required).any(|(d, r)| d < r) {
            return Err(SpeError::Resolution { grid: dims, required });
        }
        Ok(Self::build(trunc, dims))
    }

    /// Builds a transform that only resolves the truncation itself. Quadratic
    /// products computed on it are aliased.
    pub fn aliased(trunc: Truncation) -> Self {
        Self::build(trunc, Self::minimal_grid(trunc))
    }

    fn build(trunc: Truncation, dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let inv = [0, 1, 2].map(|a| planner.plan_fft_inverse(dims[a]));
        let fwd = [0, 1, 2].map(|a| planner.plan_fft_forward(dims[a]));
        let wrap = |k: i32, n: usize| k.rem_euclid(n as i32) as usize;
        let flat = |kx: i32, ky: i32, kz: i32| (wrap(kx, dims[0]) * dims[1] + wrap(ky, dims[1])) * dims[2] + wrap(kz, dims[2]);
        let r = FRAC_1_SQRT_2;
        let i = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        let mut even_terms = Vec::with_capacity(trunc.len());
        let mut odd_terms = Vec::with_capacity(trunc.len());
        for idx in 0..trunc.len() {
            let (k, m) = trunc.wavenumber(idx);
            let horiz: Vec<([i32; 2], Complex64)> = if k == [0, 0] {
                vec![(k, one)]
            } else if is_cosine(k) {
                vec![(k, one * r), ([-k[0], -k[1]], one * r)]
            } else {
                vec![([-k[0], -k[1]], -i * r), (k, i * r)]
            };
            let mi = m as i32;
            let even_v: Vec<(i32, Complex64)> = if m == 0 {
                if k == [0, 0] { vec![] } else { vec![(0, one * r)] }
            } else {
                vec![(mi, one * 0.5), (-mi, one * 0.5)]
            };
            let odd_v: Vec<(i32, Complex64)> = if m == 0 { vec![] } else { vec![(mi, -i * 0.5), (-mi, i * 0.5)] };
            let combine = |vert: &[(i32, Complex64)]| {
                let mut list = TermList::default();
                let mut n = 0;
                for (hk, hw) in &horiz {
                    for (vz, vw) in vert {
                        list.terms[n] = Some(Term {
                            pos: flat(hk[0], hk[1], *vz),
                            neg: flat(-hk[0], -hk[1], -*vz),
                            weight: hw * vw,
                        });
                        n += 1;
                    }
                }
                list
            };
            even_terms.push(combine(&even_v));
            odd_terms.push(combine(&odd_v));
        }
        let nh = trunc.nh as i32;
        let band_x = (-nh..=nh).map(|k| wrap(k, dims[0])).collect();
        Self { trunc, dims, inv, fwd, even_terms, odd_terms, band_x }
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn is_dealiased(&self) -> bool {
        let req = Self::required_grid(self.trunc);
        self.dims.iter().zip(&req).all(|(d, r)| d >= r)
    }

    fn terms(&self, parity: Parity) -> &[TermList] {
        match parity {
            Parity::EvenInZ => &self.even_terms,
            Parity::OddInZ => &self.odd_terms,
        }
    }

    fn points(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Spectral to physical.
    pub fn inverse(&self, f: &SpectralField) -> PhysicalField {
        let zero = SpectralField::zeros(self.trunc, Parity::EvenInZ);
        self.inverse_pair(f, &zero).0
    }

    /// Spectral to physical for two real fields packed into one complex FFT.
    pub fn inverse_pair(&self, f: &SpectralField, g: &SpectralField) -> (PhysicalField, PhysicalField) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.points()];
        let i = Complex64::new(0.0, 1.0);
        for (field, factor) in [(f, Complex64::new(1.0, 0.0)), (g, i)] {
            let terms = self.terms(field.parity());
            for (idx, &a) in field.data().iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for t in terms[idx].terms.iter().flatten() {
                    buf[t.pos] += factor * a * t.weight;
                }
            }
        }
        self.run_inverse(&mut buf);
        let pf = PhysicalField { dims: self.dims, data: buf.iter().map(|c| c.re).collect() };
        let pg = PhysicalField { dims: self.dims, data: buf.iter().map(|c| c.im).collect() };
        (pf, pg)
    }

    /// Physical to spectral: L^2 projection onto the truncated basis of the
    /// requested parity class.
    pub fn forward(&self, p: &PhysicalField, parity: Parity) -> Result<SpectralField> {
        self.check_dims(p)?;
        let mut buf: Vec<Complex64> = p.data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.run_forward(&mut buf);
        Ok(self.extract(&buf, parity).0)
    }

    /// Forward transform of two real fields packed into one complex FFT.
    pub fn forward_pair(
        &self,
        p: &PhysicalField,
        q: &PhysicalField,
        parity_p: Parity,
        parity_q: Parity,
    ) -> Result<(SpectralField, SpectralField)> {
        self.check_dims(p)?;
        self.check_dims(q)?;
        let mut buf: Vec<Complex64> = p.data.iter().zip(&q.data).map(|(&a, &b)| Complex64::new(a, b)).collect();
        self.run_forward(&mut buf);
        if parity_p == parity_q {
            Ok(self.extract(&buf, parity_p))
        } else {
            let (a, _) = self.extract(&buf, parity_p);
            let (_, b) = self.extract(&buf, parity_q);
            Ok((a, b))
        }
    }

    fn check_dims(&self, p: &PhysicalField) -> Result<()> {
        if p.dims != self.dims {
            return Err(SpeError::Resolution { grid: p.dims, required: self.dims });
        }
        Ok(())
    }

    /// Coefficients `a = sum_t 2 w_t C(-k_t)`; real part belongs to the first
    /// packed field and imaginary part to the second.
    fn extract(&self, buf: &[Complex64], parity: Parity) -> (SpectralField, SpectralField) {
        let scale = 2.0 / self.points() as f64;
        let terms = self.terms(parity);
        let mut a = SpectralField::zeros(self.trunc, parity);
        let mut b = SpectralField::zeros(self.trunc, parity);
        for idx in 0..self.trunc.len() {
            let mut acc = Complex64::new(0.0, 0.0);
            for t in terms[idx].terms.iter().flatten() {
                acc += t.weight * buf[t.neg];
            }
            a.data[idx] = acc.re * scale;
            b.data[idx] = acc.im * scale;
        }
        (a, b)
    }

    fn run_inverse(&self, buf: &mut [Complex64]) {
        let [mx, my, mz] = self.dims;
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.scratch_len()];
        // z lines with nonzero content: kx, ky both inside the band.
        for &ix in &self.band_x {
            for &iy in &self.band_x {
                let off = (ix * my + iy) * mz;
                self.inv[2].process_with_scratch(&mut buf[off..off + mz], &mut scratch);
            }
        }
        // y lines for kx in band.
        let mut lines = self.gather_y(buf);
        self.inv[1].process_with_scratch(&mut lines, &mut scratch);
        self.scatter_y(buf, &lines);
        // x lines everywhere.
        let mut lines = Self::gather_x(buf, mx, my * mz);
        self.inv[0].process_with_scratch(&mut lines, &mut scratch);
        for ix in 0..mx {
            for r in 0..my * mz {
                buf[ix * my * mz + r] = lines[r * mx + ix];
            }
        }
    }

    fn run_forward(&self, buf: &mut [Complex64]) {
        let [mx, my, mz] = self.dims;
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.scratch_len()];
        let mut lines = Self::gather_x(buf, mx, my * mz);
        self.fwd[0].process_with_scratch(&mut lines, &mut scratch);
        for ix in 0..mx {
            for r in 0..my * mz {
                buf[ix * my * mz + r] = lines[r * mx + ix];
            }
        }
        let mut lines = self.gather_y(buf);
        self.fwd[1].process_with_scratch(&mut lines, &mut scratch);
        self.scatter_y(buf, &lines);
        for &ix in &self.band_x {
            for &iy in &self.band_x {
                let off = (ix * my + iy) * mz;
                self.fwd[2].process_with_scratch(&mut buf[off..off + mz], &mut scratch);
            }
        }
    }

    /// The x lines of `buf`, one contiguous line per `(y, z)` pair.
    fn gather_x(buf: &[Complex64], mx: usize, rows: usize) -> Vec<Complex64> {
        let mut lines = Vec::with_capacity(mx * rows);
        for r in 0..rows {
            lines.extend((0..mx).map(|ix| buf[ix * rows + r]));
        }
        lines
    }

    /// The y lines of `buf` whose x wavenumber lies in the band.
    fn gather_y(&self, buf: &[Complex64]) -> Vec<Complex64> {
        let [_, my, mz] = self.dims;
        let mut lines = Vec::with_capacity(self.band_x.len() * mz * my);
        for &ix in &self.band_x {
            for iz in 0..mz {
                lines.extend((0..my).map(|iy| buf[(ix * my + iy) * mz + iz]));
            }
        }
        lines
    }

    fn scatter_y(&self, buf: &mut [Complex64], lines: &[Complex64]) {
        let [_, my, mz] = self.dims;
        let mut rows = lines.chunks_exact(my);
        for &ix in &self.band_x {
            for iz in 0..mz {
                let row = rows.next().expect("one row per band line");
                for (iy, v) in row.iter().enumerate() {
                    buf[(ix * my + iy) * mz + iz] = *v;
                }
            }
        }
    }

    fn scratch_len(&self) -> usize {
        self.inv
            .iter()
            .chain(self.fwd.iter())
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0)
    }

    /// Largest vertical-parity defect of `p` on the grid: `max |p(z) - s p(-z)|`
    /// with `s = +1` for even and `-1` for odd.
    pub fn parity_defect(&self, p: &PhysicalField, parity: Parity) -> f64 {
        let [mx, my, mz] = self.dims;
        let sign = match parity {
            Parity::EvenInZ => 1.0,
            Parity::OddInZ => -1.0,
        };
        let mut worst = 0.0f64;
        for ix in 0..mx {
            for iy in 0..my {
                for iz in 0..mz {
                    let mirror = (mz - iz) % mz;
                    worst = worst.max((p.at(ix, iy, iz) - sign * p.at(ix, iy, mirror)).abs());
                }
            }
        }
        worst
    }
}
