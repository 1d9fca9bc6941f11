//! Seeded random inputs: GL⁺(7) frames, band-limited form and vector fields
//! and positive perturbations of the flat structure.

use rand::Rng;

use crate::error::Result;
use crate::exterior::{binomial, pullback, AlgForm, Matrix7, Vector7, DIM};
use crate::g2core::standard_phi;
use crate::torusfield::{ext_d, FormField, G2StructureField, Grid, ScalarField, VectorField};

/// `exp(spread · M)` with `M` uniform in `[-1, 1]^{7×7} / √7`; always in GL⁺(7)
/// with condition number at most `e^{2·spread·√7}`.
pub fn random_glplus<R: Rng>(rng: &mut R, spread: f64) -> Matrix7 {
    let m = Matrix7::from_fn(|_, _| rng.gen_range(-1.0..1.0)) * (spread / (DIM as f64).sqrt());
    m.exp()
}

pub fn random_form<R: Rng>(rng: &mut R, degree: usize) -> AlgForm {
    AlgForm::new(degree, (0..binomial(degree)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_vector<R: Rng>(rng: &mut R) -> Vector7 {
    Vector7::from_fn(|_, _| rng.gen_range(-1.0..1.0))
}

/// A random pullback of `φ₀` by [`random_glplus`].
pub fn random_positive_phi_value<R: Rng>(rng: &mut R, spread: f64) -> AlgForm {
    pullback(&standard_phi(), &random_glplus(rng, spread))
}

// Real Fourier basis {1, cos(k·x), sin(k·x)} over wavevectors with
// |k_a| ≤ bandwidth on active axes, one representative of each ±k pair.
pub(crate) fn trig_basis(grid: Grid, bandwidth: usize) -> Vec<Vec<f64>> {
    let active = grid.active_axes();
    let caps: Vec<i64> = active
        .iter()
        .map(|&a| bandwidth.min(grid.max_wavenumber(a)) as i64)
        .collect();
    let mut modes: Vec<Vec<i64>> = vec![vec![]];
    for &cap in &caps {
        modes = modes
            .into_iter()
            .flat_map(|m| {
                (-cap..=cap).map(move |k| {
                    let mut m = m.clone();
                    m.push(k);
                    m
                })
            })
            .collect();
    }
    // Keep k = 0 and the lexicographically positive half.
    modes.retain(|m| m.iter().find(|&&k| k != 0).map_or(true, |&k| k > 0));
    let coords: Vec<[f64; DIM]> = (0..grid.npoints()).map(|p| grid.coords(p)).collect();
    let mut basis = Vec::new();
    for m in &modes {
        let phase: Vec<f64> = coords
            .iter()
            .map(|x| active.iter().zip(m).map(|(&a, &k)| k as f64 * x[a]).sum())
            .collect();
        basis.push(phase.iter().map(|t| t.cos()).collect());
        if m.iter().any(|&k| k != 0) {
            basis.push(phase.iter().map(|t| t.sin()).collect());
        }
    }
    basis
}

fn random_combination<R: Rng>(rng: &mut R, basis: &[Vec<f64>], amplitude: f64) -> Vec<f64> {
    let scale = amplitude / (basis.len() as f64).sqrt();
    let mut out = vec![0.0; basis[0].len()];
    for b in basis {
        let c = scale * rng.gen_range(-1.0..1.0);
        for (o, v) in out.iter_mut().zip(b) {
            *o += c * v;
        }
    }
    out
}

/// Random real scalar field whose Fourier content is capped at `bandwidth`
/// per active axis.
pub fn band_limited_scalar<R: Rng>(rng: &mut R, grid: Grid, bandwidth: usize, amplitude: f64) -> ScalarField {
    band_limited_form(rng, grid, 0, bandwidth, amplitude)
}

pub fn band_limited_form<R: Rng>(
    rng: &mut R,
    grid: Grid,
    degree: usize,
    bandwidth: usize,
    amplitude: f64,
) -> FormField {
    let basis = trig_basis(grid, bandwidth);
    let n = binomial(degree);
    let columns: Vec<Vec<f64>> = (0..n).map(|_| random_combination(rng, &basis, amplitude)).collect();
    let mut data = vec![0.0; grid.npoints() * n];
    for (c, col) in columns.iter().enumerate() {
        for (p, v) in col.iter().enumerate() {
            data[p * n + c] = *v;
        }
    }
    FormField::from_data(grid, degree, data).unwrap()
}

pub fn band_limited_vector<R: Rng>(rng: &mut R, grid: Grid, bandwidth: usize, amplitude: f64) -> VectorField {
    let f = band_limited_form(rng, grid, 1, bandwidth, amplitude);
    let values = (0..grid.npoints()).map(|p| Vector7::from_column_slice(f.point(p))).collect();
    VectorField::new(grid, values).unwrap()
}

/// `φ₀ + amplitude · (band-limited random 3-form)`.
pub fn random_positive_phi<R: Rng>(
    rng: &mut R,
    grid: Grid,
    bandwidth: usize,
    amplitude: f64,
) -> Result<G2StructureField> {
    let pert = band_limited_form(rng, grid, 3, bandwidth, amplitude);
    G2StructureField::new(FormField::constant(grid, &standard_phi()).add(&pert))
}

/// Closed positive field `φ₀ + dβ`, with `β` a band-limited 2-form rescaled so
/// that `max |dβ| = amplitude`.
pub fn random_closed_phi<R: Rng>(
    rng: &mut R,
    grid: Grid,
    bandwidth: usize,
    amplitude: f64,
) -> Result<G2StructureField> {
    let beta = band_limited_form(rng, grid, 2, bandwidth, 1.0);
    let dbeta = ext_d(&beta)?;
    let m = dbeta.max_abs();
    let pert = if m > 0.0 { dbeta.scaled(amplitude / m) } else { dbeta };
    G2StructureField::new(FormField::constant(grid, &standard_phi()).add(&pert))
}

/// Conformal-type field `f³ φ₀` with induced metric `f² g₀`.
pub fn conformal_phi(f: &ScalarField) -> Result<G2StructureField> {
    let cube = FormField::from_data(*f.grid(), 0, f.values().iter().map(|v| v * v * v).collect())?;
    G2StructureField::new(FormField::constant(*f.grid(), &standard_phi()).mul_scalar(&cube))
}

/// Positive band-limited function `1 + amplitude · (random mode sum)` with
/// the oscillation rescaled to `max |f − 1| = amplitude`.
pub fn positive_profile<R: Rng>(rng: &mut R, grid: Grid, bandwidth: usize, amplitude: f64) -> ScalarField {
    let s = band_limited_scalar(rng, grid, bandwidth, 1.0);
    let mean = s.values().iter().sum::<f64>() / s.values().len() as f64;
    let m = s.values().iter().fold(0.0f64, |a, v| a.max((v - mean).abs()));
    let vals = s
        .values()
        .iter()
        .map(|v| 1.0 + if m > 0.0 { amplitude * (v - mean) / m } else { 0.0 })
        .collect();
    FormField::from_data(grid, 0, vals).unwrap()
}
