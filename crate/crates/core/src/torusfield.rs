//! Form fields on the periodic 7-torus `[0, 2π)^7` sampled on uniform grids,
//! with Fourier-spectral exterior derivative and pointwise metric operators.
//!
//! Grid points are ordered lexicographically with axis 0 slowest. Field data
//! is point-major: the `C(7,k)` coefficients of one point are contiguous.

use std::f64::consts::PI;
use std::sync::LazyLock;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::exterior::{
    binomial, contract_acc, derivation, dx_wedge_acc, wedge_acc, AlgForm, Matrix7, Vector7, DIM,
};
use crate::g2core::G2Pointwise;

const TAU: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    sizes: [usize; DIM],
}

impl Grid {
    pub fn new(sizes: [usize; DIM]) -> Result<Self> {
        if sizes.iter().any(|&n| n == 0) {
            return Err(Error::Grid(format!("grid sizes must be >= 1: {sizes:?}")));
        }
        Ok(Grid { sizes })
    }

    /// `n` points along each listed axis (0-based), one point elsewhere.
    pub fn with_active(n: usize, active: &[usize]) -> Result<Self> {
        let mut sizes = [1; DIM];
        for &a in active {
            if a >= DIM {
                return Err(Error::Grid(format!("axis {a} out of range")));
            }
            sizes[a] = n;
        }
        Grid::new(sizes)
    }

    pub fn sizes(&self) -> [usize; DIM] {
        self.sizes
    }

    pub fn npoints(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        TAU / self.sizes[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..DIM).map(|a| self.spacing(a)).product()
    }

    /// Coordinate volume `(2π)^7`.
    pub fn total_volume(&self) -> f64 {
        TAU.powi(DIM as i32)
    }

    pub fn active_axes(&self) -> Vec<usize> {
        (0..DIM).filter(|&a| self.sizes[a] > 1).collect()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.sizes[axis + 1..].iter().product()
    }

    pub fn multi_index(&self, mut p: usize) -> [usize; DIM] {
        let mut idx = [0; DIM];
        for a in (0..DIM).rev() {
            idx[a] = p % self.sizes[a];
            p /= self.sizes[a];
        }
        idx
    }

    pub fn coords(&self, p: usize) -> [f64; DIM] {
        let idx = self.multi_index(p);
        let mut x = [0.0; DIM];
        for a in 0..DIM {
            x[a] = idx[a] as f64 * self.spacing(a);
        }
        x
    }

    /// Largest resolved wavenumber per axis (Nyquist excluded).
    pub fn max_wavenumber(&self, axis: usize) -> usize {
        (self.sizes[axis] - 1) / 2
    }
}

/// A degree-k form sampled at every grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct FormField {
    grid: Grid,
    degree: usize,
    data: Vec<f64>,
}

/// A 0-form field.
pub type ScalarField = FormField;

impl FormField {
    pub fn zeros(grid: Grid, degree: usize) -> Self {
        assert!(degree <= DIM);
        FormField {
            grid,
            degree,
            data: vec![0.0; grid.npoints() * binomial(degree)],
        }
    }

    pub fn from_data(grid: Grid, degree: usize, data: Vec<f64>) -> Result<Self> {
        if degree > DIM {
            return Err(Error::Degree(format!("degree {degree} exceeds 7")));
        }
        if data.len() != grid.npoints() * binomial(degree) {
            return Err(Error::Grid(format!(
                "expected {} values, got {}",
                grid.npoints() * binomial(degree),
                data.len()
            )));
        }
        Ok(FormField { grid, degree, data })
    }

    pub fn constant(grid: Grid, value: &AlgForm) -> Self {
        let mut data = Vec::with_capacity(grid.npoints() * value.coeffs().len());
        for _ in 0..grid.npoints() {
            data.extend_from_slice(value.coeffs());
        }
        FormField {
            grid,
            degree: value.degree(),
            data,
        }
    }

    pub fn from_fn(grid: Grid, degree: usize, f: impl Fn([f64; DIM]) -> AlgForm) -> Self {
        let mut field = FormField::zeros(grid, degree);
        for p in 0..grid.npoints() {
            let v = f(grid.coords(p));
            assert_eq!(v.degree(), degree);
            field.point_mut(p).copy_from_slice(v.coeffs());
        }
        field
    }

    pub fn scalar_from_fn(grid: Grid, f: impl Fn([f64; DIM]) -> f64) -> ScalarField {
        FormField::from_fn(grid, 0, |x| AlgForm::scalar(f(x)))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn ncoeffs(&self) -> usize {
        binomial(self.degree)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn point(&self, p: usize) -> &[f64] {
        let n = self.ncoeffs();
        &self.data[p * n..(p + 1) * n]
    }

    pub fn point_mut(&mut self, p: usize) -> &mut [f64] {
        let n = self.ncoeffs();
        &mut self.data[p * n..(p + 1) * n]
    }

    pub fn form_at(&self, p: usize) -> AlgForm {
        AlgForm::new(self.degree, self.point(p).to_vec()).unwrap()
    }

    /// Values of a 0-form.
    pub fn values(&self) -> &[f64] {
        assert_eq!(self.degree, 0);
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_same(&self, other: &FormField) {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        assert_eq!(self.degree, other.degree, "fields have different degrees");
    }

    pub fn add(&self, other: &FormField) -> FormField {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &FormField) -> FormField {
        self.axpy(-1.0, other)
    }

    /// `self + s · other`.
    pub fn axpy(&self, s: f64, other: &FormField) -> FormField {
        self.check_same(other);
        FormField {
            grid: self.grid,
            degree: self.degree,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + s * b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> FormField {
        FormField {
            grid: self.grid,
            degree: self.degree,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// Pointwise product with a scalar field.
    pub fn mul_scalar(&self, f: &ScalarField) -> FormField {
        assert_eq!(f.degree, 0);
        assert_eq!(self.grid, f.grid);
        let n = self.ncoeffs();
        let mut out = self.clone();
        for (chunk, s) in out.data.chunks_mut(n.max(1)).zip(&f.data) {
            chunk.iter_mut().for_each(|c| *c *= s);
        }
        out
    }
}

/// A vector field, one `Vector7` per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    values: Vec<Vector7>,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<Vector7>) -> Result<Self> {
        if values.len() != grid.npoints() {
            return Err(Error::Grid(format!(
                "expected {} vectors, got {}",
                grid.npoints(),
                values.len()
            )));
        }
        Ok(VectorField { grid, values })
    }

    pub fn constant(grid: Grid, v: Vector7) -> Self {
        VectorField {
            grid,
            values: vec![v; grid.npoints()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; DIM]) -> Vector7) -> Self {
        VectorField {
            grid,
            values: (0..grid.npoints()).map(|p| f(grid.coords(p))).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Vector7] {
        &self.values
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        assert_eq!(self.grid, other.grid);
        VectorField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    fn as_interleaved(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }
}

/// A 3-form field that is positive at every grid point, with the induced
/// metric and `∗φ` cached per point.
#[derive(Clone, Debug)]
pub struct G2StructureField {
    phi: FormField,
    points: Vec<G2Pointwise>,
}

impl G2StructureField {
    pub fn new(phi: FormField) -> Result<Self> {
        if phi.degree != 3 {
            return Err(Error::Degree(format!("expected a 3-form field, got degree {}", phi.degree)));
        }
        let points = (0..phi.grid.npoints())
            .into_par_iter()
            .map(|p| {
                G2Pointwise::new(phi.form_at(p)).map_err(|e| match e {
                    Error::NotPositive { min_eig, .. } => Error::NotPositive { point: p, min_eig },
                    e => e,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(G2StructureField { phi, points })
    }

    /// The flat structure `φ₀` at every point.
    pub fn standard(grid: Grid) -> Self {
        let g2 = G2Pointwise::standard();
        G2StructureField {
            phi: FormField::constant(grid, g2.phi()),
            points: vec![g2; grid.npoints()],
        }
    }

    pub fn phi(&self) -> &FormField {
        &self.phi
    }

    pub fn grid(&self) -> &Grid {
        &self.phi.grid
    }

    pub fn point(&self, p: usize) -> &G2Pointwise {
        &self.points[p]
    }

    pub fn points(&self) -> &[G2Pointwise] {
        &self.points
    }

    /// The field `∗φ`.
    pub fn star_phi(&self) -> FormField {
        let data = self.points.iter().flat_map(|g| g.star_phi().coeffs().iter().copied()).collect();
        FormField::from_data(*self.grid(), 4, data).unwrap()
    }

    /// Pointwise Hodge star in the induced metrics.
    pub fn star(&self, a: &FormField) -> FormField {
        assert_eq!(a.grid, *self.grid());
        let k = a.degree;
        let mut out = FormField::zeros(a.grid, DIM - k);
        let n = binomial(DIM - k);
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(p, o)| self.points[p].metric().star_into(k, a.point(p), o));
        out
    }

    /// Pointwise index lowering `X ↦ X♭`.
    pub fn flat(&self, x: &VectorField) -> FormField {
        assert_eq!(x.grid, *self.grid());
        let data = x
            .values
            .iter()
            .zip(&self.points)
            .flat_map(|(v, g)| (g.metric().g() * v).iter().copied().collect::<Vec<_>>())
            .collect();
        FormField::from_data(x.grid, 1, data).unwrap()
    }

    /// Smallest eigenvalue of the calibrated bilinear form over all points.
    pub fn min_positivity(&self) -> f64 {
        self.points
            .par_iter()
            .map(|g| crate::g2core::min_positivity_eig(g.phi()))
            .reduce(|| f64::INFINITY, f64::min)
    }

    pub fn metric_is_constant(&self, tol: f64) -> bool {
        let g0 = self.points[0].metric().g();
        self.points.iter().all(|g| (g.metric().g() - g0).abs().max() <= tol)
    }
}

fn wavenumbers(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if 2 * i < n {
                i as f64
            } else if 2 * i == n {
                // Nyquist mode: its derivative is not representable.
                0.0
            } else {
                i as f64 - n as f64
            }
        })
        .collect()
}

/// Spectral partial derivative along `axis` of interleaved point-major data
/// with `ncoef` values per point.
pub fn partial(grid: &Grid, axis: usize, data: &[f64], ncoef: usize) -> Vec<f64> {
    let n = grid.sizes[axis];
    let mut out = vec![0.0; data.len()];
    if n == 1 || ncoef == 0 {
        return out;
    }
    let stride = grid.stride(axis);
    let block = stride * n;
    let k = wavenumbers(n);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let nlines = grid.npoints() / n;
    let lines: Vec<(usize, Vec<f64>)> = (0..nlines)
        .into_par_iter()
        .map(|line| {
            let base = (line / stride) * block + line % stride;
            let mut result = vec![0.0; n * ncoef];
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            for c in 0..ncoef {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(data[(base + j * stride) * ncoef + c], 0.0);
                }
                fwd.process(&mut buf);
                for (b, &kk) in buf.iter_mut().zip(&k) {
                    *b = Complex::new(-b.im * kk, b.re * kk) / n as f64;
                }
                inv.process(&mut buf);
                for j in 0..n {
                    result[j * ncoef + c] = buf[j].re;
                }
            }
            (base, result)
        })
        .collect();
    for (base, result) in lines {
        for j in 0..n {
            let p = base + j * stride;
            out[p * ncoef..(p + 1) * ncoef].copy_from_slice(&result[j * ncoef..(j + 1) * ncoef]);
        }
    }
    out
}

/// Exterior derivative `da = Σ_i dx_i ∧ ∂_i a`.
pub fn ext_d(a: &FormField) -> Result<FormField> {
    let k = a.degree;
    if k >= DIM {
        return Err(Error::Degree("exterior derivative of a 7-form".into()));
    }
    let mut out = FormField::zeros(a.grid, k + 1);
    let n_in = binomial(k);
    let n_out = binomial(k + 1);
    for axis in a.grid.active_axes() {
        let da = partial(&a.grid, axis, &a.data, n_in);
        out.data
            .par_chunks_mut(n_out)
            .zip(da.par_chunks(n_in))
            .for_each(|(o, d)| dx_wedge_acc(axis, k, d, 1.0, o));
    }
    Ok(out)
}

// Sign σ(k) in δ = σ(k) ∗d∗ on k-forms, fixed by requiring
// ⟨d a, b⟩ = ⟨a, δ b⟩ on a flat test pair a = sin(x₁) dx_I, b = cos(x₁) dx₁ ∧ dx_I.
static CODIFF_SIGN: LazyLock<[f64; DIM + 1]> = LazyLock::new(|| {
    let grid = Grid::with_active(4, &[0]).unwrap();
    let field = G2StructureField::standard(grid);
    let mut signs = [0.0; DIM + 1];
    for (k, sign) in signs.iter_mut().enumerate().skip(1) {
        let rest: Vec<usize> = (2..=k).collect();
        let dx_i = AlgForm::basis(&rest).unwrap();
        let mut with_one = vec![1];
        with_one.extend(&rest);
        let dx_1i = AlgForm::basis(&with_one).unwrap();
        let a = FormField::from_fn(grid, k - 1, |x| dx_i.scaled(x[0].sin()));
        let b = FormField::from_fn(grid, k, |x| dx_1i.scaled(x[0].cos()));
        let lhs = l2_inner(&field, &ext_d(&a).unwrap(), &b).unwrap();
        let sds = field.star(&ext_d(&field.star(&b)).unwrap());
        let rhs = l2_inner(&field, &a, &sds).unwrap();
        *sign = (lhs / rhs).signum();
    }
    signs
});

/// The calibrated sign `σ(k)` with `δ = σ(k) ∗d∗` on k-forms.
pub fn codiff_sign(k: usize) -> f64 {
    CODIFF_SIGN[k]
}

/// Codifferential `δ`, the formal L²-adjoint of `d` in the metric of `φ`.
pub fn codiff(field: &G2StructureField, a: &FormField) -> Result<FormField> {
    if a.degree == 0 {
        return Err(Error::Degree("codifferential of a 0-form".into()));
    }
    let sa = field.star(a);
    Ok(field.star(&ext_d(&sa)?).scaled(codiff_sign(a.degree)))
}

/// Hodge Laplacian `Δ = dδ + δd`.
pub fn hodge_laplacian(field: &G2StructureField, a: &FormField) -> FormField {
    let k = a.degree;
    let mut out = FormField::zeros(a.grid, k);
    if k > 0 {
        out = out.add(&ext_d(&codiff(field, a).unwrap()).unwrap());
    }
    if k < DIM {
        out = out.add(&codiff(field, &ext_d(a).unwrap()).unwrap());
    }
    out
}

/// Pointwise interior product `X ⌟ a`.
pub fn contract_field(x: &VectorField, a: &FormField) -> Result<FormField> {
    if a.degree == 0 {
        return Err(Error::Degree("cannot contract a 0-form".into()));
    }
    assert_eq!(x.grid, a.grid);
    let k = a.degree;
    let mut out = FormField::zeros(a.grid, k - 1);
    let n = binomial(k - 1);
    for (p, o) in out.data.chunks_mut(n).enumerate() {
        contract_acc(x.values[p].as_slice(), k, a.point(p), o);
    }
    Ok(out)
}

/// Pointwise wedge product.
pub fn wedge_fields(a: &FormField, b: &FormField) -> Result<FormField> {
    assert_eq!(a.grid, b.grid);
    let k = a.degree + b.degree;
    if k > DIM {
        return Err(Error::Degree(format!("wedge of degrees {} and {}", a.degree, b.degree)));
    }
    let mut out = FormField::zeros(a.grid, k);
    let n = binomial(k);
    for (p, o) in out.data.chunks_mut(n).enumerate() {
        wedge_acc(a.degree, a.point(p), b.degree, b.point(p), o);
    }
    Ok(out)
}

/// Lie derivative by Cartan's formula `L_X a = X ⌟ da + d(X ⌟ a)`.
pub fn lie_derivative(x: &VectorField, a: &FormField) -> FormField {
    let k = a.degree;
    let mut out = FormField::zeros(a.grid, k);
    if k < DIM {
        out = out.add(&contract_field(x, &ext_d(a).unwrap()).unwrap());
    }
    if k > 0 {
        out = out.add(&ext_d(&contract_field(x, a).unwrap()).unwrap());
    }
    out
}

/// Lie derivative through the flat connection,
/// `(L_X a)(Y..) = (∇_X a)(Y..) + Σ_p a(.., ∇_{Y_p} X, ..)`, with `∇` the
/// coordinate derivative. Requires a constant metric field.
pub fn lie_derivative_flat_connection(
    field: &G2StructureField,
    x: &VectorField,
    a: &FormField,
) -> Result<FormField> {
    if !field.metric_is_constant(1e-12) {
        return Err(Error::FlatOnly);
    }
    let grid = a.grid;
    let n = a.ncoeffs();
    let xs = x.as_interleaved();
    let mut grad_a = Vec::new();
    let mut grad_x = Vec::new();
    for axis in 0..DIM {
        grad_a.push(partial(&grid, axis, &a.data, n));
        grad_x.push(partial(&grid, axis, &xs, DIM));
    }
    let mut out = FormField::zeros(grid, a.degree);
    out.data.par_chunks_mut(n.max(1)).enumerate().for_each(|(p, o)| {
        let xv = &x.values[p];
        for axis in 0..DIM {
            let ga = &grad_a[axis][p * n..(p + 1) * n];
            for (oc, g) in o.iter_mut().zip(ga) {
                *oc += xv[axis] * g;
            }
        }
        // J_{m,i} = ∂_i X^m
        let j = Matrix7::from_fn(|m, i| grad_x[i][p * DIM + m]);
        let form = AlgForm::new(a.degree, a.point(p).to_vec()).unwrap();
        for (oc, d) in o.iter_mut().zip(derivation(&form, &j).coeffs()) {
            *oc += d;
        }
    });
    Ok(out)
}

/// `∫ a` for a 7-form field, as the uniform-grid Riemann sum.
pub fn integrate_top(a: &FormField) -> Result<f64> {
    if a.degree != DIM {
        return Err(Error::Degree(format!("can only integrate 7-forms, got degree {}", a.degree)));
    }
    Ok(a.data.iter().sum::<f64>() * a.grid.cell_volume())
}

/// L² pairing `∫ a ∧ ∗b` in the metric of `φ`.
pub fn l2_inner(field: &G2StructureField, a: &FormField, b: &FormField) -> Result<f64> {
    if a.degree != b.degree {
        return Err(Error::Degree(format!(
            "L2 pairing of degrees {} and {}",
            a.degree, b.degree
        )));
    }
    if a.grid != b.grid || a.grid != *field.grid() {
        return Err(Error::Grid("fields live on different grids".into()));
    }
    let k = a.degree;
    // Collect pointwise values first so the sum order never depends on threading.
    let vals: Vec<f64> = (0..a.grid.npoints())
        .into_par_iter()
        .map(|p| {
            let m = field.points[p].metric();
            m.vol_density() * m.inner_slices(k, a.point(p), b.point(p))
        })
        .collect();
    Ok(vals.iter().sum::<f64>() * a.grid.cell_volume())
}

pub fn l2_norm(field: &G2StructureField, a: &FormField) -> f64 {
    l2_inner(field, a, a).unwrap().max(0.0).sqrt()
}
