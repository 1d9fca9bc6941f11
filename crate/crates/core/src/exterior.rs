//! Exact pointwise algebra of alternating forms on an oriented 7-dimensional
//! inner-product space.
//!
//! A k-form is stored densely over the C(7,k) basis forms `dx_I`, `I` strictly
//! increasing, in lexicographic order. Axis labels in [`MultiIndex`] and in
//! [`unit`] run `1..=7`, matching the `dx_1 .. dx_7` notation; raw coefficient
//! and component arrays are 0-based.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::LazyLock;

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

pub const DIM: usize = 7;

pub type Vector7 = SVector<f64, 7>;
pub type Matrix7 = SMatrix<f64, 7, 7>;

/// Unit vector `e_axis`, `axis` in `1..=7`.
pub fn unit(axis: usize) -> Vector7 {
    assert!((1..=DIM).contains(&axis), "axis {axis} out of range 1..=7");
    let mut v = Vector7::zeros();
    v[axis - 1] = 1.0;
    v
}

pub const fn binomial(k: usize) -> usize {
    match k {
        0 | 7 => 1,
        1 | 6 => 7,
        2 | 5 => 21,
        3 | 4 => 35,
        _ => 0,
    }
}

fn parity_sign(n: u32) -> f64 {
    if n % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Sign of the permutation that sorts the concatenation `(A, B)` of two
/// disjoint increasing index sets.
fn merge_sign(a: u8, b: u8) -> f64 {
    let mut inversions = 0;
    for i in 0..DIM {
        if a & (1 << i) != 0 {
            inversions += (b & ((1u8 << i) - 1)).count_ones();
        }
    }
    parity_sign(inversions)
}

#[derive(Clone, Copy)]
struct WedgeTerm {
    left: u16,
    right: u16,
    out: u16,
    sign: f64,
}

#[derive(Clone, Copy)]
struct ContractTerm {
    input: u16,
    axis: u8,
    out: u16,
    sign: f64,
}

struct Tables {
    basis: Vec<Vec<u8>>,
    index: [usize; 128],
    complement_sign: [f64; 128],
    wedge: Vec<Vec<Vec<WedgeTerm>>>,
    contract: Vec<Vec<ContractTerm>>,
}

static TABLES: LazyLock<Tables> = LazyLock::new(build_tables);

fn build_tables() -> Tables {
    let mut basis = vec![Vec::new(); DIM + 1];
    // Lexicographic order of increasing tuples.
    let mut all: Vec<Vec<usize>> = (0u8..128)
        .map(|m| (0..DIM).filter(|i| m & (1 << i) != 0).collect())
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    let mut index = [0usize; 128];
    for axes in &all {
        let mask = axes.iter().fold(0u8, |m, &i| m | (1 << i));
        index[mask as usize] = basis[axes.len()].len();
        basis[axes.len()].push(mask);
    }
    let mut complement_sign = [0.0; 128];
    for (m, s) in complement_sign.iter_mut().enumerate() {
        let m = m as u8;
        *s = merge_sign(m, !m & 0x7f);
    }
    let mut wedge = vec![vec![Vec::new(); DIM + 1]; DIM + 1];
    for p in 0..=DIM {
        for q in 0..=DIM - p {
            let mut terms = Vec::new();
            for (i, &a) in basis[p].iter().enumerate() {
                for (j, &b) in basis[q].iter().enumerate() {
                    if a & b == 0 {
                        terms.push(WedgeTerm {
                            left: i as u16,
                            right: j as u16,
                            out: index[(a | b) as usize] as u16,
                            sign: merge_sign(a, b),
                        });
                    }
                }
            }
            wedge[p][q] = terms;
        }
    }
    let mut contract = vec![Vec::new(); DIM + 1];
    for k in 1..=DIM {
        for (i, &m) in basis[k].iter().enumerate() {
            let mut pos = 0;
            for axis in 0..DIM {
                if m & (1 << axis) != 0 {
                    contract[k].push(ContractTerm {
                        input: i as u16,
                        axis: axis as u8,
                        out: index[(m & !(1 << axis)) as usize] as u16,
                        sign: parity_sign(pos),
                    });
                    pos += 1;
                }
            }
        }
    }
    Tables {
        basis,
        index,
        complement_sign,
        wedge,
        contract,
    }
}

fn check_degree(k: usize) -> Result<()> {
    if k > DIM {
        Err(Error::Degree(format!("degree {k} exceeds 7")))
    } else {
        Ok(())
    }
}

/// A strictly increasing set of axes, stored as a bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultiIndex(u8);

impl MultiIndex {
    /// Builds `dx_{i1..ik}` from strictly increasing labels in `1..=7`.
    pub fn new(axes: &[usize]) -> Result<Self> {
        let mut mask = 0u8;
        let mut last = 0;
        for &a in axes {
            if !(1..=DIM).contains(&a) || a <= last {
                return Err(Error::Degree(format!(
                    "axes {axes:?} are not strictly increasing labels in 1..=7"
                )));
            }
            mask |= 1 << (a - 1);
            last = a;
        }
        Ok(MultiIndex(mask))
    }

    pub fn from_position(degree: usize, position: usize) -> Self {
        MultiIndex(TABLES.basis[degree][position])
    }

    pub fn degree(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Lexicographic position among the basis forms of the same degree.
    pub fn position(self) -> usize {
        TABLES.index[self.0 as usize]
    }

    /// Axis labels in `1..=7`.
    pub fn axes(self) -> Vec<usize> {
        (0..DIM).filter(|i| self.0 & (1 << i) != 0).map(|i| i + 1).collect()
    }

    pub fn complement(self) -> Self {
        MultiIndex(!self.0 & 0x7f)
    }

    /// Sign of `dx_I ∧ dx_{I^c}` relative to `dx_{1234567}`.
    pub fn complement_sign(self) -> f64 {
        TABLES.complement_sign[self.0 as usize]
    }

    pub fn all(degree: usize) -> impl Iterator<Item = MultiIndex> {
        TABLES.basis[degree].iter().map(|&m| MultiIndex(m))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dx_")?;
        for a in self.axes() {
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// A k-form at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgForm {
    degree: usize,
    coeffs: Vec<f64>,
}

impl AlgForm {
    pub fn new(degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        check_degree(degree)?;
        if coeffs.len() != binomial(degree) {
            return Err(Error::Degree(format!(
                "degree {degree} needs {} coefficients, got {}",
                binomial(degree),
                coeffs.len()
            )));
        }
        Ok(AlgForm { degree, coeffs })
    }

    pub fn zero(degree: usize) -> Self {
        assert!(degree <= DIM, "degree {degree} exceeds 7");
        AlgForm {
            degree,
            coeffs: vec![0.0; binomial(degree)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        AlgForm {
            degree: 0,
            coeffs: vec![value],
        }
    }

    /// `value · dx_{1234567}`.
    pub fn top(value: f64) -> Self {
        AlgForm {
            degree: DIM,
            coeffs: vec![value],
        }
    }

    /// The basis form `dx_I` for increasing labels in `1..=7`.
    pub fn basis(axes: &[usize]) -> Result<Self> {
        let idx = MultiIndex::new(axes)?;
        let mut f = AlgForm::zero(idx.degree());
        f.coeffs[idx.position()] = 1.0;
        Ok(f)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn coeff(&self, index: MultiIndex) -> f64 {
        assert_eq!(index.degree(), self.degree);
        self.coeffs[index.position()]
    }

    /// Coefficient for an increasing label list, e.g. `&[2, 5, 7]`.
    pub fn get(&self, axes: &[usize]) -> f64 {
        self.coeff(MultiIndex::new(axes).expect("invalid axes"))
    }

    /// Fully antisymmetric component `a(e_{i1}, .., e_{ik})` for arbitrary
    /// 0-based axes.
    pub fn component(&self, axes: &[usize]) -> f64 {
        debug_assert_eq!(axes.len(), self.degree);
        let mut mask = 0u8;
        let mut inversions = 0;
        for (n, &a) in axes.iter().enumerate() {
            if mask & (1 << a) != 0 {
                return 0.0;
            }
            inversions += axes[..n].iter().filter(|&&b| b > a).count() as u32;
            mask |= 1 << a;
        }
        parity_sign(inversions) * self.coeffs[TABLES.index[mask as usize]]
    }

    pub fn norm_max(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Euclidean norm of the coefficient vector.
    pub fn norm_coeffs(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        AlgForm {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }
}

impl Add for &AlgForm {
    type Output = AlgForm;
    fn add(self, rhs: &AlgForm) -> AlgForm {
        assert_eq!(self.degree, rhs.degree, "adding forms of different degree");
        AlgForm {
            degree: self.degree,
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Add for AlgForm {
    type Output = AlgForm;
    fn add(self, rhs: AlgForm) -> AlgForm {
        &self + &rhs
    }
}

impl AddAssign<&AlgForm> for AlgForm {
    fn add_assign(&mut self, rhs: &AlgForm) {
        assert_eq!(self.degree, rhs.degree, "adding forms of different degree");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += b;
        }
    }
}

impl Sub for &AlgForm {
    type Output = AlgForm;
    fn sub(self, rhs: &AlgForm) -> AlgForm {
        assert_eq!(self.degree, rhs.degree, "subtracting forms of different degree");
        AlgForm {
            degree: self.degree,
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Sub for AlgForm {
    type Output = AlgForm;
    fn sub(self, rhs: AlgForm) -> AlgForm {
        &self - &rhs
    }
}

impl Neg for AlgForm {
    type Output = AlgForm;
    fn neg(self) -> AlgForm {
        self.scaled(-1.0)
    }
}

impl Mul<&AlgForm> for f64 {
    type Output = AlgForm;
    fn mul(self, rhs: &AlgForm) -> AlgForm {
        rhs.scaled(self)
    }
}

impl Mul<AlgForm> for f64 {
    type Output = AlgForm;
    fn mul(self, rhs: AlgForm) -> AlgForm {
        rhs.scaled(self)
    }
}

// Slice kernels. Field code calls these directly to avoid per-point
// allocation.

/// `out += a ∧ b` for coefficient slices of degrees `p` and `q`.
pub fn wedge_acc(p: usize, a: &[f64], q: usize, b: &[f64], out: &mut [f64]) {
    for t in &TABLES.wedge[p][q] {
        out[t.out as usize] += t.sign * a[t.left as usize] * b[t.right as usize];
    }
}

/// `out += x ⌟ a` for a k-form `a`, k ≥ 1.
pub fn contract_acc(x: &[f64], k: usize, a: &[f64], out: &mut [f64]) {
    for t in &TABLES.contract[k] {
        out[t.out as usize] += t.sign * x[t.axis as usize] * a[t.input as usize];
    }
}

/// `out += dx_axis ∧ a`, `axis` 0-based.
pub fn dx_wedge_acc(axis: usize, k: usize, a: &[f64], scale: f64, out: &mut [f64]) {
    let bit = 1u8 << axis;
    let below = (bit - 1) as u8;
    for (i, &m) in TABLES.basis[k].iter().enumerate() {
        if m & bit == 0 {
            let sign = parity_sign((m & below).count_ones());
            out[TABLES.index[(m | bit) as usize]] += sign * scale * a[i];
        }
    }
}

/// Index and sign pairs mapping a degree-k coefficient to its Hodge
/// complement: `(position of I^c, sign of dx_I ∧ dx_{I^c})`.
pub fn complement_map(k: usize) -> Vec<(usize, f64)> {
    TABLES.basis[k]
        .iter()
        .map(|&m| (TABLES.index[(!m & 0x7f) as usize], TABLES.complement_sign[m as usize]))
        .collect()
}

pub fn wedge(a: &AlgForm, b: &AlgForm) -> Result<AlgForm> {
    let k = a.degree + b.degree;
    if k > DIM {
        return Err(Error::Degree(format!(
            "wedge of degrees {} and {} exceeds 7",
            a.degree, b.degree
        )));
    }
    let mut out = AlgForm::zero(k);
    wedge_acc(a.degree, &a.coeffs, b.degree, &b.coeffs, &mut out.coeffs);
    Ok(out)
}

/// Interior product `x ⌟ a`.
pub fn contract(x: &Vector7, a: &AlgForm) -> Result<AlgForm> {
    if a.degree == 0 {
        return Err(Error::Degree("cannot contract a 0-form".into()));
    }
    let mut out = AlgForm::zero(a.degree - 1);
    contract_acc(x.as_slice(), a.degree, &a.coeffs, &mut out.coeffs);
    Ok(out)
}

/// Determinant of the `rows × cols` submatrix of a 7×7 matrix, by Gaussian
/// elimination with partial pivoting.
pub fn minor(m: &Matrix7, rows: &[usize], cols: &[usize]) -> f64 {
    let n = rows.len();
    debug_assert_eq!(n, cols.len());
    match n {
        0 => 1.0,
        1 => m[(rows[0], cols[0])],
        2 => m[(rows[0], cols[0])] * m[(rows[1], cols[1])] - m[(rows[0], cols[1])] * m[(rows[1], cols[0])],
        3 => {
            let a = |i: usize, j: usize| m[(rows[i], cols[j])];
            a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
                - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
                + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
        }
        _ => {
            let mut w = [[0.0f64; DIM]; DIM];
            for i in 0..n {
                for j in 0..n {
                    w[i][j] = m[(rows[i], cols[j])];
                }
            }
            let mut det = 1.0;
            for c in 0..n {
                let p = (c..n)
                    .max_by(|&i, &j| w[i][c].abs().total_cmp(&w[j][c].abs()))
                    .unwrap();
                if w[p][c] == 0.0 {
                    return 0.0;
                }
                if p != c {
                    w.swap(p, c);
                    det = -det;
                }
                det *= w[c][c];
                for r in c + 1..n {
                    let f = w[r][c] / w[c][c];
                    for j in c..n {
                        w[r][j] -= f * w[c][j];
                    }
                }
            }
            det
        }
    }
}

/// Pullback `A* a`, where `(A* a)(v_1..v_k) = a(A v_1, .., A v_k)`.
pub fn pullback(a: &AlgForm, m: &Matrix7) -> AlgForm {
    let k = a.degree;
    let idx: Vec<Vec<usize>> = MultiIndex::all(k)
        .map(|i| i.axes().iter().map(|x| x - 1).collect())
        .collect();
    let mut out = AlgForm::zero(k);
    for (o, cols) in idx.iter().enumerate() {
        out.coeffs[o] = idx
            .iter()
            .zip(&a.coeffs)
            .filter(|(_, c)| **c != 0.0)
            .map(|(rows, c)| c * minor(m, rows, cols))
            .sum();
    }
    out
}

/// Infinitesimal action of an endomorphism `J` on a form:
/// `(J·a)(v_1..v_k) = Σ_p a(v_1, .., J v_p, .., v_k)`.
///
/// This is the derivative of [`pullback`] at the identity in direction `J`.
pub fn derivation(a: &AlgForm, j: &Matrix7) -> AlgForm {
    let k = a.degree;
    let mut out = AlgForm::zero(k);
    for (o, idx) in MultiIndex::all(k).enumerate() {
        let axes: Vec<usize> = idx.axes().iter().map(|x| x - 1).collect();
        let mut acc = 0.0;
        for p in 0..k {
            let mut slot = axes.clone();
            for m in 0..DIM {
                let jm = j[(m, axes[p])];
                if jm != 0.0 {
                    slot[p] = m;
                    acc += jm * a.component(&slot);
                }
            }
        }
        out.coeffs[o] = acc;
    }
    out
}

/// A Riemannian metric at a point, with its inverse, volume density and the
/// induced Gram matrices on every exterior power.
#[derive(Clone, Debug)]
pub struct MetricValue {
    g: Matrix7,
    g_inv: Matrix7,
    vol_density: f64,
    gram: Vec<Vec<f64>>,
}

impl MetricValue {
    pub fn new(g: Matrix7) -> Result<Self> {
        let scale = g.abs().max();
        if !(scale.is_finite()) || (g - g.transpose()).abs().max() > 1e-12 * scale.max(1.0) {
            return Err(Error::Metric("matrix is not symmetric".into()));
        }
        let chol = g
            .cholesky()
            .ok_or_else(|| Error::Metric("Cholesky factorization failed".into()))?;
        let det: f64 = chol.l_dirty().diagonal().iter().map(|d| d * d).product();
        if !(det > 0.0) {
            return Err(Error::Metric(format!("determinant {det:e}")));
        }
        let g_inv = chol.inverse();
        let gram = induced_grams(&g, &g_inv, det);
        Ok(MetricValue {
            g,
            g_inv,
            vol_density: det.sqrt(),
            gram,
        })
    }

    pub fn euclidean() -> Self {
        MetricValue::new(Matrix7::identity()).unwrap()
    }

    pub fn g(&self) -> &Matrix7 {
        &self.g
    }

    pub fn g_inv(&self) -> &Matrix7 {
        &self.g_inv
    }

    pub fn vol_density(&self) -> f64 {
        self.vol_density
    }

    /// Row-major Gram matrix `⟨dx_I, dx_J⟩` on k-forms.
    pub fn gram(&self, k: usize) -> &[f64] {
        &self.gram[k]
    }

    /// `⟨a, b⟩` on coefficient slices of degree k.
    pub fn inner_slices(&self, k: usize, a: &[f64], b: &[f64]) -> f64 {
        let n = binomial(k);
        let gram = &self.gram[k];
        let mut acc = 0.0;
        for i in 0..n {
            if a[i] == 0.0 {
                continue;
            }
            let row = &gram[i * n..(i + 1) * n];
            acc += a[i] * row.iter().zip(b).map(|(g, b)| g * b).sum::<f64>();
        }
        acc
    }

    /// `out = ∗a` for a degree-k coefficient slice.
    pub fn star_into(&self, k: usize, a: &[f64], out: &mut [f64]) {
        let n = binomial(k);
        let gram = &self.gram[k];
        for (i, &m) in TABLES.basis[k].iter().enumerate() {
            let row = &gram[i * n..(i + 1) * n];
            let raised: f64 = row.iter().zip(a).map(|(g, a)| g * a).sum();
            out[TABLES.index[(!m & 0x7f) as usize]] =
                self.vol_density * TABLES.complement_sign[m as usize] * raised;
        }
    }
}

// Gram matrices of the induced metric on Λ^k, ⟨dx_I, dx_J⟩ = det(g^{-1}[I,J]).
// Degrees above 3 use Jacobi's complementary minor identity
// det(A^{-1}[I,J]) = (-1)^{ΣI+ΣJ} det(A[J^c,I^c]) / det A.
fn induced_grams(g: &Matrix7, g_inv: &Matrix7, det: f64) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<Vec<usize>>> = (0..=DIM)
        .map(|k| {
            MultiIndex::all(k)
                .map(|i| i.axes().iter().map(|x| x - 1).collect())
                .collect()
        })
        .collect();
    let label_sum = |v: &Vec<usize>| v.iter().sum::<usize>();
    (0..=DIM)
        .map(|k| {
            let n = binomial(k);
            let mut gram = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = if k <= 3 {
                        minor(g_inv, &axes[k][i], &axes[k][j])
                    } else {
                        let ic = MultiIndex::from_position(k, i).complement().position();
                        let jc = MultiIndex::from_position(k, j).complement().position();
                        let sign = parity_sign((label_sum(&axes[k][i]) + label_sum(&axes[k][j])) as u32);
                        sign * minor(g, &axes[DIM - k][jc], &axes[DIM - k][ic]) / det
                    };
                    gram[i * n + j] = v;
                    gram[j * n + i] = v;
                }
            }
            gram
        })
        .collect()
}

pub fn hodge_star(g: &MetricValue, a: &AlgForm) -> AlgForm {
    let mut out = AlgForm::zero(DIM - a.degree);
    g.star_into(a.degree, &a.coeffs, &mut out.coeffs);
    out
}

/// Index lowering `X ↦ g(X, ·)`.
pub fn flat(g: &MetricValue, x: &Vector7) -> AlgForm {
    AlgForm {
        degree: 1,
        coeffs: (g.g * x).as_slice().to_vec(),
    }
}

/// Index raising, inverse of [`flat`].
pub fn sharp(g: &MetricValue, u: &AlgForm) -> Result<Vector7> {
    if u.degree != 1 {
        return Err(Error::Degree(format!("sharp needs a 1-form, got degree {}", u.degree)));
    }
    Ok(g.g_inv * Vector7::from_column_slice(&u.coeffs))
}

pub fn inner(g: &MetricValue, a: &AlgForm, b: &AlgForm) -> Result<f64> {
    if a.degree != b.degree {
        return Err(Error::Degree(format!(
            "inner product of degrees {} and {}",
            a.degree, b.degree
        )));
    }
    Ok(g.inner_slices(a.degree, &a.coeffs, &b.coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dx(axes: &[usize]) -> AlgForm {
        AlgForm::basis(axes).unwrap()
    }

    fn phi0() -> AlgForm {
        dx(&[1, 2, 3]) + dx(&[1, 4, 5]) + dx(&[1, 6, 7]) + dx(&[2, 4, 6])
            - dx(&[2, 5, 7])
            - dx(&[3, 4, 7])
            - dx(&[3, 5, 6])
    }

    fn random_form(rng: &mut ChaCha8Rng, k: usize) -> AlgForm {
        AlgForm::new(k, (0..binomial(k)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng) -> Matrix7 {
        let a = Matrix7::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        a * a.transpose() + Matrix7::identity() * 0.5
    }

    // Brute-force wedge: expand over ordered index tuples and antisymmetrize.
    fn wedge_oracle(a: &AlgForm, b: &AlgForm) -> AlgForm {
        let k = a.degree() + b.degree();
        let mut out = AlgForm::zero(k);
        for ia in MultiIndex::all(a.degree()) {
            for ib in MultiIndex::all(b.degree()) {
                let mut seq = ia.axes();
                seq.extend(ib.axes());
                let mut sorted = seq.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != k {
                    continue;
                }
                // Sign by bubble sort.
                let mut s = seq.clone();
                let mut sign = 1.0;
                for i in 0..s.len() {
                    for j in 0..s.len() - 1 - i {
                        if s[j] > s[j + 1] {
                            s.swap(j, j + 1);
                            sign = -sign;
                        }
                    }
                }
                let pos = MultiIndex::new(&sorted).unwrap().position();
                out.coeffs_mut()[pos] += sign * a.coeff(ia) * b.coeff(ib);
            }
        }
        out
    }

    #[test]
    fn basis_counts_and_order() {
        for k in 0..=7 {
            assert_eq!(MultiIndex::all(k).count(), binomial(k));
        }
        let first: Vec<_> = MultiIndex::all(3).take(3).map(|i| i.axes()).collect();
        assert_eq!(first, vec![vec![1, 2, 3], vec![1, 2, 4], vec![1, 2, 5]]);
        assert_eq!(MultiIndex::all(3).last().unwrap().axes(), vec![5, 6, 7]);
        assert!(MultiIndex::new(&[2, 1]).is_err());
        assert!(MultiIndex::new(&[0, 1]).is_err());
    }

    #[test]
    fn wedge_basis_cases() {
        assert_eq!(wedge(&dx(&[1]), &dx(&[2])).unwrap(), dx(&[1, 2]));
        assert_eq!(wedge(&dx(&[1, 2]), &dx(&[1, 2])).unwrap(), AlgForm::zero(4));
        assert_eq!(wedge(&dx(&[2]), &dx(&[1])).unwrap(), -dx(&[1, 2]));
        assert!(wedge(&AlgForm::zero(4), &AlgForm::zero(4)).is_err());
    }

    #[test]
    fn phi0_wedge_star_phi0_is_seven_vol() {
        let phi = phi0();
        let star = hodge_star(&MetricValue::euclidean(), &phi);
        assert_eq!(wedge(&phi, &star).unwrap(), AlgForm::top(7.0));
        assert_eq!(wedge_oracle(&phi, &star), AlgForm::top(7.0));
    }

    #[test]
    fn wedge_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in 0..=7 {
            for q in 0..=7 - p {
                let a = random_form(&mut rng, p);
                let b = random_form(&mut rng, q);
                let w = wedge(&a, &b).unwrap();
                let o = wedge_oracle(&a, &b);
                assert!((&w - &o).norm_max() < 1e-14);
            }
        }
    }

    #[test]
    fn contraction_examples() {
        assert_eq!(contract(&unit(1), &dx(&[1, 2, 3])).unwrap(), dx(&[2, 3]));
        assert_eq!(contract(&unit(4), &dx(&[1, 2, 3])).unwrap(), AlgForm::zero(2));
        assert_eq!(contract(&unit(2), &dx(&[1, 2, 3])).unwrap(), -dx(&[1, 3]));
        assert_eq!(
            contract(&unit(1), &phi0()).unwrap(),
            dx(&[2, 3]) + dx(&[4, 5]) + dx(&[6, 7])
        );
        assert!(contract(&unit(1), &AlgForm::scalar(1.0)).is_err());
    }

    #[test]
    fn euclidean_star_examples() {
        let e = MetricValue::euclidean();
        assert_eq!(hodge_star(&e, &dx(&[1])), dx(&[2, 3, 4, 5, 6, 7]));
        // Term-by-term star of φ₀ with permutation signs.
        let expected = dx(&[4, 5, 6, 7]) + dx(&[2, 3, 6, 7]) + dx(&[2, 3, 4, 5]) + dx(&[1, 3, 5, 7])
            - dx(&[1, 3, 4, 6])
            - dx(&[1, 2, 5, 6])
            - dx(&[1, 2, 4, 7]);
        assert_eq!(hodge_star(&e, &phi0()), expected);
    }

    #[test]
    fn star_is_involution_for_random_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let g = MetricValue::new(random_spd(&mut rng)).unwrap();
            for k in 0..=7 {
                let a = random_form(&mut rng, k);
                let back = hodge_star(&g, &hodge_star(&g, &a));
                assert!((&back - &a).norm_max() < 1e-9 * (1.0 + a.norm_max()), "k={k}");
            }
        }
    }

    #[test]
    fn jacobi_grams_match_direct_minors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = MetricValue::new(random_spd(&mut rng)).unwrap();
        for k in 4..=7 {
            let idx: Vec<Vec<usize>> = MultiIndex::all(k)
                .map(|i| i.axes().iter().map(|x| x - 1).collect())
                .collect();
            let n = binomial(k);
            for i in 0..n {
                for j in 0..n {
                    let direct = minor(g.g_inv(), &idx[i], &idx[j]);
                    assert_abs_diff_eq!(g.gram(k)[i * n + j], direct, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn wedge_star_is_inner_times_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let g = MetricValue::new(random_spd(&mut rng)).unwrap();
            for k in 0..=7 {
                let a = random_form(&mut rng, k);
                let b = random_form(&mut rng, k);
                let ip = inner(&g, &a, &b).unwrap();
                let ab = wedge(&a, &hodge_star(&g, &b)).unwrap().coeffs()[0];
                let ba = wedge(&b, &hodge_star(&g, &a)).unwrap().coeffs()[0];
                let scale = 1.0 + ip.abs();
                assert!((ab - ip * g.vol_density()).abs() < 1e-10 * scale * g.vol_density());
                assert!((ab - ba).abs() < 1e-10 * scale * g.vol_density());
            }
        }
    }

    #[test]
    fn inner_examples() {
        let e = MetricValue::euclidean();
        assert_eq!(inner(&e, &dx(&[1, 2]), &dx(&[1, 2])).unwrap(), 1.0);
        assert_eq!(inner(&e, &dx(&[1, 2]), &dx(&[1, 3])).unwrap(), 0.0);
        assert_eq!(inner(&e, &phi0(), &phi0()).unwrap(), 7.0);
        assert!(inner(&e, &dx(&[1]), &dx(&[1, 2])).is_err());
    }

    #[test]
    fn flat_and_sharp() {
        let e = MetricValue::euclidean();
        assert_eq!(flat(&e, &unit(1)), dx(&[1]));
        let mut d = Matrix7::identity();
        d[(0, 0)] = 4.0;
        let g = MetricValue::new(d).unwrap();
        assert_eq!(flat(&g, &unit(1)), 4.0 * dx(&[1]));
        assert!(sharp(&g, &dx(&[1, 2])).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let g = MetricValue::new(random_spd(&mut rng)).unwrap();
            let x = Vector7::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let back = sharp(&g, &flat(&g, &x)).unwrap();
            assert!((back - x).amax() < 1e-9);
        }
    }

    #[test]
    fn non_positive_metric_rejected() {
        let mut d = Matrix7::identity();
        d[(3, 3)] = -1.0;
        assert!(matches!(MetricValue::new(d), Err(Error::Metric(_))));
        let mut s = Matrix7::identity();
        s[(0, 1)] = 0.5;
        assert!(matches!(MetricValue::new(s), Err(Error::Metric(_))));
    }

    #[test]
    fn pullback_and_derivation_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_form(&mut rng, 3);
        let j = Matrix7::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let eps = 1e-6;
        let plus = pullback(&a, &(Matrix7::identity() + j * eps));
        let minus = pullback(&a, &(Matrix7::identity() - j * eps));
        let fd = (&plus - &minus).scaled(0.5 / eps);
        assert!((&fd - &derivation(&a, &j)).norm_max() < 1e-8);
        assert_eq!(pullback(&a, &Matrix7::identity()), a);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn contraction_is_antiderivation(seed in 0u64..10_000, p in 0usize..=4, q in 0usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_form(&mut rng, p);
            let b = random_form(&mut rng, q);
            let x = Vector7::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let ab = wedge(&a, &b).unwrap();
            if ab.degree() == 0 {
                return Ok(());
            }
            let lhs = contract(&x, &ab).unwrap();
            let mut rhs = AlgForm::zero(p + q - 1);
            if p > 0 {
                rhs += &wedge(&contract(&x, &a).unwrap(), &b).unwrap();
            }
            if q > 0 {
                let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
                rhs += &wedge(&a, &contract(&x, &b).unwrap()).unwrap().scaled(sign);
            }
            proptest::prop_assert!((&lhs - &rhs).norm_max() < 1e-12);
            if lhs.degree() > 0 {
                proptest::prop_assert!(contract(&x, &lhs).unwrap().norm_max() < 1e-12);
            }
        }

        #[test]
        fn wedge_is_graded_commutative(seed in 0u64..10_000, p in 0usize..=7, q in 0usize..=7) {
            if p + q > 7 {
                return Ok(());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_form(&mut rng, p);
            let b = random_form(&mut rng, q);
            let sign = if (p * q) % 2 == 0 { 1.0 } else { -1.0 };
            let ab = wedge(&a, &b).unwrap();
            let ba = wedge(&b, &a).unwrap().scaled(sign);
            proptest::prop_assert!((&ab - &ba).norm_max() < 1e-12);
        }
    }
}
