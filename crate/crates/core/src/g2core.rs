//! Pointwise G₂ algebra: the standard 3-form, the metric a positive 3-form
//! induces, the type decompositions of 2- and 3-forms and the two
//! contraction identities relating `φ`, `∗φ` and `∗X♭`.

use std::sync::LazyLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::exterior::{
    binomial, contract, contract_acc, flat, hodge_star, wedge, wedge_acc, AlgForm, Matrix7,
    MetricValue, Vector7, DIM,
};

/// Smallest admissible eigenvalue of the normalized bilinear form of a
/// positive 3-form.
pub const POSITIVITY_EPS: f64 = 1e-10;

/// The standard 3-form
/// `φ₀ = dx123 + dx145 + dx167 + dx246 − dx257 − dx347 − dx356`.
pub fn standard_phi() -> AlgForm {
    const TERMS: [([usize; 3], f64); 7] = [
        ([1, 2, 3], 1.0),
        ([1, 4, 5], 1.0),
        ([1, 6, 7], 1.0),
        ([2, 4, 6], 1.0),
        ([2, 5, 7], -1.0),
        ([3, 4, 7], -1.0),
        ([3, 5, 6], -1.0),
    ];
    let mut phi = AlgForm::zero(3);
    for (axes, sign) in TERMS {
        phi += &AlgForm::basis(&axes).unwrap().scaled(sign);
    }
    phi
}

/// `B_ij` = coefficient of `dx1..7` in `(e_i ⌟ φ) ∧ (e_j ⌟ φ) ∧ φ`.
///
/// Up to a fixed combinatorial factor this is the full contraction
/// `φ_iab φ_jcd φ_mnp ε^abcdmnp`.
pub fn raw_bilinear(phi: &AlgForm) -> Matrix7 {
    debug_assert_eq!(phi.degree(), 3);
    let mut beta = [[0.0; 21]; DIM];
    let mut gamma = [[0.0; 21]; DIM];
    for i in 0..DIM {
        let mut e = [0.0; DIM];
        e[i] = 1.0;
        contract_acc(&e, 3, phi.coeffs(), &mut beta[i]);
        wedge_acc(2, &beta[i], 3, phi.coeffs(), &mut gamma[i]);
    }
    let mut b = Matrix7::zeros();
    for i in 0..DIM {
        for j in i..DIM {
            let mut top = [0.0];
            wedge_acc(2, &beta[i], 5, &gamma[j], &mut top);
            b[(i, j)] = top[0];
            b[(j, i)] = top[0];
        }
    }
    b
}

// Normalization of B, fixed from the anchor metric_from_phi(φ₀) = identity.
static CALIBRATION: LazyLock<f64> = LazyLock::new(|| {
    let b = raw_bilinear(&standard_phi());
    let c0 = 1.0 / b[(0, 0)];
    debug_assert!((b * c0 - Matrix7::identity()).abs().max() < 1e-14);
    c0
});

/// Calibrated normalization constant applied to [`raw_bilinear`].
pub fn calibration_constant() -> f64 {
    *CALIBRATION
}

/// The calibrated bilinear form `c₀·B`; equal to the identity at `φ₀`.
pub fn positivity_form(phi: &AlgForm) -> Matrix7 {
    raw_bilinear(phi) * calibration_constant()
}

pub fn min_positivity_eig(phi: &AlgForm) -> f64 {
    let b = positivity_form(phi);
    let eig = SymmetricEigen::new(b).eigenvalues;
    eig.iter().fold(f64::INFINITY, |m, &v| m.min(v))
}

pub fn is_positive(phi: &AlgForm) -> bool {
    phi.degree() == 3 && min_positivity_eig(phi) > POSITIVITY_EPS
}

/// The metric `g_φ` induced by a positive 3-form: `g = B·det(B)^{-1/9}` with
/// `B` the calibrated bilinear form.
pub fn metric_from_phi(phi: &AlgForm) -> Result<MetricValue> {
    if phi.degree() != 3 {
        return Err(Error::Degree(format!("expected a 3-form, got degree {}", phi.degree())));
    }
    let b = positivity_form(phi);
    let min_eig = SymmetricEigen::new(b)
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v));
    if !(min_eig > POSITIVITY_EPS) {
        return Err(Error::NotPositive { point: 0, min_eig });
    }
    let det = b.determinant();
    MetricValue::new(b * det.powf(-1.0 / 9.0))
}

#[derive(Clone, Debug)]
pub struct TypeSplit2 {
    pub part7: AlgForm,
    pub part14: AlgForm,
}

#[derive(Clone, Debug)]
pub struct TypeSplit3 {
    pub part1: AlgForm,
    pub part7: AlgForm,
    pub part27: AlgForm,
}

/// A positive 3-form at a point together with its induced metric and `∗φ`.
#[derive(Clone, Debug)]
pub struct G2Pointwise {
    phi: AlgForm,
    metric: MetricValue,
    star_phi: AlgForm,
}

impl G2Pointwise {
    pub fn new(phi: AlgForm) -> Result<Self> {
        let metric = metric_from_phi(&phi)?;
        let star_phi = hodge_star(&metric, &phi);
        Ok(G2Pointwise {
            phi,
            metric,
            star_phi,
        })
    }

    pub fn standard() -> Self {
        G2Pointwise::new(standard_phi()).unwrap()
    }

    pub fn phi(&self) -> &AlgForm {
        &self.phi
    }

    pub fn metric(&self) -> &MetricValue {
        &self.metric
    }

    pub fn star_phi(&self) -> &AlgForm {
        &self.star_phi
    }

    pub fn star(&self, a: &AlgForm) -> AlgForm {
        hodge_star(&self.metric, a)
    }

    pub fn inner(&self, a: &AlgForm, b: &AlgForm) -> f64 {
        assert_eq!(a.degree(), b.degree());
        self.metric.inner_slices(a.degree(), a.coeffs(), b.coeffs())
    }

    /// Splits a 2-form into its Ω²₇ and Ω²₁₄ parts.
    ///
    /// With the orientation `dx1..7` fixed by `φ₀`, the map `β ↦ ∗(φ∧β)` acts
    /// as `2` on Ω²₇ = {X ⌟ φ} and as `−1` on Ω²₁₄ = {β : β ∧ ∗φ = 0}.
    pub fn project2(&self, b: &AlgForm) -> TypeSplit2 {
        assert_eq!(b.degree(), 2, "project2 expects a 2-form");
        let t = self.star(&wedge(&self.phi, b).unwrap());
        TypeSplit2 {
            part7: (b + &t).scaled(1.0 / 3.0),
            part14: (&b.scaled(2.0) - &t).scaled(1.0 / 3.0),
        }
    }

    /// The 35×7 matrix whose columns are `e_i ⌟ ∗φ`; its span is Ω³₇.
    pub fn omega3_7_basis(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(35, DIM);
        for i in 0..DIM {
            let mut e = [0.0; DIM];
            e[i] = 1.0;
            let mut col = [0.0; 35];
            contract_acc(&e, 4, self.star_phi.coeffs(), &mut col);
            m.column_mut(i).copy_from_slice(&col);
        }
        m
    }

    /// Splits a 3-form into its Ω³₁, Ω³₇ and Ω³₂₇ parts. The Ω³₇ part is the
    /// `g_φ`-orthogonal projection onto span{e_i ⌟ ∗φ}.
    pub fn project3(&self, s: &AlgForm) -> TypeSplit3 {
        assert_eq!(s.degree(), 3, "project3 expects a 3-form");
        let part1 = self.phi.scaled(self.inner(s, &self.phi) / 7.0);
        let basis = self.omega3_7_basis();
        let gram3 = DMatrix::from_row_slice(35, 35, self.metric.gram(3));
        let gm = &gram3 * &basis;
        let normal = basis.transpose() * &gm;
        let rhs = gm.transpose() * DVector::from_column_slice(s.coeffs());
        let coef = normal
            .cholesky()
            .expect("span{e_i ⌟ ∗φ} is 7-dimensional for positive φ")
            .solve(&rhs);
        let part7 = AlgForm::new(3, (basis * coef).as_slice().to_vec()).unwrap();
        let part27 = &(s - &part1) - &part7;
        TypeSplit3 {
            part1,
            part7,
            part27,
        }
    }

    /// Residual `φ ∧ (X ⌟ ∗φ) + 4 ∗X♭`; vanishes identically.
    pub fn identity_minus4(&self, x: &Vector7) -> AlgForm {
        let lhs = wedge(&self.phi, &contract(x, &self.star_phi).unwrap()).unwrap();
        &lhs + &self.star(&flat(&self.metric, x)).scaled(4.0)
    }

    /// Residual `∗φ ∧ (X ⌟ φ) − 3 ∗X♭`; vanishes identically.
    pub fn identity_plus3(&self, x: &Vector7) -> AlgForm {
        let lhs = wedge(&self.star_phi, &contract(x, &self.phi).unwrap()).unwrap();
        &lhs - &self.star(&flat(&self.metric, x)).scaled(3.0)
    }

    /// Matrix of the linear map `u ↦ u ∧ φ` from 1-forms to 4-forms.
    pub fn wedge_phi_matrix(&self) -> DMatrix<f64> {
        wedge_matrix(&self.phi)
    }

    /// Matrix of the linear map `u ↦ u ∧ ∗φ` from 1-forms to 5-forms.
    pub fn wedge_star_phi_matrix(&self) -> DMatrix<f64> {
        wedge_matrix(&self.star_phi)
    }
}

fn wedge_matrix(form: &AlgForm) -> DMatrix<f64> {
    let out = binomial(form.degree() + 1);
    let mut m = DMatrix::zeros(out, DIM);
    for i in 0..DIM {
        let mut e = [0.0; DIM];
        e[i] = 1.0;
        let mut col = vec![0.0; out];
        wedge_acc(1, &e, form.degree(), form.coeffs(), &mut col);
        m.column_mut(i).copy_from_slice(&col);
    }
    m
}

/// Numerical rank from singular values above `tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    sv.iter().filter(|&&s| s > tol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exterior::{pullback, unit, MultiIndex};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dx(axes: &[usize]) -> AlgForm {
        AlgForm::basis(axes).unwrap()
    }

    fn random_glplus(rng: &mut ChaCha8Rng) -> Matrix7 {
        crate::sample::random_glplus(rng, 0.5)
    }

    fn random_form(rng: &mut ChaCha8Rng, k: usize) -> AlgForm {
        AlgForm::new(k, (0..binomial(k)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn standard_phi_coefficients() {
        let phi = standard_phi();
        assert_eq!(phi.get(&[1, 2, 3]), 1.0);
        assert_eq!(phi.get(&[2, 5, 7]), -1.0);
        assert_eq!(phi.get(&[1, 2, 4]), 0.0);
        assert_eq!(phi.coeffs().iter().filter(|c| **c != 0.0).count(), 7);
    }

    #[test]
    fn metric_anchor_and_scaling() {
        let phi = standard_phi();
        let g = metric_from_phi(&phi).unwrap();
        assert!((g.g() - Matrix7::identity()).abs().max() < 1e-14);
        let g8 = metric_from_phi(&phi.scaled(8.0)).unwrap();
        assert!((g8.g() - Matrix7::identity() * 4.0).abs().max() < 1e-12);
    }

    #[test]
    fn metric_is_natural_under_pullback() {
        let mut a = Matrix7::identity();
        a[(0, 0)] = 2.0;
        let g = metric_from_phi(&pullback(&standard_phi(), &a)).unwrap();
        let mut expected = Matrix7::identity();
        expected[(0, 0)] = 4.0;
        assert!((g.g() - expected).abs().max() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_glplus(&mut rng);
            let g = metric_from_phi(&pullback(&standard_phi(), &a)).unwrap();
            let oracle = a.transpose() * a;
            assert!((g.g() - oracle).abs().max() < 1e-10 * oracle.abs().max());
        }
    }

    #[test]
    fn positivity_predicate() {
        assert!(is_positive(&standard_phi()));
        // B is cubic in φ, so −φ₀ gives B = −identity under the fixed orientation.
        assert!(!is_positive(&standard_phi().scaled(-1.0)));
        assert!((positivity_form(&standard_phi().scaled(-1.0)) + Matrix7::identity()).abs().max() < 1e-14);
        assert!(!is_positive(&AlgForm::zero(3)));
        assert!(matches!(
            metric_from_phi(&AlgForm::zero(3)),
            Err(Error::NotPositive { .. })
        ));
        assert!(matches!(metric_from_phi(&dx(&[1, 2])), Err(Error::Degree(_))));
    }

    #[test]
    fn phi_has_norm_seven() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let phi = pullback(&standard_phi(), &random_glplus(&mut rng));
            let g2 = G2Pointwise::new(phi).unwrap();
            let n = g2.inner(g2.phi(), g2.phi());
            assert!((n - 7.0).abs() < 1e-10, "{n}");
            let top = wedge(g2.phi(), g2.star_phi()).unwrap().coeffs()[0];
            assert!((top - 7.0 * g2.metric().vol_density()).abs() < 1e-10 * top.abs(), "{top} {}", g2.metric().vol_density());
        }
    }

    #[test]
    fn project2_examples() {
        let g2 = G2Pointwise::standard();
        let b = contract(&unit(1), g2.phi()).unwrap();
        let s = g2.project2(&b);
        assert!((&s.part7 - &b).norm_max() < 1e-14);
        assert!(s.part14.norm_max() < 1e-14);

        assert_eq!(g2.star(&wedge(g2.phi(), &b).unwrap()), b.scaled(2.0));

        // ∗(φ₀ ∧ (dx45 − dx67)) = −(dx45 − dx67) by direct expansion.
        let b = &dx(&[4, 5]) - &dx(&[6, 7]);
        assert_eq!(g2.star(&wedge(g2.phi(), &b).unwrap()), b.scaled(-1.0));
        assert_eq!(wedge(&b, g2.star_phi()).unwrap(), AlgForm::zero(6));
        let s = g2.project2(&b);
        assert!(s.part7.norm_max() < 1e-14);
        assert!((&s.part14 - &b).norm_max() < 1e-14);
    }

    #[test]
    fn project3_examples() {
        let g2 = G2Pointwise::standard();
        let s = g2.project3(g2.phi());
        assert!((&s.part1 - g2.phi()).norm_max() < 1e-14);
        assert!(s.part7.norm_max() < 1e-12 && s.part27.norm_max() < 1e-12);

        let s = contract(&unit(1), g2.star_phi()).unwrap();
        let split = g2.project3(&s);
        assert!((&split.part7 - &s).norm_max() < 1e-12);
        assert!(split.part1.norm_max() < 1e-14 && split.part27.norm_max() < 1e-12);

        // dx123: ⟨dx123, φ₀⟩ = 1 gives part1 = φ₀/7. The Ω³₇ part is checked
        // against an exhaustive Gram solve over an explicit basis of the
        // orthogonal complement of Ω³₁ ⊕ Ω³₂₇.
        let s = dx(&[1, 2, 3]);
        let split = g2.project3(&s);
        assert!((&split.part1 - &g2.phi().scaled(1.0 / 7.0)).norm_max() < 1e-14);
        assert!((g2.inner(&split.part1, &s) - 1.0 / 7.0).abs() < 1e-14);
        let basis = g2.omega3_7_basis();
        let coef = basis.clone().svd(true, true).solve(&DVector::from_column_slice(s.coeffs()), 1e-14).unwrap();
        let lsq = &basis * coef;
        assert!((lsq.as_slice().iter().zip(split.part7.coeffs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)) < 1e-12);
    }

    #[test]
    fn projector_ranks() {
        let g2 = G2Pointwise::standard();
        let mut p7 = DMatrix::zeros(21, 21);
        let mut p14 = DMatrix::zeros(21, 21);
        for (i, idx) in MultiIndex::all(2).enumerate() {
            let s = g2.project2(&AlgForm::basis(&idx.axes()).unwrap());
            p7.column_mut(i).copy_from_slice(s.part7.coeffs());
            p14.column_mut(i).copy_from_slice(s.part14.coeffs());
        }
        assert_eq!(numerical_rank(&p7, 1e-8), 7);
        assert_eq!(numerical_rank(&p14, 1e-8), 14);
        let mut q = [DMatrix::zeros(35, 35), DMatrix::zeros(35, 35), DMatrix::zeros(35, 35)];
        for (i, idx) in MultiIndex::all(3).enumerate() {
            let s = g2.project3(&AlgForm::basis(&idx.axes()).unwrap());
            q[0].column_mut(i).copy_from_slice(s.part1.coeffs());
            q[1].column_mut(i).copy_from_slice(s.part7.coeffs());
            q[2].column_mut(i).copy_from_slice(s.part27.coeffs());
        }
        assert_eq!(numerical_rank(&q[0], 1e-8), 1);
        assert_eq!(numerical_rank(&q[1], 1e-8), 7);
        assert_eq!(numerical_rank(&q[2], 1e-8), 27);
    }

    #[test]
    fn contraction_identities_at_phi0() {
        let g2 = G2Pointwise::standard();
        assert!(g2.identity_minus4(&unit(1)).norm_max() < 1e-14);
        assert!(g2.identity_plus3(&unit(1)).norm_max() < 1e-14);
        assert_eq!(g2.identity_minus4(&Vector7::zeros()), AlgForm::zero(6));
        assert_eq!(g2.identity_plus3(&Vector7::zeros()), AlgForm::zero(6));
        // The coefficient in front of ∗X♭ is not zero, so the residual is a real check.
        let lhs = wedge(g2.phi(), &contract(&unit(1), g2.star_phi()).unwrap()).unwrap();
        assert!(lhs.norm_max() > 1.0);
    }

    #[test]
    fn contraction_identities_at_random_pullbacks() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let g2 = G2Pointwise::new(pullback(&standard_phi(), &random_glplus(&mut rng))).unwrap();
            let x = Vector7::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            assert!(g2.identity_minus4(&x).norm_max() < 1e-10);
            assert!(g2.identity_plus3(&x).norm_max() < 1e-10);
        }
        let g2 = G2Pointwise::new(pullback(&standard_phi(), &random_glplus(&mut rng))).unwrap();
        assert!(g2.identity_plus3(&(unit(1) + unit(2))).norm_max() < 1e-10);
    }

    #[test]
    fn projections_are_orthogonal_complete_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let g2 = G2Pointwise::new(pullback(&standard_phi(), &random_glplus(&mut rng))).unwrap();
            let b = random_form(&mut rng, 2);
            let s = g2.project2(&b);
            assert!((&(&s.part7 + &s.part14) - &b).norm_max() < 1e-12);
            assert!(g2.inner(&s.part7, &s.part14).abs() < 1e-10);
            assert!((&g2.project2(&s.part7).part7 - &s.part7).norm_max() < 1e-10);
            let t = random_form(&mut rng, 3);
            let s = g2.project3(&t);
            assert!((&(&(&s.part1 + &s.part7) + &s.part27) - &t).norm_max() < 1e-12);
            assert!(g2.inner(&s.part1, &s.part7).abs() < 1e-10);
            assert!(g2.inner(&s.part1, &s.part27).abs() < 1e-10);
            assert!(g2.inner(&s.part7, &s.part27).abs() < 1e-10);
            assert!((&g2.project3(&s.part27).part27 - &s.part27).norm_max() < 1e-10);
        }
    }

    #[test]
    fn wedge_with_phi_is_injective_on_covectors() {
        let g2 = G2Pointwise::standard();
        assert_eq!(numerical_rank(&g2.wedge_phi_matrix(), 1e-10), 7);
        assert_eq!(numerical_rank(&g2.wedge_star_phi_matrix(), 1e-10), 7);
    }
}
