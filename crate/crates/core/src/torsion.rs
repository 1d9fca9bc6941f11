//! Torsion forms of a G₂-structure field.
//!
//! Pointwise, `∗dφ = τ₀ φ + 3 ∗(τ₁∧φ) + τ₃` and `∗d∗φ = 4 ∗(τ₁∧∗φ) + τ₂`,
//! so the type projections of `g2core` separate the four forms. The 1-form
//! `τ₁` is recovered twice, once from each equation, by least squares.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exterior::{hodge_star, wedge, AlgForm};
use crate::g2core::G2Pointwise;
use crate::torusfield::{ext_d, l2_norm, FormField, G2StructureField, ScalarField};

/// Relative least-squares residual above which a decomposition is rejected.
pub const DECOMPOSITION_TOL: f64 = 1e-8;

/// Relative threshold for the classification flags, applied to `‖φ‖_{L²}`.
pub const CLASS_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct TorsionForms {
    pub tau0: ScalarField,
    pub tau1: FormField,
    pub tau2: FormField,
    pub tau3: FormField,
    /// `τ₁` as extracted from `d∗φ`; kept for the consistency check.
    pub tau1_from_dstar: FormField,
}

struct PointTorsion {
    tau0: f64,
    tau1: Vec<f64>,
    tau1_alt: Vec<f64>,
    tau2: Vec<f64>,
    tau3: Vec<f64>,
}

// Least-squares solve of `m u = rhs`, rejecting systems whose residual is
// not small against `scale`, the size of the form `rhs` was projected from.
fn solve_injective(m: &DMatrix<f64>, rhs: &AlgForm, scale: f64, point: usize) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(rhs.coeffs());
    let u = m
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let residual = (m * &u - &b).norm();
    let scale = scale.max(b.norm()).max(f64::MIN_POSITIVE);
    if residual > DECOMPOSITION_TOL * scale && residual > 1e-14 {
        return Err(Error::Decomposition {
            point,
            residual: residual / scale,
        });
    }
    Ok(u.as_slice().to_vec())
}

fn point_torsion(g2: &G2Pointwise, dphi: &AlgForm, dstar: &AlgForm, point: usize) -> Result<PointTorsion> {
    let metric = g2.metric();
    let s = hodge_star(metric, dphi);
    let split3 = g2.project3(&s);
    let tau0 = g2.inner(&s, g2.phi()) / 7.0;
    // Ω⁴₇ part of dφ is 3 τ₁ ∧ φ.
    let r4 = hodge_star(metric, &split3.part7);
    let tau1 = solve_injective(&(g2.wedge_phi_matrix() * 3.0), &r4, dphi.norm_coeffs(), point)?;

    let t = hodge_star(metric, dstar);
    let split2 = g2.project2(&t);
    // Ω⁵₇ part of d∗φ is 4 τ₁ ∧ ∗φ.
    let r5 = hodge_star(metric, &split2.part7);
    let tau1_alt = solve_injective(&(g2.wedge_star_phi_matrix() * 4.0), &r5, dstar.norm_coeffs(), point)?;

    Ok(PointTorsion {
        tau0,
        tau1,
        tau1_alt,
        tau2: split2.part14.into_coeffs(),
        tau3: split3.part27.into_coeffs(),
    })
}

/// Extracts the torsion forms from given derivative data `(dφ, d∗φ)`.
pub fn torsion_from_derivatives(
    field: &G2StructureField,
    dphi: &FormField,
    dstar: &FormField,
) -> Result<TorsionForms> {
    if dphi.degree() != 4 || dstar.degree() != 5 {
        return Err(Error::Degree(format!(
            "expected degrees (4, 5), got ({}, {})",
            dphi.degree(),
            dstar.degree()
        )));
    }
    let grid = *field.grid();
    let pts = (0..grid.npoints())
        .into_par_iter()
        .map(|p| point_torsion(field.point(p), &dphi.form_at(p), &dstar.form_at(p), p))
        .collect::<Result<Vec<_>>>()?;
    let gather = |degree: usize, f: &dyn Fn(&PointTorsion) -> &[f64]| {
        let data = pts.iter().flat_map(|t| f(t).iter().copied()).collect();
        FormField::from_data(grid, degree, data).unwrap()
    };
    Ok(TorsionForms {
        tau0: FormField::from_data(grid, 0, pts.iter().map(|t| t.tau0).collect()).unwrap(),
        tau1: gather(1, &|t| &t.tau1),
        tau2: gather(2, &|t| &t.tau2),
        tau3: gather(3, &|t| &t.tau3),
        tau1_from_dstar: gather(1, &|t| &t.tau1_alt),
    })
}

/// `(dφ, d∗φ)` for a structure field.
pub fn derivatives(field: &G2StructureField) -> (FormField, FormField) {
    (
        ext_d(field.phi()).unwrap(),
        ext_d(&field.star_phi()).unwrap(),
    )
}

pub fn torsion_forms(field: &G2StructureField) -> Result<TorsionForms> {
    let (dphi, dstar) = derivatives(field);
    torsion_from_derivatives(field, &dphi, &dstar)
}

/// L² distance between the two independent extractions of `τ₁`.
pub fn tau1_consistency(field: &G2StructureField) -> Result<f64> {
    let t = torsion_forms(field)?;
    Ok(l2_norm(field, &t.tau1.sub(&t.tau1_from_dstar)))
}

/// `(τ₀∗φ + 3τ₁∧φ + ∗τ₃, 4τ₁∧∗φ + ∗τ₂)`.
pub fn reconstruct(field: &G2StructureField, t: &TorsionForms) -> (FormField, FormField) {
    let grid = *field.grid();
    let per_point: Vec<(Vec<f64>, Vec<f64>)> = (0..grid.npoints())
        .into_par_iter()
        .map(|p| {
            let g2 = field.point(p);
            let tau1 = t.tau1.form_at(p);
            let four = &(&g2.star_phi().scaled(t.tau0.values()[p])
                + &wedge(&tau1, g2.phi()).unwrap().scaled(3.0))
                + &g2.star(&t.tau3.form_at(p));
            let five = &wedge(&tau1, g2.star_phi()).unwrap().scaled(4.0) + &g2.star(&t.tau2.form_at(p));
            (four.into_coeffs(), five.into_coeffs())
        })
        .collect();
    let (four, five): (Vec<_>, Vec<_>) = per_point.into_iter().unzip();
    (
        FormField::from_data(grid, 4, four.concat()).unwrap(),
        FormField::from_data(grid, 5, five.concat()).unwrap(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TorsionClass {
    pub closed: bool,
    pub coclosed: bool,
    pub torsion_free: bool,
    pub nearly_parallel: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TorsionSummary {
    pub norm_phi: f64,
    pub norm_dphi: f64,
    pub norm_dstar_phi: f64,
    pub norm_tau0: f64,
    pub norm_tau1: f64,
    pub norm_tau2: f64,
    pub norm_tau3: f64,
    /// `‖τ₀ − mean(τ₀)‖`; zero when `τ₀` is constant.
    pub tau0_oscillation: f64,
    pub tau1_consistency: f64,
    pub threshold: f64,
    pub class: TorsionClass,
}

/// Classification from derivative data, e.g. reconstructed from synthetic
/// torsion forms.
pub fn summarize_derivatives(
    field: &G2StructureField,
    dphi: &FormField,
    dstar: &FormField,
) -> Result<TorsionSummary> {
    let t = torsion_from_derivatives(field, dphi, dstar)?;
    let norm_phi = l2_norm(field, field.phi());
    let threshold = CLASS_TOL * norm_phi;
    let norm_dphi = l2_norm(field, dphi);
    let norm_dstar_phi = l2_norm(field, dstar);
    let norm_tau0 = l2_norm(field, &t.tau0);
    let vals = t.tau0.values();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let osc = FormField::from_data(*field.grid(), 0, vals.iter().map(|v| v - mean).collect()).unwrap();
    let tau0_oscillation = l2_norm(field, &osc);
    let norm_tau1 = l2_norm(field, &t.tau1);
    let norm_tau2 = l2_norm(field, &t.tau2);
    let norm_tau3 = l2_norm(field, &t.tau3);
    let tau1_consistency = l2_norm(field, &t.tau1.sub(&t.tau1_from_dstar));

    let closed = norm_dphi <= threshold;
    // ‖δφ‖ = ‖∗d∗φ‖ = ‖d∗φ‖ since ∗ is an isometry.
    let coclosed = norm_dstar_phi <= threshold;
    let torsion_free = closed && coclosed;
    let nearly_parallel = !torsion_free
        && norm_tau0 > threshold
        && tau0_oscillation <= threshold
        && norm_tau1.max(norm_tau2).max(norm_tau3) <= threshold;
    Ok(TorsionSummary {
        norm_phi,
        norm_dphi,
        norm_dstar_phi,
        norm_tau0,
        norm_tau1,
        norm_tau2,
        norm_tau3,
        tau0_oscillation,
        tau1_consistency,
        threshold,
        class: TorsionClass {
            closed,
            coclosed,
            torsion_free,
            nearly_parallel,
        },
    })
}

pub fn summarize(field: &G2StructureField) -> Result<TorsionSummary> {
    let (dphi, dstar) = derivatives(field);
    summarize_derivatives(field, &dphi, &dstar)
}

pub fn classify(field: &G2StructureField) -> Result<TorsionClass> {
    Ok(summarize(field)?.class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample;
    use crate::torusfield::{codiff, Grid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(a: &FormField, b: &FormField, field: &G2StructureField) -> f64 {
        l2_norm(field, &a.sub(b)) / l2_norm(field, b).max(1e-300)
    }

    #[test]
    fn flat_structure_has_no_torsion() {
        let g = Grid::with_active(8, &[0, 1, 2]).unwrap();
        let field = G2StructureField::standard(g);
        let t = torsion_forms(&field).unwrap();
        for f in [&t.tau0, &t.tau1, &t.tau2, &t.tau3] {
            assert!(f.max_abs() < 1e-14);
        }
        assert!(tau1_consistency(&field).unwrap() < 1e-14);
        let (four, five) = reconstruct(&field, &t);
        assert!(four.max_abs() < 1e-14 && five.max_abs() < 1e-14);
        let class = classify(&field).unwrap();
        assert_eq!(
            class,
            TorsionClass {
                closed: true,
                coclosed: true,
                torsion_free: true,
                nearly_parallel: false
            }
        );
    }

    #[test]
    fn tau0_only_reconstructs_star_phi() {
        let g = Grid::with_active(4, &[0]).unwrap();
        let field = G2StructureField::standard(g);
        let t = TorsionForms {
            tau0: FormField::scalar_from_fn(g, |_| 1.0),
            tau1: FormField::zeros(g, 1),
            tau2: FormField::zeros(g, 2),
            tau3: FormField::zeros(g, 3),
            tau1_from_dstar: FormField::zeros(g, 1),
        };
        let (four, five) = reconstruct(&field, &t);
        assert!(four.sub(&field.star_phi()).max_abs() < 1e-14);
        assert!(five.max_abs() < 1e-14);
        // The same data classifies as nearly parallel.
        let s = summarize_derivatives(&field, &four, &five).unwrap();
        assert!(s.class.nearly_parallel && !s.class.closed && s.class.coclosed);
        assert!((s.norm_tau0 - l2_norm(&field, &t.tau0)).abs() < 1e-10 * s.norm_tau0);
        // A non-constant τ₀ is not nearly parallel.
        let t2 = TorsionForms {
            tau0: FormField::scalar_from_fn(g, |x| 1.0 + 0.5 * x[0].sin()),
            ..t
        };
        let (four, five) = reconstruct(&field, &t2);
        assert!(!summarize_derivatives(&field, &four, &five).unwrap().class.nearly_parallel);
    }

    #[test]
    fn conformal_family_matches_analytic_torsion() {
        // φ = f³ φ₀ has g = f² g₀, dφ = 3 (df/f) ∧ φ and d∗φ = 4 (df/f) ∧ ∗φ,
        // so τ₁ = d log f and τ₀ = τ₂ = τ₃ = 0.
        let g = Grid::with_active(32, &[0]).unwrap();
        let f = FormField::scalar_from_fn(g, |x| 1.0 + 0.1 * x[0].sin());
        let field = sample::conformal_phi(&f).unwrap();
        let t = torsion_forms(&field).unwrap();
        let expected = FormField::from_fn(g, 1, |x| {
            AlgForm::basis(&[1]).unwrap().scaled(0.1 * x[0].cos() / (1.0 + 0.1 * x[0].sin()))
        });
        assert!(t.tau1.sub(&expected).max_abs() < 1e-10);
        assert!(t.tau1_from_dstar.sub(&expected).max_abs() < 1e-10);
        assert!(t.tau0.max_abs() < 1e-10 && t.tau2.max_abs() < 1e-10 && t.tau3.max_abs() < 1e-10);
        assert!(tau1_consistency(&field).unwrap() / l2_norm(&field, &t.tau1) < 1e-6);
    }

    // Oracle: per point, solve the full 35-dimensional system
    // ∗dφ = τ₀ φ + 3∗(τ₁∧φ) + τ₃ with τ₃ ranging over an orthonormal basis of
    // the complement of span{φ, e_i ⌟ ∗φ} found by SVD.
    fn oracle_decomposition(g2: &G2Pointwise, dphi: &AlgForm) -> (f64, Vec<f64>, AlgForm) {
        let gram = DMatrix::from_row_slice(35, 35, g2.metric().gram(3));
        let chol = gram.clone().cholesky().unwrap();
        let l = chol.l();
        // Orthonormal coordinates y = Lᵀ x make the metric Euclidean.
        let mut constraints = DMatrix::zeros(35, 8);
        constraints.column_mut(0).copy_from_slice(g2.phi().coeffs());
        let b7 = g2.omega3_7_basis();
        for i in 0..7 {
            constraints.column_mut(i + 1).copy_from(&b7.column(i));
        }
        let c = l.transpose() * constraints;
        let svd = c.clone().svd(true, false);
        let u = svd.u.unwrap();
        let full = {
            let mut q = DMatrix::<f64>::identity(35, 35);
            // Gram–Schmidt the complement of the column space of c.
            let mut basis: Vec<DVector<f64>> = (0..8).map(|i| u.column(i).into_owned()).collect();
            let mut out = Vec::new();
            for j in 0..35 {
                let mut v: DVector<f64> = q.column(j).into_owned();
                for b in basis.iter() {
                    v -= b * b.dot(&v);
                }
                if v.norm() > 1e-8 {
                    v /= v.norm();
                    basis.push(v.clone());
                    out.push(v);
                }
            }
            q = DMatrix::from_columns(&out);
            q
        };
        assert_eq!(full.ncols(), 27);
        let linv = l.transpose().try_inverse().unwrap();
        let w27 = &linv * full;
        let s = hodge_star(g2.metric(), dphi);
        let m3 = g2.wedge_phi_matrix() * 3.0;
        let mut m = DMatrix::zeros(35, 1 + 7 + 27);
        m.column_mut(0).copy_from_slice(g2.phi().coeffs());
        for i in 0..7 {
            let col = AlgForm::new(4, m3.column(i).as_slice().to_vec()).unwrap();
            m.column_mut(1 + i).copy_from_slice(hodge_star(g2.metric(), &col).coeffs());
        }
        for i in 0..27 {
            m.column_mut(8 + i).copy_from(&w27.column(i));
        }
        let sol = m.lu().solve(&DVector::from_column_slice(s.coeffs())).unwrap();
        let tau1 = sol.rows(1, 7).as_slice().to_vec();
        let tau3 = &w27 * sol.rows(8, 27);
        (sol[0], tau1, AlgForm::new(3, tau3.as_slice().to_vec()).unwrap())
    }

    #[test]
    fn extraction_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let g = Grid::with_active(8, &[0, 1]).unwrap();
        let field = sample::random_positive_phi(&mut rng, g, 2, 0.1).unwrap();
        let (dphi, _) = derivatives(&field);
        let t = torsion_forms(&field).unwrap();
        for p in (0..g.npoints()).step_by(7) {
            let (tau0, tau1, tau3) = oracle_decomposition(field.point(p), &dphi.form_at(p));
            assert!((tau0 - t.tau0.values()[p]).abs() < 1e-10);
            let d1: f64 = tau1.iter().zip(t.tau1.point(p)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d1 < 1e-10);
            assert!((&tau3 - &t.tau3.form_at(p)).norm_max() < 1e-10);
        }
    }

    #[test]
    fn extracted_forms_have_correct_types() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let g = Grid::with_active(8, &[0, 1, 2]).unwrap();
        let field = sample::random_positive_phi(&mut rng, g, 2, 0.1).unwrap();
        let t = torsion_forms(&field).unwrap();
        let scale = t.tau2.max_abs().max(t.tau3.max_abs());
        for p in 0..g.npoints() {
            let g2 = field.point(p);
            assert!(g2.project2(&t.tau2.form_at(p)).part7.norm_max() < 1e-8 * scale);
            let s = g2.project3(&t.tau3.form_at(p));
            assert!(s.part1.norm_max() < 1e-8 * scale && s.part7.norm_max() < 1e-8 * scale);
        }
    }

    #[test]
    fn round_trip_reproduces_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let g = Grid::with_active(8, &[0, 1, 2]).unwrap();
        let field = sample::random_positive_phi(&mut rng, g, 2, 0.1).unwrap();
        let (dphi, dstar) = derivatives(&field);
        let t = torsion_from_derivatives(&field, &dphi, &dstar).unwrap();
        let (four, _) = reconstruct(&field, &t);
        assert!(rel(&four, &dphi, &field) < 1e-10);
        // d∗φ is reproduced exactly by its own τ₁; the dφ one differs by the
        // discretization error of the consistency check.
        let alt = TorsionForms {
            tau1: t.tau1_from_dstar.clone(),
            ..t
        };
        let (_, five) = reconstruct(&field, &alt);
        assert!(rel(&five, &dstar, &field) < 1e-10);

        let g = Grid::with_active(32, &[0, 1]).unwrap();
        let field = sample::random_positive_phi(&mut rng, g, 2, 0.1).unwrap();
        let (dphi, dstar) = derivatives(&field);
        let t = torsion_from_derivatives(&field, &dphi, &dstar).unwrap();
        let (four, five) = reconstruct(&field, &t);
        assert!(rel(&four, &dphi, &field) < 1e-10);
        assert!(rel(&five, &dstar, &field) < 1e-8);
    }

    #[test]
    fn closed_perturbation_keeps_only_tau2() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let g = Grid::with_active(8, &[0, 1, 2]).unwrap();
        let field = sample::random_closed_phi(&mut rng, g, 2, 0.05).unwrap();
        let t = torsion_forms(&field).unwrap();
        assert!(t.tau0.max_abs() < 1e-12 && t.tau1.max_abs() < 1e-12 && t.tau3.max_abs() < 1e-12);
        assert!(t.tau2.max_abs() > 1e-3);
        let class = classify(&field).unwrap();
        assert!(class.closed && !class.coclosed && !class.torsion_free && !class.nearly_parallel);
        assert!(l2_norm(&field, &codiff(&field, field.phi()).unwrap()) > 1e-3);
    }

    #[test]
    fn wrong_degrees_are_rejected() {
        let g = Grid::with_active(4, &[0]).unwrap();
        let field = G2StructureField::standard(g);
        let z = FormField::zeros(g, 3);
        assert!(matches!(
            torsion_from_derivatives(&field, &z, &z),
            Err(Error::Degree(_))
        ));
    }
}
