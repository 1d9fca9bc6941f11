//! Laplacian solitons `ρφ + L_Xφ = −Δφ`, their invariances and diagnostics,
//! the shrinker scale law and the Laplacian flow `∂φ/∂t = −Δφ`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exterior::Vector7;
use crate::g2core::POSITIVITY_EPS;
use crate::sample::trig_basis;
use crate::torusfield::{
    codiff, contract_field, ext_d, hodge_laplacian, integrate_top, l2_inner, l2_norm, lie_derivative,
    wedge_fields, FormField, G2StructureField, Grid, ScalarField, VectorField,
};

/// Relative tolerance for closedness preconditions, applied to `‖φ‖_{L²}`.
pub const CLOSED_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct SolitonData {
    pub phi: G2StructureField,
    pub x: VectorField,
    pub rho: f64,
}

/// `E = ρφ + L_Xφ + Δφ` and `‖E‖_{L²}`.
pub fn soliton_residual(s: &SolitonData) -> (FormField, f64) {
    let phi = s.phi.phi();
    let e = phi
        .scaled(s.rho)
        .add(&lie_derivative(&s.x, phi))
        .add(&hodge_laplacian(&s.phi, phi));
    let norm = l2_norm(&s.phi, &e);
    (e, norm)
}

/// `(cφ, c^{-2/3} X, c^{-2/3} ρ)`. The residual field scales as `c^{1/3} E`
/// and its norm as `c^{1/2} ‖E‖`.
pub fn scale_transform(s: &SolitonData, c: f64) -> Result<SolitonData> {
    if !(c > 0.0) {
        return Err(Error::Orientation(c));
    }
    let k = c.powf(-2.0 / 3.0);
    Ok(SolitonData {
        phi: G2StructureField::new(s.phi.phi().scaled(c))?,
        x: s.x.scaled(k),
        rho: k * s.rho,
    })
}

/// `ρ = −∫⟨Δφ, φ⟩ / ∫⟨φ, φ⟩`.
pub fn rayleigh_rho(field: &G2StructureField) -> f64 {
    let phi = field.phi();
    let num = l2_inner(field, &hodge_laplacian(field, phi), phi).unwrap();
    let den = l2_inner(field, phi, phi).unwrap();
    // `+ 0.0` turns a negative zero into zero.
    -num / den + 0.0
}

/// `(‖dφ‖², ‖δφ‖²)`; their sum is `∫⟨Δφ, φ⟩` after integration by parts.
pub fn dirichlet_terms(field: &G2StructureField) -> (f64, f64) {
    let phi = field.phi();
    let d = l2_norm(field, &ext_d(phi).unwrap());
    let delta = l2_norm(field, &codiff(field, phi).unwrap());
    (d * d, delta * delta)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WonderReport {
    /// `∫ L_Xφ ∧ ∗(fφ)`
    pub lhs: f64,
    /// `−3 ∫ df ∧ ∗X♭`
    pub rhs: f64,
    pub residual: f64,
    /// `∫|L_Xφ ∧ ∗fφ| + 3∫|df ∧ ∗X♭|`, the conditioning of the two quadratures.
    pub scale: f64,
    pub relative: f64,
}

pub fn wonder_residual(field: &G2StructureField, x: &VectorField, f: &ScalarField) -> WonderReport {
    let phi = field.phi();
    let lx = lie_derivative(x, phi);
    let fphi = phi.mul_scalar(f);
    let left = wedge_fields(&lx, &field.star(&fphi)).unwrap();
    let df = ext_d(f).unwrap();
    let right = wedge_fields(&df, &field.star(&field.flat(x))).unwrap().scaled(-3.0);
    let lhs = integrate_top(&left).unwrap();
    let rhs = integrate_top(&right).unwrap();
    let scale = abs_integral(&left) + abs_integral(&right);
    let residual = (lhs - rhs).abs();
    WonderReport {
        lhs,
        rhs,
        residual,
        scale,
        relative: if scale > 0.0 { residual / scale } else { residual },
    }
}

// `∫ |a|` for a top-degree field.
fn abs_integral(a: &FormField) -> f64 {
    a.data().iter().map(|v| v.abs()).sum::<f64>() * a.grid().cell_volume()
}

/// Divergence `div X = −δX♭`.
pub fn divergence(field: &G2StructureField, x: &VectorField) -> ScalarField {
    codiff(field, &field.flat(x)).unwrap().scaled(-1.0)
}

/// `(‖L_Xφ‖, ‖div X‖)`.
pub fn symmetry_residual(field: &G2StructureField, x: &VectorField) -> (f64, f64) {
    (
        l2_norm(field, &lie_derivative(x, field.phi())),
        l2_norm(field, &divergence(field, x)),
    )
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SymmetrySpace {
    pub dimension: usize,
    /// Number of band-limited vector fields searched.
    pub candidates: usize,
    /// Whether the kernel is spanned by constant fields.
    pub constant_kernel: bool,
    /// Smallest retained singular value over the largest.
    pub gap: f64,
}

/// Kernel of `X ↦ L_Xφ₀` over all vector fields with Fourier content up to
/// `bandwidth`, on the flat structure.
pub fn symmetry_space_flat(grid: Grid, bandwidth: usize) -> SymmetrySpace {
    let field = G2StructureField::standard(grid);
    let basis = trig_basis(grid, bandwidth);
    // Basis functions are orthogonal; normalize them.
    let basis: Vec<Vec<f64>> = basis
        .into_iter()
        .map(|b| {
            let n = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            b.into_iter().map(|v| v / n).collect()
        })
        .collect();
    let columns: Vec<(usize, usize)> = (0..basis.len()).flat_map(|b| (0..7).map(move |i| (b, i))).collect();
    let images: Vec<Vec<f64>> = columns
        .par_iter()
        .map(|&(b, i)| {
            let x = VectorField::new(
                grid,
                basis[b].iter().map(|&v| Vector7::from_fn(|r, _| if r == i { v } else { 0.0 })).collect(),
            )
            .unwrap();
            lie_derivative(&x, field.phi()).data().to_vec()
        })
        .collect();
    let m = columns.len();
    let mut gram = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v: f64 = images[a].iter().zip(&images[b]).map(|(x, y)| x * y).sum();
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.max();
    // Eigenvalues of the Gram matrix are squared singular values and carry
    // absolute errors near `1e-16 · max`.
    let tol = 1e-12 * max;
    let kernel: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] <= tol).collect();
    let gap = (0..m)
        .filter(|&i| eig.eigenvalues[i] > tol)
        .map(|i| eig.eigenvalues[i])
        .fold(f64::INFINITY, f64::min)
        .sqrt()
        / max.sqrt();
    // The constant function is basis element 0.
    let constant_kernel = kernel.iter().all(|&k| {
        let v = eig.eigenvectors.column(k);
        (0..m).filter(|&j| columns[j].0 != 0).all(|j| v[j].abs() < 1e-8)
    });
    SymmetrySpace {
        dimension: kernel.len(),
        candidates: m,
        constant_kernel,
        gap,
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HarmonicityReport {
    pub d_x_phi: f64,
    pub delta_x_phi: f64,
    /// Only reported when `φ` is torsion-free.
    pub d_x_flat: Option<f64>,
    pub delta_x_flat: Option<f64>,
}

/// Norms witnessing that `X⌟φ` (and `X♭` when torsion-free) is harmonic for
/// a symmetry `X` of a closed `φ`.
pub fn harmonicity_check(field: &G2StructureField, x: &VectorField) -> Result<HarmonicityReport> {
    let phi = field.phi();
    let threshold = CLOSED_TOL * l2_norm(field, phi);
    let ndphi = l2_norm(field, &ext_d(phi).unwrap());
    if ndphi > threshold {
        return Err(Error::Closedness(ndphi));
    }
    let xphi = contract_field(x, phi).unwrap();
    let coclosed = l2_norm(field, &codiff(field, phi).unwrap()) <= threshold;
    let xflat = field.flat(x);
    Ok(HarmonicityReport {
        d_x_phi: l2_norm(field, &ext_d(&xphi).unwrap()),
        delta_x_phi: l2_norm(field, &codiff(field, &xphi).unwrap()),
        d_x_flat: coclosed.then(|| l2_norm(field, &ext_d(&xflat).unwrap())),
        delta_x_flat: coclosed.then(|| l2_norm(field, &codiff(field, &xflat).unwrap())),
    })
}

#[derive(Clone, Debug)]
pub struct EigenformReport {
    pub is_eigenform: bool,
    /// `f = ⟨Δφ, φ⟩ / 7`.
    pub multiplier: ScalarField,
    pub norm_laplacian: f64,
    pub norm_part7: f64,
    pub norm_part27: f64,
    /// For closed `φ` passing the type test: whether `f` is constant.
    pub multiplier_constant: Option<bool>,
}

/// Tests `Δφ ∈ Ω³₁` pointwise, with relative tolerance `tol`.
pub fn eigenform_check(field: &G2StructureField, tol: f64) -> EigenformReport {
    let phi = field.phi();
    let lap = hodge_laplacian(field, phi);
    let grid = *field.grid();
    let splits: Vec<_> = (0..grid.npoints())
        .into_par_iter()
        .map(|p| {
            let g2 = field.point(p);
            let s = g2.project3(&lap.form_at(p));
            (g2.inner(&lap.form_at(p), g2.phi()) / 7.0, s.part7.into_coeffs(), s.part27.into_coeffs())
        })
        .collect();
    let multiplier = FormField::from_data(grid, 0, splits.iter().map(|s| s.0).collect()).unwrap();
    let part7 = FormField::from_data(grid, 3, splits.iter().flat_map(|s| s.1.clone()).collect()).unwrap();
    let part27 = FormField::from_data(grid, 3, splits.iter().flat_map(|s| s.2.clone()).collect()).unwrap();
    let norm_laplacian = l2_norm(field, &lap);
    let norm_part7 = l2_norm(field, &part7);
    let norm_part27 = l2_norm(field, &part27);
    let threshold = tol * (norm_laplacian + l2_norm(field, phi));
    let is_eigenform = norm_part7 <= threshold && norm_part27 <= threshold;
    let closed = l2_norm(field, &ext_d(phi).unwrap()) <= threshold;
    let multiplier_constant = (is_eigenform && closed).then(|| {
        let v = multiplier.values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let osc = FormField::from_data(grid, 0, v.iter().map(|x| x - mean).collect()).unwrap();
        l2_norm(field, &osc) <= threshold
    });
    EigenformReport {
        is_eigenform,
        multiplier,
        norm_laplacian,
        norm_part7,
        norm_part27,
        multiplier_constant,
    }
}

/// `R(t) = (1 + 2ρt/3)^{3/2}`, solving `R' = ρ R^{1/3}`, `R(0) = 1`.
pub fn shrinker_scale(rho: f64, t: f64) -> Result<f64> {
    let base = 1.0 + 2.0 * rho * t / 3.0;
    if base < 0.0 {
        return Err(Error::Singularity(base));
    }
    Ok(base.powf(1.5))
}

/// `−3 / (2ρ)` for a shrinker.
pub fn singularity_time(rho: f64) -> Result<f64> {
    if !(rho < 0.0) {
        return Err(Error::Precondition(format!("singularity time needs rho < 0, got {rho}")));
    }
    Ok(-3.0 / (2.0 * rho))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShrinkerSolution {
    pub rho: f64,
}

impl ShrinkerSolution {
    pub fn scale(&self, t: f64) -> Result<f64> {
        shrinker_scale(self.rho, t)
    }

    pub fn singularity_time(&self) -> Option<f64> {
        singularity_time(self.rho).ok()
    }
}

/// `‖ρφ + d(X⌟φ + δφ)‖` for closed `φ` and `ρ ≠ 0`.
pub fn exactness_residual(s: &SolitonData) -> Result<f64> {
    let phi = s.phi.phi();
    let ndphi = l2_norm(&s.phi, &ext_d(phi).unwrap());
    if ndphi > CLOSED_TOL * l2_norm(&s.phi, phi) {
        return Err(Error::Closedness(ndphi));
    }
    if s.rho == 0.0 {
        return Err(Error::Precondition("exactness relation needs rho != 0".into()));
    }
    let inner = contract_field(&s.x, phi).unwrap().add(&codiff(&s.phi, phi).unwrap());
    let e = phi.scaled(s.rho).add(&ext_d(&inner).unwrap());
    Ok(l2_norm(&s.phi, &e))
}

#[derive(Clone, Copy, Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct FlowConfig {
    pub t_max: f64,
    pub c_cfl: f64,
    pub max_steps: usize,
    /// Steps shrinking the positivity margin by more than this factor are retried
    /// with half the step.
    pub margin_factor: f64,
    pub min_dt: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            t_max: 1.0,
            c_cfl: 0.1,
            max_steps: 100,
            margin_factor: 0.5,
            min_dt: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TMax,
    MaxSteps,
    Positivity,
    Dt,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FlowDiagnostics {
    pub t: f64,
    pub dt: f64,
    pub norm_dphi: f64,
    pub norm_delta_phi: f64,
    pub rayleigh_rho: f64,
    pub min_positivity_eig: f64,
    pub dist_from_initial: f64,
    /// `∫⟨Δφ, φ⟩`
    pub laplacian_energy: f64,
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub phi: FormField,
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    /// Initial state followed by one entry per accepted step.
    pub states: Vec<FlowState>,
    pub diagnostics: Vec<FlowDiagnostics>,
    pub stop: StopReason,
    pub last: G2StructureField,
}

impl FlowTrajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,norm_dphi,norm_delta_phi,rayleigh_rho,min_positivity_eig,dist_from_initial\n");
        for d in &self.diagnostics {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                d.t, d.norm_dphi, d.norm_delta_phi, d.rayleigh_rho, d.min_positivity_eig, d.dist_from_initial
            ));
        }
        out
    }
}

fn diagnostics(field: &G2StructureField, lap: &FormField, initial: &FormField, t: f64, dt: f64) -> FlowDiagnostics {
    let phi = field.phi();
    let norm_dphi = l2_norm(field, &ext_d(phi).unwrap());
    let norm_delta_phi = l2_norm(field, &codiff(field, phi).unwrap());
    let energy = l2_inner(field, lap, phi).unwrap();
    FlowDiagnostics {
        t,
        dt,
        norm_dphi,
        norm_delta_phi,
        rayleigh_rho: -energy / l2_inner(field, phi, phi).unwrap(),
        min_positivity_eig: field.min_positivity(),
        dist_from_initial: l2_norm(field, &phi.sub(initial)),
        laplacian_energy: energy,
    }
}

// Largest eigenvalue of the spectral Laplacian symbol, `max g^{-1} · Σ k_max²`.
fn stiffness(field: &G2StructureField) -> f64 {
    let grid = field.grid();
    let ksq: f64 = grid
        .active_axes()
        .iter()
        .map(|&a| {
            let n = grid.sizes()[a];
            // The Nyquist mode is not differentiated.
            let k = if n % 2 == 0 { n / 2 - 1 } else { n / 2 };
            (k * k) as f64
        })
        .sum();
    let ginv = field
        .points()
        .iter()
        .map(|g| g.metric().g_inv().symmetric_eigenvalues().max())
        .fold(0.0, f64::max);
    ginv * ksq
}

fn max_pointwise_norm(field: &G2StructureField, a: &FormField) -> f64 {
    (0..field.grid().npoints())
        .map(|p| {
            let m = field.point(p).metric();
            m.inner_slices(a.degree(), a.point(p), a.point(p)).max(0.0).sqrt()
        })
        .fold(0.0, f64::max)
}

// One RK4 step; `None` when an intermediate stage is not positive.
fn rk4_step(field: &G2StructureField, k1: &FormField, dt: f64) -> Option<G2StructureField> {
    let phi = field.phi();
    let stage = |f: FormField| -> Option<FormField> {
        let s = G2StructureField::new(f).ok()?;
        Some(hodge_laplacian(&s, s.phi()).scaled(-1.0))
    };
    let k2 = stage(phi.axpy(0.5 * dt, k1))?;
    let k3 = stage(phi.axpy(0.5 * dt, &k2))?;
    let k4 = stage(phi.axpy(dt, &k3))?;
    let incr = k1.add(&k2.scaled(2.0)).add(&k3.scaled(2.0)).add(&k4);
    G2StructureField::new(phi.axpy(dt / 6.0, &incr)).ok()
}

/// Explicit RK4 integration of `∂φ/∂t = −Δ_φ φ`, recomputing the metric at
/// every stage. The step is `c_cfl / (1 + max |Δφ|_g)`, capped by the RK4
/// stability bound for the spectral Laplacian.
pub fn laplacian_flow(phi0: &G2StructureField, cfg: &FlowConfig) -> FlowTrajectory {
    let initial = phi0.phi().clone();
    let mut field = phi0.clone();
    let mut t = 0.0;
    let mut lap = hodge_laplacian(&field, field.phi());
    let mut states = vec![FlowState {
        t,
        phi: initial.clone(),
    }];
    let mut diags = vec![diagnostics(&field, &lap, &initial, t, 0.0)];
    let stop = loop {
        if t >= cfg.t_max {
            break StopReason::TMax;
        }
        if states.len() > cfg.max_steps {
            break StopReason::MaxSteps;
        }
        let margin = field.min_positivity();
        let mut dt = (cfg.c_cfl / (1.0 + max_pointwise_norm(&field, &lap)))
            .min(2.5 / stiffness(&field).max(f64::MIN_POSITIVE))
            .min(cfg.t_max - t);
        let k1 = lap.scaled(-1.0);
        let next = loop {
            match rk4_step(&field, &k1, dt) {
                Some(next) if next.min_positivity() >= cfg.margin_factor * margin => break Ok(next),
                Some(_) => {
                    dt *= 0.5;
                    if dt < cfg.min_dt {
                        break Err(StopReason::Dt);
                    }
                }
                None => {
                    dt *= 0.5;
                    if dt < cfg.min_dt {
                        break Err(StopReason::Positivity);
                    }
                }
            }
        };
        match next {
            Ok(next) => {
                field = next;
                t += dt;
                if cfg.t_max - t < 1e-14 * cfg.t_max.max(1.0) {
                    t = cfg.t_max;
                }
                lap = hodge_laplacian(&field, field.phi());
                states.push(FlowState {
                    t,
                    phi: field.phi().clone(),
                });
                diags.push(diagnostics(&field, &lap, &initial, t, dt));
            }
            Err(reason) => break reason,
        }
    };
    debug_assert!(diags.iter().all(|d| d.min_positivity_eig > POSITIVITY_EPS));
    FlowTrajectory {
        states,
        diagnostics: diags,
        stop,
        last: field,
    }
}
