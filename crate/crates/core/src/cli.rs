//! Batch front end: run configuration, subcommands and reports.
//!
//! Every run is driven by a JSON [`RunConfig`]. Reports embed the SHA-256 of
//! the effective configuration and the tolerances used; nothing in a report
//! depends on wall-clock time or thread scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exterior::{unit, Vector7, DIM};
use crate::fieldio;
use crate::g2core::{numerical_rank, G2Pointwise};
use crate::sample;
use crate::soliton::{self, FlowConfig, SolitonData};
use crate::torsion;
use crate::torusfield::{l2_norm, G2StructureField, Grid, VectorField};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "g2flow", version, about = "G2-structure toolkit on the flat 7-torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for reports, trajectories and field files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Multiplies every tolerance.
    #[arg(long, global = true)]
    pub tolerance_scale: Option<f64>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Pointwise algebra, contraction identities and integral identities.
    CheckIdentities,
    /// Torsion forms and classification of a field.
    Torsion {
        /// Field file holding φ; generated from the configuration if absent.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Laplacian flow with trajectory export.
    Flow {
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Residual of the soliton equation for the configured candidate.
    SolitonResidual {
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Symmetries of the flat structure.
    Symmetries,
    /// Writes the configured initial 3-form to `<out>/phi.g2ff`.
    MakeField,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::CheckIdentities => "check-identities",
            Command::Torsion { .. } => "torsion",
            Command::Flow { .. } => "flow",
            Command::SolitonResidual { .. } => "soliton-residual",
            Command::Symmetries => "symmetries",
            Command::MakeField => "make-field",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    Flat,
    /// `φ₀ + amplitude · (band-limited random 3-form)`.
    Random { amplitude: f64 },
    /// `φ₀ + dβ` with `max |dβ| = amplitude`.
    Closed { amplitude: f64 },
    /// `f³ φ₀` with `max |f − 1| = amplitude`.
    Conformal { amplitude: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorSpec {
    Zero,
    Constant { value: [f64; DIM] },
    Random { amplitude: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolitonSpec {
    pub rho: f64,
    pub x: VectorSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub t_max: f64,
    pub c_cfl: f64,
    pub max_steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: Option<u64>,
    /// Points per active axis.
    pub grid_n: usize,
    /// Active axes, 1-based.
    pub active_axes: Vec<usize>,
    pub bandwidth: usize,
    pub perturbation: Perturbation,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub flow: Option<FlowSpec>,
    #[serde(default)]
    pub soliton: Option<SolitonSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Tolerances and their defaults; configuration overrides must use these keys.
pub fn default_tolerances() -> BTreeMap<String, f64> {
    [
        ("pointwise", 1e-10),
        ("wonder", 1e-5),
        ("rayleigh_two_route", 1e-6),
        ("soliton", 1e-8),
        ("symmetry", 1e-10),
        ("non_symmetry", 1e-6),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// A validated configuration with command-line overrides applied.
#[derive(Clone, Debug)]
pub struct Effective {
    pub config: RunConfig,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub grid: Grid,
    pub hash: String,
    pub out: Option<PathBuf>,
}

impl Effective {
    pub fn tol(&self, key: &str) -> f64 {
        self.tolerances[key]
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn resolve(
    mut config: RunConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
    tolerance_scale: Option<f64>,
) -> Result<Effective> {
    if config.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            config.schema_version
        )));
    }
    let seed = seed
        .or(config.seed)
        .ok_or_else(|| Error::Config("a seed is required (config `seed` or --seed)".into()))?;
    config.seed = Some(seed);
    let mut axes = config.active_axes.clone();
    axes.sort_unstable();
    axes.dedup();
    if axes.is_empty() || axes.len() != config.active_axes.len() || axes.iter().any(|&a| a == 0 || a > DIM) {
        return Err(Error::Config(format!(
            "active_axes must be distinct values in 1..=7, got {:?}",
            config.active_axes
        )));
    }
    if config.grid_n < 2 {
        return Err(Error::Config("grid_n must be at least 2".into()));
    }
    if config.bandwidth > config.grid_n / 4 {
        return Err(Error::Config(format!(
            "bandwidth {} exceeds grid_n / 4 = {}",
            config.bandwidth,
            config.grid_n / 4
        )));
    }
    let amplitude = match config.perturbation {
        Perturbation::Flat => 0.0,
        Perturbation::Random { amplitude }
        | Perturbation::Closed { amplitude }
        | Perturbation::Conformal { amplitude } => amplitude,
    };
    if !amplitude.is_finite() || amplitude < 0.0 {
        return Err(Error::Config(format!("invalid perturbation amplitude {amplitude}")));
    }
    if let Some(f) = &config.flow {
        if !(f.t_max > 0.0 && f.c_cfl > 0.0) || f.max_steps == 0 {
            return Err(Error::Config("flow needs t_max > 0, c_cfl > 0 and max_steps > 0".into()));
        }
    }
    let scale = tolerance_scale.unwrap_or(1.0);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("invalid tolerance scale {scale}")));
    }
    let mut tolerances = default_tolerances();
    for (k, v) in &config.tolerances {
        match tolerances.get_mut(k) {
            Some(t) if *v >= 0.0 => *t = *v,
            Some(_) => return Err(Error::Config(format!("tolerance {k} must be nonnegative"))),
            None => return Err(Error::Config(format!("unknown tolerance key {k}"))),
        }
    }
    for t in tolerances.values_mut() {
        *t *= scale;
    }
    let active: Vec<usize> = axes.iter().map(|a| a - 1).collect();
    let grid = Grid::with_active(config.grid_n, &active)?;
    let canonical = serde_json::to_vec(&json!({
        "config": &config,
        "tolerances": &tolerances,
    }))
    .unwrap();
    let hash = hex::encode(Sha256::digest(&canonical));
    let out = out.or_else(|| config.output_dir.clone());
    Ok(Effective {
        config,
        seed,
        tolerances,
        grid,
        hash,
        out,
    })
}

/// The configured initial structure.
pub fn initial_field(eff: &Effective) -> Result<G2StructureField> {
    let mut rng = eff.rng();
    let (g, bw) = (eff.grid, eff.config.bandwidth);
    match eff.config.perturbation {
        Perturbation::Flat => Ok(G2StructureField::standard(g)),
        Perturbation::Random { amplitude } => sample::random_positive_phi(&mut rng, g, bw, amplitude),
        Perturbation::Closed { amplitude } => sample::random_closed_phi(&mut rng, g, bw, amplitude),
        Perturbation::Conformal { amplitude } => {
            sample::conformal_phi(&sample::positive_profile(&mut rng, g, bw, amplitude))
        }
    }
}

fn field_from(eff: &Effective, path: &Option<PathBuf>) -> Result<G2StructureField> {
    match path {
        None => initial_field(eff),
        Some(p) => {
            let phi = fieldio::load(p)?;
            if phi.degree() != 3 {
                return Err(Error::FieldIo(format!("expected a 3-form, file holds degree {}", phi.degree())));
            }
            G2StructureField::new(phi)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn le(name: &str, residual: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub schema_version: u32,
    pub config_sha256: String,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub results: Value,
}

pub struct Outcome {
    pub report: Report,
    /// Extra files to write next to the report, as (file name, contents).
    pub files: Vec<(String, Vec<u8>)>,
}

fn report(eff: &Effective, command: &str, checks: Vec<Check>, results: Value) -> Report {
    Report {
        command: command.into(),
        schema_version: SCHEMA_VERSION,
        config_sha256: eff.hash.clone(),
        seed: eff.seed,
        tolerances: eff.tolerances.clone(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        results,
    }
}

const POINTWISE_TRIALS: usize = 100;

pub fn check_identities(eff: &Effective) -> Result<Outcome> {
    let tol = eff.tol("pointwise");
    let mut rng = eff.rng();
    let mut star = 0.0f64;
    let mut proj = 0.0f64;
    let mut minus4 = 0.0f64;
    let mut plus3 = 0.0f64;
    let mut ranks_ok = true;
    for _ in 0..POINTWISE_TRIALS {
        let g2 = G2Pointwise::new(sample::random_positive_phi_value(&mut rng, 0.5))?;
        for k in 0..=DIM {
            let a = sample::random_form(&mut rng, k);
            let back = g2.star(&g2.star(&a));
            star = star.max((&back - &a).norm_max() / a.norm_max());
        }
        let b = sample::random_form(&mut rng, 2);
        let s2 = g2.project2(&b);
        let s3 = g2.project3(&sample::random_form(&mut rng, 3));
        let again = g2.project2(&s2.part7);
        proj = proj
            .max((&(&s2.part7 + &s2.part14) - &b).norm_max())
            .max(g2.inner(&s2.part7, &s2.part14).abs())
            .max((&again.part7 - &s2.part7).norm_max())
            .max(g2.inner(&s3.part1, &s3.part7).abs())
            .max(g2.inner(&s3.part7, &s3.part27).abs())
            .max(g2.inner(&s3.part1, &s3.part27).abs());
        let x = sample::random_vector(&mut rng);
        minus4 = minus4.max(g2.identity_minus4(&x).norm_max());
        plus3 = plus3.max(g2.identity_plus3(&x).norm_max());
        let rank = |m: &nalgebra::DMatrix<f64>| numerical_rank(m, 1e-9);
        ranks_ok &= rank(&g2.wedge_phi_matrix()) == 7 && rank(&g2.wedge_star_phi_matrix()) == 7;
    }
    let phi0 = G2Pointwise::standard();
    let norm7 = (phi0.inner(phi0.phi(), phi0.phi()) - 7.0).abs();
    ranks_ok &= numerical_rank(&phi0.wedge_phi_matrix(), 1e-9) == 7;

    let field = initial_field(eff)?;
    let (g, bw) = (eff.grid, eff.config.bandwidth);
    let x = sample::band_limited_vector(&mut rng, g, bw.max(1), 1.0);
    let f = sample::band_limited_scalar(&mut rng, g, bw.max(1), 1.0);
    let wonder = soliton::wonder_residual(&field, &x, &f);
    let one = crate::torusfield::FormField::scalar_from_fn(g, |_| 1.0);
    let wonder1 = soliton::wonder_residual(&field, &x, &one);
    let rho = soliton::rayleigh_rho(&field);
    let (dd, dl) = soliton::dirichlet_terms(&field);
    let energy = -rho * l2_norm(&field, field.phi()).powi(2);
    let two_route = (energy - (dd + dl)).abs() / (dd + dl).max(f64::MIN_POSITIVE);

    let checks = vec![
        Check::le("star_involution", star, tol),
        Check::le("projectors", proj, tol),
        Check::le("phi0_norm_squared_is_7", norm7, tol),
        Check::le("contraction_minus4", minus4, tol),
        Check::le("contraction_plus3", plus3, tol),
        Check::le("wedge_ranks_7", if ranks_ok { 0.0 } else { 1.0 }, 0.0),
        Check::le("wonder", wonder.relative, eff.tol("wonder")),
        Check::le("wonder_f_constant", wonder1.relative, eff.tol("wonder")),
        Check::le("rayleigh_nonpositive", rho.max(0.0), 0.0),
        Check::le("rayleigh_two_route", two_route, eff.tol("rayleigh_two_route")),
    ];
    let results = json!({
        "pointwise_trials": POINTWISE_TRIALS,
        "wonder": wonder,
        "wonder_f_constant": wonder1,
        "rayleigh_rho": rho,
        "norm_dphi_squared": dd,
        "norm_delta_phi_squared": dl,
    });
    Ok(Outcome {
        report: report(eff, "check-identities", checks, results),
        files: vec![],
    })
}

pub fn cmd_torsion(eff: &Effective, field: &Option<PathBuf>) -> Result<Outcome> {
    let field = field_from(eff, field)?;
    let s = torsion::summarize(&field)?;
    let rel = s.tau1_consistency / s.norm_tau1.max(f64::MIN_POSITIVE);
    let results = json!({
        "grid": field.grid().sizes(),
        "summary": s,
        "tau1_consistency_relative": if s.norm_tau1 > 0.0 { rel } else { 0.0 },
    });
    Ok(Outcome {
        report: report(eff, "torsion", vec![], results),
        files: vec![],
    })
}

pub fn cmd_flow(eff: &Effective, field: &Option<PathBuf>) -> Result<Outcome> {
    let spec = eff
        .config
        .flow
        .as_ref()
        .ok_or_else(|| Error::Config("the flow command needs a `flow` section".into()))?;
    let start = field_from(eff, field)?;
    let cfg = FlowConfig {
        t_max: spec.t_max,
        c_cfl: spec.c_cfl,
        max_steps: spec.max_steps,
        ..FlowConfig::default()
    };
    let tr = soliton::laplacian_flow(&start, &cfg);
    let last = *tr.diagnostics.last().unwrap();
    let min_energy = tr.diagnostics.iter().map(|d| d.laplacian_energy).fold(f64::INFINITY, f64::min);
    let max_dphi = tr.diagnostics.iter().map(|d| d.norm_dphi).fold(0.0, f64::max);
    let results = json!({
        "flow": cfg,
        "stop_reason": tr.stop,
        "steps": tr.steps(),
        "final": last,
        "min_laplacian_energy": min_energy,
        "max_norm_dphi": max_dphi,
        "max_rayleigh_rho": tr.diagnostics.iter().map(|d| d.rayleigh_rho).fold(f64::NEG_INFINITY, f64::max),
    });
    Ok(Outcome {
        report: report(eff, "flow", vec![], results),
        files: vec![("trajectory.csv".into(), tr.to_csv().into_bytes())],
    })
}

fn vector_field(eff: &Effective, spec: &VectorSpec) -> VectorField {
    let g = eff.grid;
    match spec {
        VectorSpec::Zero => VectorField::constant(g, Vector7::zeros()),
        VectorSpec::Constant { value } => VectorField::constant(g, Vector7::from_column_slice(value)),
        VectorSpec::Random { amplitude } => {
            // Separate stream from the one used for φ.
            let mut rng = ChaCha8Rng::seed_from_u64(eff.seed.wrapping_add(1));
            sample::band_limited_vector(&mut rng, g, eff.config.bandwidth.max(1), *amplitude)
        }
    }
}

pub fn cmd_soliton_residual(eff: &Effective, field: &Option<PathBuf>) -> Result<Outcome> {
    let spec = eff
        .config
        .soliton
        .as_ref()
        .ok_or_else(|| Error::Config("soliton-residual needs a `soliton` section".into()))?;
    let phi = field_from(eff, field)?;
    let s = SolitonData {
        x: vector_field(eff, &spec.x),
        rho: spec.rho,
        phi,
    };
    let (_, norm) = soliton::soliton_residual(&s);
    let norm_phi = l2_norm(&s.phi, s.phi.phi());
    let exactness = match soliton::exactness_residual(&s) {
        Ok(v) => Some(v),
        Err(Error::Closedness(_)) | Err(Error::Precondition(_)) => None,
        Err(e) => return Err(e),
    };
    let checks = vec![Check::le("soliton_residual", norm / norm_phi, eff.tol("soliton"))];
    let results = json!({
        "rho": s.rho,
        "residual_norm": norm,
        "norm_phi": norm_phi,
        "rayleigh_rho": soliton::rayleigh_rho(&s.phi),
        "exactness_residual": exactness,
    });
    Ok(Outcome {
        report: report(eff, "soliton-residual", checks, results),
        files: vec![],
    })
}

const NON_SYMMETRY_TRIALS: usize = 10;

pub fn cmd_symmetries(eff: &Effective) -> Result<Outcome> {
    let g = eff.grid;
    let bw = eff.config.bandwidth.max(1);
    let field = G2StructureField::standard(g);
    let tol = eff.tol("symmetry");
    let mut constant = 0.0f64;
    for i in 1..=DIM {
        let (l, d) = soliton::symmetry_residual(&field, &VectorField::constant(g, unit(i)));
        constant = constant.max(l).max(d);
    }
    let mut rng = eff.rng();
    let mut weakest = f64::INFINITY;
    for _ in 0..NON_SYMMETRY_TRIALS {
        let x = sample::band_limited_vector(&mut rng, g, bw, 1.0);
        // Remove the mean so the field is genuinely non-constant.
        let n = x.values().len() as f64;
        let mean = x.values().iter().fold(Vector7::zeros(), |a, v| a + v) / n;
        let x = VectorField::new(g, x.values().iter().map(|v| v - mean).collect())?;
        let (l, _) = soliton::symmetry_residual(&field, &x);
        weakest = weakest.min(l / l2_norm(&field, &field.flat(&x)));
    }
    let space = soliton::symmetry_space_flat(g, bw);
    let base = SolitonData {
        phi: field.clone(),
        x: VectorField::constant(g, Vector7::zeros()),
        rho: 0.0,
    };
    let (e0, _) = soliton::soliton_residual(&base);
    let mut shift = 0.0f64;
    for i in 1..=DIM {
        let shifted = SolitonData {
            x: base.x.add(&VectorField::constant(g, unit(i))),
            ..base.clone()
        };
        shift = shift.max(soliton::soliton_residual(&shifted).0.sub(&e0).max_abs());
    }
    let checks = vec![
        Check::le("constant_fields_are_divergence_free_symmetries", constant, tol),
        Check {
            name: "random_fields_are_not_symmetries".into(),
            residual: weakest,
            tolerance: eff.tol("non_symmetry"),
            pass: weakest > eff.tol("non_symmetry"),
        },
        Check::le(
            "symmetry_space_dimension_7",
            (space.dimension as f64 - 7.0).abs() + if space.constant_kernel { 0.0 } else { 1.0 },
            0.0,
        ),
        Check::le("symmetry_shift_invariance", shift, tol),
    ];
    let results = json!({ "symmetry_space": space, "non_symmetry_trials": NON_SYMMETRY_TRIALS });
    Ok(Outcome {
        report: report(eff, "symmetries", checks, results),
        files: vec![],
    })
}

pub fn cmd_make_field(eff: &Effective) -> Result<Outcome> {
    let field = initial_field(eff)?;
    let mut bytes = Vec::new();
    fieldio::write_field(&mut bytes, field.phi())?;
    let results = json!({ "grid": eff.grid.sizes(), "file": "phi.g2ff" });
    Ok(Outcome {
        report: report(eff, "make-field", vec![], results),
        files: vec![("phi.g2ff".into(), bytes)],
    })
}

pub fn execute(command: &Command, eff: &Effective) -> Result<Outcome> {
    match command {
        Command::CheckIdentities => check_identities(eff),
        Command::Torsion { field } => cmd_torsion(eff, field),
        Command::Flow { field } => cmd_flow(eff, field),
        Command::SolitonResidual { field } => cmd_soliton_residual(eff, field),
        Command::Symmetries => cmd_symmetries(eff),
        Command::MakeField => cmd_make_field(eff),
    }
}

fn write_outputs(dir: &Path, name: &str, outcome: &Outcome, json_text: &str) -> Result<()> {
    let io = |e: std::io::Error| Error::Config(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(format!("{name}.json")), json_text).map_err(io)?;
    for (file, bytes) in &outcome.files {
        std::fs::write(dir.join(file), bytes).map_err(io)?;
    }
    Ok(())
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Decomposition { .. } => EXIT_FAIL,
        _ => EXIT_USAGE,
    }
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = (|| -> Result<i32> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required".into()))?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let eff = resolve(parse_config(&text)?, cli.seed, cli.out.clone(), cli.tolerance_scale)?;
        let outcome = execute(&cli.command, &eff)?;
        let json_text = serde_json::to_string_pretty(&outcome.report).unwrap() + "\n";
        match &eff.out {
            Some(dir) => write_outputs(dir, cli.command.name(), &outcome, &json_text)?,
            None => {
                if !outcome.files.is_empty() && matches!(cli.command, Command::MakeField) {
                    return Err(Error::Config("make-field needs --out".into()));
                }
                print!("{json_text}");
            }
        }
        for c in outcome.report.checks.iter().filter(|c| !c.pass) {
            eprintln!("FAIL {}: residual {:e} > tolerance {:e}", c.name, c.residual, c.tolerance);
        }
        Ok(if outcome.report.pass { EXIT_PASS } else { EXIT_FAIL })
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
