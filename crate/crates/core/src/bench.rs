//! The four benchmark problems, their analytic references, and a run harness
//! that steps QLBM and CLBM solvers in lockstep and records relative-L2
//! error series.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classical_lbm::{equilibrium_into, ClassicalSolver, MacroFields, PopulationField, Reference};
use crate::denoise::Variant;
use crate::dump::{DumpKind, FieldDump};
use crate::error::BenchError;
use crate::exec::Exec;
use crate::grid::{BounceBack, Grid, SolidMask};
use crate::lattice::{make_lattice, LatticeId, LatticeModel};
use crate::qlbm_core::{encode, QlbmConfig, QlbmSolver, Renorm};

/// `sum_x |F(x) - F_ref(x)| / sum_x |F_ref(x)|` with node-wise Euclidean
/// norms over `width` components per node.
pub fn rel_l2(f: &[f64], f_ref: &[f64], width: usize) -> Result<f64, BenchError> {
    if f.len() != f_ref.len() || width == 0 || !f.len().is_multiple_of(width) {
        return Err(BenchError::Config("rel_l2: field shapes differ".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in f.chunks_exact(width).zip(f_ref.chunks_exact(width)) {
        num += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        den += b.iter().map(|y| y * y).sum::<f64>().sqrt();
    }
    if den == 0.0 {
        return Err(BenchError::ZeroReference);
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    #[serde(rename = "fourier-ade")]
    FourierAde,
    #[serde(rename = "gaussian-hill")]
    GaussianHill,
    #[serde(rename = "taylor-green")]
    TaylorGreen,
    #[serde(rename = "cylinder")]
    Cylinder,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::FourierAde, Case::GaussianHill, Case::TaylorGreen, Case::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            Case::FourierAde => "fourier-ade",
            Case::GaussianHill => "gaussian-hill",
            Case::TaylorGreen => "taylor-green",
            Case::Cylinder => "cylinder",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(self, Case::TaylorGreen | Case::Cylinder)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "fourier-ade" | "fourier" => Ok(Case::FourierAde),
            "gaussian-hill" | "gaussian" => Ok(Case::GaussianHill),
            "taylor-green" => Ok(Case::TaylorGreen),
            "cylinder" => Ok(Case::Cylinder),
            _ => Err(format!(
                "unknown case `{s}` (expected fourier-ade, gaussian-hill, taylor-green or cylinder)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Qlbm,
    Clbm,
    Both,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qlbm" => Ok(Mode::Qlbm),
            "clbm" => Ok(Mode::Clbm),
            "both" => Ok(Mode::Both),
            _ => Err(format!("unknown mode `{s}` (expected qlbm, clbm or both)")),
        }
    }
}

/// Case-specific physical parameters. Velocities are in lattice units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case")]
pub enum CaseParams {
    /// `C(x, 0) = c0 + c1 cos(k x)`, `k = 2 pi n / L`, advected by
    /// `u0 cos(lambda t)`.
    #[serde(rename = "fourier-ade")]
    FourierAde { u0: f64, lambda: f64, c0: f64, c1: f64, n: u32 },
    #[serde(rename = "gaussian-hill")]
    GaussianHill {
        c0: f64,
        sigma0: f64,
        center: Vec<f64>,
        u_adv: Vec<f64>,
    },
    #[serde(rename = "taylor-green")]
    TaylorGreen {
        u0: f64,
        rho0: f64,
        modes: Vec<u32>,
        reference: Vec<f64>,
    },
    /// Parabolic `u_x(y) = 4 u0 y (Ly - y) / Ly^2` over the whole periodic
    /// domain at `t = 0`, solid disk obstacle.
    #[serde(rename = "cylinder")]
    Cylinder {
        u0: f64,
        rho0: f64,
        center: Vec<f64>,
        radius: f64,
        reference: Vec<f64>,
        bounce_back: BounceBack,
        reimpose_inlet: bool,
    },
}

impl CaseParams {
    pub fn case(&self) -> Case {
        match self {
            CaseParams::FourierAde { .. } => Case::FourierAde,
            CaseParams::GaussianHill { .. } => Case::GaussianHill,
            CaseParams::TaylorGreen { .. } => Case::TaylorGreen,
            CaseParams::Cylinder { .. } => Case::Cylinder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub params: CaseParams,
    pub lattice: LatticeId,
    pub dims: Vec<usize>,
    pub steps: usize,
    pub mode: Mode,
    /// CLBM relaxation time; the QLBM path is fixed at 1.
    pub tau: f64,
    pub renorm: Renorm,
    pub record_every: usize,
    /// 0 disables field dumps.
    pub dump_every: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Reserved; every case is deterministic.
    pub seed: u64,
}

impl ExperimentConfig {
    /// Published parameters of each case.
    pub fn preset(case: Case) -> Self {
        let cs = (1.0f64 / 3.0).sqrt();
        let u0 = 0.1 * cs;
        let (params, lattice, dims) = match case {
            Case::FourierAde => (
                CaseParams::FourierAde {
                    u0,
                    lambda: 1e-3,
                    c0: 1.0,
                    c1: 0.5,
                    n: 1,
                },
                LatticeId::D1Q3,
                vec![256],
            ),
            Case::GaussianHill => (
                CaseParams::GaussianHill {
                    c0: 1.0,
                    sigma0: 20.0,
                    center: vec![128.0, 128.0],
                    u_adv: vec![0.3 * cs, 0.2 * cs],
                },
                LatticeId::D2Q9,
                vec![256, 256],
            ),
            Case::TaylorGreen => (
                CaseParams::TaylorGreen {
                    u0,
                    rho0: 1.0,
                    modes: vec![1, 1],
                    reference: vec![0.0, 0.0],
                },
                LatticeId::D2Q9,
                vec![256, 256],
            ),
            Case::Cylinder => (
                CaseParams::Cylinder {
                    u0,
                    rho0: 1.0,
                    center: vec![64.0, 64.0],
                    radius: 16.0,
                    reference: vec![u0 / 3.0, 0.0],
                    bounce_back: BounceBack::HalfWay,
                    reimpose_inlet: false,
                },
                LatticeId::D2Q9,
                vec![512, 128],
            ),
        };
        Self {
            params,
            lattice,
            dims,
            steps: 10_000,
            mode: Mode::Both,
            tau: 1.0,
            renorm: Renorm::PerNode,
            record_every: if case == Case::FourierAde { 1 } else { 100 },
            dump_every: 500,
            output: None,
            seed: 0,
        }
    }

    pub fn case(&self) -> Case {
        self.params.case()
    }

    /// Preset for `case` overlaid with the keys of a TOML document. A `case`
    /// key in the document, if present, must agree with `case`.
    pub fn from_toml(case: Option<Case>, text: &str) -> Result<Self, BenchError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        let file_case = match table.get("case") {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| BenchError::Config("`case` must be a string".into()))?
                    .parse::<Case>()
                    .map_err(BenchError::Config)?,
            ),
            None => None,
        };
        let case = match (case, file_case) {
            (Some(a), Some(b)) if a != b => {
                return Err(BenchError::Config(format!("case `{a}` conflicts with config file case `{b}`")))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(BenchError::Config("no case given".into())),
        };
        let preset = Self::preset(case);
        let mut merged = match toml::Value::try_from(&preset) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("config serializes to a table"),
        };
        for (k, v) in table {
            if k == "case" {
                continue;
            }
            if !merged.contains_key(&k) && k != "output" {
                return Err(BenchError::Config(format!("unknown key `{k}` for case `{case}`")));
            }
            merged.insert(k, v);
        }
        merged.insert("case".into(), toml::Value::String(case.name().into()));
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        let lat = make_lattice(self.lattice);
        if self.dims.len() != lat.dim || self.dims.contains(&0) {
            return bad(format!("dims {:?} do not fit lattice {}", self.dims, lat.name()));
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be positive".into());
        }
        if !(self.tau >= 0.5) {
            return bad(format!("tau = {} must be at least 0.5", self.tau));
        }
        if self.mode != Mode::Clbm && self.tau != 1.0 {
            return bad("the QLBM path requires tau = 1".into());
        }
        let want_dim = |v: &[f64], what: &str| -> Result<(), BenchError> {
            if v.len() != lat.dim || v.iter().any(|x| !x.is_finite()) {
                return Err(BenchError::Config(format!("{what} must have {} finite components", lat.dim)));
            }
            Ok(())
        };
        match &self.params {
            CaseParams::FourierAde { u0, lambda, c0, c1, n } => {
                if lat.dim != 1 {
                    return bad("fourier-ade needs a 1-D lattice".into());
                }
                if !(u0.is_finite() && lambda.is_finite() && *c0 > 0.0 && c1.abs() < *c0 && *n > 0) {
                    return bad("fourier-ade needs finite u0, lambda, c0 > |c1| and n > 0".into());
                }
            }
            CaseParams::GaussianHill { c0, sigma0, center, u_adv } => {
                if lat.dim != 2 {
                    return bad("gaussian-hill needs a 2-D lattice".into());
                }
                want_dim(center, "center")?;
                want_dim(u_adv, "u_adv")?;
                if !(*c0 > 0.0 && *sigma0 > 0.0) {
                    return bad("gaussian-hill needs c0 > 0 and sigma0 > 0".into());
                }
            }
            CaseParams::TaylorGreen { u0, rho0, modes, reference } => {
                if lat.dim != 2 {
                    return bad("taylor-green needs a 2-D lattice".into());
                }
                want_dim(reference, "reference")?;
                if modes.len() != 2 || modes.contains(&0) || !(*rho0 > 0.0) || !u0.is_finite() {
                    return bad("taylor-green needs two nonzero modes, rho0 > 0 and finite u0".into());
                }
            }
            CaseParams::Cylinder {
                u0,
                rho0,
                center,
                radius,
                reference,
                ..
            } => {
                if lat.dim != 2 {
                    return bad("cylinder needs a 2-D lattice".into());
                }
                want_dim(center, "center")?;
                want_dim(reference, "reference")?;
                if !(*rho0 > 0.0 && *radius > 0.0 && u0.is_finite()) {
                    return bad("cylinder needs rho0 > 0, radius > 0 and finite u0".into());
                }
                let (lx, ly) = (self.dims[0] as f64, self.dims[1] as f64);
                if center[0] - radius < 0.0 || center[0] + radius > lx || center[1] - radius < 0.0 || center[1] + radius > ly {
                    return bad("cylinder obstacle must lie inside the domain".into());
                }
            }
        }
        Ok(())
    }

    fn grid(&self) -> Grid {
        Grid::new(&self.dims).expect("validated dims")
    }

    /// Diffusivity / kinematic viscosity `cs^2 (tau - 1/2)`.
    pub fn transport_coefficient(&self) -> f64 {
        make_lattice(self.lattice).cs2() * (self.tau - 0.5)
    }

    /// `|u_adv| sigma0 / kappa` for the Gaussian hill.
    pub fn peclet(&self) -> Option<f64> {
        match &self.params {
            CaseParams::GaussianHill { sigma0, u_adv, .. } => {
                let speed = u_adv.iter().map(|x| x * x).sum::<f64>().sqrt();
                Some(speed * sigma0 / self.transport_coefficient())
            }
            _ => None,
        }
    }

    /// Decay time `1 / (nu |k|^2)` of the Taylor-Green vortex.
    pub fn decay_time(&self) -> Option<f64> {
        match &self.params {
            CaseParams::TaylorGreen { modes, .. } => {
                let (kx, ky) = self.wave_vector(modes);
                Some(1.0 / (self.transport_coefficient() * (kx * kx + ky * ky)))
            }
            _ => None,
        }
    }

    fn wave_vector(&self, modes: &[u32]) -> (f64, f64) {
        (
            2.0 * PI * modes[0] as f64 / self.dims[0] as f64,
            2.0 * PI * modes[1] as f64 / self.dims[1] as f64,
        )
    }

    fn mask(&self) -> Option<SolidMask> {
        match &self.params {
            CaseParams::Cylinder { center, radius, .. } => {
                Some(SolidMask::disk(self.grid(), [center[0], center[1]], *radius).expect("validated obstacle"))
            }
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Analytic references

/// `C0 + C1 exp(-kappa k^2 t) cos(k (x - a(t)))`, `a(t) = (u0/lambda) sin(lambda t)`.
pub fn analytic_fourier_ade(l: usize, u0: f64, lambda: f64, c0: f64, c1: f64, n: u32, kappa: f64, t: f64) -> Vec<f64> {
    let k = 2.0 * PI * n as f64 / l as f64;
    let a = if lambda == 0.0 { u0 * t } else { u0 / lambda * (lambda * t).sin() };
    let amp = c1 * (-kappa * k * k * t).exp();
    (0..l).map(|x| c0 + amp * (k * (x as f64 - a)).cos()).collect()
}

/// Periodic image sum `sum_i exp(-(x - x0 + i L)^2 / (2 s2))` for `i` in
/// `-2..=2`, per grid coordinate.
fn periodic_gaussian_1d(l: usize, x0: f64, s2: f64) -> Vec<f64> {
    let lf = l as f64;
    (0..l)
        .map(|x| {
            let base = (x as f64 - x0).rem_euclid(lf);
            let base = if base >= lf / 2.0 { base - lf } else { base };
            (-2..=2)
                .map(|i| {
                    let d = base + i as f64 * lf;
                    (-d * d / (2.0 * s2)).exp()
                })
                .sum()
        })
        .collect()
}

/// Advected, diffusing Gaussian hill on a periodic `lx x ly` grid (images
/// within two periods summed).
pub fn analytic_gaussian_hill(
    grid: &Grid,
    c0: f64,
    sigma0: f64,
    center: &[f64],
    u_adv: &[f64],
    kappa: f64,
    t: f64,
) -> Vec<f64> {
    let s2 = sigma0 * sigma0 + 2.0 * kappa * t;
    let peak = c0 * sigma0 * sigma0 / s2;
    let gx = periodic_gaussian_1d(grid.lx(), center[0] + u_adv[0] * t, s2);
    let gy = periodic_gaussian_1d(grid.ly(), center[1] + u_adv[1] * t, s2);
    let mut out = Vec::with_capacity(grid.nodes());
    for y in 0..grid.ly() {
        for x in 0..grid.lx() {
            out.push(peak * gx[x] * gy[y]);
        }
    }
    out
}

/// Free-space peak `C0 sigma0^2 / (sigma0^2 + 2 kappa t)`.
pub fn gaussian_peak(c0: f64, sigma0: f64, kappa: f64, t: f64) -> f64 {
    c0 * sigma0 * sigma0 / (sigma0 * sigma0 + 2.0 * kappa * t)
}

/// Taylor-Green velocity and density (`rho = p / cs^2`) at time `t`.
#[allow(clippy::too_many_arguments)]
pub fn analytic_taylor_green(grid: &Grid, u0: f64, rho0: f64, modes: [u32; 2], nu: f64, cs2: f64, t: f64) -> MacroFields {
    let kx = 2.0 * PI * modes[0] as f64 / grid.lx() as f64;
    let ky = 2.0 * PI * modes[1] as f64 / grid.ly() as f64;
    let td = 1.0 / (nu * (kx * kx + ky * ky));
    let decay = (-t / td).exp();
    let (ax, ay) = ((ky / kx).sqrt(), (kx / ky).sqrt());
    let mut rho = Vec::with_capacity(grid.nodes());
    let mut u = Vec::with_capacity(2 * grid.nodes());
    for y in 0..grid.ly() {
        for x in 0..grid.lx() {
            let (xf, yf) = (x as f64, y as f64);
            u.push(-u0 * decay * ax * (kx * xf).cos() * (ky * yf).sin());
            u.push(u0 * decay * ay * (kx * xf).sin() * (ky * yf).cos());
            let p = rho0 * cs2
                - rho0 * u0 * u0 / 4.0 * decay * decay * (ky / kx * (2.0 * kx * xf).cos() + kx / ky * (2.0 * ky * yf).cos());
            rho.push(p / cs2);
        }
    }
    MacroFields {
        grid: grid.clone(),
        rho,
        u,
    }
}

/// `4 u0 y (Ly - y) / Ly^2`.
pub fn parabolic_profile(u0: f64, ly: usize, y: usize) -> f64 {
    let (y, ly) = (y as f64, ly as f64);
    4.0 * u0 * y * (ly - y) / (ly * ly)
}

/// Initial macroscopic state of a case.
pub fn initial_fields(cfg: &ExperimentConfig) -> MacroFields {
    let grid = cfg.grid();
    let kappa = cfg.transport_coefficient();
    match &cfg.params {
        CaseParams::FourierAde { u0, lambda, c0, c1, n } => MacroFields {
            rho: analytic_fourier_ade(grid.lx(), *u0, *lambda, *c0, *c1, *n, kappa, 0.0),
            u: vec![*u0; grid.nodes()],
            grid,
        },
        CaseParams::GaussianHill { c0, sigma0, center, u_adv } => {
            let rho = analytic_gaussian_hill(&grid, *c0, *sigma0, center, u_adv, kappa, 0.0);
            let u = u_adv.iter().copied().cycle().take(2 * grid.nodes()).collect();
            MacroFields { grid, rho, u }
        }
        CaseParams::TaylorGreen { u0, rho0, modes, .. } => {
            let lat = make_lattice(cfg.lattice);
            analytic_taylor_green(&grid, *u0, *rho0, [modes[0], modes[1]], kappa, lat.cs2(), 0.0)
        }
        CaseParams::Cylinder { u0, rho0, .. } => {
            let mut u = Vec::with_capacity(2 * grid.nodes());
            for y in 0..grid.ly() {
                let ux = parabolic_profile(*u0, grid.ly(), y);
                for _ in 0..grid.lx() {
                    u.push(ux);
                    u.push(0.0);
                }
            }
            MacroFields {
                rho: vec![*rho0; grid.nodes()],
                u,
                grid,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Series and outcomes

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub step: usize,
    pub rel_l2_density: f64,
    /// NaN for advection-diffusion cases.
    pub rel_l2_velocity: f64,
    /// Largest concentration (advection-diffusion) or speed (flow).
    pub peak: f64,
    pub mass: f64,
    /// Product of per-step success probabilities (1 for CLBM).
    pub success_weight: f64,
}

pub const CSV_HEADER: &str = "step,rel_l2_density,rel_l2_velocity,peak,mass,success_weight";

#[derive(Debug, Clone, Serialize)]
pub struct ErrorSeries {
    pub label: String,
    pub records: Vec<ErrorRecord>,
    pub initial_mass: f64,
    pub diverged_at: Option<usize>,
}

impl ErrorSeries {
    fn new(label: String, initial_mass: f64) -> Self {
        Self {
            label,
            records: Vec::new(),
            initial_mass,
            diverged_at: None,
        }
    }

    pub fn at_step(&self, step: usize) -> Option<&ErrorRecord> {
        self.records.iter().find(|r| r.step == step)
    }

    pub fn last(&self) -> Option<&ErrorRecord> {
        self.records.last()
    }

    /// Largest `|m(t) - m(0)| / m(0)` over the recorded steps.
    pub fn max_mass_drift(&self) -> f64 {
        self.records
            .iter()
            .map(|r| (r.mass - self.initial_mass).abs() / self.initial_mass)
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.step, r.rel_l2_density, r.rel_l2_velocity, r.peak, r.mass, r.success_weight
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ForceRecord {
    pub step: usize,
    pub fx: f64,
    pub fy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub case: Case,
    pub series: Vec<ErrorSeries>,
    /// Per-step force on the obstacle from the first QLBM lane (cylinder).
    pub force: Vec<ForceRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peclet: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_time: Option<f64>,
}

impl RunOutcome {
    pub fn lane(&self, label: &str) -> Option<&ErrorSeries> {
        self.series.iter().find(|s| s.label == label)
    }

    pub fn diverged(&self) -> bool {
        self.series.iter().any(|s| s.diverged_at.is_some())
    }
}

/// Least-squares decay rate `-d ln(peak) / dt` over records with `step <= t_max`.
pub fn fit_decay_rate(series: &ErrorSeries, t_max: f64) -> f64 {
    let pts: Vec<(f64, f64)> = series
        .records
        .iter()
        .filter(|r| r.step as f64 <= t_max && r.peak > 0.0)
        .map(|r| (r.step as f64, r.peak.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    -sxy / sxx
}

// ---------------------------------------------------------------------------
// Runner

enum Solver {
    Classical(Box<ClassicalSolver>),
    Quantum(Box<QlbmSolver>),
}

struct Lane {
    solver: Solver,
    series: ErrorSeries,
}

impl Lane {
    fn macros(&self) -> Option<MacroFields> {
        match &self.solver {
            Solver::Classical(s) => s.macros().ok(),
            Solver::Quantum(s) => s.macros().ok(),
        }
    }

    fn mass(&self) -> f64 {
        match &self.solver {
            Solver::Classical(s) => s.mass(),
            Solver::Quantum(s) => s.mass(),
        }
    }

    fn success(&self) -> f64 {
        match &self.solver {
            Solver::Classical(_) => 1.0,
            Solver::Quantum(s) => s.success_product(),
        }
    }

    fn step(&mut self) -> bool {
        match &mut self.solver {
            Solver::Classical(s) => s.step().is_ok(),
            Solver::Quantum(s) => s.step().is_ok(),
        }
    }

    fn alive(&self) -> bool {
        self.series.diverged_at.is_none()
    }
}

/// The reference fields a lane is scored against at one record step.
struct Target {
    rho: Vec<f64>,
    u: Option<Vec<f64>>,
}

struct Runner {
    cfg: ExperimentConfig,
    lat: Arc<LatticeModel>,
    mask: Option<SolidMask>,
    lanes: Vec<Lane>,
    /// Index of the CLBM lane used as the reference (cylinder).
    clbm_ref: Option<usize>,
    force: Vec<ForceRecord>,
}

impl Runner {
    fn new(cfg: &ExperimentConfig, qlbm_refs: &[Vec<f64>], with_clbm: bool, exec: Exec) -> Result<Self, BenchError> {
        cfg.validate()?;
        let lat = Arc::new(make_lattice(cfg.lattice));
        let mask = cfg.mask();
        let init = initial_fields(cfg);
        let f0 = PopulationField::from_macro(lat.clone(), &init, mask.as_ref())?;
        let walls = match &cfg.params {
            CaseParams::Cylinder { bounce_back, .. } => mask.clone().map(|m| (m, *bounce_back)),
            _ => None,
        };
        let mut lanes = Vec::new();
        let mut clbm_ref = None;
        if with_clbm {
            let mut s = ClassicalSolver::new(f0.clone(), cfg.tau, walls.clone(), exec)?;
            match &cfg.params {
                CaseParams::FourierAde { u0, lambda, .. } => {
                    s = s.with_advection(Reference::Oscillating {
                        amplitude: vec![*u0],
                        lambda: *lambda,
                    })
                }
                CaseParams::GaussianHill { u_adv, .. } => s = s.with_advection(Reference::Constant(u_adv.clone())),
                _ => {}
            }
            let m = s.mass();
            clbm_ref = Some(lanes.len());
            lanes.push(Lane {
                solver: Solver::Classical(Box::new(s)),
                series: ErrorSeries::new("clbm".into(), m),
            });
        }
        for (k, r) in qlbm_refs.iter().enumerate() {
            let (variant, reference) = match &cfg.params {
                CaseParams::FourierAde { u0, lambda, .. } => (
                    Variant::Ade,
                    Reference::Oscillating {
                        amplitude: vec![*u0],
                        lambda: *lambda,
                    },
                ),
                CaseParams::GaussianHill { u_adv, .. } => (Variant::Ade, Reference::Constant(u_adv.clone())),
                _ => (Variant::Hydro, Reference::Constant(r.clone())),
            };
            let qcfg = QlbmConfig {
                variant,
                reference,
                renorm: cfg.renorm,
                walls: walls.clone(),
                exec,
            };
            let s = QlbmSolver::new(encode(&f0)?, qcfg)?;
            let m = s.mass();
            let label = if qlbm_refs.len() == 1 { "qlbm".to_string() } else { format!("qlbm_{k}") };
            lanes.push(Lane {
                solver: Solver::Quantum(Box::new(s)),
                series: ErrorSeries::new(label, m),
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            lat,
            mask,
            lanes,
            clbm_ref,
            force: Vec::new(),
        })
    }

    fn analytic(&self, t: usize) -> Option<Target> {
        let grid = self.cfg.grid();
        let kappa = self.cfg.transport_coefficient();
        let t = t as f64;
        match &self.cfg.params {
            CaseParams::FourierAde { u0, lambda, c0, c1, n } => Some(Target {
                rho: analytic_fourier_ade(grid.lx(), *u0, *lambda, *c0, *c1, *n, kappa, t),
                u: None,
            }),
            CaseParams::GaussianHill { c0, sigma0, center, u_adv } => Some(Target {
                rho: analytic_gaussian_hill(&grid, *c0, *sigma0, center, u_adv, kappa, t),
                u: None,
            }),
            CaseParams::TaylorGreen { u0, rho0, modes, .. } => {
                let m = analytic_taylor_green(&grid, *u0, *rho0, [modes[0], modes[1]], kappa, self.lat.cs2(), t);
                Some(Target { rho: m.rho, u: Some(m.u) })
            }
            CaseParams::Cylinder { .. } => None,
        }
    }

    fn record(&mut self, step: usize) -> Result<(), BenchError> {
        let d = self.lat.dim;
        let flow = self.cfg.case().is_flow();
        let target = match self.analytic(step) {
            Some(t) => Some(t),
            None => self
                .clbm_ref
                .filter(|&i| self.lanes[i].alive())
                .and_then(|i| self.lanes[i].macros())
                .map(|m| Target { rho: m.rho, u: Some(m.u) }),
        };
        let mut dumps = Vec::new();
        for lane in self.lanes.iter_mut() {
            if !lane.alive() {
                continue;
            }
            let mass = lane.mass();
            let Some(m) = lane.macros() else {
                lane.series.diverged_at = Some(step);
                continue;
            };
            let peak = if flow {
                (0..m.grid.nodes())
                    .map(|n| m.velocity(n).iter().map(|x| x * x).sum::<f64>().sqrt())
                    .fold(0.0, f64::max)
            } else {
                m.rho.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let (e_rho, e_u) = match &target {
                Some(t) => (
                    rel_l2(&m.rho, &t.rho, 1)?,
                    match &t.u {
                        Some(u) => rel_l2(&m.u, u, d).unwrap_or(f64::NAN),
                        None => f64::NAN,
                    },
                ),
                None => (f64::NAN, f64::NAN),
            };
            let rec = ErrorRecord {
                step,
                rel_l2_density: e_rho,
                rel_l2_velocity: e_u,
                peak,
                mass,
                success_weight: lane.success(),
            };
            if !(mass.is_finite() && peak.is_finite()) || (target.is_some() && !e_rho.is_finite()) {
                lane.series.diverged_at = Some(step);
            }
            lane.series.records.push(rec);
            if self.cfg.dump_every > 0 && step.is_multiple_of(self.cfg.dump_every) {
                dumps.push((lane.series.label.clone(), m));
            }
        }
        if let Some(dir) = &self.cfg.output {
            for (label, m) in dumps {
                write_macro_dump(&dir.join(format!("{label}_{step:06}.qlbm1")), &m)?;
            }
        }
        Ok(())
    }

    fn reimpose_inlet(&mut self) {
        let CaseParams::Cylinder { u0, reimpose_inlet: true, .. } = self.cfg.params else {
            return;
        };
        let grid = self.cfg.grid();
        let lat = self.lat.clone();
        let q = lat.q;
        let mut eq = vec![0.0; q];
        for lane in self.lanes.iter_mut().filter(|l| l.series.diverged_at.is_none()) {
            let (data, sqrt) = match &mut lane.solver {
                Solver::Classical(s) => (s.field_mut().data_mut(), false),
                Solver::Quantum(s) => (s.field_mut().data_mut(), true),
            };
            for y in 0..grid.ly() {
                let node = grid.index(0, y);
                if self.mask.as_ref().is_some_and(|m| m.is_solid(node)) {
                    continue;
                }
                let cell = &mut data[node * q..(node + 1) * q];
                let rho: f64 = if sqrt { cell.iter().map(|g| g * g).sum() } else { cell.iter().sum() };
                equilibrium_into(&lat, rho, &[parabolic_profile(u0, grid.ly(), y), 0.0], &mut eq);
                for (c, e) in cell.iter_mut().zip(&eq) {
                    *c = if sqrt { e.max(0.0).sqrt() } else { *e };
                }
            }
        }
    }

    fn run(mut self) -> Result<RunOutcome, BenchError> {
        if let Some(dir) = &self.cfg.output {
            fs::create_dir_all(dir)?;
        }
        self.record(0)?;
        for step in 1..=self.cfg.steps {
            for lane in self.lanes.iter_mut() {
                if lane.alive() && !lane.step() {
                    lane.series.diverged_at = Some(step);
                }
            }
            if let Some(f) = self.lanes.iter().find_map(|l| match &l.solver {
                Solver::Quantum(s) if l.alive() => s.last_force().map(|f| f.to_vec()),
                _ => None,
            }) {
                self.force.push(ForceRecord {
                    step: step - 1,
                    fx: f[0],
                    fy: f.get(1).copied().unwrap_or(0.0),
                });
            }
            self.reimpose_inlet();
            if step % self.cfg.record_every == 0 || step == self.cfg.steps {
                self.record(step)?;
            }
            if self.lanes.iter().all(|l| !l.alive()) {
                break;
            }
        }
        let outcome = RunOutcome {
            case: self.cfg.case(),
            series: self.lanes.into_iter().map(|l| l.series).collect(),
            force: self.force,
            peclet: self.cfg.peclet(),
            decay_time: self.cfg.decay_time(),
        };
        if let Some(dir) = &self.cfg.output {
            write_outputs(dir, &self.cfg, &outcome)?;
        }
        Ok(outcome)
    }
}

fn write_macro_dump(path: &Path, m: &MacroFields) -> Result<(), BenchError> {
    let d = m.dim();
    let mut data = Vec::with_capacity(m.rho.len() * (1 + d));
    for n in 0..m.rho.len() {
        data.push(m.rho[n]);
        data.extend_from_slice(m.velocity(n));
    }
    let dump = FieldDump {
        kind: DumpKind::Macro,
        d: d as u32,
        q: (1 + d) as u32,
        dims: m.grid.dims().iter().map(|&x| x as u32).collect(),
        data,
    };
    dump.write_to(BufWriter::new(fs::File::create(path)?))
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outcome: &RunOutcome) -> Result<(), BenchError> {
    for s in &outcome.series {
        s.write_csv(BufWriter::new(fs::File::create(dir.join(format!("{}.csv", s.label)))?))?;
    }
    if !outcome.force.is_empty() {
        let mut w = BufWriter::new(fs::File::create(dir.join("force.csv"))?);
        writeln!(w, "step,fx,fy")?;
        for r in &outcome.force {
            writeln!(w, "{},{:.16e},{:.16e}", r.step, r.fx, r.fy)?;
        }
    }
    let summary = serde_json::json!({
        "config": cfg,
        "peclet": outcome.peclet,
        "decay_time": outcome.decay_time,
        "lanes": outcome.series.iter().map(|s| serde_json::json!({
            "label": s.label,
            "diverged_at": s.diverged_at,
            "max_mass_drift": s.max_mass_drift(),
            "final": s.last(),
        })).collect::<Vec<_>>(),
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json"))?;
    Ok(())
}

/// Runs the configured solvers. Divergence is recorded in the series, not
/// returned as an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, BenchError> {
    run_experiment_with(cfg, Exec::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Exec) -> Result<RunOutcome, BenchError> {
    let qlbm_ref = match &cfg.params {
        CaseParams::TaylorGreen { reference, .. } | CaseParams::Cylinder { reference, .. } => reference.clone(),
        _ => vec![],
    };
    let with_qlbm = cfg.mode != Mode::Clbm;
    // the cylinder has no analytic solution, so QLBM is always scored against CLBM
    let with_clbm = cfg.mode != Mode::Qlbm || cfg.case() == Case::Cylinder;
    let refs = if with_qlbm { vec![qlbm_ref] } else { vec![] };
    Runner::new(cfg, &refs, with_clbm, exec)?.run()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub reference: Vec<f64>,
    pub final_rel_l2_velocity: f64,
    pub final_rel_l2_density: f64,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub outcome: RunOutcome,
}

/// Cylinder runs with several reference velocities, all scored against one
/// CLBM run stepped in lockstep.
pub fn compare_reference_velocities(cfg: &ExperimentConfig, refs: &[Vec<f64>]) -> Result<SweepOutcome, BenchError> {
    if cfg.case() != Case::Cylinder {
        return Err(BenchError::Config("reference sweeps need the cylinder case".into()));
    }
    if refs.is_empty() {
        return Err(BenchError::Config("no reference velocities given".into()));
    }
    for r in refs {
        if r.len() != 2 || r.iter().any(|x| !x.is_finite()) {
            return Err(BenchError::Config(format!("reference velocity {r:?} must have 2 finite components")));
        }
    }
    let mut cfg = cfg.clone();
    let out_dir = cfg.output.take();
    let runner = Runner::new(&cfg, refs, true, Exec::default())?;
    let outcome = runner.run()?;
    let rows: Vec<SweepRow> = refs
        .iter()
        .zip(outcome.series.iter().skip(1))
        .map(|(r, s)| {
            let last = s.last();
            SweepRow {
                reference: r.clone(),
                final_rel_l2_velocity: if s.diverged_at.is_some() {
                    f64::INFINITY
                } else {
                    last.map_or(f64::NAN, |x| x.rel_l2_velocity)
                },
                final_rel_l2_density: if s.diverged_at.is_some() {
                    f64::INFINITY
                } else {
                    last.map_or(f64::NAN, |x| x.rel_l2_density)
                },
                diverged_at: s.diverged_at,
            }
        })
        .collect();
    if let Some(dir) = out_dir {
        fs::create_dir_all(&dir)?;
        for s in &outcome.series {
            s.write_csv(BufWriter::new(fs::File::create(dir.join(format!("{}.csv", s.label)))?))?;
        }
        let mut w = BufWriter::new(fs::File::create(dir.join("sweep.csv"))?);
        writeln!(w, "ux,uy,final_rel_l2_velocity,final_rel_l2_density,diverged_at")?;
        for r in &rows {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.reference[0],
                r.reference[1],
                r.final_rel_l2_velocity,
                r.final_rel_l2_density,
                r.diverged_at.map_or(String::new(), |s| s.to_string())
            )?;
        }
    }
    Ok(SweepOutcome { rows, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_l2_examples() {
        let r = vec![1.0, 2.0, 3.0];
        assert_eq!(rel_l2(&r, &r, 1).unwrap(), 0.0);
        let twice: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        assert!((rel_l2(&twice, &r, 1).unwrap() - 1.0).abs() < 1e-15);
        let a = vec![1.01; 10];
        let b = vec![1.0; 10];
        assert!((rel_l2(&a, &b, 1).unwrap() - 0.01).abs() < 1e-14);
        assert!(matches!(rel_l2(&b, &[0.0; 10], 1), Err(BenchError::ZeroReference)));
        assert!((rel_l2(&[3.0, 4.0], &[0.0, 5.0], 2).unwrap() - 3.0f64.hypot(1.0) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn fourier_reference_examples() {
        let c = analytic_fourier_ade(64, 0.05, 1e-3, 1.0, 0.5, 1, 1.0 / 6.0, 0.0);
        for (x, v) in c.iter().enumerate() {
            assert!((v - (1.0 + 0.5 * (2.0 * PI * x as f64 / 64.0).cos())).abs() < 1e-15);
        }
        let late = analytic_fourier_ade(64, 0.05, 1e-3, 1.0, 0.5, 1, 1.0 / 6.0, 1e6);
        assert!(late.iter().all(|v| (v - 1.0).abs() < 1e-12));
        for t in [0.0, 13.0, 4000.0] {
            let c = analytic_fourier_ade(64, 0.05, 1e-3, 1.0, 0.5, 1, 1.0 / 6.0, t);
            assert!((c.iter().sum::<f64>() / 64.0 - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_reference_examples() {
        let grid = Grid::plane(128, 128);
        let kappa = 1.0 / 6.0;
        let c = analytic_gaussian_hill(&grid, 1.0, 5.0, &[64.0, 64.0], &[0.0, 0.0], kappa, 0.0);
        assert!((c[grid.index(64, 64)] - 1.0).abs() < 1e-15);
        let t = 300.0;
        let c = analytic_gaussian_hill(&grid, 1.0, 5.0, &[64.0, 64.0], &[0.1, -0.05], kappa, t);
        let peak = gaussian_peak(1.0, 5.0, kappa, t);
        assert!((c[grid.index(94, 49)] - peak).abs() < 1e-12);
        let argmax = (0..grid.nodes()).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap();
        assert_eq!(grid.coords(argmax), [94, 49]);
        // displacement wraps
        let w = analytic_gaussian_hill(&grid, 1.0, 5.0, &[64.0, 64.0], &[1.0, 0.0], kappa, 128.0);
        let argmax = (0..grid.nodes()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        assert_eq!(grid.coords(argmax), [64, 64]);
    }

    #[test]
    fn taylor_green_reference_examples() {
        let grid = Grid::plane(64, 64);
        let (u0, nu, cs2) = (0.05, 1.0 / 6.0, 1.0 / 3.0);
        let m = analytic_taylor_green(&grid, u0, 1.0, [1, 1], nu, cs2, 0.0);
        let n = grid.index(16, 0);
        assert!((m.velocity(n)[1] - u0).abs() < 1e-15);
        assert!((m.rho.iter().sum::<f64>() / grid.nodes() as f64 - 1.0).abs() < 1e-14);
        let k = 2.0 * PI / 64.0;
        let td = 1.0 / (nu * 2.0 * k * k);
        let later = analytic_taylor_green(&grid, u0, 1.0, [1, 1], nu, cs2, 0.5 * td);
        assert!((later.max_speed() / m.max_speed() - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for case in Case::ALL {
            let cfg = ExperimentConfig::preset(case);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(None, &cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
        }
        let cfg = ExperimentConfig::from_toml(Some(Case::GaussianHill), "sigma0 = 5.0\nsteps = 10\n").unwrap();
        assert!(matches!(cfg.params, CaseParams::GaussianHill { sigma0, .. } if sigma0 == 5.0));
        assert_eq!(cfg.steps, 10);
        let pe = cfg.peclet().unwrap();
        assert!((pe / 5.0 - 1.25).abs() < 0.01, "{pe}");
        assert!(ExperimentConfig::from_toml(Some(Case::Cylinder), "sigma0 = 5.0").is_err());
        assert!(ExperimentConfig::from_toml(Some(Case::Cylinder), "case = \"taylor-green\"").is_err());
        assert!(ExperimentConfig::from_toml(Some(Case::Cylinder), "radius = 100.0").is_err());
        assert!(ExperimentConfig::from_toml(Some(Case::TaylorGreen), "tau = 0.8").is_err());
        assert!(ExperimentConfig::from_toml(Some(Case::TaylorGreen), "tau = 0.8\nmode = \"clbm\"").is_ok());
        assert!(ExperimentConfig::from_toml(None, "steps = 3").is_err());
    }

    #[test]
    fn short_runs_conserve_mass() {
        for case in Case::ALL {
            let mut cfg = ExperimentConfig::preset(case);
            cfg.dims = if case == Case::FourierAde { vec![64] } else { vec![32, 32] };
            match &mut cfg.params {
                CaseParams::GaussianHill { center, sigma0, .. } => {
                    *center = vec![16.0, 16.0];
                    *sigma0 = 4.0;
                }
                CaseParams::Cylinder { center, radius, .. } => {
                    *center = vec![10.0, 16.0];
                    *radius = 4.0;
                }
                _ => {}
            }
            cfg.steps = 40;
            cfg.record_every = 10;
            let out = run_experiment(&cfg).unwrap();
            assert_eq!(out.series.len(), 2, "{case}");
            for s in &out.series {
                assert!(s.diverged_at.is_none());
                assert_eq!(s.records.len(), 5);
                assert!(s.max_mass_drift() < 1e-12, "{case} {} {}", s.label, s.max_mass_drift());
            }
            if case == Case::Cylinder {
                assert_eq!(out.force.len(), 40);
                assert_eq!(out.lane("clbm").unwrap().last().unwrap().rel_l2_velocity, 0.0);
            }
        }
    }

    #[test]
    fn csv_format() {
        let s = ErrorSeries {
            label: "x".into(),
            records: vec![ErrorRecord {
                step: 3,
                rel_l2_density: 0.1,
                rel_l2_velocity: f64::NAN,
                peak: 1.0,
                mass: 2.0,
                success_weight: 1.0,
            }],
            initial_mass: 2.0,
            diverged_at: None,
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("3,1.0000000000000001e-1,NaN,"), "{row}");
        let v: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.1);
    }
}
