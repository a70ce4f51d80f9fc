//! BGK lattice Boltzmann reference solver.

use std::sync::Arc;

use crate::error::LbmError;
use crate::exec::{self, Exec};
use crate::grid::{Grid, Propagator};
use crate::lattice::LatticeModel;

pub use crate::grid::{BounceBack, SolidMask};

/// Populations `f_i(x)` stored node-major (`node * q + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationField {
    grid: Grid,
    lattice: Arc<LatticeModel>,
    data: Vec<f64>,
}

impl PopulationField {
    pub fn zeros(grid: Grid, lattice: Arc<LatticeModel>) -> Result<Self, LbmError> {
        grid.check_lattice(&lattice)?;
        let data = vec![0.0; grid.nodes() * lattice.q];
        Ok(Self {
            grid,
            lattice,
            data,
        })
    }

    /// Wraps raw populations; rejects negative or non-finite entries.
    pub fn from_data(grid: Grid, lattice: Arc<LatticeModel>, data: Vec<f64>) -> Result<Self, LbmError> {
        grid.check_lattice(&lattice)?;
        let q = lattice.q;
        if data.len() != grid.nodes() * q {
            return Err(LbmError::GridMismatch(format!(
                "{} values for {} nodes x {} directions",
                data.len(),
                grid.nodes(),
                q
            )));
        }
        if let Some(k) = data.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(LbmError::NegativePopulation {
                node: k / q,
                index: k % q,
                value: data[k],
            });
        }
        Ok(Self {
            grid,
            lattice,
            data,
        })
    }

    /// `f = f^eq(rho(x), u(x))` at every node. Solid nodes (if a mask is
    /// given) are left at zero.
    pub fn from_macro(
        lattice: Arc<LatticeModel>,
        fields: &MacroFields,
        mask: Option<&SolidMask>,
    ) -> Result<Self, LbmError> {
        let mut f = Self::zeros(fields.grid.clone(), lattice)?;
        let q = f.lattice.q;
        let d = f.lattice.dim;
        for node in 0..f.grid.nodes() {
            if mask.is_some_and(|m| m.is_solid(node)) {
                continue;
            }
            let rho = fields.rho[node];
            if !(rho > 0.0) {
                return Err(LbmError::DegenerateDensity { node, rho });
            }
            let eq = equilibrium(rho, &fields.u[node * d..(node + 1) * d], &f.lattice)?;
            f.data[node * q..(node + 1) * q].copy_from_slice(&eq);
        }
        Ok(f)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn lattice(&self) -> &LatticeModel {
        &self.lattice
    }

    pub fn lattice_arc(&self) -> &Arc<LatticeModel> {
        &self.lattice
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn node(&self, node: usize) -> &[f64] {
        let q = self.lattice.q;
        &self.data[node * q..(node + 1) * q]
    }

    pub fn total_mass(&self) -> f64 {
        exec::chunked_sum(Exec::Sequential, self.data.len(), |k| self.data[k])
    }
}

/// Density and velocity per node; velocity stored node-major, `d` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroFields {
    pub grid: Grid,
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
}

impl MacroFields {
    pub fn uniform(grid: Grid, rho: f64, u: &[f64]) -> Self {
        let n = grid.nodes();
        let d = grid.dim();
        assert_eq!(u.len(), d);
        let u = (0..n).flat_map(|_| u.iter().copied()).collect();
        Self {
            grid,
            rho: vec![rho; n],
            u,
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn velocity(&self, node: usize) -> &[f64] {
        let d = self.dim();
        &self.u[node * d..(node + 1) * d]
    }

    pub fn max_speed(&self) -> f64 {
        let d = self.dim();
        self.u
            .chunks(d)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Zeroth and first moments of one node: returns `rho`, writes `u`
/// (left at zero when `rho == 0`).
#[inline]
pub fn node_moments(lat: &LatticeModel, f: &[f64], u: &mut [f64]) -> f64 {
    let d = lat.dim;
    let mut rho = 0.0;
    u.iter_mut().for_each(|x| *x = 0.0);
    for (i, &fi) in f.iter().enumerate() {
        rho += fi;
        let c = lat.velocity(i);
        for k in 0..d {
            u[k] += c[k] as f64 * fi;
        }
    }
    if rho != 0.0 {
        u.iter_mut().for_each(|x| *x /= rho);
    }
    rho
}

pub fn moments(f: &PopulationField) -> Result<MacroFields, LbmError> {
    moments_masked(f, None)
}

/// Like [`moments`], but solid nodes report `rho = 0, u = 0` instead of
/// failing.
pub fn moments_masked(f: &PopulationField, mask: Option<&SolidMask>) -> Result<MacroFields, LbmError> {
    let lat = &*f.lattice;
    let (q, d) = (lat.q, lat.dim);
    let n = f.grid.nodes();
    let mut rho = vec![0.0; n];
    let mut u = vec![0.0; n * d];
    for node in 0..n {
        if mask.is_some_and(|m| m.is_solid(node)) {
            continue;
        }
        let r = node_moments(lat, &f.data[node * q..(node + 1) * q], &mut u[node * d..(node + 1) * d]);
        if !(r > 0.0) {
            return Err(LbmError::DegenerateDensity { node, rho: r });
        }
        rho[node] = r;
    }
    Ok(MacroFields {
        grid: f.grid.clone(),
        rho,
        u,
    })
}

/// Second-order equilibrium without the sign check.
#[inline]
pub fn equilibrium_into(lat: &LatticeModel, rho: f64, u: &[f64], out: &mut [f64]) {
    let cs2 = lat.cs2();
    let uu: f64 = u.iter().map(|x| x * x).sum();
    for (i, o) in out.iter_mut().enumerate() {
        let cu = lat.dot(i, u);
        *o = lat.weight(i) * rho * (1.0 + cu / cs2 + cu * cu / (2.0 * cs2 * cs2) - uu / (2.0 * cs2));
    }
}

pub fn equilibrium(rho: f64, u: &[f64], lat: &LatticeModel) -> Result<Vec<f64>, LbmError> {
    let mut out = vec![0.0; lat.q];
    equilibrium_into(lat, rho, u, &mut out);
    if let Some(index) = out.iter().position(|&v| v < 0.0) {
        return Err(LbmError::MachTooHigh {
            index,
            value: out[index],
            u: u.to_vec(),
        });
    }
    Ok(out)
}

pub(crate) fn check_tau(tau: f64) -> Result<(), LbmError> {
    if !(tau >= 0.5) {
        return Err(LbmError::UnstableRelaxation { tau });
    }
    Ok(())
}

/// A velocity field prescribed from outside the populations: the reference
/// velocity of a denoising projector or the advection velocity of a
/// passive scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Constant(Vec<f64>),
    /// `amplitude * cos(lambda * t)`.
    Oscillating { amplitude: Vec<f64>, lambda: f64 },
    /// Node-major, `d` entries per node.
    PerNode { d: usize, values: Vec<f64> },
}

impl Reference {
    pub fn zero(d: usize) -> Self {
        Reference::Constant(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        match self {
            Reference::Constant(u) => u.len(),
            Reference::Oscillating { amplitude, .. } => amplitude.len(),
            Reference::PerNode { d, .. } => *d,
        }
    }

    /// The field value at time `t` if it is uniform in space.
    pub fn uniform_at(&self, t: f64) -> Option<Vec<f64>> {
        match self {
            Reference::Constant(u) => Some(u.clone()),
            Reference::Oscillating { amplitude, lambda } => {
                Some(amplitude.iter().map(|a| a * (lambda * t).cos()).collect())
            }
            Reference::PerNode { .. } => None,
        }
    }

    pub fn at(&self, node: usize, t: f64) -> Vec<f64> {
        match self {
            Reference::PerNode { d, values } => values[node * d..(node + 1) * d].to_vec(),
            _ => self.uniform_at(t).expect("uniform reference"),
        }
    }
}

/// BGK relaxation toward `f^eq(rho, u_adv)` with a prescribed velocity, as
/// used for advection-diffusion. `u_adv` is uniform (`d` values) or
/// node-major.
pub fn collide_advected_in_place(
    f: &mut PopulationField,
    tau: f64,
    u_adv: &[f64],
    mask: Option<&SolidMask>,
    exec: Exec,
) -> Result<(), LbmError> {
    check_tau(tau)?;
    let lat = f.lattice.clone();
    let (q, d) = (lat.q, lat.dim);
    let per_node = u_adv.len() != d;
    let omega = 1.0 / tau;
    exec::try_for_each_node(exec, &mut f.data, q, |node, fi| {
        if mask.is_some_and(|m| m.is_solid(node)) {
            return Ok(());
        }
        let rho: f64 = fi.iter().sum();
        if !(rho > 0.0) {
            return Err(LbmError::DegenerateDensity { node, rho });
        }
        let u = if per_node { &u_adv[node * d..(node + 1) * d] } else { u_adv };
        let mut eq = [0.0; 9];
        let eq = &mut eq[..q];
        equilibrium_into(&lat, rho, u, eq);
        for (x, e) in fi.iter_mut().zip(eq.iter()) {
            *x = (1.0 - omega) * *x + omega * e;
        }
        Ok(())
    })
}

/// In-place BGK relaxation; solid nodes are skipped.
pub fn collide_in_place(
    f: &mut PopulationField,
    tau: f64,
    mask: Option<&SolidMask>,
    exec: Exec,
) -> Result<(), LbmError> {
    check_tau(tau)?;
    let lat = f.lattice.clone();
    let q = lat.q;
    let omega = 1.0 / tau;
    exec::try_for_each_node(exec, &mut f.data, q, |node, fi| {
        if mask.is_some_and(|m| m.is_solid(node)) {
            return Ok(());
        }
        let mut u = [0.0; 2];
        let u = &mut u[..lat.dim];
        let rho = node_moments(&lat, fi, u);
        if !(rho > 0.0) {
            return Err(LbmError::DegenerateDensity { node, rho });
        }
        let mut eq = [0.0; 9];
        let eq = &mut eq[..q];
        equilibrium_into(&lat, rho, u, eq);
        if omega == 1.0 {
            fi.copy_from_slice(eq);
        } else {
            for (x, e) in fi.iter_mut().zip(eq.iter()) {
                *x = (1.0 - omega) * *x + omega * e;
            }
        }
        Ok(())
    })
}

pub fn bgk_collide(f: &PopulationField, tau: f64) -> Result<PopulationField, LbmError> {
    let mut out = f.clone();
    collide_in_place(&mut out, tau, None, Exec::default())?;
    Ok(out)
}

/// Periodic streaming `f_i(x + c_i) <- f_i(x)`.
pub fn stream(f: &PopulationField) -> PopulationField {
    let prop = Propagator::periodic(&f.grid, &f.lattice);
    let mut out = f.clone();
    prop.apply(Exec::default(), &f.data, &mut out.data);
    out
}

/// Corrects a periodically streamed field for walls.
///
/// `f_pre` is the post-collision field that produced `f_streamed`.
pub fn apply_bounce_back(
    f_pre: &PopulationField,
    f_streamed: &PopulationField,
    mask: &SolidMask,
    scheme: BounceBack,
) -> PopulationField {
    let lat = &*f_pre.lattice;
    let grid = &f_pre.grid;
    let q = lat.q;
    let mut out = f_streamed.clone();
    for node in 0..grid.nodes() {
        for i in 0..q {
            let k = node * q + i;
            let ib = lat.opposite(i);
            match scheme {
                BounceBack::HalfWay => {
                    if mask.is_solid(node) {
                        out.data[k] = 0.0;
                    } else {
                        let from = grid.shifted(node, lat.velocity(ib));
                        if mask.is_solid(from) {
                            out.data[k] = f_pre.data[node * q + ib];
                        }
                    }
                }
                BounceBack::FullWay => {
                    if mask.is_solid(node) {
                        let from = grid.shifted(node, lat.velocity(i));
                        out.data[k] = f_pre.data[from * q + ib];
                    }
                }
            }
        }
    }
    out
}

/// One collide-stream(-bounce-back) step.
pub fn clbm_step(
    f: &PopulationField,
    tau: f64,
    walls: Option<(&SolidMask, BounceBack)>,
) -> Result<PopulationField, LbmError> {
    let mut post = f.clone();
    collide_in_place(&mut post, tau, walls.map(|w| w.0), Exec::default())?;
    let streamed = stream(&post);
    Ok(match walls {
        Some((mask, scheme)) => apply_bounce_back(&post, &streamed, mask, scheme),
        None => streamed,
    })
}

/// Double-buffered stepper with a precomputed streaming table.
#[derive(Debug, Clone)]
pub struct ClassicalSolver {
    field: PopulationField,
    scratch: Vec<f64>,
    tau: f64,
    mask: Option<SolidMask>,
    prop: Propagator,
    exec: Exec,
    advection: Option<Reference>,
    time: usize,
}

impl ClassicalSolver {
    pub fn new(
        mut field: PopulationField,
        tau: f64,
        walls: Option<(SolidMask, BounceBack)>,
        exec: Exec,
    ) -> Result<Self, LbmError> {
        check_tau(tau)?;
        let (prop, mask) = match walls {
            Some((mask, scheme)) => {
                if mask.grid() != field.grid() {
                    return Err(LbmError::GridMismatch("mask and field grids differ".into()));
                }
                if scheme == BounceBack::HalfWay {
                    let q = field.lattice.q;
                    for node in 0..field.grid.nodes() {
                        if mask.is_solid(node) {
                            field.data[node * q..(node + 1) * q].fill(0.0);
                        }
                    }
                }
                (Propagator::with_walls(&field.grid, &field.lattice, &mask, scheme), Some(mask))
            }
            None => (Propagator::periodic(&field.grid, &field.lattice), None),
        };
        let scratch = vec![0.0; field.data.len()];
        Ok(Self {
            field,
            scratch,
            tau,
            mask,
            prop,
            exec,
            advection: None,
            time: 0,
        })
    }

    /// Passive-scalar mode: the equilibrium velocity is prescribed instead
    /// of read from the populations.
    pub fn with_advection(mut self, u_adv: Reference) -> Self {
        self.advection = Some(u_adv);
        self
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn step(&mut self) -> Result<(), LbmError> {
        match &self.advection {
            None => collide_in_place(&mut self.field, self.tau, self.mask.as_ref(), self.exec)?,
            Some(r) => {
                let u = match r {
                    Reference::PerNode { values, .. } => values.clone(),
                    _ => r.uniform_at(self.time as f64).expect("uniform"),
                };
                collide_advected_in_place(&mut self.field, self.tau, &u, self.mask.as_ref(), self.exec)?
            }
        }
        self.prop.apply(self.exec, &self.field.data, &mut self.scratch);
        std::mem::swap(&mut self.field.data, &mut self.scratch);
        self.time += 1;
        Ok(())
    }

    pub fn field(&self) -> &PopulationField {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut PopulationField {
        &mut self.field
    }

    pub fn mask(&self) -> Option<&SolidMask> {
        self.mask.as_ref()
    }

    pub fn macros(&self) -> Result<MacroFields, LbmError> {
        moments_masked(&self.field, self.mask.as_ref())
    }

    pub fn mass(&self) -> f64 {
        exec::chunked_sum(self.exec, self.field.data.len(), |k| self.field.data[k])
    }
}
