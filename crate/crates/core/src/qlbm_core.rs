//! Amplitude-level emulation of the denoising-collision QLBM.
//!
//! Each node stores signed amplitudes `g_i = sqrt(f_i)`; densities are read
//! out quadratically. A step is: project every fluid node with a denoising
//! operator, renormalize, then stream (with bounce-back if walls are present).

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classical_lbm::{node_moments, MacroFields, PopulationField, Reference};
use crate::denoise::{DenoiseOperator, HermiteBasis, OperatorCache, Variant};
use crate::error::{LbmError, QlbmError};
use crate::exec::{self, Exec};
use crate::grid::{BounceBack, Grid, Propagator, SolidMask};
use crate::lattice::LatticeModel;

/// Signed amplitudes per node, node-major (`node * q + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeField {
    grid: Grid,
    lattice: Arc<LatticeModel>,
    data: Vec<f64>,
}

impl AmplitudeField {
    pub fn from_data(grid: Grid, lattice: Arc<LatticeModel>, data: Vec<f64>) -> Result<Self, QlbmError> {
        grid.check_lattice(&lattice)?;
        if data.len() != grid.nodes() * lattice.q {
            return Err(QlbmError::FieldMismatch(format!(
                "{} amplitudes for {} nodes x {} directions",
                data.len(),
                grid.nodes(),
                lattice.q
            )));
        }
        Ok(Self { grid, lattice, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn lattice(&self) -> &LatticeModel {
        &self.lattice
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn node(&self, node: usize) -> &[f64] {
        let q = self.lattice.q;
        &self.data[node * q..(node + 1) * q]
    }

    /// `sum_x |g(x)|^2`, the total mass.
    pub fn norm_squared(&self) -> f64 {
        exec::chunked_sum(Exec::Sequential, self.data.len(), |k| self.data[k] * self.data[k])
    }

    /// Populations `f_i = g_i^2`.
    pub fn to_populations(&self) -> PopulationField {
        let data = self.data.iter().map(|g| g * g).collect();
        PopulationField::from_data(self.grid.clone(), self.lattice.clone(), data).expect("squares are nonnegative")
    }
}

/// `g_i = sqrt(f_i)`.
pub fn encode(f: &PopulationField) -> Result<AmplitudeField, QlbmError> {
    let q = f.lattice().q;
    if let Some(k) = f.data().iter().position(|v| !(*v >= 0.0)) {
        return Err(LbmError::NegativePopulation {
            node: k / q,
            index: k % q,
            value: f.data()[k],
        }
        .into());
    }
    let data = f.data().iter().map(|v| v.sqrt()).collect();
    AmplitudeField::from_data(f.grid().clone(), f.lattice_arc().clone(), data)
}

pub fn decode_macro(g: &AmplitudeField) -> Result<MacroFields, LbmError> {
    decode_macro_masked(g, None)
}

/// Solid nodes report `rho = 0, u = 0`.
pub fn decode_macro_masked(g: &AmplitudeField, mask: Option<&SolidMask>) -> Result<MacroFields, LbmError> {
    let lat = &*g.lattice;
    let (q, d) = (lat.q, lat.dim);
    let n = g.grid.nodes();
    let mut rho = vec![0.0; n];
    let mut u = vec![0.0; n * d];
    let mut f = [0.0; 9];
    for node in 0..n {
        if mask.is_some_and(|m| m.is_solid(node)) {
            continue;
        }
        for (fi, gi) in f.iter_mut().zip(&g.data[node * q..(node + 1) * q]) {
            *fi = gi * gi;
        }
        let r = node_moments(lat, &f[..q], &mut u[node * d..(node + 1) * d]);
        if !(r > 0.0) {
            return Err(LbmError::DegenerateDensity { node, rho: r });
        }
        rho[node] = r;
    }
    Ok(MacroFields {
        grid: g.grid.clone(),
        rho,
        u,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Renorm {
    /// Rescale each node back to its pre-collision density.
    #[default]
    #[serde(rename = "per-node")]
    PerNode,
    /// One factor for the whole field, as post-selection would give.
    #[serde(rename = "global")]
    Global,
}

impl FromStr for Renorm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "per-node" | "per_node" | "pernode" => Ok(Renorm::PerNode),
            "global" => Ok(Renorm::Global),
            _ => Err(format!("unknown renormalization `{s}` (expected per-node or global)")),
        }
    }
}

/// Supplies the projector for each node.
pub trait Projectors: Sync {
    fn at(&self, node: usize) -> &DenoiseOperator;
}

impl Projectors for DenoiseOperator {
    fn at(&self, _node: usize) -> &DenoiseOperator {
        self
    }
}

/// Per-node projectors sharing operators between nodes with equal references.
#[derive(Debug, Clone)]
pub struct NodeProjectors {
    ops: Vec<Arc<DenoiseOperator>>,
    index: Vec<u32>,
}

impl NodeProjectors {
    /// `u` is node-major with `d` entries per node.
    pub fn build(cache: &mut OperatorCache, u: &[f64]) -> Result<Self, QlbmError> {
        let d = cache.basis().d;
        let mut ops: Vec<Arc<DenoiseOperator>> = Vec::new();
        let mut index = Vec::with_capacity(u.len() / d);
        for chunk in u.chunks(d) {
            let op = cache.get(chunk)?;
            let k = match ops.iter().position(|o| Arc::ptr_eq(o, &op)) {
                Some(k) => k,
                None => {
                    ops.push(op);
                    ops.len() - 1
                }
            };
            index.push(k as u32);
        }
        Ok(Self { ops, index })
    }

    pub fn distinct(&self) -> usize {
        self.ops.len()
    }
}

impl Projectors for NodeProjectors {
    fn at(&self, node: usize) -> &DenoiseOperator {
        &self.ops[self.index[node] as usize]
    }
}

/// Outcome of one collision sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollideStats {
    /// `sum_x |D g(x)|^2 / sum_x rho(x)` over fluid nodes.
    pub success: f64,
    pub mass_before: f64,
}

const ANNIHILATION: f64 = 1e-14;

/// Projects and renormalizes in place. `aux` is scratch of length `2 * nodes`.
pub fn collide_in_place(
    g: &mut AmplitudeField,
    projectors: &dyn Projectors,
    renorm: Renorm,
    mask: Option<&SolidMask>,
    exec: Exec,
    aux: &mut Vec<f64>,
) -> Result<CollideStats, QlbmError> {
    let q = g.lattice.q;
    let n = g.grid.nodes();
    aux.clear();
    aux.resize(2 * n, 0.0);
    exec::try_for_each_node_zip(exec, &mut g.data, q, aux, 2, |node, gi, a| {
        if mask.is_some_and(|m| m.is_solid(node)) {
            return Ok(());
        }
        let rho: f64 = gi.iter().map(|x| x * x).sum();
        if rho == 0.0 {
            return Ok(());
        }
        let mut out = [0.0; 9];
        let out = &mut out[..q];
        projectors.at(node).apply_into(gi, out);
        let pn2: f64 = out.iter().map(|x| x * x).sum();
        let pn = pn2.sqrt();
        if !(pn >= ANNIHILATION * rho.sqrt()) {
            return Err(QlbmError::ProjectionAnnihilated {
                node,
                projected: pn,
                sqrt_rho: rho.sqrt(),
            });
        }
        let scale = match renorm {
            Renorm::PerNode => rho.sqrt() / pn,
            Renorm::Global => 1.0,
        };
        for (x, o) in gi.iter_mut().zip(out.iter()) {
            *x = o * scale;
        }
        a[0] = rho;
        a[1] = pn2;
        Ok(())
    })?;
    let mass = exec::chunked_sum(exec, n, |k| aux[2 * k]);
    let kept = exec::chunked_sum(exec, n, |k| aux[2 * k + 1]);
    if renorm == Renorm::Global && kept > 0.0 {
        let s = (mass / kept).sqrt();
        exec::for_each_node(exec, &mut g.data, q, |node, gi| {
            if !mask.is_some_and(|m| m.is_solid(node)) {
                gi.iter_mut().for_each(|x| *x *= s);
            }
        });
    }
    Ok(CollideStats {
        success: if mass > 0.0 { kept / mass } else { 1.0 },
        mass_before: mass,
    })
}

/// Collision result with per-node success weights `|D g(x)|^2 / rho(x)`.
#[derive(Debug, Clone)]
pub struct Collided {
    pub field: AmplitudeField,
    pub weights: Vec<f64>,
    pub stats: CollideStats,
}

pub fn qlbm_collide(g: &AmplitudeField, projectors: &dyn Projectors, renorm: Renorm) -> Result<Collided, QlbmError> {
    let weights = success_weights(g, projectors);
    let mut field = g.clone();
    let mut aux = Vec::new();
    let stats = collide_in_place(&mut field, projectors, renorm, None, Exec::default(), &mut aux)?;
    Ok(Collided { field, weights, stats })
}

/// `|D g(x)|^2 / rho(x)` per node (1 where `rho = 0`).
pub fn success_weights(g: &AmplitudeField, projectors: &dyn Projectors) -> Vec<f64> {
    let q = g.lattice.q;
    (0..g.grid.nodes())
        .map(|node| {
            let gi = g.node(node);
            let rho: f64 = gi.iter().map(|x| x * x).sum();
            if rho == 0.0 {
                return 1.0;
            }
            let mut out = vec![0.0; q];
            projectors.at(node).apply_into(gi, &mut out);
            out.iter().map(|x| x * x).sum::<f64>() / rho
        })
        .collect()
}

/// Periodic amplitude streaming `g_i(x + c_i) <- g_i(x)`.
pub fn qlbm_stream(g: &AmplitudeField) -> AmplitudeField {
    let prop = Propagator::periodic(&g.grid, &g.lattice);
    let mut out = g.clone();
    prop.apply(Exec::default(), &g.data, &mut out.data);
    out
}

/// Streaming with bounce-back on the mask; same rules as the population solver.
pub fn qlbm_bounce_back(g: &AmplitudeField, mask: &SolidMask, scheme: BounceBack) -> AmplitudeField {
    let prop = Propagator::with_walls(&g.grid, &g.lattice, mask, scheme);
    let mut out = g.clone();
    prop.apply(Exec::default(), &g.data, &mut out.data);
    out
}

/// Momentum-exchange force on the solid region.
#[derive(Debug, Clone)]
pub struct ForceObservable {
    /// `(x, i)` with `x` fluid and `x + c_i` solid.
    pub links: Vec<(usize, usize)>,
    pub dt: f64,
    dim: usize,
    q: usize,
    weights: Vec<Vec<f64>>,
}

impl ForceObservable {
    pub fn new(lat: &LatticeModel, mask: &SolidMask) -> Self {
        let grid = mask.grid();
        let mut links = Vec::new();
        for x in 0..grid.nodes() {
            if mask.is_solid(x) {
                continue;
            }
            for i in 0..lat.q {
                if mask.is_solid(grid.shifted(x, lat.velocity(i))) {
                    links.push((x, i));
                }
            }
        }
        let weights = links
            .iter()
            .map(|&(_, i)| (0..lat.dim).map(|k| lat.c(i, k)).collect())
            .collect();
        Self {
            links,
            dt: 1.0,
            dim: lat.dim,
            q: lat.q,
            weights,
        }
    }

    /// `F_k = (2 / dt) sum_links c_ik g_i(x)^2` on node-major amplitudes.
    pub fn evaluate(&self, g: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.dim];
        for (&(x, i), c) in self.links.iter().zip(&self.weights) {
            let a = g[x * self.q + i];
            for k in 0..self.dim {
                f[k] += c[k] * a * a;
            }
        }
        f.iter_mut().for_each(|v| *v *= 2.0 / self.dt);
        f
    }

    /// Diagonal of the observable `F_k` over the node-major amplitude basis.
    pub fn diagonal(&self, k: usize, nodes: usize) -> Vec<f64> {
        let mut diag = vec![0.0; nodes * self.q];
        for (&(x, i), c) in self.links.iter().zip(&self.weights) {
            diag[x * self.q + i] += 2.0 * c[k] / self.dt;
        }
        diag
    }
}

pub fn force_on_region(g: &AmplitudeField, mask: &SolidMask) -> Vec<f64> {
    ForceObservable::new(&g.lattice, mask).evaluate(&g.data)
}

/// Everything a QLBM run needs besides the state.
#[derive(Debug, Clone)]
pub struct QlbmConfig {
    pub variant: Variant,
    /// Reference velocity (hydro) or advection velocity (ADE).
    pub reference: Reference,
    pub renorm: Renorm,
    pub walls: Option<(SolidMask, BounceBack)>,
    pub exec: Exec,
}

/// Double-buffered QLBM stepper.
#[derive(Debug)]
pub struct QlbmSolver {
    field: AmplitudeField,
    scratch: Vec<f64>,
    aux: Vec<f64>,
    cfg: QlbmConfig,
    prop: Propagator,
    cache: OperatorCache,
    node_ops: Option<NodeProjectors>,
    force: Option<ForceObservable>,
    time: usize,
    success_product: f64,
    last_success: f64,
    last_force: Option<Vec<f64>>,
}

impl QlbmSolver {
    pub fn new(mut field: AmplitudeField, cfg: QlbmConfig) -> Result<Self, QlbmError> {
        let lat = field.lattice.clone();
        if cfg.reference.dim() != lat.dim {
            return Err(QlbmError::FieldMismatch("reference velocity dimension".into()));
        }
        let basis = Arc::new(HermiteBasis::new(&lat));
        let mut cache = OperatorCache::new(basis, cfg.variant);
        let node_ops = match &cfg.reference {
            Reference::PerNode { values, .. } => {
                if values.len() != field.grid.nodes() * lat.dim {
                    return Err(QlbmError::FieldMismatch("per-node reference length".into()));
                }
                Some(NodeProjectors::build(&mut cache, values)?)
            }
            _ => None,
        };
        let (prop, force) = match &cfg.walls {
            Some((mask, scheme)) => {
                if mask.grid() != &field.grid {
                    return Err(LbmError::GridMismatch("mask and field grids differ".into()).into());
                }
                if *scheme == BounceBack::HalfWay {
                    let q = lat.q;
                    for node in 0..field.grid.nodes() {
                        if mask.is_solid(node) {
                            field.data[node * q..(node + 1) * q].fill(0.0);
                        }
                    }
                }
                (
                    Propagator::with_walls(&field.grid, &lat, mask, *scheme),
                    Some(ForceObservable::new(&lat, mask)),
                )
            }
            None => (Propagator::periodic(&field.grid, &lat), None),
        };
        let scratch = vec![0.0; field.data.len()];
        Ok(Self {
            field,
            scratch,
            aux: Vec::new(),
            cfg,
            prop,
            cache,
            node_ops,
            force,
            time: 0,
            success_product: 1.0,
            last_success: 1.0,
            last_force: None,
        })
    }

    pub fn step(&mut self) -> Result<(), QlbmError> {
        let mask = self.cfg.walls.as_ref().map(|w| &w.0);
        let stats = match &self.node_ops {
            Some(ops) => collide_in_place(&mut self.field, ops, self.cfg.renorm, mask, self.cfg.exec, &mut self.aux)?,
            None => {
                let u = self.cfg.reference.uniform_at(self.time as f64).expect("uniform reference");
                let op = self.cache.get(&u)?;
                if matches!(self.cfg.reference, Reference::Oscillating { .. }) && self.cache.len() > 64 {
                    // time-varying references rarely repeat
                    self.cache = OperatorCache::new(self.cache.basis().clone(), self.cfg.variant);
                }
                collide_in_place(&mut self.field, &*op, self.cfg.renorm, mask, self.cfg.exec, &mut self.aux)?
            }
        };
        self.last_success = stats.success;
        self.success_product *= stats.success;
        if let Some(f) = &self.force {
            self.last_force = Some(f.evaluate(&self.field.data));
        }
        self.prop.apply(self.cfg.exec, &self.field.data, &mut self.scratch);
        std::mem::swap(&mut self.field.data, &mut self.scratch);
        self.time += 1;
        Ok(())
    }

    pub fn field(&self) -> &AmplitudeField {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut AmplitudeField {
        &mut self.field
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn mask(&self) -> Option<&SolidMask> {
        self.cfg.walls.as_ref().map(|w| &w.0)
    }

    pub fn macros(&self) -> Result<MacroFields, LbmError> {
        decode_macro_masked(&self.field, self.mask())
    }

    pub fn mass(&self) -> f64 {
        let d = &self.field.data;
        exec::chunked_sum(self.cfg.exec, d.len(), |k| d[k] * d[k])
    }

    /// Product over all steps of the field success probabilities.
    pub fn success_product(&self) -> f64 {
        self.success_product
    }

    pub fn last_success(&self) -> f64 {
        self.last_success
    }

    /// Force from the post-collision amplitudes of the last step.
    pub fn last_force(&self) -> Option<&[f64]> {
        self.last_force.as_deref()
    }
}

/// One step on a copy of the state.
pub fn qlbm_step(g: &AmplitudeField, cfg: &QlbmConfig, time: usize) -> Result<AmplitudeField, QlbmError> {
    let mut cfg = cfg.clone();
    if let Some(u) = cfg.reference.uniform_at(time as f64) {
        cfg.reference = Reference::Constant(u);
    }
    let mut s = QlbmSolver::new(g.clone(), cfg)?;
    s.step()?;
    Ok(s.field)
}
