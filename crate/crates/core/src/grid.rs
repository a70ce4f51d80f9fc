//! Periodic grids, solid masks and the gather tables that realize streaming
//! with optional bounce-back.
//!
//! Node order is row-major with `x` fastest: `node = x + Lx * y`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::LbmError;
use crate::exec::{self, Exec};
use crate::lattice::LatticeModel;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    dims: Vec<usize>,
}

impl Grid {
    pub fn new(dims: &[usize]) -> Result<Self, LbmError> {
        if dims.is_empty() || dims.len() > 2 {
            return Err(LbmError::GridMismatch(format!(
                "only 1-D and 2-D grids are supported, got {} dims",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(LbmError::GridMismatch("grid extent must be positive".into()));
        }
        Ok(Self {
            dims: dims.to_vec(),
        })
    }

    pub fn line(len: usize) -> Self {
        Self::new(&[len]).expect("positive length")
    }

    pub fn plane(lx: usize, ly: usize) -> Self {
        Self::new(&[lx, ly]).expect("positive extents")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn nodes(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn lx(&self) -> usize {
        self.dims[0]
    }

    pub fn ly(&self) -> usize {
        self.dims.get(1).copied().unwrap_or(1)
    }

    /// `[x, y]`; `y` is 0 on 1-D grids.
    #[inline]
    pub fn coords(&self, node: usize) -> [usize; 2] {
        let lx = self.dims[0];
        [node % lx, node / lx]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        x + self.dims[0] * y
    }

    /// Periodic neighbor `node + c`.
    #[inline]
    pub fn shifted(&self, node: usize, c: &[i32]) -> usize {
        let [x, y] = self.coords(node);
        let lx = self.dims[0] as i64;
        let nx = (x as i64 + c[0] as i64).rem_euclid(lx) as usize;
        if self.dims.len() == 1 {
            nx
        } else {
            let ly = self.dims[1] as i64;
            let ny = (y as i64 + c[1] as i64).rem_euclid(ly) as usize;
            self.index(nx, ny)
        }
    }

    pub(crate) fn check_lattice(&self, lat: &LatticeModel) -> Result<(), LbmError> {
        if self.dim() != lat.dim {
            return Err(LbmError::GridMismatch(format!(
                "{}-D grid used with {} lattice",
                self.dim(),
                lat.name()
            )));
        }
        Ok(())
    }
}

/// Boolean solid/fluid flag per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolidMask {
    grid: Grid,
    solid: Vec<bool>,
}

impl SolidMask {
    pub fn new(grid: Grid, solid: Vec<bool>) -> Result<Self, LbmError> {
        if solid.len() != grid.nodes() {
            return Err(LbmError::InvalidMask(format!(
                "mask has {} entries for {} nodes",
                solid.len(),
                grid.nodes()
            )));
        }
        if solid.iter().all(|&s| s) {
            return Err(LbmError::InvalidMask("mask has no fluid node".into()));
        }
        Ok(Self { grid, solid })
    }

    pub fn empty(grid: Grid) -> Self {
        let n = grid.nodes();
        Self {
            grid,
            solid: vec![false; n],
        }
    }

    /// Nodes whose centers lie inside a disk (strictly: distance < radius).
    pub fn disk(grid: Grid, center: [f64; 2], radius: f64) -> Result<Self, LbmError> {
        let solid = (0..grid.nodes())
            .map(|n| {
                let [x, y] = grid.coords(n);
                let dx = x as f64 - center[0];
                let dy = y as f64 - center[1];
                dx * dx + dy * dy < radius * radius
            })
            .collect();
        Self::new(grid, solid)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn is_solid(&self, node: usize) -> bool {
        self.solid[node]
    }

    pub fn solid_count(&self) -> usize {
        self.solid.iter().filter(|&&s| s).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.solid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BounceBack {
    /// Wall at the outermost solid node; reversed populations rest on the
    /// solid node for one step.
    #[serde(rename = "fwbb")]
    FullWay,
    /// Wall halfway between fluid and solid node; reversed populations
    /// return to their origin node within the same step.
    #[serde(rename = "hwbb")]
    HalfWay,
}

impl FromStr for BounceBack {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fwbb" | "full-way" | "fullway" => Ok(BounceBack::FullWay),
            "hwbb" | "half-way" | "halfway" => Ok(BounceBack::HalfWay),
            _ => Err(format!("unknown bounce-back scheme `{s}`")),
        }
    }
}

const ZERO: u32 = u32::MAX;

/// Streaming (with optional bounce-back) as a gather over the flat
/// `node * q + i` array: `new[k] = old[src[k]]`, or 0 where `src[k]` is
/// the zero sentinel (solid nodes under half-way bounce-back).
#[derive(Debug, Clone)]
pub struct Propagator {
    q: usize,
    src: Vec<u32>,
}

impl Propagator {
    pub fn periodic(grid: &Grid, lat: &LatticeModel) -> Self {
        Self::build(grid, lat, None)
    }

    pub fn with_walls(grid: &Grid, lat: &LatticeModel, mask: &SolidMask, scheme: BounceBack) -> Self {
        Self::build(grid, lat, Some((mask, scheme)))
    }

    fn build(grid: &Grid, lat: &LatticeModel, walls: Option<(&SolidMask, BounceBack)>) -> Self {
        let q = lat.q;
        let n = grid.nodes();
        assert!(n * q < ZERO as usize, "grid too large for u32 gather table");
        let neg: Vec<Vec<i32>> = (0..q)
            .map(|i| lat.velocity(i).iter().map(|&c| -c).collect())
            .collect();
        let mut src = vec![0u32; n * q];
        for node in 0..n {
            for i in 0..q {
                let from = grid.shifted(node, &neg[i]);
                let k = node * q + i;
                src[k] = match walls {
                    None => (from * q + i) as u32,
                    Some((mask, BounceBack::HalfWay)) => {
                        if mask.is_solid(node) {
                            ZERO
                        } else if mask.is_solid(from) {
                            // the population that left `node` along -c_i hit the wall
                            (node * q + lat.opposite(i)) as u32
                        } else {
                            (from * q + i) as u32
                        }
                    }
                    Some((mask, BounceBack::FullWay)) => {
                        if mask.is_solid(node) {
                            // arrives along c_ibar from node + c_i, then reversed
                            let ib = lat.opposite(i);
                            let from_b = grid.shifted(node, lat.velocity(i));
                            (from_b * q + ib) as u32
                        } else {
                            (from * q + i) as u32
                        }
                    }
                };
            }
        }
        Self { q, src }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn apply(&self, exec: Exec, old: &[f64], new: &mut [f64]) {
        assert_eq!(old.len(), self.src.len());
        assert_eq!(new.len(), self.src.len());
        let q = self.q;
        let src = &self.src;
        exec::for_each_node(exec, new, q, |node, out| {
            let base = node * q;
            for (i, v) in out.iter_mut().enumerate() {
                let s = src[base + i];
                *v = if s == ZERO { 0.0 } else { old[s as usize] };
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_lattice, LatticeId};

    #[test]
    fn periodic_shift_wraps() {
        let g = Grid::plane(4, 3);
        let n = g.index(3, 0);
        assert_eq!(g.coords(g.shifted(n, &[1, -1])), [0, 2]);
        let l = Grid::line(4);
        assert_eq!(l.shifted(0, &[-1]), 3);
    }

    #[test]
    fn mask_needs_fluid() {
        let g = Grid::line(3);
        assert!(SolidMask::new(g.clone(), vec![true; 3]).is_err());
        assert!(SolidMask::new(g, vec![true, false]).is_err());
    }

    #[test]
    fn disk_mask_is_symmetric() {
        let g = Grid::plane(16, 16);
        let m = SolidMask::disk(g.clone(), [8.0, 8.0], 3.0).unwrap();
        assert!(m.is_solid(g.index(8, 8)));
        assert!(!m.is_solid(g.index(8, 11)));
        assert_eq!(m.solid_count() % 4, 1);
    }

    #[test]
    fn periodic_gather_is_a_permutation() {
        let lat = make_lattice(LatticeId::D2Q9);
        let g = Grid::plane(5, 4);
        let p = Propagator::periodic(&g, &lat);
        let mut seen = vec![false; p.src.len()];
        for &s in &p.src {
            assert!(!seen[s as usize]);
            seen[s as usize] = true;
        }
    }

    #[test]
    fn walled_gathers_conserve_fluid_entries() {
        let lat = make_lattice(LatticeId::D2Q9);
        let g = Grid::plane(8, 8);
        let mask = SolidMask::disk(g.clone(), [4.0, 4.0], 2.0).unwrap();
        for scheme in [BounceBack::HalfWay, BounceBack::FullWay] {
            let p = Propagator::with_walls(&g, &lat, &mask, scheme);
            let mut hits = vec![0usize; p.src.len()];
            for &s in &p.src {
                if s != ZERO {
                    hits[s as usize] += 1;
                }
            }
            assert!(hits.iter().all(|&h| h <= 1), "{scheme:?}");
            if scheme == BounceBack::FullWay {
                assert!(hits.iter().all(|&h| h == 1));
            }
        }
    }
}
