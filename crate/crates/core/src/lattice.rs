//! Discrete velocity sets (D1Q3, D2Q9), their symmetry groups and isotropy checks.
//!
//! Velocity ordering is fixed and every matrix built downstream (Hermite basis,
//! denoising projectors, circuit wiring) depends on it:
//!
//! ```text
//! D1Q3:  0: ( 0)   1: (+1)   2: (-1)
//!
//! D2Q9:  6   2   5        0: rest
//!         \  |  /         1..=4: +x, +y, -x, -y
//!        3 - 0 - 1        5..=8: (+1,+1), (-1,+1), (-1,-1), (+1,-1)
//!         /  |  \
//!        7   4   8
//! ```

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::LatticeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatticeId {
    D1Q3,
    D2Q9,
}

impl fmt::Display for LatticeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeId::D1Q3 => write!(f, "D1Q3"),
            LatticeId::D2Q9 => write!(f, "D2Q9"),
        }
    }
}

impl FromStr for LatticeId {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "D1Q3" => Ok(LatticeId::D1Q3),
            "D2Q9" => Ok(LatticeId::D2Q9),
            _ => Err(LatticeError::UnknownModel(s.to_string())),
        }
    }
}

/// A DdQq velocity set in lattice units (dx = dt = 1).
///
/// Weights and the squared sound speed are kept as exact rationals; the
/// floating point copies are derived once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeModel {
    pub id: LatticeId,
    pub dim: usize,
    pub q: usize,
    velocities: Vec<Vec<i32>>,
    weights: Vec<Rational64>,
    cs2: Rational64,
    opposite: Vec<usize>,
    // flattened q x dim, row i = c_i
    c_f64: Vec<f64>,
    w_f64: Vec<f64>,
}

pub fn make_lattice(id: LatticeId) -> LatticeModel {
    let third = Rational64::new(1, 3);
    match id {
        LatticeId::D1Q3 => LatticeModel::from_parts(
            id,
            vec![vec![0], vec![1], vec![-1]],
            vec![
                Rational64::new(2, 3),
                Rational64::new(1, 6),
                Rational64::new(1, 6),
            ],
            third,
        ),
        LatticeId::D2Q9 => {
            let axis = Rational64::new(1, 9);
            let diag = Rational64::new(1, 36);
            LatticeModel::from_parts(
                id,
                vec![
                    vec![0, 0],
                    vec![1, 0],
                    vec![0, 1],
                    vec![-1, 0],
                    vec![0, -1],
                    vec![1, 1],
                    vec![-1, 1],
                    vec![-1, -1],
                    vec![1, -1],
                ],
                vec![
                    Rational64::new(4, 9),
                    axis,
                    axis,
                    axis,
                    axis,
                    diag,
                    diag,
                    diag,
                    diag,
                ],
                third,
            )
        }
    }
}

impl LatticeModel {
    fn from_parts(
        id: LatticeId,
        velocities: Vec<Vec<i32>>,
        weights: Vec<Rational64>,
        cs2: Rational64,
    ) -> Self {
        let q = velocities.len();
        let dim = velocities[0].len();
        let opposite = (0..q)
            .map(|i| {
                (0..q)
                    .find(|&j| (0..dim).all(|k| velocities[j][k] == -velocities[i][k]))
                    .expect("velocity set is closed under negation")
            })
            .collect();
        let c_f64 = velocities
            .iter()
            .flat_map(|c| c.iter().map(|&x| x as f64))
            .collect();
        let w_f64 = weights.iter().map(rational_to_f64).collect();
        Self {
            id,
            dim,
            q,
            velocities,
            weights,
            cs2,
            opposite,
            c_f64,
            w_f64,
        }
    }

    /// Copy of this model with different weights. Only used to probe the
    /// isotropy checker; downstream modules assume the built-in weights.
    pub fn with_weights(&self, weights: Vec<Rational64>) -> Self {
        assert_eq!(weights.len(), self.q);
        Self::from_parts(self.id, self.velocities.clone(), weights, self.cs2)
    }

    pub fn name(&self) -> String {
        self.id.to_string()
    }

    pub fn velocity(&self, i: usize) -> &[i32] {
        &self.velocities[i]
    }

    pub fn velocities(&self) -> &[Vec<i32>] {
        &self.velocities
    }

    /// Component `k` of velocity `i` as a float.
    #[inline]
    pub fn c(&self, i: usize, k: usize) -> f64 {
        self.c_f64[i * self.dim + k]
    }

    pub fn weight_exact(&self, i: usize) -> Rational64 {
        self.weights[i]
    }

    pub fn weights_exact(&self) -> &[Rational64] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.w_f64[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.w_f64
    }

    pub fn cs2_exact(&self) -> Rational64 {
        self.cs2
    }

    pub fn cs2(&self) -> f64 {
        rational_to_f64(&self.cs2)
    }

    pub fn cs(&self) -> f64 {
        self.cs2().sqrt()
    }

    #[inline]
    pub fn opposite(&self, i: usize) -> usize {
        self.opposite[i]
    }

    pub fn opposites(&self) -> &[usize] {
        &self.opposite
    }

    /// c_i . u
    #[inline]
    pub fn dot(&self, i: usize, u: &[f64]) -> f64 {
        (0..self.dim).map(|k| self.c(i, k) * u[k]).sum()
    }

    /// Index of the velocity equal to `c`, if any.
    pub fn index_of(&self, c: &[i32]) -> Option<usize> {
        self.velocities.iter().position(|v| v.as_slice() == c)
    }
}

pub(crate) fn rational_to_f64(r: &Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Largest absolute residual of each moment condition up to fifth order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IsotropyReport {
    pub zeroth: f64,
    pub first: f64,
    pub second: f64,
    pub third: f64,
    pub fourth: f64,
    pub fifth: f64,
}

impl IsotropyReport {
    pub fn max(&self) -> f64 {
        [
            self.zeroth,
            self.first,
            self.second,
            self.third,
            self.fourth,
            self.fifth,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Evaluates every isotropy condition in exact rational arithmetic.
pub fn check_isotropy(lat: &LatticeModel) -> IsotropyReport {
    let d = lat.dim;
    let cs2 = lat.cs2;
    let delta = |a: usize, b: usize| {
        if a == b {
            Rational64::from_integer(1)
        } else {
            Rational64::from_integer(0)
        }
    };
    // sum_i w_i prod_{k in idx} c_{i,k}
    let moment = |idx: &[usize]| -> Rational64 {
        (0..lat.q)
            .map(|i| {
                idx.iter().fold(lat.weights[i], |acc, &k| {
                    acc * Rational64::from_integer(lat.velocities[i][k] as i64)
                })
            })
            .sum()
    };
    let worst = |vals: Vec<Rational64>| -> f64 {
        vals.iter()
            .map(|r| rational_to_f64(r).abs())
            .fold(0.0, f64::max)
    };
    let tuples = |order: usize| -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..order {
            out = out
                .into_iter()
                .flat_map(|t| {
                    (0..d).map(move |k| {
                        let mut t = t.clone();
                        t.push(k);
                        t
                    })
                })
                .collect();
        }
        out
    };

    let zeroth = worst(vec![moment(&[]) - Rational64::from_integer(1)]);
    let first = worst(tuples(1).iter().map(|t| moment(t)).collect());
    let second = worst(
        tuples(2)
            .iter()
            .map(|t| moment(t) - cs2 * delta(t[0], t[1]))
            .collect(),
    );
    let third = worst(tuples(3).iter().map(|t| moment(t)).collect());
    let fourth = worst(
        tuples(4)
            .iter()
            .map(|t| {
                let (k, l, p, r) = (t[0], t[1], t[2], t[3]);
                moment(t)
                    - cs2
                        * cs2
                        * (delta(k, l) * delta(p, r)
                            + delta(k, p) * delta(l, r)
                            + delta(k, r) * delta(l, p))
            })
            .collect(),
    );
    let fifth = worst(tuples(5).iter().map(|t| moment(t)).collect());
    IsotropyReport {
        zeroth,
        first,
        second,
        third,
        fourth,
        fifth,
    }
}

/// A point-group element acting on velocities (via `rotation`) and on
/// population indices (via the permutation `perm`, with c_{perm[i]} = R c_i).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatticeSymmetry {
    pub perm: Vec<usize>,
    pub rotation: Vec<Vec<i32>>,
}

impl LatticeSymmetry {
    pub fn identity(lat: &LatticeModel) -> Self {
        let rotation = (0..lat.dim)
            .map(|r| (0..lat.dim).map(|c| i32::from(r == c)).collect())
            .collect();
        Self {
            perm: (0..lat.q).collect(),
            rotation,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }

    /// P_g with (P_g f)_i = f_{perm^{-1}(i)}, i.e. P[perm[j], j] = 1.
    pub fn permutation_matrix(&self) -> DMatrix<f64> {
        let q = self.perm.len();
        let mut p = DMatrix::zeros(q, q);
        for (j, &pj) in self.perm.iter().enumerate() {
            p[(pj, j)] = 1.0;
        }
        p
    }

    pub fn rotation_matrix(&self) -> DMatrix<f64> {
        let d = self.rotation.len();
        DMatrix::from_fn(d, d, |r, c| self.rotation[r][c] as f64)
    }

    pub fn rotate(&self, u: &[f64]) -> Vec<f64> {
        self.rotation
            .iter()
            .map(|row| row.iter().zip(u).map(|(&r, &x)| r as f64 * x).sum())
            .collect()
    }

    /// The composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &LatticeSymmetry) -> LatticeSymmetry {
        let d = self.rotation.len();
        let rotation = (0..d)
            .map(|r| {
                (0..d)
                    .map(|c| (0..d).map(|k| self.rotation[r][k] * other.rotation[k][c]).sum())
                    .collect()
            })
            .collect();
        let perm = other.perm.iter().map(|&j| self.perm[j]).collect();
        LatticeSymmetry { perm, rotation }
    }
}

/// Every signed permutation of the axes that maps the velocity set onto
/// itself while preserving weights: D8 for D2Q9, {e, reflection} for D1Q3.
pub fn symmetry_group(lat: &LatticeModel) -> Vec<LatticeSymmetry> {
    let d = lat.dim;
    let mut axis_perms: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..d {
        axis_perms = axis_perms
            .into_iter()
            .flat_map(|p| {
                (0..d)
                    .filter(|k| !p.contains(k))
                    .map(|k| {
                        let mut next = p.clone();
                        next.push(k);
                        next
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    let mut group = Vec::new();
    for axes in &axis_perms {
        for signs in 0..(1u32 << d) {
            let mut rotation = vec![vec![0i32; d]; d];
            for (row, &col) in axes.iter().enumerate() {
                rotation[row][col] = if signs >> row & 1 == 1 { -1 } else { 1 };
            }
            let mut perm = Vec::with_capacity(lat.q);
            let mut ok = true;
            for i in 0..lat.q {
                let image: Vec<i32> = rotation
                    .iter()
                    .map(|r| r.iter().zip(lat.velocity(i)).map(|(a, b)| a * b).sum())
                    .collect();
                match lat.index_of(&image) {
                    Some(j) if lat.weights[j] == lat.weights[i] => perm.push(j),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                group.push(LatticeSymmetry { perm, rotation });
            }
        }
    }
    // identity first
    group.sort_by_key(|g| !g.is_identity());
    group
}
